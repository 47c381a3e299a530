"""Learned mappings from pair signals to contact parameters.

Everything is implemented directly on numpy: standardization, multi-output
linear least squares, Laplacian-kernel ridge regression with half-split grid
search calibration, the center/random baseline predictors, and the multistage
pipeline (a linear depth regressor routing to five depth-sliced localization
regressors). Neural classifiers live in :mod:`pairsense.nets`.

Conventions: regressors standardize features and targets internally and
report predictions in raw units. Contact regressors are trained only on
in-contact frames (depth >= 0) and their depth predictions are clamped to be
non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import area_center, sensing_area, tip_from_class
from .protocol import Dataset


class LearningError(ValueError):
    """Degenerate training inputs (empty slices, bad hyperparameters...)."""


@dataclass
class Standardizer:
    """Per-feature affine normalization fit on training data.

    Constant features keep scale 1 and are flagged rather than dropped, so
    channel indices stay aligned with the pair enumeration.
    """

    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale <= 1e-12
        scale = np.where(constant, 1.0, scale)
        return cls(mean=mean, scale=scale, constant=constant)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


# --- training-row selection ---------------------------------------------------------


@dataclass
class TrainingSet:
    """Feature matrix + targets + the event id of each row."""

    X: np.ndarray
    Y: np.ndarray
    event_ids: np.ndarray


def _descent_mask(dataset: Dataset) -> np.ndarray:
    """True for frames taken while the tip was descending."""
    peak_step: dict[int, int] = {}
    for cls, prof in dataset.schedule.depth_profiles.items():
        peak_step[cls] = int(np.argmax(prof))
    return np.array([f.step_index <= peak_step[f.tip_class] for f in dataset.frames])


def regression_set(
    datasets: Dataset | list[Dataset],
    depth_increment: float = 0.5,
    include_retraction: bool = True,
    surface_fine_below: float | None = None,
    targets: str = "both",
) -> TrainingSet:
    """In-contact rows undersampled in depth for kernel regression.

    ``depth_increment`` keeps depths on that grid (0.5 mm default);
    ``surface_fine_below`` additionally keeps every 0.1 mm sample at or below
    the given depth, preserving granularity near the surface. Targets:
    ``location`` (x, y), ``depth`` (d) or ``both`` (x, y, d).
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    X, Y, ev = [], [], []
    ev_offset = 0
    for ds in datasets:
        labels = ds.labels()
        feats = ds.features()
        events = ds.event_ids()
        d = labels[:, 3]
        keep = d >= 0.0
        on_grid = np.isclose(np.round(d / depth_increment) * depth_increment, d, atol=1e-9)
        fine = np.zeros_like(keep) if surface_fine_below is None else d <= surface_fine_below + 1e-9
        keep &= on_grid | fine
        if not include_retraction:
            keep &= _descent_mask(ds)
        X.append(feats[keep])
        Y.append(labels[keep][:, 1:4])
        ev.append(events[keep] + ev_offset)
        ev_offset += events.max() + 1 if len(events) else 0
    X = np.concatenate(X, axis=0)
    Y = np.concatenate(Y, axis=0)
    ev = np.concatenate(ev, axis=0)
    cols = {"location": [0, 1], "depth": [2], "both": [0, 1, 2]}[targets]
    return TrainingSet(X=X, Y=Y[:, cols], event_ids=ev)


def classification_set(datasets: Dataset | list[Dataset], kind: str) -> TrainingSet:
    """All frames with touch (d > 0) or tip-class labels."""
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    X = np.concatenate([ds.features() for ds in datasets], axis=0)
    labels = np.concatenate([ds.labels() for ds in datasets], axis=0)
    ev_parts, off = [], 0
    for ds in datasets:
        e = ds.event_ids()
        ev_parts.append(e + off)
        off += e.max() + 1 if len(e) else 0
    ev = np.concatenate(ev_parts)
    if kind == "touch":
        y = (labels[:, 3] > 0).astype(float)[:, None]
    elif kind == "tip":
        y = labels[:, 0].astype(int)[:, None] - 1  # classes 0..5
    else:
        raise LearningError(f"unknown classification kind {kind!r}")
    return TrainingSet(X=X, Y=y, event_ids=ev)


# --- baselines ----------------------------------------------------------------------


@dataclass
class CenterPredictor:
    center: tuple[float, float]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.tile(self.center, (len(X), 1))


@dataclass
class RandomPredictor:
    rect: tuple[float, float, float, float]
    seed: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        xmin, ymin, xmax, ymax = self.rect
        out = np.empty((len(X), 2))
        out[:, 0] = rng.uniform(xmin, xmax, len(X))
        out[:, 1] = rng.uniform(ymin, ymax, len(X))
        return out


def fit_baselines(train: Dataset, seed: int = 0) -> tuple[CenterPredictor, RandomPredictor]:
    """Center and uniform-random location predictors over the sensing area."""
    if not train.frames:
        raise LearningError("empty dataset")
    tip = tip_from_class(train.frames[0].tip_class)
    rect = sensing_area(train.config, tip)
    return CenterPredictor(center=area_center(rect)), RandomPredictor(rect=rect, seed=seed)


# --- linear regression --------------------------------------------------------------


@dataclass
class LinearModel:
    weights: np.ndarray  # (p, m)
    intercept: np.ndarray  # (m,)
    standardizer: Standardizer
    rank_deficient: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(X) @ self.weights + self.intercept


def fit_linear(X: np.ndarray, Y: np.ndarray) -> LinearModel:
    """Multi-output least squares on standardized features with intercept.

    Rank-deficient designs fall back to a tiny ridge (1e-8) and are flagged
    on the model.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) < X.shape[1] + 1:
        raise LearningError(f"need at least n_features+1={X.shape[1] + 1} rows, got {len(X)}")
    std = Standardizer.fit(X)
    Z = std.transform(X)
    A = np.concatenate([Z, np.ones((len(Z), 1))], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(A, Y, rcond=None)
    deficient = rank < A.shape[1]
    if deficient:
        lam = 1e-8
        sol = np.linalg.solve(A.T @ A + lam * np.eye(A.shape[1]), A.T @ Y)
    return LinearModel(weights=sol[:-1], intercept=sol[-1], standardizer=std, rank_deficient=bool(deficient))


# --- Laplacian-kernel ridge regression ----------------------------------------------


def laplacian_kernel(a: np.ndarray, b: np.ndarray, sigma: float):
    """exp(-||a - b||_1 / sigma); accepts vectors or (n, p) stacks."""
    if sigma <= 0:
        raise LearningError("kernel bandwidth sigma must be positive")
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise LearningError("kernel inputs must have equal length")
    k = np.exp(-cdist(a, b, "cityblock") / sigma)
    return float(k[0, 0]) if k.size == 1 else k


@dataclass
class KernelRidgeModel:
    """Dual-form ridge regression with the Laplacian kernel.

    sigma is the kernel bandwidth (gamma = 1/sigma in the rate
    parameterization); lam the ridge strength. Features and targets are
    standardized internally; alpha solves (K + lam I) alpha = Y_std.
    """

    X_train: np.ndarray  # standardized support inputs
    alpha: np.ndarray
    lam: float
    sigma: float
    standardizer: Standardizer
    y_mean: np.ndarray
    y_scale: np.ndarray

    @property
    def gamma(self) -> float:
        return 1.0 / self.sigma

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = self.standardizer.transform(X)
        K = np.exp(-cdist(Z, self.X_train, "cityblock") / self.sigma)
        return K @ self.alpha * self.y_scale + self.y_mean


def fit_krr(X: np.ndarray, Y: np.ndarray, lam: float, sigma: float) -> KernelRidgeModel:
    """Solve the dual ridge system by symmetric positive-definite
    factorization; one jitter retry (1e-10) on factorization failure."""
    if lam <= 0 or sigma <= 0:
        raise LearningError("lam and sigma must be positive")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    std = Standardizer.fit(X)
    Z = std.transform(X)
    y_mean = Y.mean(axis=0)
    y_scale = Y.std(axis=0)
    y_scale = np.where(y_scale <= 1e-12, 1.0, y_scale)
    Yz = (Y - y_mean) / y_scale
    K = np.exp(-cdist(Z, Z, "cityblock") / sigma)
    A = K + lam * np.eye(len(K))
    try:
        c, low = _cho_factor(A)
    except np.linalg.LinAlgError:
        A = A + 1e-10 * np.eye(len(K))
        c, low = _cho_factor(A)  # second failure propagates
    alpha = _cho_solve((c, low), Yz)
    resid = np.linalg.norm(A @ alpha - Yz)
    if resid >= 1e-8 * max(np.linalg.norm(Yz), 1e-30):
        raise LearningError(f"dual solve residual too large: {resid:.3e}")
    return KernelRidgeModel(
        X_train=Z, alpha=alpha, lam=lam, sigma=sigma, standardizer=std, y_mean=y_mean, y_scale=y_scale
    )


def _cho_factor(A):
    from scipy.linalg import cho_factor

    return cho_factor(A, lower=True, check_finite=False)


def _cho_solve(cf, B):
    from scipy.linalg import cho_solve

    return cho_solve(cf, B, check_finite=False)


@dataclass
class CalibrationRecord:
    """Grid-search outcome: the selected cell plus the full loss surface."""

    lam: float
    sigma: float
    lam_grid: np.ndarray
    sigma_grid: np.ndarray
    losses: np.ndarray  # (len(sigma_grid), len(lam_grid))
    median_distance: float
    n_fit_rows: int
    n_val_rows: int

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "sigma": self.sigma,
            "gamma": 1.0 / self.sigma,
            "lam_grid": self.lam_grid.tolist(),
            "sigma_grid": self.sigma_grid.tolist(),
            "losses": self.losses.tolist(),
            "median_distance": self.median_distance,
            "n_fit_rows": self.n_fit_rows,
            "n_val_rows": self.n_val_rows,
            "reference_operating_points": REFERENCE_OPERATING_POINTS,
        }


# Operating points reported for the physical perimeter and surface-mount
# builds, kept for comparison in calibration records; simulated runs select
# their own cells. The surface-mount study reported (alpha, gamma), stored
# here as (lam, 1/sigma).
REFERENCE_OPERATING_POINTS = {
    "tht": {"lam": 2.15e-4, "sigma": 5.45e-4},
    "smt": {"lam": 0.01, "gamma": 10.0e-7},
    "resistive": {"lam": 2.7e-2, "sigma": 6.15e-4},
}

CALIBRATION_ROW_CAP = 2000  # fit-half rows entering the eigendecomposition

# Bandwidths are swept relative to the median pairwise L1 distance of the
# standardized fit half: the interpolation-relevant range is a data-scale
# property, not an absolute one.
SIGMA_RELATIVE_GRID = np.logspace(-2.0, 2.0, 15)
LAM_GRID = np.logspace(-7.0, 0.0, 15)


def _halves_by_event(event_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = []
    seen = set()
    for e in event_ids:
        if e not in seen:
            seen.add(e)
            order.append(e)
    first = set(order[: len(order) // 2])
    mask = np.array([e in first for e in event_ids])
    return mask, ~mask


def _thin(n: int, cap: int) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).astype(int))


def calibrate_krr(
    train: TrainingSet,
    lam_grid: np.ndarray | None = None,
    sigma_grid: np.ndarray | None = None,
) -> CalibrationRecord:
    """Half-split grid search for (lam, sigma).

    The first half of the events fits the regressor, the second half scores
    it; the objective is mean Euclidean localization error plus mean absolute
    depth error (whichever targets are present, all in mm). One
    eigendecomposition per sigma covers the whole lam grid.
    """
    ev = train.event_ids
    if len(np.unique(ev)) < 2:
        raise LearningError("calibration needs at least 2 events to split")
    fit_mask, val_mask = _halves_by_event(ev)
    Xf, Yf = train.X[fit_mask], train.Y[fit_mask]
    Xv, Yv = train.X[val_mask], train.Y[val_mask]
    if Yf.ndim == 1:
        Yf, Yv = Yf[:, None], Yv[:, None]
    keep = _thin(len(Xf), CALIBRATION_ROW_CAP)
    Xf, Yf = Xf[keep], Yf[keep]

    std = Standardizer.fit(Xf)
    Zf, Zv = std.transform(Xf), std.transform(Xv)
    y_mean = Yf.mean(axis=0)
    y_scale = np.where(Yf.std(axis=0) <= 1e-12, 1.0, Yf.std(axis=0))
    Yz = (Yf - y_mean) / y_scale

    D = cdist(Zf, Zf, "cityblock")
    Dv = cdist(Zv, Zf, "cityblock")
    tri = D[np.triu_indices(len(D), k=1)]
    med = float(np.median(tri)) if len(tri) else 1.0
    med = med if med > 0 else 1.0
    lam_grid = LAM_GRID if lam_grid is None else np.asarray(lam_grid, dtype=float)
    sigma_grid = med * SIGMA_RELATIVE_GRID if sigma_grid is None else np.asarray(sigma_grid, dtype=float)

    n_targets = Yz.shape[1]
    losses = np.empty((len(sigma_grid), len(lam_grid)))
    for si, sigma in enumerate(sigma_grid):
        K = np.exp(-D / sigma)
        Kv = np.exp(-Dv / sigma)
        vals, vecs = np.linalg.eigh(K)
        proj = vecs.T @ Yz
        kv_vecs = Kv @ vecs
        for li, lam in enumerate(lam_grid):
            alpha_proj = proj / (vals + lam)[:, None]
            pred = kv_vecs @ alpha_proj * y_scale + y_mean
            if n_targets >= 2:
                loc = np.hypot(pred[:, 0] - Yv[:, 0], pred[:, 1] - Yv[:, 1]).mean()
            else:
                loc = 0.0
            dep = np.abs(pred[:, -1] - Yv[:, -1]).mean() if n_targets in (1, 3) else 0.0
            losses[si, li] = loc + dep
    si, li = np.unravel_index(int(np.argmin(losses)), losses.shape)
    return CalibrationRecord(
        lam=float(lam_grid[li]),
        sigma=float(sigma_grid[si]),
        lam_grid=lam_grid,
        sigma_grid=sigma_grid,
        losses=losses,
        median_distance=med,
        n_fit_rows=len(Xf),
        n_val_rows=len(Xv),
    )


def fit_krr_calibrated(
    train: TrainingSet,
    refit_full: bool = False,
    lam_grid: np.ndarray | None = None,
    sigma_grid: np.ndarray | None = None,
) -> tuple[KernelRidgeModel, CalibrationRecord]:
    """Calibrate then fit. By default the model is fit on the first event
    half only (the half-split protocol); ``refit_full`` uses all rows."""
    record = calibrate_krr(train, lam_grid=lam_grid, sigma_grid=sigma_grid)
    if refit_full:
        X, Y = train.X, train.Y
    else:
        fit_mask, _ = _halves_by_event(train.event_ids)
        X, Y = train.X[fit_mask], train.Y[fit_mask]
        keep = _thin(len(X), 2 * CALIBRATION_ROW_CAP)
        X, Y = X[keep], Y[keep]
    model = fit_krr(X, Y, record.lam, record.sigma)
    return model, record


# --- multistage pipeline -------------------------------------------------------------

SLICE_CENTERS = (0.5, 1.5, 2.5, 3.5, 4.5)


@dataclass
class MultistageModel:
    """Linear depth regressor routing to five 1 mm depth-sliced localizers."""

    depth_model: LinearModel
    slice_models: list[KernelRidgeModel]
    lam: float
    sigma: float

    def route(self, d_pred: np.ndarray) -> np.ndarray:
        return np.clip(np.floor(np.clip(d_pred, 0.0, 5.0)), 0, 4).astype(int)


def fit_multistage(
    train: TrainingSet,
    lam: float,
    sigma_rel: float | None = None,
    sigma: float | None = None,
) -> MultistageModel:
    """Stage 1: linear depth regressor on all in-contact rows. Stage 2: one
    localization KRR per 1 mm depth slice at full 0.1 mm sampling.

    ``sigma`` may be given absolutely, or via ``sigma_rel`` as a multiple of
    each slice's median pairwise distance.
    """
    if train.Y.shape[1] != 3:
        raise LearningError("multistage training needs (x, y, d) targets")
    X, Y = train.X, train.Y
    depth_model = fit_linear(X, Y[:, 2])
    d = Y[:, 2]
    slice_models = []
    sig_used = sigma if sigma is not None else 0.0
    for k in range(5):
        mask = (d >= k) & (d < k + 1) if k < 4 else (d >= 4) & (d <= 5)
        if not mask.any():
            raise LearningError(f"depth slice [{k}, {k + 1}) has no training rows")
        Xs, Ys = X[mask], Y[mask][:, :2]
        keep = _thin(len(Xs), 2 * CALIBRATION_ROW_CAP)
        Xs, Ys = Xs[keep], Ys[keep]
        sig = sigma
        if sig is None:
            std = Standardizer.fit(Xs)
            Zs = std.transform(Xs)
            sub = _thin(len(Zs), 800)
            Dss = cdist(Zs[sub], Zs[sub], "cityblock")
            med = float(np.median(Dss[np.triu_indices(len(sub), k=1)]))
            sig = (sigma_rel if sigma_rel is not None else 1.0) * max(med, 1e-12)
        slice_models.append(fit_krr(Xs, Ys, lam, sig))
        sig_used = sig
    return MultistageModel(depth_model=depth_model, slice_models=slice_models, lam=lam, sigma=sig_used)


def predict_multistage(model: MultistageModel, X: np.ndarray) -> np.ndarray:
    """(x, y, d) predictions: depth from stage 1 (clamped to [0, 5]) routes
    each row to the covering slice model for location."""
    X = np.asarray(X, dtype=float)
    d_pred = np.clip(model.depth_model.predict(X)[:, 0], 0.0, 5.0)
    slices = model.route(d_pred)
    out = np.empty((len(X), 3))
    out[:, 2] = d_pred
    for k in range(5):
        mask = slices == k
        if mask.any():
            out[mask, :2] = model.slice_models[k].predict(X[mask])
    return out
