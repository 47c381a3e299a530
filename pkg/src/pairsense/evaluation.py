"""Metrics, ablation harnesses and report rendering.

Error tables aggregate localization error (Euclidean, mm) and depth error
(absolute, mm) per depth bin: a frame belongs to a bin when its true depth is
within +/-0.05 mm of the bin value. Bins with fewer than 20 samples are kept
but flagged sparse.

The terminal-removal harness drops every feature channel involving a removed
terminal, recalibrates, retrains and re-evaluates; the tip-removal harness
runs the six leave-one-tip-out folds. Reports render as CSV tables plus
arrow-plot SVGs (one arrow per test indentation, base at ground truth, head
at the prediction, one panel per depth bin).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import SensorConfig, enumerate_pairs
from .learning import TrainingSet, fit_krr, fit_krr_calibrated, regression_set
from .modelio import TrainedModel
from .protocol import Dataset
from .util import atomic_write_text, digest_of, fmt_float

BIN_HALF_WIDTH = 0.05  # mm
SPARSE_BIN_MIN = 20

THT_BINS = (0.1, 0.5, 1.0, 2.0, 3.0, 5.0)
SMT_BINS = (0.1, 0.5, 1.0, 2.0, 3.0, 4.0)


class EvaluationError(ValueError):
    """Digest mismatches and invalid ablation masks."""


def default_bins(build: str) -> tuple[float, ...]:
    return SMT_BINS if build == "smt" else THT_BINS


@dataclass
class ErrorRow:
    depth: float
    loc_median: float
    loc_mean: float
    loc_std: float
    depth_median: float
    depth_mean: float
    depth_std: float
    n: int
    sparse: bool


@dataclass
class ErrorTable:
    rows: list[ErrorRow]
    model_kind: str
    config_digest: str
    dataset_digest: str

    def row(self, depth: float) -> ErrorRow:
        for r in self.rows:
            if abs(r.depth - depth) < 1e-9:
                return r
        raise KeyError(f"no bin at depth {depth}")

    def to_csv(self) -> str:
        lines = ["depth_mm,loc_median,loc_mean,loc_std,depth_median,depth_mean,depth_std,n,sparse"]
        for r in self.rows:
            lines.append(
                ",".join(
                    [fmt_float(r.depth)]
                    + [fmt_float(v) for v in (r.loc_median, r.loc_mean, r.loc_std, r.depth_median, r.depth_mean, r.depth_std)]
                    + [str(r.n), "1" if r.sparse else "0"]
                )
            )
        return "\n".join(lines) + "\n"


def dataset_digest(ds: Dataset) -> str:
    return digest_of(
        {"config": ds.config_digest, "schedule": ds.schedule.to_dict(), "seed": ds.seed, "n": len(ds.frames)}
    )


def _bin_stats(err: np.ndarray) -> tuple[float, float, float]:
    return float(np.median(err)), float(err.mean()), float(err.std())


def error_table(
    model: TrainedModel,
    test: Dataset,
    bins: tuple[float, ...] | None = None,
    predictions: dict | None = None,
) -> ErrorTable:
    """Per-depth-bin localization and depth error statistics.

    Raises on config-digest mismatch between model and dataset. If
    ``predictions`` is a dict it receives bin -> (truth_xy, pred_xy) pairs
    for downstream arrow plots.
    """
    if model.config_digest and model.config_digest != test.config_digest:
        raise EvaluationError("model and test dataset come from different sensor configs")
    bins = bins if bins is not None else default_bins(test.config.build)
    labels = test.labels()
    feats = test.features()
    rows = []
    for b in bins:
        mask = np.abs(labels[:, 3] - b) <= BIN_HALF_WIDTH + 1e-12
        n = int(mask.sum())
        if n == 0:
            rows.append(ErrorRow(b, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, 0, True))
            continue
        pred = model.predict(feats[mask])
        truth = labels[mask]
        loc_err = np.hypot(pred[:, 0] - truth[:, 1], pred[:, 1] - truth[:, 2])
        if pred.shape[1] >= 3:
            dep_err = np.abs(pred[:, 2] - truth[:, 3])
        else:
            dep_err = np.full(n, np.nan)
        lm, la, ls = _bin_stats(loc_err)
        dm, da_, ds_ = _bin_stats(dep_err) if pred.shape[1] >= 3 else (np.nan, np.nan, np.nan)
        rows.append(ErrorRow(b, lm, la, ls, dm, da_, ds_, n, n < SPARSE_BIN_MIN))
        if predictions is not None:
            predictions[b] = (truth[:, 1:3].copy(), pred[:, :2].copy())
    return ErrorTable(rows=rows, model_kind=model.kind, config_digest=test.config_digest, dataset_digest=dataset_digest(test))


@dataclass
class ClassificationCurve:
    depths: np.ndarray
    fraction: np.ndarray
    counts: np.ndarray

    def at(self, depth: float) -> float:
        i = int(np.argmin(np.abs(self.depths - depth)))
        if abs(self.depths[i] - depth) > 1e-6:
            raise KeyError(f"no curve point at depth {depth}")
        return float(self.fraction[i])

    def to_csv(self) -> str:
        lines = ["depth_mm,fraction,n"]
        for d, f, n in zip(self.depths, self.fraction, self.counts):
            lines.append(f"{fmt_float(float(d))},{fmt_float(float(f))},{int(n)}")
        return "\n".join(lines) + "\n"


def classification_curve(classifier: TrainedModel, test: Dataset, granularity: float = 0.1, mode: str = "touch") -> ClassificationCurve:
    """Fraction of frames predicted touch (or tip-correct) per schedule depth."""
    labels = test.labels()
    feats = test.features()
    d = np.round(labels[:, 3] / granularity) * granularity
    d = np.where(d == 0, 0.0, d)
    pred = classifier.predict(feats)
    if mode == "touch":
        hit = pred.astype(bool)
    elif mode == "tip":
        hit = pred == (labels[:, 0].astype(int) - 1)
    else:
        raise EvaluationError(f"unknown curve mode {mode!r}")
    depths = np.unique(d)
    frac = np.empty(len(depths))
    counts = np.empty(len(depths), dtype=int)
    for i, b in enumerate(depths):
        m = d == b
        counts[i] = m.sum()
        frac[i] = hit[m].mean()
    return ClassificationCurve(depths=depths, fraction=frac, counts=counts)


# --- terminal-removal ablation -------------------------------------------------------


def load_ablation_masks(build: str = "tht") -> dict[str, list[int]]:
    """Named removed-terminal sets from the versioned fixture file."""
    text = resources.files("pairsense.data").joinpath("ablation_masks.json").read_text()
    data = json.loads(text)
    if build not in data:
        raise EvaluationError(f"no ablation masks for build {build!r}")
    return {k: list(v) for k, v in data[build].items()}


def channel_mask_for_removal(config: SensorConfig, removed: list[int]) -> np.ndarray:
    """Boolean keep-mask over feature channels after removing terminals."""
    ids = {t.id for t in config.terminals}
    unknown = set(removed) - ids
    if unknown:
        raise EvaluationError(f"mask references unknown terminal ids {sorted(unknown)}")
    pair_index = enumerate_pairs(config)
    removed_set = set(removed)
    keep = np.array([(a not in removed_set) and (b not in removed_set) for a, b in pair_index.pairs])
    emitters = {t.id for t in config.emitters}
    receivers = {t.id for t in config.receivers}
    if emitters and emitters <= removed_set:
        raise EvaluationError("mask removes every emitter")
    if receivers and receivers <= removed_set:
        raise EvaluationError("mask removes every receiver")
    return keep


def ablate_terminals(
    config: SensorConfig,
    masks: dict[str, list[int]],
    train: list[Dataset],
    test: Dataset,
    depth_increment: float = 0.5,
    refit_full: bool = False,
) -> dict[str, ErrorTable]:
    """Baseline plus per-mask error tables.

    Every feature channel involving a removed terminal is dropped; the
    regressor is recalibrated and refit per mask. The empty mask reproduces
    the baseline run exactly.
    """
    ts = regression_set(train, depth_increment=depth_increment)
    tables: dict[str, ErrorTable] = {}
    all_masks = {"baseline": []}
    all_masks.update(masks)
    for name, removed in all_masks.items():
        keep = channel_mask_for_removal(config, removed)
        sub = TrainingSet(X=ts.X[:, keep], Y=ts.Y, event_ids=ts.event_ids)
        model, record = fit_krr_calibrated(sub, refit_full=refit_full)
        tm = TrainedModel(
            kind="krr",
            model=model,
            config_digest=config.digest(),
            channel_mask=keep,
            calibration=record.to_dict(),
        )
        tables[name] = error_table(tm, test)
    return tables


def ablate_tips(
    tip_datasets: dict[int, Dataset],
    lam: float,
    sigma: float,
    depth_increment: float = 0.5,
    surface_fine_below: float = 1.0,
    eval_depth: dict[int, float] | None = None,
) -> dict[int, ErrorRow]:
    """Leave-one-tip-out generalization: six folds, each trained on five tips
    and tested only on the held-out tip at its evaluation depth (2 mm; 1 mm
    for the planar tip, which never reaches 2 mm)."""
    if set(tip_datasets) != {1, 2, 3, 4, 5, 6}:
        raise EvaluationError(f"need all six tip datasets, got {sorted(tip_datasets)}")
    eval_depth = eval_depth or {cls: (1.0 if cls == 2 else 2.0) for cls in range(1, 7)}
    out: dict[int, ErrorRow] = {}
    for held in sorted(tip_datasets):
        train_sets = [ds for cls, ds in sorted(tip_datasets.items()) if cls != held]
        ts = regression_set(train_sets, depth_increment=depth_increment, surface_fine_below=surface_fine_below)
        model = fit_krr(ts.X, ts.Y, lam, sigma)
        tm = TrainedModel(kind="krr", model=model, config_digest=tip_datasets[held].config_digest)
        table = error_table(tm, tip_datasets[held], bins=(eval_depth[held],))
        out[held] = table.rows[0]
    return out


# --- report rendering ----------------------------------------------------------------


def render_report(
    out_dir: str | Path,
    tables: dict[str, ErrorTable] | None = None,
    curves: dict[str, ClassificationCurve] | None = None,
    predictions: dict[float, tuple[np.ndarray, np.ndarray]] | None = None,
    rect: tuple[float, float, float, float] | None = None,
    run_id: str = "run",
) -> list[Path]:
    """Write CSV tables, classification-curve CSVs and the arrow-plot SVG.

    Returns the list of written paths (deterministic content and order).
    """
    out_dir = Path(out_dir)
    written: list[Path] = []
    for name, table in (tables or {}).items():
        p = out_dir / f"{run_id}_{name}_errors.csv"
        atomic_write_text(p, table.to_csv())
        written.append(p)
    for name, curve in (curves or {}).items():
        p = out_dir / f"{run_id}_{name}_curve.csv"
        atomic_write_text(p, curve.to_csv())
        written.append(p)
    if predictions:
        if rect is None:
            raise EvaluationError("arrow plots need the sensing-area rectangle")
        p = out_dir / f"{run_id}_arrows.svg"
        atomic_write_text(p, arrow_plot_svg(predictions, rect))
        written.append(p)
    return written


def arrow_plot_svg(
    predictions: dict[float, tuple[np.ndarray, np.ndarray]],
    rect: tuple[float, float, float, float],
    scale: float = 10.0,
) -> str:
    """One panel per depth bin; each arrow runs from the ground-truth
    location (base) to the predicted location (head)."""
    xmin, ymin, xmax, ymax = rect
    w = (xmax - xmin) * scale
    h = (ymax - ymin) * scale
    pad = 14.0
    label_h = 16.0
    bins = sorted(predictions)
    total_w = pad + len(bins) * (w + pad)
    total_h = h + 2 * pad + label_h

    def sx(x):
        return (x - xmin) * scale

    def sy(y):
        return (ymax - y) * scale  # svg y grows downward

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.1f}" height="{total_h:.1f}" '
        f'viewBox="0 0 {total_w:.1f} {total_h:.1f}">',
        "<style>line{stroke:#c0392b;stroke-width:1.2}circle{fill:#2c3e50}"
        "rect{fill:none;stroke:#7f8c8d;stroke-width:1}text{font:11px sans-serif;fill:#2c3e50}</style>",
    ]
    for i, b in enumerate(bins):
        ox = pad + i * (w + pad)
        oy = pad + label_h
        truth, pred = predictions[b]
        parts.append(f'<g transform="translate({ox:.1f},{oy:.1f})">')
        parts.append(f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}"/>')
        parts.append(f'<text x="2" y="-5">depth {b:g} mm (n={len(truth)})</text>')
        for (tx, ty), (px, py) in zip(truth, pred):
            x1, y1 = sx(tx), sy(ty)
            x2, y2 = sx(px), sy(py)
            parts.append(f'<circle cx="{x1:.2f}" cy="{y1:.2f}" r="1.6"/>')
            parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}"/>')
            dx, dy = x2 - x1, y2 - y1
            norm = float(np.hypot(dx, dy))
            if norm > 1e-9:
                ux, uy = dx / norm, dy / norm
                hx, hy = x2 - 4.0 * ux, y2 - 4.0 * uy
                parts.append(
                    f'<polygon points="{x2:.2f},{y2:.2f} {hx + 1.6 * uy:.2f},{hy - 1.6 * ux:.2f} '
                    f'{hx - 1.6 * uy:.2f},{hy + 1.6 * ux:.2f}" fill="#c0392b"/>'
                )
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
