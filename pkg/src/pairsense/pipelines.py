"""End-to-end experiment pipelines: collect, train, evaluate, ablate.

Each function reproduces one study from the reference protocol at desk
scale: the resistive localization study, the perimeter-optical (THT)
localization/touch studies with terminal removal, the large-sensor
multistage comparison, and the surface-mount (SMT) six-tip studies with
leave-one-tip-out folds. The CLI's ``repro-paper`` command and the
acceptance suite are thin wrappers over these.

Seeds fix everything: schedules, noise streams, classifier initialization.
Collection runtime is dominated by ray tracing; ``workers`` parallelizes the
unique-pose trace precompute (outputs are worker-count independent).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import SensorConfig, all_tips, build_layout
from .learning import (
    classification_set,
    fit_baselines,
    fit_krr_calibrated,
    fit_linear,
    fit_multistage,
    regression_set,
)
from .modelio import TrainedModel
from .nets import fit_tip_classifier, fit_touch_classifier
from .optics import RayBudget
from .protocol import (
    COLLECT_BUDGET,
    Dataset,
    IndentationSchedule,
    TraceCache,
    collect,
    make_schedule,
    precompute_traces,
)
from .evaluation import (
    ClassificationCurve,
    ErrorTable,
    ablate_terminals,
    ablate_tips,
    classification_curve,
    error_table,
    load_ablation_masks,
)

OPTICAL_SHOT_SIGMA = 0.25  # counts
RESISTIVE_SHOT_SIGMA = 0.5  # ohms


def _step(x: float) -> float:
    x = float(round(x, 10))
    return 0.0 if x == 0 else x


def thinned_profile(max_depth: float = 5.0, pitch: float = 0.25) -> tuple[float, ...]:
    """Reduced depth profile (approach from -2, mirrored) for studies that
    only train on the 0.5 mm grid; keeps collection desk-scale."""
    n = int(round(max_depth / pitch))
    descent = [-2.0, -1.0] + [_step(pitch * i) for i in range(n + 1)]
    return tuple(descent + descent[-2::-1])


def _with_profile(schedule: IndentationSchedule, profile: tuple[float, ...]) -> IndentationSchedule:
    return replace(schedule, depth_profiles={cls: profile for cls in schedule.depth_profiles})


def _optical_config(build: str, seed: int) -> SensorConfig:
    return build_layout(build, seed=seed).with_noise(shot_noise_sigma=OPTICAL_SHOT_SIGMA)


def single_stage_model(train: list[Dataset], refit_full: bool = False) -> TrainedModel:
    """Calibrated Laplacian-KRR (x, y, d) regressor on 0.5 mm-undersampled
    in-contact rows, the single-stage reference pipeline."""
    ts = regression_set(train, depth_increment=0.5)
    model, record = fit_krr_calibrated(ts, refit_full=refit_full)
    return TrainedModel(
        kind="krr",
        model=model,
        config_digest=train[0].config_digest,
        calibration=record.to_dict(),
    )


# --- THT bundle (criteria 6, 7, 12) ---------------------------------------------------


@dataclass
class ThtBundle:
    config: SensorConfig
    train_ambient: list[Dataset]
    train_dark: list[Dataset]
    test_dark: Dataset
    test_ambient: Dataset

    @property
    def train_all(self) -> list[Dataset]:
        return self.train_ambient + self.train_dark


def collect_tht_bundle(
    seed: int = 0,
    budget: RayBudget | None = None,
    workers: int = 1,
    build: str = "tht",
    n_test: int = 100,
) -> ThtBundle:
    """Four grid training datasets (2 ambient + 2 dark) plus one random test
    set per lighting condition."""
    config = _optical_config(build, seed)
    budget = budget or COLLECT_BUDGET
    schedules = [
        make_schedule(build, "train", lighting="ambient", seed=seed + 0),
        make_schedule(build, "train", lighting="ambient", seed=seed + 1),
        make_schedule(build, "train", lighting="dark", seed=seed + 2),
        make_schedule(build, "train", lighting="dark", seed=seed + 3),
        make_schedule(build, "test", lighting="dark", seed=seed + 4, n_random=n_test),
        make_schedule(build, "test", lighting="ambient", seed=seed + 5, n_random=n_test),
    ]
    cache = precompute_traces(config, schedules, budget=budget, workers=workers)
    sets = [collect(config, sch, budget=budget, cache=cache) for sch in schedules]
    return ThtBundle(
        config=config,
        train_ambient=sets[0:2],
        train_dark=sets[2:4],
        test_dark=sets[4],
        test_ambient=sets[5],
    )


def tht_regression_study(bundle: ThtBundle) -> dict:
    """Single-stage KRR trained on all four datasets, error tables on both
    test lighting conditions, plus baseline predictors."""
    model = single_stage_model(bundle.train_all)
    preds_ambient: dict = {}
    preds_dark: dict = {}
    t_ambient = error_table(model, bundle.test_ambient, predictions=preds_ambient)
    t_dark = error_table(model, bundle.test_dark, predictions=preds_dark)
    center, rand = fit_baselines(bundle.train_dark[0])
    return {
        "model": model,
        "table_ambient": t_ambient,
        "table_dark": t_dark,
        "predictions_ambient": preds_ambient,
        "predictions_dark": preds_dark,
        "baselines": (center, rand),
    }


def touch_study(bundle: ThtBundle, seeds: tuple[int, ...] = (0, 1, 2), epochs: int = 30, kinds: tuple[str, ...] = ("mlp",)) -> dict:
    """Touch classifiers (trained on both in- and out-of-contact frames) and
    their touch-rate-vs-depth curves on the dark test set, per seed."""
    ts = classification_set(bundle.train_all, "touch")
    curves: dict[str, list[ClassificationCurve]] = {k: [] for k in kinds}
    for kind in kinds:
        for s in seeds:
            clf = fit_touch_classifier(ts.X, ts.Y.ravel(), kind=kind, seed=s, epochs=epochs)
            tm = TrainedModel(kind=kind, model=clf, config_digest=bundle.config.digest(), seed=s)
            curves[kind].append(classification_curve(tm, bundle.test_dark, mode="touch"))
    return {"curves": curves, "n_rows": len(ts.X)}


def mean_touch_rate(curves: list[ClassificationCurve], depth: float) -> float:
    return float(np.mean([c.at(depth) for c in curves]))


def ambient_robustness_study(bundle: ThtBundle) -> dict:
    """Ambient-trained/dark-tested vs matched dark-trained tables (the
    ambient-subtraction contract).

    Both models share the operating point calibrated on the dark pair, so
    the comparison isolates the lighting condition from grid-search jitter.
    """
    from .learning import _thin, calibrate_krr, fit_krr

    ts_dark = regression_set(bundle.train_dark, depth_increment=0.5)
    ts_amb = regression_set(bundle.train_ambient, depth_increment=0.5)
    record = calibrate_krr(ts_dark)
    digest = bundle.config.digest()
    models = {}
    for name, ts in (("matched", ts_dark), ("cross", ts_amb)):
        keep = _thin(len(ts.X), 4000)
        model = fit_krr(ts.X[keep], ts.Y[keep], record.lam, record.sigma)
        models[name] = TrainedModel(kind="krr", model=model, config_digest=digest, calibration=record.to_dict())
    return {
        "cross": error_table(models["cross"], bundle.test_dark),
        "matched": error_table(models["matched"], bundle.test_dark),
    }


# --- terminal removal (criterion 8) ---------------------------------------------------


def terminal_removal_study(
    seed: int = 0,
    budget: RayBudget | None = None,
    workers: int = 1,
    n_test: int = 60,
) -> dict[str, ErrorTable]:
    """One seeded collection (thinned depth profile) driving the baseline +
    four removal cases."""
    config = _optical_config("tht", seed)
    budget = budget or COLLECT_BUDGET
    train_sch = _with_profile(make_schedule("tht", "train", lighting="dark", seed=seed), thinned_profile())
    test_sch = _with_profile(
        make_schedule("tht", "test", lighting="dark", seed=seed + 4, n_random=n_test), thinned_profile()
    )
    cache = precompute_traces(config, [train_sch, test_sch], budget=budget, workers=workers)
    train = collect(config, train_sch, budget=budget, cache=cache)
    test = collect(config, test_sch, budget=budget, cache=cache)
    masks = load_ablation_masks("tht")
    return ablate_terminals(config, masks, [train], test)


def removal_medians(tables: dict[str, ErrorTable], depth: float = 2.0) -> dict[str, float]:
    return {name: t.row(depth).loc_median for name, t in tables.items()}


# --- large sensor multistage (criterion 9) --------------------------------------------


def multistage_study(seed: int = 0, budget: RayBudget | None = None, workers: int = 1, n_test: int = 100) -> dict:
    """45 mm build: single-stage (0.5 mm sampling) vs multistage (0.1 mm
    slice sampling) localization error tables."""
    config = _optical_config("tht_large", seed)
    budget = budget or COLLECT_BUDGET
    train_sch = make_schedule("tht_large", "train", lighting="dark", seed=seed)
    test_sch = _with_profile(
        make_schedule("tht_large", "test", lighting="dark", seed=seed + 4, n_random=n_test), thinned_profile()
    )
    cache = precompute_traces(config, [train_sch, test_sch], budget=budget, workers=workers)
    train = collect(config, train_sch, budget=budget, cache=cache)
    test = collect(config, test_sch, budget=budget, cache=cache)

    single = single_stage_model([train])
    t_single = error_table(single, test)

    ts_full = regression_set([train], depth_increment=0.1)
    multi = fit_multistage(ts_full, lam=single.model.lam, sigma_rel=single.model.sigma / max(single.calibration["median_distance"], 1e-12))
    tm_multi = TrainedModel(kind="multistage", model=multi, config_digest=train.config_digest)
    t_multi = error_table(tm_multi, test)
    return {"single": t_single, "multi": t_multi, "model_single": single, "model_multi": tm_multi}


# --- SMT six-tip studies (criteria 10, 11) --------------------------------------------


@dataclass
class SmtBundle:
    config: SensorConfig
    by_tip: dict[int, Dataset]  # full per-tip grid dataset
    train_events: int  # events per tip in the train split

    def split(self, ds: Dataset) -> tuple[list, list]:
        train = [f for f in ds.frames if f.event_id < self.train_events]
        test = [f for f in ds.frames if f.event_id >= self.train_events]
        return train, test

    def split_datasets(self) -> tuple[dict[int, Dataset], dict[int, Dataset]]:
        train, test = {}, {}
        for cls, ds in self.by_tip.items():
            tr, te = self.split(ds)
            train[cls] = replace_frames(ds, tr)
            test[cls] = replace_frames(ds, te)
        return train, test


def replace_frames(ds: Dataset, frames: list) -> Dataset:
    return Dataset(frames=frames, schedule=ds.schedule, config=ds.config, seed=ds.seed)


def collect_smt_bundle(
    seed: int = 0,
    budget: RayBudget | None = None,
    workers: int = 1,
    train_fraction: float = 0.7,
) -> SmtBundle:
    """One dark grid dataset per indenter tip, split by event for held-out
    evaluation."""
    config = _optical_config("smt", seed)
    budget = budget or RayBudget(rays_per_emitter=3000)
    schedules = {tip.class_id: make_schedule("smt", "train", tips=[tip], lighting="dark", seed=seed + tip.class_id) for tip in all_tips()}
    cache = TraceCache()
    by_tip = {}
    for cls, sch in sorted(schedules.items()):
        precompute_traces(config, [sch], budget=budget, cache=cache, workers=workers)
        by_tip[cls] = collect(config, sch, budget=budget, cache=cache)
    n_events = len(next(iter(schedules.values())).events)
    return SmtBundle(config=config, by_tip=by_tip, train_events=int(round(train_fraction * n_events)))


def tip_classification_study(bundle: SmtBundle, seed: int = 0, epochs: int = 8) -> dict:
    """Six-way tip classifier on the train split; accuracy-vs-depth curve on
    the held-out split of all six datasets."""
    train_by_tip, test_by_tip = bundle.split_datasets()
    ts = classification_set(list(train_by_tip.values()), "tip")
    clf = fit_tip_classifier(ts.X, ts.Y.ravel(), seed=seed, epochs=epochs)
    tm = TrainedModel(kind="mlp", model=clf, config_digest=bundle.config.digest(), seed=seed)
    merged = replace_frames(
        next(iter(test_by_tip.values())),
        [f for cls in sorted(test_by_tip) for f in test_by_tip[cls].frames],
    )
    curve = classification_curve(tm, merged, mode="tip")
    return {"classifier": tm, "curve": curve, "test_by_tip": test_by_tip, "train_by_tip": train_by_tip}


def all_tips_regression_study(bundle: SmtBundle) -> dict:
    """Calibrated KRR on all six tips (0.5 mm sampling, 0.1 mm near the
    surface) with per-bin error tables on the held-out split."""
    train_by_tip, test_by_tip = bundle.split_datasets()
    ts = regression_set(list(train_by_tip.values()), depth_increment=0.5, surface_fine_below=1.0)
    model, record = fit_krr_calibrated(ts)
    tm = TrainedModel(kind="krr", model=model, config_digest=bundle.config.digest(), calibration=record.to_dict())
    merged = replace_frames(
        next(iter(test_by_tip.values())),
        [f for cls in sorted(test_by_tip) for f in test_by_tip[cls].frames],
    )
    table = error_table(tm, merged)
    return {"model": tm, "table": table, "record": record}


def tip_removal_study(bundle: SmtBundle, lam: float, sigma: float) -> dict[int, object]:
    """Leave-one-tip-out folds at the calibrated operating point."""
    return ablate_tips(bundle.by_tip, lam=lam, sigma=sigma)


# --- resistive studies (Table I analog + criterion 12) --------------------------------


def collect_resistive_bundle(seed: int = 0, drift_rate: float = 0.0, n_train_sets: int = 4, n_test: int = 60) -> dict:
    config = build_layout("resistive", seed=seed).with_noise(
        shot_noise_sigma=RESISTIVE_SHOT_SIGMA, drift_rate=drift_rate
    )
    train = [collect(config, make_schedule("resistive", "train", seed=seed + i)) for i in range(n_train_sets)]
    test = collect(config, make_schedule("resistive", "test", seed=seed + 100))
    return {"config": config, "train": train, "test": test}


def resistive_study(bundle: dict) -> dict:
    """Center/random baselines, linear regression and calibrated KRR median
    localization error at the single 3 mm measurement depth."""
    train, test = bundle["train"], bundle["test"]
    ts = regression_set(train, depth_increment=0.5, targets="location")
    test_labels = test.labels()
    mask = test_labels[:, 3] > 0
    X_test = test.features()[mask]
    truth = test_labels[mask][:, 1:3]

    center, rand = fit_baselines(train[0])
    lin = fit_linear(ts.X, ts.Y)
    krr, record = fit_krr_calibrated(ts)

    def med(pred):
        e = np.hypot(pred[:, 0] - truth[:, 0], pred[:, 1] - truth[:, 1])
        return float(np.median(e)), float(e.mean()), float(e.std())

    return {
        "center": med(center.predict(X_test)),
        "random": med(rand.predict(X_test)),
        "linear": med(lin.predict(X_test)),
        "krr": med(krr.predict(X_test)),
        "record": record,
        "n_test": int(mask.sum()),
    }


def resistive_drift_robustness(seed: int = 0, drift_rate: float = 0.01) -> dict:
    """Median localization with and without conductance drift; baseline
    subtraction should keep them close."""
    clean = resistive_study(collect_resistive_bundle(seed=seed, drift_rate=0.0))
    drift = resistive_study(collect_resistive_bundle(seed=seed, drift_rate=drift_rate))
    return {"clean": clean["krr"], "drift": drift["krr"]}
