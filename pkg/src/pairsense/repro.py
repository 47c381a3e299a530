"""One-command reproduction of the full study suite.

``repro_paper`` chains the resistive localization study, the
thickness sweep, the perimeter-optical regression/touch/terminal-removal
studies, the large-sensor multistage comparison and the six-tip SMT studies,
writing every table as CSV plus arrow-plot SVGs under the output directory.

``scale="smoke"`` runs the identical code paths on miniature schedules and
budgets (minutes, used for reproducibility gating); ``scale="full"`` runs the
desk-scale studies the acceptance suite checks (tens of minutes to hours).
All randomness derives from the given seed: two runs with the same seed on
the same machine produce byte-identical artifacts.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipelines as pl
from .evaluation import render_report
from .geometry import all_tips, hemisphere_tip, sensing_area
from .modelio import TrainedModel, save_model
from .optics import RayBudget, thickness_sweep
from .protocol import collect, make_schedule, precompute_traces, save
from .util import atomic_write_text, fmt_float


def _csv(path: Path, header: list[str], rows: list[list]) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_float(v) if isinstance(v, float) else str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def _table_rows(table) -> list[list]:
    return [
        [r.depth, r.loc_median, r.loc_mean, r.loc_std, r.depth_median, r.depth_mean, r.depth_std, r.n]
        for r in table.rows
    ]


_TABLE_HEADER = ["depth_mm", "loc_median", "loc_mean", "loc_std", "depth_median", "depth_mean", "depth_std", "n"]


def _subsample_events(schedule, keep: int):
    step = max(len(schedule.events) // keep, 1)
    return replace(schedule, events=schedule.events[::step][:keep])


def repro_paper(out_dir: str | Path, seed: int = 0, scale: str = "smoke", workers: int = 1) -> list[Path]:
    out = Path(out_dir)
    smoke = scale == "smoke"
    outputs: list[Path] = []

    # --- resistive localization study (Table I analog)
    bundle = pl.collect_resistive_bundle(
        seed=seed, n_train_sets=1 if smoke else 4, n_test=12 if smoke else 60
    )
    res = pl.resistive_study(bundle)
    outputs.append(
        _csv(
            out / "resistive" / "location_accuracy.csv",
            ["predictor", "median_mm", "mean_mm", "std_mm"],
            [[name, *res[name]] for name in ("center", "random", "linear", "krr")],
        )
    )

    # --- two-mode thickness sweep (dead-band study)
    sweep_budget = RayBudget(rays_per_emitter=1500 if smoke else 20000)
    depths = np.arange(0.0, 5.0001, 0.5 if smoke else 0.1)
    curves = thickness_sweep([8.0, 12.0] if smoke else [5.0, 7.0, 8.0, 10.0, 12.0], depths=depths, budget=sweep_budget, seed=seed)
    rows = []
    for c in curves:
        band = c.dead_band or ("", "")
        rows.append([f"{c.thickness:g}", "1" if c.dead_band else "0", band[0], band[1]])
        outputs.append(
            _csv(
                out / "sweep" / f"signal_t{c.thickness:g}.csv",
                ["depth_mm", "signal_counts"],
                [[float(d), float(s)] for d, s in zip(c.depths, c.signal)],
            )
        )
    outputs.append(_csv(out / "sweep" / "dead_bands.csv", ["thickness_mm", "dead_band", "start_mm", "end_mm"], rows))

    # --- perimeter optical (THT) studies
    budget = RayBudget(rays_per_emitter=1200 if smoke else 4000)
    if smoke:
        config = pl._optical_config("tht", seed)
        profile = pl.thinned_profile(pitch=0.5)
        schedules = []
        for i, lighting in enumerate(("ambient", "ambient", "dark", "dark")):
            sch = pl._with_profile(make_schedule("tht", "train", lighting=lighting, seed=seed + i), profile)
            schedules.append(_subsample_events(sch, 20))
        for i, lighting in enumerate(("dark", "ambient")):
            sch = pl._with_profile(make_schedule("tht", "test", lighting=lighting, seed=seed + 4 + i, n_random=10), profile)
            schedules.append(sch)
        cache = precompute_traces(config, schedules, budget=budget, workers=workers)
        sets = [collect(config, sch, budget=budget, cache=cache) for sch in schedules]
        tht = pl.ThtBundle(config=config, train_ambient=sets[0:2], train_dark=sets[2:4], test_dark=sets[4], test_ambient=sets[5])
    else:
        tht = pl.collect_tht_bundle(seed=seed, budget=budget, workers=workers)
    reg = pl.tht_regression_study(tht)
    outputs.append(_csv(out / "tht" / "errors_ambient.csv", _TABLE_HEADER, _table_rows(reg["table_ambient"])))
    outputs.append(_csv(out / "tht" / "errors_dark.csv", _TABLE_HEADER, _table_rows(reg["table_dark"])))
    outputs.append(save_model(reg["model"], out / "tht" / "krr.model"))
    rect = sensing_area(tht.config, hemisphere_tip())
    outputs.extend(
        render_report(out / "tht", predictions=reg["predictions_ambient"], rect=rect, run_id="ambient")
    )

    touch = pl.touch_study(tht, seeds=(seed,), epochs=2 if smoke else 6, kinds=("mlp", "svm"))
    for kind, curves_ in touch["curves"].items():
        c = curves_[0]
        outputs.append(
            _csv(
                out / "tht" / f"touch_{kind}.csv",
                ["depth_mm", "touch_fraction", "n"],
                [[float(d), float(f), int(n)] for d, f, n in zip(c.depths, c.fraction, c.counts)],
            )
        )

    removal = pl.terminal_removal_study(seed=seed, budget=budget, workers=workers, n_test=8 if smoke else 60) if not smoke else None
    if smoke:
        # smoke scale reuses the bundle's training set for the removal cases
        from .evaluation import ablate_terminals, load_ablation_masks

        removal = ablate_terminals(tht.config, load_ablation_masks("tht"), tht.train_dark, tht.test_dark)
    outputs.append(
        _csv(
            out / "tht" / "terminal_removal.csv",
            ["case"] + _TABLE_HEADER,
            [[name, *row] for name, table in sorted(removal.items()) for row in _table_rows(table)],
        )
    )

    # --- large-sensor multistage comparison (Table IV analog)
    if smoke:
        config = pl._optical_config("tht_large", seed)
        profile = pl.thinned_profile(pitch=0.5)
        train_sch = _subsample_events(pl._with_profile(make_schedule("tht_large", "train", lighting="dark", seed=seed), pl.thinned_profile(pitch=0.2)), 24)
        test_sch = pl._with_profile(make_schedule("tht_large", "test", lighting="dark", seed=seed + 4, n_random=10), profile)
        cache = precompute_traces(config, [train_sch, test_sch], budget=budget, workers=workers)
        train = collect(config, train_sch, budget=budget, cache=cache)
        test = collect(config, test_sch, budget=budget, cache=cache)
        single = pl.single_stage_model([train])
        from .evaluation import error_table
        from .learning import fit_multistage, regression_set

        t_single = error_table(single, test)
        ts_full = regression_set([train], depth_increment=0.1)
        multi = fit_multistage(ts_full, lam=single.model.lam, sigma=single.model.sigma)
        t_multi = error_table(TrainedModel(kind="multistage", model=multi, config_digest=train.config_digest), test)
        ms = {"single": t_single, "multi": t_multi}
    else:
        ms = pl.multistage_study(seed=seed, budget=budget, workers=workers)
    outputs.append(
        _csv(
            out / "large" / "multistage.csv",
            ["stage"] + _TABLE_HEADER,
            [["single", *row] for row in _table_rows(ms["single"])] + [["multi", *row] for row in _table_rows(ms["multi"])],
        )
    )

    # --- SMT six-tip studies (tip classification, all-tips regression, LOO)
    smt_budget = RayBudget(rays_per_emitter=1000 if smoke else 3000)
    if smoke:
        config = pl._optical_config("smt", seed)
        from .protocol import TraceCache

        cache = TraceCache()
        by_tip = {}
        for tip in all_tips():
            sch = _subsample_events(make_schedule("smt", "train", tips=[tip], lighting="dark", seed=seed + tip.class_id), 8)
            precompute_traces(config, [sch], budget=smt_budget, cache=cache, workers=workers)
            by_tip[tip.class_id] = collect(config, sch, budget=smt_budget, cache=cache)
        smt = pl.SmtBundle(config=config, by_tip=by_tip, train_events=6)
    else:
        smt = pl.collect_smt_bundle(seed=seed, budget=smt_budget, workers=workers)
    tips_study = pl.tip_classification_study(smt, seed=seed, epochs=2 if smoke else 8)
    c = tips_study["curve"]
    outputs.append(
        _csv(
            out / "smt" / "tip_classification.csv",
            ["depth_mm", "accuracy", "n"],
            [[float(d), float(f), int(n)] for d, f, n in zip(c.depths, c.fraction, c.counts)],
        )
    )
    allt = pl.all_tips_regression_study(smt)
    outputs.append(_csv(out / "smt" / "errors_all_tips.csv", _TABLE_HEADER, _table_rows(allt["table"])))
    loo = pl.tip_removal_study(smt, lam=allt["record"].lam, sigma=allt["record"].sigma)
    outputs.append(
        _csv(
            out / "smt" / "tip_removal.csv",
            ["tip_class", "eval_depth", "loc_median", "loc_mean", "loc_std", "depth_median", "depth_mean", "depth_std", "n"],
            [[cls, r.depth, r.loc_median, r.loc_mean, r.loc_std, r.depth_median, r.depth_mean, r.depth_std, r.n] for cls, r in sorted(loo.items())],
        )
    )
    return outputs
