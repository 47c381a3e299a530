"""Command-line driver for the simulation + learning workbench.

Subcommands map one-to-one onto module operations::

    layout            emit the canonical config JSON for a named build
    sweep-thickness   signal-vs-depth curves + dead-band flags per layer height
    collect           simulate a train/test schedule into a dataset
    train             fit a predictor on collected datasets
    predict           run a saved model over a dataset
    evaluate          per-depth-bin error tables (+ arrow-plot SVG)
    ablate-terminals  baseline + terminal-removal cases
    ablate-tips       leave-one-tip-out folds
    report            render tables/curves from a finished evaluation
    repro-paper       chain the whole study suite with fixed seeds

Runs are reproducible: every command writes a ``manifest.json`` recording
the tool version, resolved parameters, seeds and the digest of every output
file; replaying a manifest's command line reproduces the outputs
byte-identically. A JSON run file (--run-file) mirrors the flags one-to-one;
explicit flags override file values.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 digest mismatch,
5 invalid run specification, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    EvaluationError,
    ablate_tips,
    classification_curve,
    error_table,
    load_ablation_masks,
    render_report,
)
from .geometry import GeometryError, build_layout, sensing_area, tip_from_class
from .learning import LearningError, classification_set, fit_krr_calibrated, fit_linear, fit_multistage, regression_set
from .modelio import ModelIOError, TrainedModel, load_model, save_model
from .nets import fit_tip_classifier, fit_touch_classifier
from .optics import OpticsError, RayBudget, thickness_sweep
from .protocol import COLLECT_BUDGET, ProtocolError, collect, load, make_schedule, precompute_traces, save
from .util import atomic_write_text, fmt_float, sha256_hex

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_DIGEST = 4
EXIT_BAD_SPEC = 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_manifest(out_dir: Path, command: str, params: dict, outputs: list[Path]) -> None:
    manifest = {
        "tool": "pairsense",
        "version": __version__,
        "command": command,
        # out/run_file are execution context, not experiment identity; keeping
        # them out makes reruns into different directories byte-comparable
        "params": {k: v for k, v in sorted(params.items()) if k not in ("func", "out", "run_file")},
        "outputs": [
            {"path": str(p.relative_to(out_dir)), "sha256": sha256_hex(p.read_bytes())}
            for p in sorted(outputs)
        ],
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing input: {p}", EXIT_MISSING_INPUT)
    return p


def _load_datasets(bases: list[str]):
    sets = []
    for b in bases:
        _require_file(Path(b).with_suffix(".csv"))
        _require_file(Path(b).with_suffix(".json"))
        sets.append(load(b))
    digests = {ds.config_digest for ds in sets}
    if len(digests) > 1:
        raise CliError("datasets come from different sensor configs", EXIT_DIGEST)
    return sets


def _budget(args) -> RayBudget:
    return RayBudget(rays_per_emitter=args.rays, max_bounces=args.bounces, march_step=args.march_step)


# --- subcommand implementations --------------------------------------------------------


def cmd_layout(args) -> int:
    out = _out_dir(args)
    config = build_layout(args.build, seed=args.seed)
    path = out / f"{args.build}_config.json"
    config.save(path)
    _write_manifest(out, "layout", vars(args), [path])
    print(f"{args.build}: {len(config.terminals)} terminals -> {path}")
    return EXIT_OK


def cmd_sweep_thickness(args) -> int:
    out = _out_dir(args)
    thicknesses = [float(t) for t in args.thicknesses.split(",")]
    curves = thickness_sweep(thicknesses, budget=_budget(args), seed=args.seed)
    outputs = []
    flags = {}
    for c in curves:
        p = out / f"sweep_t{c.thickness:g}.csv"
        lines = ["depth_mm,signal_counts"]
        lines += [f"{fmt_float(float(d))},{fmt_float(float(s))}" for d, s in zip(c.depths, c.signal)]
        atomic_write_text(p, "\n".join(lines) + "\n")
        outputs.append(p)
        flags[f"{c.thickness:g}"] = {"dead_band": c.dead_band}
        band = f"dead band {c.dead_band[0]:.1f}-{c.dead_band[1]:.1f} mm" if c.dead_band else "no dead band"
        print(f"thickness {c.thickness:g} mm: {band}")
    p = out / "dead_bands.json"
    atomic_write_text(p, json.dumps(flags, indent=2, sort_keys=True) + "\n")
    outputs.append(p)
    _write_manifest(out, "sweep-thickness", vars(args), outputs)
    return EXIT_OK


def cmd_collect(args) -> int:
    out = _out_dir(args)
    config = build_layout(args.build, seed=args.config_seed)
    if args.noise_sigma is not None:
        config = config.with_noise(shot_noise_sigma=args.noise_sigma)
    if args.drift:
        config = config.with_noise(bond_detach=True) if config.transduction == "optical" else config.with_noise(drift_rate=0.01)
    tips = [tip_from_class(int(c)) for c in args.tips.split(",")] if args.tips else None
    schedule = make_schedule(
        args.build, args.purpose, tips=tips, lighting=args.lighting, seed=args.seed, n_random=args.n_random
    )
    budget = _budget(args)
    cache = precompute_traces(config, [schedule], budget=budget, workers=args.workers) if config.transduction == "optical" else None
    ds = collect(config, schedule, budget=budget, cache=cache, workers=1)
    base = out / (args.name or f"{args.build}_{args.purpose}_{args.lighting}_s{args.seed}")
    csv_path, man_path = save(ds, base)
    _write_manifest(out, "collect", vars(args), [csv_path, man_path])
    print(f"collected {len(ds.frames)} frames over {schedule.n_events} events -> {csv_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args)
    sets = _load_datasets(args.data)
    config_digest = sets[0].config_digest
    seed = args.seed
    if args.model == "krr":
        ts = regression_set(sets, depth_increment=args.depth_increment, surface_fine_below=args.fine_below)
        model, record = fit_krr_calibrated(ts, refit_full=args.refit_full)
        if not args.calibrate and (args.lam is not None and args.sigma is not None):
            from .learning import fit_krr

            model = fit_krr(ts.X, ts.Y, args.lam, args.sigma)
            record = None
        tm = TrainedModel(kind="krr", model=model, config_digest=config_digest,
                          calibration=record.to_dict() if record else None, seed=seed)
    elif args.model == "linear":
        ts = regression_set(sets, depth_increment=args.depth_increment)
        tm = TrainedModel(kind="linear", model=fit_linear(ts.X, ts.Y), config_digest=config_digest, seed=seed)
    elif args.model == "multistage":
        ts = regression_set(sets, depth_increment=0.1)
        lam = args.lam if args.lam is not None else 1e-4
        model = fit_multistage(ts, lam=lam, sigma=args.sigma)
        tm = TrainedModel(kind="multistage", model=model, config_digest=config_digest, seed=seed)
    elif args.model in ("touch-mlp", "touch-svm"):
        ts = classification_set(sets, "touch")
        kind = "mlp" if args.model.endswith("mlp") else "svm"
        clf = fit_touch_classifier(ts.X, ts.Y.ravel(), kind=kind, seed=seed, epochs=args.epochs)
        tm = TrainedModel(kind=kind, model=clf, config_digest=config_digest, seed=seed)
    elif args.model == "tip-mlp":
        ts = classification_set(sets, "tip")
        clf = fit_tip_classifier(ts.X, ts.Y.ravel(), seed=seed, epochs=args.epochs)
        tm = TrainedModel(kind="mlp", model=clf, config_digest=config_digest, seed=seed)
    else:
        raise CliError(f"unknown model kind {args.model!r}", EXIT_BAD_SPEC)
    path = out / (args.name or f"{args.model}.model")
    save_model(tm, path)
    _write_manifest(out, "train", {**vars(args), "data": list(args.data)}, [path])
    if tm.calibration:
        print(f"calibrated lam={tm.calibration['lam']:.3e} sigma={tm.calibration['sigma']:.4g} "
              f"(gamma={tm.calibration['gamma']:.3e})")
    print(f"trained {args.model} on {sum(len(s.frames) for s in sets)} frames -> {path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    out = _out_dir(args)
    tm = load_model(_require_file(args.model))
    ds = _load_datasets([args.data])[0]
    if tm.config_digest and tm.config_digest != ds.config_digest:
        raise CliError("model and dataset config digests differ", EXIT_DIGEST)
    pred = tm.predict(ds.features())
    p = out / "predictions.csv"
    cols = ["x_pred", "y_pred", "d_pred"][: pred.shape[1]] if pred.ndim == 2 else ["label_pred"]
    lines = [",".join(["event_id", "step_index"] + cols)]
    for f, row in zip(ds.frames, np.atleast_2d(pred.T).T):
        vals = [fmt_float(float(v)) for v in np.atleast_1d(row)]
        lines.append(",".join([str(f.event_id), str(f.step_index)] + vals))
    atomic_write_text(p, "\n".join(lines) + "\n")
    _write_manifest(out, "predict", vars(args), [p])
    print(f"predicted {len(ds.frames)} frames -> {p}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    tm = load_model(_require_file(args.model))
    ds = _load_datasets([args.data])[0]
    preds: dict = {}
    try:
        table = error_table(tm, ds, predictions=preds)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_DIGEST) from exc
    tip = tip_from_class(ds.frames[0].tip_class)
    rect = sensing_area(ds.config, tip)
    outputs = render_report(out, tables={"eval": table}, predictions=preds, rect=rect, run_id=args.run_id)
    _write_manifest(out, "evaluate", vars(args), outputs)
    for r in table.rows:
        print(f"d={r.depth:4}: loc median={r.loc_median:.3f} mm  depth median={r.depth_median:.3f} mm  (n={r.n})")
    return EXIT_OK


def cmd_ablate_terminals(args) -> int:
    out = _out_dir(args)
    from .evaluation import ablate_terminals as run_ablation

    train = _load_datasets(args.train)
    test = _load_datasets([args.test])[0]
    masks = load_ablation_masks(train[0].config.build)
    tables = run_ablation(train[0].config, masks, train, test)
    outputs = render_report(out, tables=tables, run_id=args.run_id)
    _write_manifest(out, "ablate-terminals", {**vars(args), "train": list(args.train)}, outputs)
    for name in ("baseline", "case1", "case2", "case3", "case4"):
        r = tables[name].row(2.0)
        print(f"{name}: loc median @2mm = {r.loc_median:.3f} mm")
    return EXIT_OK


def cmd_ablate_tips(args) -> int:
    out = _out_dir(args)
    sets = _load_datasets(args.data)
    by_tip = {}
    for ds in sets:
        cls = ds.frames[0].tip_class
        if cls in by_tip:
            raise CliError(f"duplicate dataset for tip class {cls}", EXIT_BAD_SPEC)
        by_tip[cls] = ds
    try:
        rows = ablate_tips(by_tip, lam=args.lam, sigma=args.sigma)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_BAD_SPEC) from exc
    p = out / "tip_removal.csv"
    lines = ["tip_class,eval_depth,loc_median,loc_mean,loc_std,depth_median,depth_mean,depth_std,n"]
    for cls in sorted(rows):
        r = rows[cls]
        lines.append(",".join([str(cls)] + [fmt_float(v) for v in
                     (r.depth, r.loc_median, r.loc_mean, r.loc_std, r.depth_median, r.depth_mean, r.depth_std)] + [str(r.n)]))
    atomic_write_text(p, "\n".join(lines) + "\n")
    _write_manifest(out, "ablate-tips", {**vars(args), "data": list(args.data)}, [p])
    for cls in sorted(rows):
        print(f"tip {cls} removed: loc median {rows[cls].loc_median:.3f} mm @ {rows[cls].depth:g} mm")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    tm = load_model(_require_file(args.model))
    ds = _load_datasets([args.data])[0]
    preds: dict = {}
    table = error_table(tm, ds, predictions=preds)
    curves = {}
    if args.touch_model:
        touch = load_model(_require_file(args.touch_model))
        curves["touch"] = classification_curve(touch, ds, mode="touch")
    tip = tip_from_class(ds.frames[0].tip_class)
    rect = sensing_area(ds.config, tip)
    outputs = render_report(out, tables={"errors": table}, curves=curves, predictions=preds, rect=rect, run_id=args.run_id)
    _write_manifest(out, "report", vars(args), outputs)
    print(f"report written to {out}")
    return EXIT_OK


def cmd_repro_paper(args) -> int:
    from .repro import repro_paper

    out = _out_dir(args)
    outputs = repro_paper(out, seed=args.seed, scale=args.scale, workers=args.workers)
    _write_manifest(out, "repro-paper", vars(args), outputs)
    print(f"repro suite complete: {len(outputs)} artifacts under {out}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, rays_default: int = COLLECT_BUDGET.rays_per_emitter):
    p.add_argument("--out", default="runs/out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rays", type=int, default=rays_default, help="rays per emitter")
    p.add_argument("--bounces", type=int, default=4)
    p.add_argument("--march-step", type=float, default=0.2, dest="march_step")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairsense", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--run-file", help="JSON file of flag values (explicit flags override)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("layout", help="emit canonical build config")
    p.add_argument("--build", required=True, choices=["resistive", "tht", "tht_large", "smt"])
    _add_common(p)
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("sweep-thickness", help="two-mode thickness sweep")
    p.add_argument("--thicknesses", default="5,7,8,10,12")
    _add_common(p, rays_default=20000)
    p.set_defaults(func=cmd_sweep_thickness)

    p = sub.add_parser("collect", help="simulate a dataset")
    p.add_argument("--build", required=True, choices=["resistive", "tht", "tht_large", "smt"])
    p.add_argument("--config-seed", type=int, default=0, dest="config_seed",
                   help="sensor identity seed (fixed emitter patterns); keep equal across datasets of one sensor")
    p.add_argument("--purpose", required=True, choices=["train", "test"])
    p.add_argument("--lighting", default="dark", choices=["ambient", "dark"])
    p.add_argument("--tips", default=None, help="comma-separated tip class ids (smt)")
    p.add_argument("--n-random", type=int, default=None, dest="n_random")
    p.add_argument("--noise-sigma", type=float, default=None, dest="noise_sigma")
    p.add_argument("--drift", action="store_true", help="enable the build's drift nuisance")
    p.add_argument("--name", default=None, help="output base name")
    _add_common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit a predictor")
    p.add_argument("--model", required=True,
                   choices=["krr", "linear", "multistage", "touch-mlp", "touch-svm", "tip-mlp"])
    p.add_argument("--data", nargs="+", required=True, help="dataset base paths")
    p.add_argument("--calibrate", action="store_true", help="grid-search lam/sigma (krr)")
    p.add_argument("--refit-full", action="store_true", dest="refit_full",
                   help="refit on all rows after calibration instead of the fit half")
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--depth-increment", type=float, default=0.5, dest="depth_increment")
    p.add_argument("--fine-below", type=float, default=None, dest="fine_below")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--name", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="error tables + arrow plot")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--run-id", default="run", dest="run_id")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-terminals", help="terminal-removal cases")
    p.add_argument("--train", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--run-id", default="ablation", dest="run_id")
    _add_common(p)
    p.set_defaults(func=cmd_ablate_terminals)

    p = sub.add_parser("ablate-tips", help="leave-one-tip-out folds")
    p.add_argument("--data", nargs="+", required=True, help="six per-tip dataset bases")
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_ablate_tips)

    p = sub.add_parser("report", help="render tables/curves for a model+dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--touch-model", default=None, dest="touch_model")
    p.add_argument("--run-id", default="report", dest="run_id")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("repro-paper", help="chain the full study suite")
    p.add_argument("--scale", default="smoke", choices=["smoke", "full"])
    _add_common(p)
    p.set_defaults(func=cmd_repro_paper)

    return ap


def _apply_run_file(ap: argparse.ArgumentParser, argv: list[str], args: argparse.Namespace) -> argparse.Namespace:
    if not args.run_file:
        return args
    path = Path(args.run_file)
    if not path.exists():
        raise CliError(f"missing run file: {path}", EXIT_MISSING_INPUT)
    try:
        values = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid run file: {exc}", EXIT_BAD_SPEC) from exc
    explicit = {a.lstrip("-").split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest in ("command", "run_file", "func"):
            continue
        if not hasattr(args, dest):
            raise CliError(f"run file sets unknown flag {key!r}", EXIT_BAD_SPEC)
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args = _apply_run_file(ap, argv, args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ProtocolError, EvaluationError, ModelIOError) as exc:
        msg = str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DIGEST if "digest" in msg else EXIT_BAD_SPEC
    except (GeometryError, LearningError, OpticsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_SPEC


if __name__ == "__main__":
    raise SystemExit(main())
