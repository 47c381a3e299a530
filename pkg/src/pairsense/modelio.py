"""Trained-model container and single-file persistence.

A persisted model is a JSON header (kind, hyperparameters, standardizer,
seeds, training digest, array directory) followed by the coefficient arrays
as little-endian float64, in the order the directory lists them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .learning import (
    CenterPredictor,
    KernelRidgeModel,
    LinearModel,
    MultistageModel,
    RandomPredictor,
    Standardizer,
)
from .nets import LinearSvmModel, MlpModel
from .util import atomic_write_bytes

MAGIC = b"PAIRSENSE-MODEL-1\n"


class ModelIOError(ValueError):
    """Corrupt or unsupported model file."""


@dataclass
class TrainedModel:
    """A predictor plus the provenance needed to evaluate it safely.

    ``channel_mask`` (boolean over the config's feature channels) is applied
    before prediction; models trained after terminal removal carry the mask
    of surviving channels. ``config_digest`` ties the model to the sensor
    config whose datasets trained it.
    """

    kind: str  # linear | krr | mlp | svm | multistage | center | random
    model: object
    config_digest: str
    channel_mask: np.ndarray | None = None
    calibration: dict | None = None
    seed: int = 0
    meta: dict | None = None

    def _mask(self, X: np.ndarray) -> np.ndarray:
        if self.channel_mask is None:
            return X
        return np.asarray(X)[:, self.channel_mask]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = self._mask(X)
        if self.kind == "multistage":
            from .learning import predict_multistage

            return predict_multistage(self.model, X)
        out = self.model.predict(X)
        if self.kind in ("linear", "krr") and out.ndim == 2 and out.shape[1] == 3:
            out = out.copy()
            out[:, 2] = np.maximum(out[:, 2], 0.0)  # depth never negative on contact models
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_proba(self._mask(X))

    def decision(self, X: np.ndarray) -> np.ndarray:
        return self.model.decision(self._mask(X))


def _std_dict(std: Standardizer) -> dict:
    return {"mean": std.mean.tolist(), "scale": std.scale.tolist(), "constant": std.constant.tolist()}


def _std_from(d: dict) -> Standardizer:
    return Standardizer(
        mean=np.array(d["mean"]), scale=np.array(d["scale"]), constant=np.array(d["constant"], dtype=bool)
    )


def _collect_arrays(kind: str, model) -> tuple[dict, dict[str, np.ndarray]]:
    """(header params, named arrays) for one bare predictor."""
    if kind == "linear":
        return (
            {"standardizer": _std_dict(model.standardizer), "rank_deficient": model.rank_deficient},
            {"weights": model.weights, "intercept": model.intercept},
        )
    if kind == "krr":
        return (
            {
                "lam": model.lam,
                "sigma": model.sigma,
                "standardizer": _std_dict(model.standardizer),
            },
            {"X_train": model.X_train, "alpha": model.alpha, "y_mean": model.y_mean, "y_scale": model.y_scale},
        )
    if kind == "mlp":
        return (
            {"head": model.head, "seed": model.seed, "loss_curve": model.loss_curve, "standardizer": _std_dict(model.standardizer)},
            {"W1": model.W1, "b1": model.b1, "W2": model.W2, "b2": model.b2},
        )
    if kind == "svm":
        return (
            {"C": model.C, "b": model.b, "standardizer": _std_dict(model.standardizer)},
            {"w": model.w},
        )
    if kind == "center":
        return ({"center": list(model.center)}, {})
    if kind == "random":
        return ({"rect": list(model.rect), "seed": model.seed}, {})
    if kind == "multistage":
        params = {"lam": model.lam, "sigma": model.sigma}
        arrays: dict[str, np.ndarray] = {}
        dp, da = _collect_arrays("linear", model.depth_model)
        params["depth"] = dp
        arrays.update({f"depth.{k}": v for k, v in da.items()})
        params["slices"] = []
        for i, sl in enumerate(model.slice_models):
            sp, sa = _collect_arrays("krr", sl)
            params["slices"].append(sp)
            arrays.update({f"slice{i}.{k}": v for k, v in sa.items()})
        return params, arrays
    raise ModelIOError(f"unknown model kind {kind!r}")


def _rebuild(kind: str, params: dict, arrays: dict[str, np.ndarray]):
    if kind == "linear":
        return LinearModel(
            weights=arrays["weights"],
            intercept=arrays["intercept"],
            standardizer=_std_from(params["standardizer"]),
            rank_deficient=params["rank_deficient"],
        )
    if kind == "krr":
        return KernelRidgeModel(
            X_train=arrays["X_train"],
            alpha=arrays["alpha"],
            lam=params["lam"],
            sigma=params["sigma"],
            standardizer=_std_from(params["standardizer"]),
            y_mean=arrays["y_mean"],
            y_scale=arrays["y_scale"],
        )
    if kind == "mlp":
        return MlpModel(
            W1=arrays["W1"],
            b1=arrays["b1"],
            W2=arrays["W2"],
            b2=arrays["b2"],
            head=params["head"],
            standardizer=_std_from(params["standardizer"]),
            seed=params["seed"],
            loss_curve=list(params["loss_curve"]),
        )
    if kind == "svm":
        return LinearSvmModel(w=arrays["w"], b=params["b"], C=params["C"], standardizer=_std_from(params["standardizer"]))
    if kind == "center":
        return CenterPredictor(center=tuple(params["center"]))
    if kind == "random":
        return RandomPredictor(rect=tuple(params["rect"]), seed=params["seed"])
    if kind == "multistage":
        depth = _rebuild("linear", params["depth"], {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith("depth.")})
        slices = []
        for i, sp in enumerate(params["slices"]):
            sa = {k.split(".", 1)[1]: v for k, v in arrays.items() if k.startswith(f"slice{i}.")}
            slices.append(_rebuild("krr", sp, sa))
        return MultistageModel(depth_model=depth, slice_models=slices, lam=params["lam"], sigma=params["sigma"])
    raise ModelIOError(f"unknown model kind {kind!r}")


def save_model(tm: TrainedModel, path: str | Path) -> Path:
    params, arrays = _collect_arrays(tm.kind, tm.model)
    directory = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    header = {
        "kind": tm.kind,
        "params": params,
        "config_digest": tm.config_digest,
        "channel_mask": None if tm.channel_mask is None else np.asarray(tm.channel_mask, dtype=bool).tolist(),
        "calibration": tm.calibration,
        "seed": tm.seed,
        "meta": tm.meta,
        "arrays": directory,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arrays[d["name"]], dtype="<f8").tobytes() for d in directory)
    blob = MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + payload
    path = Path(path)
    atomic_write_bytes(path, blob)
    return path


def load_model(path: str | Path) -> TrainedModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ModelIOError(f"{path}: not a pairsense model file")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for d in header["arrays"]:
        count = int(np.prod(d["shape"])) if d["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(d["shape"])
        arrays[d["name"]] = arr.copy()
        off += count * 8
    model = _rebuild(header["kind"], header["params"], arrays)
    mask = header["channel_mask"]
    return TrainedModel(
        kind=header["kind"],
        model=model,
        config_digest=header["config_digest"],
        channel_mask=None if mask is None else np.array(mask, dtype=bool),
        calibration=header["calibration"],
        seed=header["seed"],
        meta=header["meta"],
    )
