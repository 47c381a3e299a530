"""Indentation protocols: schedules, dataset collection and persistence.

A schedule lists indentation events (tip + location, in randomized visit
order for grids) and the depth-step profile each event walks through. The
collector drives the forward model at every step and assembles one
``SignalFrame`` per step: ground-truth labels plus the baseline/ambient
subtracted feature vector (resistive: 6 pair-resistance changes; optical:
one channel per emitter-receiver pair).

Depth conventions follow the measurement drill of the reference protocol:
negative depths are above the surface (no contact), descent samples every
0.1 mm once in contact, and the procedure is mirrored while retracting.

Datasets persist as one CSV of frames plus a JSON sidecar manifest carrying
the config, schedule, seed and content digests; loading verifies both
digests and the format version.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import (
    IndenterTip,
    PairIndex,
    SensorConfig,
    enumerate_pairs,
    hemisphere_tip,
    sensing_area,
    tip_from_class,
)
from .mechanics import IndentationPose, deform, flat_field
from .optics import OpticalTracer, RayBudget, drift_efficiencies
from .resistive import (
    FRAME_PERIOD_S,
    build_lattice,
    capture_baseline,
    edge_strain_targets,
    new_state,
    resistive_frame,
    step_hysteresis,
)
from .util import atomic_write_text, derive_seed, fmt_float, sha256_hex

FORMAT_VERSION = "pairsense-dataset-v1"

# Desk-scale Monte Carlo budget for dataset collection; reported signals need
# at least 1000 rays per emitter, 4000 keeps the signal fields smooth while a
# full multi-dataset collection stays in the tens of minutes.
COLLECT_BUDGET = RayBudget(rays_per_emitter=4000)

RESISTIVE_DEPTH = 3.0  # mm, single measured depth per resistive indentation
RESISTIVE_DESCENT_SPEED = 2.0  # mm/s
RESISTIVE_DWELL_S = 3.0  # inter-event recovery pause


class ProtocolError(ValueError):
    """Incompatible schedule/config or corrupt dataset file."""


@dataclass(frozen=True)
class ScheduledEvent:
    tip_class: int
    x: float
    y: float

    def to_dict(self) -> dict:
        return {"tip_class": self.tip_class, "x": self.x, "y": self.y}


@dataclass(frozen=True)
class IndentationSchedule:
    """Ordered indentation events plus per-tip depth profiles."""

    build: str
    purpose: str  # train | test
    pattern: str  # grid | random
    lighting: str  # ambient | dark
    grid_pitch: float
    n_random: int
    tips: tuple[IndenterTip, ...]
    events: tuple[ScheduledEvent, ...]
    depth_profiles: dict[int, tuple[float, ...]]  # tip class -> ordered depth steps
    seed: int

    def __post_init__(self):
        for cls, prof in self.depth_profiles.items():
            descent_end = int(np.argmax(prof)) if len(prof) else 0
            descent = prof[: descent_end + 1]
            retraction = prof[descent_end + 1 :]
            if any(b <= a for a, b in zip(descent, descent[1:])):
                raise ProtocolError(f"tip {cls}: descent depths must be strictly increasing")
            if any(b >= a for a, b in zip(retraction, retraction[1:])):
                raise ProtocolError(f"tip {cls}: retraction depths must be strictly decreasing")

    def profile_for(self, tip_class: int) -> tuple[float, ...]:
        return self.depth_profiles[tip_class]

    @property
    def n_events(self) -> int:
        return len(self.events)

    def to_dict(self) -> dict:
        return {
            "build": self.build,
            "purpose": self.purpose,
            "pattern": self.pattern,
            "lighting": self.lighting,
            "grid_pitch": self.grid_pitch,
            "n_random": self.n_random,
            "tips": [t.to_dict() for t in self.tips],
            "events": [e.to_dict() for e in self.events],
            "depth_profiles": {str(k): list(v) for k, v in self.depth_profiles.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndentationSchedule":
        return cls(
            build=d["build"],
            purpose=d["purpose"],
            pattern=d["pattern"],
            lighting=d["lighting"],
            grid_pitch=d["grid_pitch"],
            n_random=d["n_random"],
            tips=tuple(IndenterTip.from_dict(t) for t in d["tips"]),
            events=tuple(ScheduledEvent(**e) for e in d["events"]),
            depth_profiles={int(k): tuple(v) for k, v in d["depth_profiles"].items()},
            seed=d["seed"],
        )


@dataclass
class SignalFrame:
    """One measurement tuple: labels + baseline/ambient-subtracted features."""

    tip_class: int
    x: float
    y: float
    depth: float
    features: np.ndarray
    event_id: int
    step_index: int

    def labels(self) -> np.ndarray:
        return np.array([self.tip_class, self.x, self.y, self.depth])


@dataclass
class Dataset:
    """Ordered frames plus the protocol metadata that produced them."""

    frames: list[SignalFrame]
    schedule: IndentationSchedule
    config: SensorConfig
    seed: int
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        self.config_digest = self.config.digest()

    @property
    def n_channels(self) -> int:
        return len(self.frames[0].features) if self.frames else enumerate_pairs(self.config).n_channels

    def features(self) -> np.ndarray:
        return np.array([f.features for f in self.frames]) if self.frames else np.zeros((0, self.n_channels))

    def labels(self) -> np.ndarray:
        """(n, 4) array of [tip_class, x, y, depth]."""
        return (
            np.array([[f.tip_class, f.x, f.y, f.depth] for f in self.frames])
            if self.frames
            else np.zeros((0, 4))
        )

    def event_ids(self) -> np.ndarray:
        return np.array([f.event_id for f in self.frames], dtype=np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (
            self.format_version != other.format_version
            or self.seed != other.seed
            or self.config_digest != other.config_digest
            or self.schedule.to_dict() != other.schedule.to_dict()
            or len(self.frames) != len(other.frames)
        ):
            return False
        for a, b in zip(self.frames, other.frames):
            if (a.tip_class, a.x, a.y, a.depth, a.event_id, a.step_index) != (
                b.tip_class,
                b.x,
                b.y,
                b.depth,
                b.event_id,
                b.step_index,
            ):
                return False
            if not np.array_equal(a.features, b.features):
                return False
        return True


# --- schedule construction -------------------------------------------------------


def _grid_points(rect, pitch: float) -> list[tuple[float, float]]:
    xmin, ymin, xmax, ymax = rect
    nx = int(np.floor((xmax - xmin) / pitch + 1e-9)) + 1
    ny = int(np.floor((ymax - ymin) / pitch + 1e-9)) + 1
    ox = xmin + ((xmax - xmin) - (nx - 1) * pitch) / 2.0
    oy = ymin + ((ymax - ymin) - (ny - 1) * pitch) / 2.0
    return [(ox + i * pitch, oy + j * pitch) for i in range(nx) for j in range(ny)]


def _mirrored(descent: list[float]) -> tuple[float, ...]:
    return tuple(descent) + tuple(descent[-2::-1])


def _step(x: float) -> float:
    x = float(round(x, 10))
    return 0.0 if x == 0 else x


def _tht_profile() -> tuple[float, ...]:
    # Approach: one point per mm from -10 to -1, then 0.1 mm steps to 5.0.
    # The retraction mirrors the fine sampling, continuing at 0.1 mm through
    # the no-contact range down to -5: 161 steps per indentation in all.
    descent = [float(d) for d in range(-10, 0)] + [_step(0.1 * i) for i in range(51)]
    retraction = [_step(4.9 - 0.1 * i) for i in range(100)]
    return tuple(descent + retraction)


def _smt_profile(max_depth: float) -> tuple[float, ...]:
    descent = [-10.0] + [float(d) for d in range(-5, 0)] + [
        _step(0.1 * i) for i in range(int(round(max_depth * 10)) + 1)
    ]
    return _mirrored(descent)


SMT_MAX_DEPTH = {1: 4.0, 2: 1.2, 3: 3.0, 4: 3.0, 5: 3.0, 6: 4.0}  # per tip class


def make_schedule(
    build: str,
    purpose: str,
    tips: list[IndenterTip] | None = None,
    lighting: str = "dark",
    seed: int = 0,
    n_random: int | None = None,
    grid_pitch: float = 2.0,
) -> IndentationSchedule:
    """The canonical train/test schedule for a named build.

    Training uses the regular grid pattern in randomized visit order; testing
    uses uniform-random locations (60 events for the resistive build, 100 for
    the optical builds, overridable via ``n_random``).
    """
    from .geometry import build_layout

    if purpose not in ("train", "test"):
        raise ProtocolError(f"unknown purpose {purpose!r}")
    if lighting not in ("ambient", "dark"):
        raise ProtocolError(f"unknown lighting {lighting!r}")
    config = build_layout(build)
    if tips is None:
        tips = [hemisphere_tip()]
    if build != "smt":
        bad = [t for t in tips if t.class_id != 1]
        if bad:
            raise ProtocolError(f"build {build!r} supports only the hemisphere tip, got {bad[0].shape}")

    if build == "resistive":
        profiles = {t.class_id: _mirrored([RESISTIVE_DEPTH]) for t in tips}
    elif build in ("tht", "tht_large"):
        profiles = {t.class_id: _tht_profile() for t in tips}
    elif build == "smt":
        profiles = {t.class_id: _smt_profile(SMT_MAX_DEPTH[t.class_id]) for t in tips}
    else:
        raise ProtocolError(f"unknown build {build!r}")

    rng = np.random.default_rng(derive_seed(seed, "schedule", build, purpose, lighting))
    # All smt datasets share one location set regardless of posed tip: the
    # keep-out is determined by the largest tip (planar disc, radius 7.5).
    from .geometry import disc_tip

    rect_tip = disc_tip() if build == "smt" else hemisphere_tip()
    rect = sensing_area(config, rect_tip)
    events = []
    if purpose == "train":
        pattern = "grid"
        pts = _grid_points(rect, grid_pitch)
        for tip in tips:
            order = rng.permutation(len(pts))
            events.extend(ScheduledEvent(tip.class_id, *pts[i]) for i in order)
        n_rand = 0
    else:
        pattern = "random"
        n_rand = n_random if n_random is not None else (60 if build == "resistive" else 100)
        xmin, ymin, xmax, ymax = rect
        for tip in tips:
            xs = rng.uniform(xmin, xmax, n_rand)
            ys = rng.uniform(ymin, ymax, n_rand)
            events.extend(ScheduledEvent(tip.class_id, float(x), float(y)) for x, y in zip(xs, ys))

    return IndentationSchedule(
        build=build,
        purpose=purpose,
        pattern=pattern,
        lighting=lighting,
        grid_pitch=grid_pitch,
        n_random=n_rand,
        tips=tuple(tips),
        events=tuple(events),
        depth_profiles=profiles,
        seed=seed,
    )


# --- collection -------------------------------------------------------------------


DEFAULT_AMBIENT_LEVEL = 80.0  # counts under room lighting


def _noise_for_lighting(noise, lighting: str):
    if lighting == "dark":
        return replace(noise, ambient_level=0.0)
    level = noise.ambient_level if noise.ambient_level > 0 else DEFAULT_AMBIENT_LEVEL
    return replace(noise, ambient_level=level)


class TraceCache:
    """Pose-keyed cache of noiseless optical trace counts.

    Noiseless counts depend only on (tip, x, y, depth), so retraction steps,
    repeated grid datasets and the whole no-contact range reuse earlier
    traces. Keyed per (config, budget).
    """

    def __init__(self):
        self._data: dict[tuple, tuple] = {}

    def counts(self, tracer: OpticalTracer, config: SensorConfig, tip: IndenterTip, x: float, y: float, depth: float):
        if depth <= 0.0:
            key = (config.digest(), tracer.budget.key(), "flat")
        else:
            key = (config.digest(), tracer.budget.key(), tip.class_id, round(x, 9), round(y, 9), round(depth, 9))
        hit = self._data.get(key)
        if hit is None:
            if depth <= 0.0:
                field_ = flat_field(config, tip)
            else:
                field_ = deform(config, IndentationPose(x, y, depth, tip))
            hit = tracer.trace_counts(field_)
            self._data[key] = hit
        return hit


def _collect_optical_event(
    config: SensorConfig,
    tracer: OpticalTracer,
    cache: TraceCache,
    event: ScheduledEvent,
    profile: tuple[float, ...],
    event_id: int,
    seed: int,
    lighting: str,
) -> list[SignalFrame]:
    tip = tip_from_class(event.tip_class)
    noise = _noise_for_lighting(config.noise, lighting)
    eff = drift_efficiencies(noise, tracer.n_emitters, event_id, seed=derive_seed(seed, "drift"))
    frames = []
    for step, depth in enumerate(profile):
        counts = cache.counts(tracer, config, tip, event.x, event.y, depth)
        rng_seed = derive_seed(seed, "noise", event_id, step)
        frame = tracer.frame(flat_field(config), noise=noise, rng_seed=rng_seed, counts=counts, emitter_efficiency=eff)
        frames.append(
            SignalFrame(
                tip_class=event.tip_class,
                x=event.x,
                y=event.y,
                depth=float(depth),
                features=frame.features(),
                event_id=event_id,
                step_index=step,
            )
        )
    return frames


def _collect_optical_event_worker(args):
    (config_dict, event, profile, event_id, seed, lighting, budget_key) = args
    config = SensorConfig.from_dict(config_dict)
    budget = RayBudget(*budget_key)
    tracer = _worker_tracer(config, budget)
    return _collect_optical_event(config, tracer, _WORKER_CACHE, event, profile, event_id, seed, lighting)


_WORKER_TRACERS: dict[tuple, OpticalTracer] = {}
_WORKER_CACHE = TraceCache()


def _worker_tracer(config: SensorConfig, budget: RayBudget) -> OpticalTracer:
    key = (config.digest(), budget.key())
    tr = _WORKER_TRACERS.get(key)
    if tr is None:
        tr = OpticalTracer(config, budget)
        _WORKER_TRACERS[key] = tr
    return tr


def _trace_task(args):
    config_dict, budget_key, tip_class, x, y, depth = args
    config = SensorConfig.from_dict(config_dict)
    tracer = _worker_tracer(config, RayBudget(*budget_key))
    if depth <= 0.0:
        field_ = flat_field(config)
    else:
        field_ = deform(config, IndentationPose(x, y, depth, tip_from_class(tip_class)))
    return tracer.trace_counts(field_)


def precompute_traces(
    config: SensorConfig,
    schedules: list[IndentationSchedule],
    budget: RayBudget | None = None,
    cache: TraceCache | None = None,
    workers: int = 1,
) -> TraceCache:
    """Trace every unique (tip, x, y, depth) pose of the schedules in
    parallel and warm a cache so collection becomes pure frame assembly.

    Repeated grid datasets, retraction steps and the whole no-contact range
    collapse onto single traces; outputs are independent of worker count.
    """
    if config.transduction != "optical":
        return cache or TraceCache()
    budget = budget or COLLECT_BUDGET
    cache = cache or TraceCache()
    cfg_digest = config.digest()
    bkey = budget.key()
    keys: dict[tuple, tuple] = {}
    for sch in schedules:
        for ev in sch.events:
            for depth in sch.profile_for(ev.tip_class):
                if depth <= 0.0:
                    key = (cfg_digest, bkey, "flat")
                    keys.setdefault(key, (ev.tip_class, ev.x, ev.y, 0.0))
                else:
                    key = (cfg_digest, bkey, ev.tip_class, round(ev.x, 9), round(ev.y, 9), round(depth, 9))
                    keys.setdefault(key, (ev.tip_class, ev.x, ev.y, float(depth)))
    todo = [(k, v) for k, v in keys.items() if k not in cache._data]
    if not todo:
        return cache
    cfg_dict = config.to_dict()
    if workers > 1:
        args = [(cfg_dict, bkey, tc, x, y, d) for _, (tc, x, y, d) in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (key, _), counts in zip(todo, pool.map(_trace_task, args, chunksize=16)):
                cache._data[key] = counts
    else:
        tracer = _worker_tracer(config, budget)
        for key, (tc, x, y, d) in todo:
            if d <= 0.0:
                field_ = flat_field(config)
            else:
                field_ = deform(config, IndentationPose(x, y, d, tip_from_class(tc)))
            cache._data[key] = tracer.trace_counts(field_)
    return cache


def collect(
    config: SensorConfig,
    schedule: IndentationSchedule,
    budget: RayBudget | None = None,
    cache: TraceCache | None = None,
    workers: int = 1,
) -> Dataset:
    """Simulate every event of a schedule and assemble the dataset.

    Deterministic under (config, schedule, budget): per-event noise streams
    are derived from the schedule seed and event index, so worker count and
    trace-cache state never change the output.
    """
    if schedule.build != config.build:
        raise ProtocolError(f"schedule for build {schedule.build!r} used with config {config.build!r}")
    if config.transduction == "resistive":
        return _collect_resistive(config, schedule)
    budget = budget or COLLECT_BUDGET
    cache = cache or TraceCache()
    tracer = _worker_tracer(config, budget)
    frames: list[SignalFrame] = []
    drift_stateful = config.noise.bond_detach
    if workers > 1 and not drift_stateful:
        args = [
            (config.to_dict(), ev, schedule.profile_for(ev.tip_class), i, schedule.seed, schedule.lighting, budget.key())
            for i, ev in enumerate(schedule.events)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for ev_frames in pool.map(_collect_optical_event_worker, args, chunksize=4):
                frames.extend(ev_frames)
    else:
        for i, ev in enumerate(schedule.events):
            frames.extend(
                _collect_optical_event(
                    config, tracer, cache, ev, schedule.profile_for(ev.tip_class), i, schedule.seed, schedule.lighting
                )
            )
    return Dataset(frames=frames, schedule=schedule, config=config, seed=schedule.seed)


def _collect_resistive(config: SensorConfig, schedule: IndentationSchedule) -> Dataset:
    """Sequential resistive collection honoring the hysteresis timeline.

    Per event: relax during the inter-event dwell, capture the 6-pair
    baseline at depth 0, ramp down at the descent speed stepping the strain
    lag at the 40 Hz frame cadence, and measure at each scheduled depth.
    """
    pair_index = enumerate_pairs(config)
    pairs = list(pair_index.pairs)
    lattice = build_lattice(config)
    state = new_state(lattice, drift_sigma=config.noise.drift_rate, seed=derive_seed(schedule.seed, "drift"))
    frames: list[SignalFrame] = []
    for event_id, ev in enumerate(schedule.events):
        tip = tip_from_class(ev.tip_class)
        rng = np.random.default_rng(derive_seed(schedule.seed, "noise", event_id))
        # recovery between events
        zeros = np.zeros(len(lattice.edges))
        for _ in range(int(RESISTIVE_DWELL_S / FRAME_PERIOD_S)):
            step_hysteresis(state, zeros, FRAME_PERIOD_S)
        capture_baseline(lattice, state, pairs)
        prev_depth = 0.0
        for step, depth in enumerate(schedule.profile_for(ev.tip_class)):
            travel = abs(depth - prev_depth)
            n_ticks = max(int(round(travel / RESISTIVE_DESCENT_SPEED / FRAME_PERIOD_S)), 1)
            for k in range(n_ticks):
                frac = (k + 1) / n_ticks
                d_now = prev_depth + (depth - prev_depth) * frac
                if d_now > 0:
                    f = deform(config, IndentationPose(ev.x, ev.y, d_now, tip))
                    targets = edge_strain_targets(lattice, f, config)
                else:
                    targets = zeros
                step_hysteresis(state, targets, FRAME_PERIOD_S)
            r = resistive_frame(config, lattice, state, pairs, noise_rng=rng)
            frames.append(
                SignalFrame(
                    tip_class=ev.tip_class,
                    x=ev.x,
                    y=ev.y,
                    depth=float(depth),
                    features=r,
                    event_id=event_id,
                    step_index=step,
                )
            )
            prev_depth = depth
        # retract fully before the next event
        prev_depth = 0.0
    return Dataset(frames=frames, schedule=schedule, config=config, seed=schedule.seed)


# --- persistence ------------------------------------------------------------------


def save(dataset: Dataset, path_base: str | Path) -> tuple[Path, Path]:
    """Write <base>.csv (frames) and <base>.json (manifest). Atomic."""
    base = Path(path_base)
    csv_path = base.with_suffix(".csv")
    man_path = base.with_suffix(".json")
    buf = io.StringIO()
    n_feat = dataset.n_channels
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["event_id", "step_index", "t", "x", "y", "d"] + [f"f{i + 1}" for i in range(n_feat)])
    for f in dataset.frames:
        writer.writerow(
            [f.event_id, f.step_index, f.tip_class, fmt_float(f.x), fmt_float(f.y), fmt_float(f.depth)]
            + [fmt_float(v) for v in f.features]
        )
    csv_text = buf.getvalue()
    manifest = {
        "format_version": dataset.format_version,
        "config": dataset.config.to_dict(),
        "config_digest": dataset.config_digest,
        "schedule": dataset.schedule.to_dict(),
        "seed": dataset.seed,
        "n_frames": len(dataset.frames),
        "n_features": n_feat,
        "data_digest": sha256_hex(csv_text),
    }
    atomic_write_text(csv_path, csv_text)
    atomic_write_text(man_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return csv_path, man_path


def load(path_base: str | Path) -> Dataset:
    """Round-trip counterpart of :func:`save`; verifies version and digests."""
    base = Path(path_base)
    csv_path = base.with_suffix(".csv")
    man_path = base.with_suffix(".json")
    if not csv_path.exists() or not man_path.exists():
        raise FileNotFoundError(f"dataset files missing for base {base}")
    with open(man_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ProtocolError(f"unsupported dataset version {manifest.get('format_version')!r}")
    with open(csv_path, "r", encoding="utf-8", newline="") as f:
        csv_text = f.read()
    if sha256_hex(csv_text) != manifest["data_digest"]:
        raise ProtocolError("dataset CSV does not match its manifest digest")
    config = SensorConfig.from_dict(manifest["config"])
    if config.digest() != manifest["config_digest"]:
        raise ProtocolError("manifest config digest mismatch (dataset from a different config?)")
    schedule = IndentationSchedule.from_dict(manifest["schedule"])
    frames = []
    reader = csv.reader(io.StringIO(csv_text))
    header = next(reader)
    n_feat = manifest["n_features"]
    if len(header) != 6 + n_feat:
        raise ProtocolError("CSV header does not match manifest feature count")
    for row in reader:
        frames.append(
            SignalFrame(
                tip_class=int(row[2]),
                x=float(row[3]),
                y=float(row[4]),
                depth=float(row[5]),
                features=np.array([float(v) for v in row[6:]]),
                event_id=int(row[0]),
                step_index=int(row[1]),
            )
        )
    if len(frames) != manifest["n_frames"]:
        raise ProtocolError("frame count does not match manifest")
    return Dataset(frames=frames, schedule=schedule, config=config, seed=manifest["seed"])
