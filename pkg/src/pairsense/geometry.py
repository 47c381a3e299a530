"""Sensor geometry: slab configurations, terminal layouts, indenter tips, pair enumeration.

Coordinate convention: the elastomer slab occupies the box
``x in [0, slab_width], y in [0, slab_length], z in [0, slab_thickness]``
with the free (indentable) surface at ``z = slab_thickness``. All lengths are
in mm, all angles in degrees. Terminal orientations are unit vectors pointing
from the terminal into the slab interior.

Four canonical builds are provided by :func:`build_layout`:

* ``resistive`` -- piezoresistive slab, 4 electrodes at the side-wall
  midpoints, 16 x 10 mm indentable area.
* ``tht`` -- optical, 32 x 32 x 8 mm cavity, 8 emitters + 8 photodiode
  receivers alternating around the walls.
* ``tht_large`` -- same 16 terminals on a 45 x 45 x 8 mm cavity.
* ``smt`` -- optical, 38 x 38 x 8 mm cavity, 7 boards with 2 emitters +
  2 receivers each (4 boards on the walls, 3 on the base), absorbing base.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .util import atomic_write_text, digest_of

AMBIENT_STATE = -1  # sentinel excitation state: all emitters off

ROLE_EMITTER = "emitter"
ROLE_RECEIVER = "receiver"
ROLE_ELECTRODE = "electrode"

SHAPE_HEMISPHERE = "hemisphere"
SHAPE_DISC = "planar_disc"
SHAPE_EDGE = "edge90"
SHAPE_CORNER = "corner"

# class_id convention: (shape, orientation) -> 1..6
TIP_CLASSES = {
    (SHAPE_HEMISPHERE, 0.0): 1,
    (SHAPE_DISC, 0.0): 2,
    (SHAPE_EDGE, 0.0): 3,
    (SHAPE_EDGE, 120.0): 4,
    (SHAPE_EDGE, 240.0): 5,
    (SHAPE_CORNER, 0.0): 6,
}


class GeometryError(ValueError):
    """Invalid sensor geometry or unknown build/tip request."""


@dataclass(frozen=True)
class NoiseParams:
    """Nuisance-process knobs shared by both transduction models.

    ``adc_full_scale`` and the optical levels are in ADC counts.
    ``drift_rate`` is a per-event magnitude: multiplicative emitter-efficiency
    decay for optical builds, relative conductance random-walk sigma for
    resistive builds. ``bond_detach`` enables the THT elastomer/LED
    detachment emulation.
    """

    adc_full_scale: float = 1023.0
    shot_noise_sigma: float = 0.0
    ambient_level: float = 0.0
    drift_rate: float = 0.0
    bond_detach: bool = False

    def __post_init__(self):
        for name in ("adc_full_scale", "shot_noise_sigma", "ambient_level", "drift_rate"):
            if getattr(self, name) < 0:
                raise GeometryError(f"NoiseParams.{name} must be non-negative")

    def to_dict(self) -> dict:
        return {
            "adc_full_scale": self.adc_full_scale,
            "shot_noise_sigma": self.shot_noise_sigma,
            "ambient_level": self.ambient_level,
            "drift_rate": self.drift_rate,
            "bond_detach": self.bond_detach,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseParams":
        return cls(**d)


@dataclass(frozen=True)
class Terminal:
    """One embedded sensing endpoint: an LED, a photodiode or an electrode."""

    id: int
    role: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float]
    active_area: float = 0.0  # mm^2, emitters/receivers
    emission_half_angle: float = 60.0  # degrees, emitters
    acceptance_half_angle: float = 70.0  # degrees, receivers

    def __post_init__(self):
        if self.role not in (ROLE_EMITTER, ROLE_RECEIVER, ROLE_ELECTRODE):
            raise GeometryError(f"unknown terminal role {self.role!r}")
        n = math.sqrt(sum(c * c for c in self.orientation))
        if abs(n - 1.0) > 1e-12:
            raise GeometryError(f"terminal {self.id}: orientation norm {n} != 1")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "role": self.role,
            "position": list(self.position),
            "orientation": list(self.orientation),
            "active_area": self.active_area,
            "emission_half_angle": self.emission_half_angle,
            "acceptance_half_angle": self.acceptance_half_angle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Terminal":
        d = dict(d)
        d["position"] = tuple(d["position"])
        d["orientation"] = tuple(d["orientation"])
        return cls(**d)


@dataclass(frozen=True)
class IndenterTip:
    """One of the six probe geometries used for indentation.

    ``size_param`` is the characteristic dimension in mm: hemisphere
    diameter, disc diameter, edge length or corner max width.
    ``orientation_deg`` is only meaningful for the 90-degree edge tip
    (0/120/240); the three orientations are three distinct classes.
    """

    shape: str
    size_param: float
    orientation_deg: float = 0.0

    def __post_init__(self):
        key = (self.shape, float(self.orientation_deg))
        if key not in TIP_CLASSES:
            raise GeometryError(f"no tip class for shape={self.shape!r} orientation={self.orientation_deg}")
        if self.size_param <= 0:
            raise GeometryError("tip size_param must be positive")

    @property
    def class_id(self) -> int:
        return TIP_CLASSES[(self.shape, float(self.orientation_deg))]

    @property
    def radius(self) -> float:
        """In-plane half-extent used for keep-out margins (mm)."""
        return self.size_param / 2.0

    def to_dict(self) -> dict:
        return {"shape": self.shape, "size_param": self.size_param, "orientation_deg": self.orientation_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "IndenterTip":
        return cls(**d)


def hemisphere_tip() -> IndenterTip:
    return IndenterTip(SHAPE_HEMISPHERE, 6.0)


def disc_tip() -> IndenterTip:
    return IndenterTip(SHAPE_DISC, 15.0)


def edge_tip(orientation_deg: float = 0.0) -> IndenterTip:
    return IndenterTip(SHAPE_EDGE, 15.0, orientation_deg)


def corner_tip() -> IndenterTip:
    return IndenterTip(SHAPE_CORNER, 15.0)


def all_tips() -> list[IndenterTip]:
    """The six classification tips, ordered by class_id."""
    return [hemisphere_tip(), disc_tip(), edge_tip(0.0), edge_tip(120.0), edge_tip(240.0), corner_tip()]


def tip_from_class(class_id: int) -> IndenterTip:
    for (shape, orient), cid in TIP_CLASSES.items():
        if cid == class_id:
            size = 6.0 if shape == SHAPE_HEMISPHERE else 15.0
            return IndenterTip(shape, size, orient)
    raise GeometryError(f"unknown tip class {class_id}")


@dataclass(frozen=True)
class SensorConfig:
    """Full description of one sensor build."""

    build: str
    slab_width: float
    slab_length: float
    slab_thickness: float
    transduction: str  # "optical" | "resistive"
    terminals: tuple[Terminal, ...]
    margin: float = 3.0
    refractive_index_elastomer: float = 1.4
    refractive_index_air: float = 1.0
    wall_reflectivity: float = 0.0
    skirt_width: float | None = None  # None -> slab_thickness / 2
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0

    def __post_init__(self):
        if min(self.slab_width, self.slab_length, self.slab_thickness) <= 0:
            raise GeometryError("slab dimensions must be strictly positive")
        if not (1.0 <= self.slab_thickness <= 20.0):
            raise GeometryError("slab thickness must lie in [1, 20] mm")
        if self.transduction not in ("optical", "resistive"):
            raise GeometryError(f"unknown transduction {self.transduction!r}")
        if not (self.refractive_index_elastomer > self.refractive_index_air >= 1.0):
            raise GeometryError("need n_elastomer > n_air >= 1 for a defined critical angle")
        roles = {t.role for t in self.terminals}
        if self.transduction == "optical" and not roles <= {ROLE_EMITTER, ROLE_RECEIVER}:
            raise GeometryError("optical sensors admit only emitter/receiver terminals")
        if self.transduction == "resistive" and not roles <= {ROLE_ELECTRODE}:
            raise GeometryError("resistive sensors admit only electrode terminals")
        ids = [t.id for t in self.terminals]
        if len(set(ids)) != len(ids):
            raise GeometryError("terminal ids must be unique")
        for t in self.terminals:
            if not self._on_boundary(t.position):
                raise GeometryError(f"terminal {t.id} at {t.position} is not on the cavity boundary")

    def _on_boundary(self, p: tuple[float, float, float], tol: float = 1e-9) -> bool:
        x, y, z = p
        inside = -tol <= x <= self.slab_width + tol and -tol <= y <= self.slab_length + tol and -tol <= z <= self.slab_thickness + tol
        on_wall = min(abs(x), abs(x - self.slab_width), abs(y), abs(y - self.slab_length)) <= tol
        on_base = abs(z) <= tol
        return inside and (on_wall or on_base)

    @property
    def emitters(self) -> list[Terminal]:
        return [t for t in self.terminals if t.role == ROLE_EMITTER]

    @property
    def receivers(self) -> list[Terminal]:
        return [t for t in self.terminals if t.role == ROLE_RECEIVER]

    @property
    def electrodes(self) -> list[Terminal]:
        return [t for t in self.terminals if t.role == ROLE_ELECTRODE]

    @property
    def critical_angle_deg(self) -> float:
        """Angle from the surface normal above which rays are totally reflected."""
        return math.degrees(math.asin(self.refractive_index_air / self.refractive_index_elastomer))

    @property
    def skirt_w(self) -> float:
        return self.skirt_width if self.skirt_width is not None else self.slab_thickness / 2.0

    def with_noise(self, **kwargs) -> "SensorConfig":
        return replace(self, noise=replace(self.noise, **kwargs))

    def to_dict(self) -> dict:
        return {
            "format": "pairsense-config-v1",
            "build": self.build,
            "slab_width": self.slab_width,
            "slab_length": self.slab_length,
            "slab_thickness": self.slab_thickness,
            "transduction": self.transduction,
            "terminals": [t.to_dict() for t in self.terminals],
            "margin": self.margin,
            "refractive_index_elastomer": self.refractive_index_elastomer,
            "refractive_index_air": self.refractive_index_air,
            "wall_reflectivity": self.wall_reflectivity,
            "skirt_width": self.skirt_width,
            "noise": self.noise.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorConfig":
        if d.get("format") != "pairsense-config-v1":
            raise GeometryError(f"unsupported config format {d.get('format')!r}")
        return cls(
            build=d["build"],
            slab_width=d["slab_width"],
            slab_length=d["slab_length"],
            slab_thickness=d["slab_thickness"],
            transduction=d["transduction"],
            terminals=tuple(Terminal.from_dict(t) for t in d["terminals"]),
            margin=d["margin"],
            refractive_index_elastomer=d["refractive_index_elastomer"],
            refractive_index_air=d["refractive_index_air"],
            wall_reflectivity=d["wall_reflectivity"],
            skirt_width=d["skirt_width"],
            noise=NoiseParams.from_dict(d["noise"]),
            seed=d["seed"],
        )

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SensorConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class PairIndex:
    """All admissible terminal pairings plus the excitation-state list.

    For resistive builds ``pairs`` holds every unordered electrode pair and
    ``states`` is empty. For optical builds ``pairs`` holds every
    (emitter, receiver) combination in (emitter asc, receiver asc) order --
    one feature channel each -- and ``states`` lists the emitter fired in
    each excitation state followed by the all-off ambient state.
    """

    pairs: tuple[tuple[int, int], ...]
    states: tuple[int, ...]
    receiver_ids: tuple[int, ...] = ()

    @property
    def n_channels(self) -> int:
        return len(self.pairs)

    @property
    def raw_frame_len(self) -> int:
        """Entries in one raw optical frame: receivers x excitation states."""
        return len(self.receiver_ids) * len(self.states)


def build_layout(build: str, seed: int = 0) -> SensorConfig:
    """Canonical configuration for one of the four named builds.

    Terminal coordinates are uniformly spaced on their walls/boards and
    centered; exact placement is a modeling choice since the learned mapping
    does not require precise terminal positioning.
    """
    if build == "resistive":
        return _resistive_layout(seed)
    if build == "tht":
        return _tht_layout(32.0, seed)
    if build == "tht_large":
        return _tht_layout(45.0, seed)
    if build == "smt":
        return _smt_layout(seed)
    raise GeometryError(f"unknown build {build!r}")


def _resistive_layout(seed: int) -> SensorConfig:
    # Slab sized so the indentable area after the hemisphere-tip keep-out
    # (tip radius 3 + margin 1 per side) is exactly 16 x 10 mm. Electrodes sit
    # at the side-channel entry points: the wall midpoints, mid-thickness.
    w, l, t = 24.0, 18.0, 6.0
    positions = [
        ((0.0, l / 2, t / 2), (1.0, 0.0, 0.0)),
        ((w, l / 2, t / 2), (-1.0, 0.0, 0.0)),
        ((w / 2, 0.0, t / 2), (0.0, 1.0, 0.0)),
        ((w / 2, l, t / 2), (0.0, -1.0, 0.0)),
    ]
    terminals = tuple(
        Terminal(id=i, role=ROLE_ELECTRODE, position=p, orientation=o, active_area=7.0)
        for i, (p, o) in enumerate(positions)
    )
    return SensorConfig(
        build="resistive",
        slab_width=w,
        slab_length=l,
        slab_thickness=t,
        transduction="resistive",
        terminals=terminals,
        margin=1.0,
        seed=seed,
    )


# Bare 3D-printed side walls reflect a meaningful share of rays (only the
# base is coated with carbon black); purely absorbing walls starve the
# receptive fields and the learned mapping.
WALL_REFLECTIVITY_DEFAULT = 0.5

# THT component active faces (mm): 5x5 LED, 2.65x2.65 photodiode.
_THT_LED_AREA = 25.0
_THT_PD_AREA = 2.65 * 2.65


def _tht_layout(side: float, seed: int) -> SensorConfig:
    # 16 terminals alternating emitter/receiver around the perimeter, 4 per
    # wall, uniformly spaced, centered at mid-height of the 8 mm layer.
    t = 8.0
    z = t / 2
    slots = []
    for i in range(4):
        u = side * (2 * i + 1) / 8.0
        slots.append(((u, 0.0, z), (0.0, 1.0, 0.0)))
    for i in range(4):
        u = side * (2 * i + 1) / 8.0
        slots.append(((side, u, z), (-1.0, 0.0, 0.0)))
    for i in range(4):
        u = side * (2 * (3 - i) + 1) / 8.0
        slots.append(((u, side, z), (0.0, -1.0, 0.0)))
    for i in range(4):
        u = side * (2 * (3 - i) + 1) / 8.0
        slots.append(((0.0, u, z), (1.0, 0.0, 0.0)))
    terminals = []
    for i, (p, o) in enumerate(slots):
        if i % 2 == 0:
            terminals.append(Terminal(id=i, role=ROLE_EMITTER, position=p, orientation=o, active_area=_THT_LED_AREA))
        else:
            terminals.append(Terminal(id=i, role=ROLE_RECEIVER, position=p, orientation=o, active_area=_THT_PD_AREA))
    return SensorConfig(
        build="tht" if side == 32.0 else "tht_large",
        slab_width=side,
        slab_length=side,
        slab_thickness=t,
        transduction="optical",
        terminals=tuple(terminals),
        margin=3.0,
        wall_reflectivity=WALL_REFLECTIVITY_DEFAULT,
        seed=seed,
    )


# SMT component active faces (mm): 1.6x0.8 LED, 4.0x4.5 photodiode.
_SMT_LED_AREA = 1.6 * 0.8
_SMT_PD_AREA = 4.0 * 4.5


def _smt_layout(seed: int) -> SensorConfig:
    # 7 boards of 29 mm with components at offsets -10.875/-3.625/3.625/10.875
    # from the board center in an L,P,L,P pattern: 4 boards centered on the
    # walls at mid-height, 3 parallel boards evenly spaced on the base.
    side, t = 38.0, 8.0
    z = t / 2
    mid = side / 2
    offs = [-10.875, -3.625, 3.625, 10.875]
    boards = [
        # (anchor position of board center, in-board axis, orientation)
        ((mid, 0.0, z), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
        ((side, mid, z), (0.0, 1.0, 0.0), (-1.0, 0.0, 0.0)),
        ((mid, side, z), (-1.0, 0.0, 0.0), (0.0, -1.0, 0.0)),
        ((0.0, mid, z), (0.0, -1.0, 0.0), (1.0, 0.0, 0.0)),
        ((mid, side * 1 / 4, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
        ((mid, side * 2 / 4, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
        ((mid, side * 3 / 4, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
    ]
    terminals = []
    tid = 0
    for center, axis, orient in boards:
        for k, off in enumerate(offs):
            pos = tuple(center[j] + off * axis[j] for j in range(3))
            if k % 2 == 0:
                terminals.append(Terminal(id=tid, role=ROLE_EMITTER, position=pos, orientation=orient, active_area=_SMT_LED_AREA))
            else:
                terminals.append(Terminal(id=tid, role=ROLE_RECEIVER, position=pos, orientation=orient, active_area=_SMT_PD_AREA))
            tid += 1
    return SensorConfig(
        build="smt",
        slab_width=side,
        slab_length=side,
        slab_thickness=t,
        transduction="optical",
        terminals=tuple(terminals),
        margin=3.5,
        wall_reflectivity=WALL_REFLECTIVITY_DEFAULT,
        seed=seed,
    )


def enumerate_pairs(config: SensorConfig) -> PairIndex:
    """All admissible terminal pairings, deterministically ordered.

    Identical configs yield identical PairIndex values; ordering is by
    ascending terminal id.
    """
    if len(config.terminals) < 2:
        raise GeometryError("pair enumeration needs at least 2 terminals")
    if config.transduction == "resistive":
        ids = sorted(t.id for t in config.electrodes)
        pairs = tuple((a, b) for i, a in enumerate(ids) for b in ids[i + 1 :])
        return PairIndex(pairs=pairs, states=(), receiver_ids=())
    emitters = sorted(t.id for t in config.emitters)
    receivers = sorted(t.id for t in config.receivers)
    if not emitters or not receivers:
        raise GeometryError("optical config needs at least one emitter and one receiver")
    pairs = tuple((e, r) for e in emitters for r in receivers)
    states = tuple(emitters) + (AMBIENT_STATE,)
    return PairIndex(pairs=pairs, states=states, receiver_ids=tuple(receivers))


def sensing_area(config: SensorConfig, tip: IndenterTip) -> tuple[float, float, float, float]:
    """Indentable rectangle (xmin, ymin, xmax, ymax) for a tip.

    The slab footprint shrunk by (tip radius + margin) per side, so the tip
    never indents against a wall.
    """
    shrink = tip.radius + config.margin
    xmin, xmax = shrink, config.slab_width - shrink
    ymin, ymax = shrink, config.slab_length - shrink
    if xmin >= xmax or ymin >= ymax:
        raise GeometryError(f"tip radius {tip.radius} + margin {config.margin} leaves no indentable area")
    return (xmin, ymin, xmax, ymax)


def area_center(rect: Sequence[float]) -> tuple[float, float]:
    xmin, ymin, xmax, ymax = rect
    return ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)
