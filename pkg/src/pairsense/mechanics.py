"""Kinematic deformation model: deformed-surface height fields and strain.

The free surface under a posed indenter is modeled as a kinematic imprint:
inside the contact footprint the downward displacement equals the tip's
penetration profile, and outside it a smooth Gaussian skirt
``h_edge * exp(-delta^2 / (2 w^2))`` decays to zero, where ``delta`` is the
in-plane distance to the footprint boundary and ``h_edge`` the displacement
at the nearest boundary point. No constitutive elasticity solve is performed;
the learning stack only needs plausible, controllable fields.

Heights are downward displacements (>= 0) of the surface at rest height
``z = slab_thickness``. Normals are computed by central finite differences on
the analytic height field, which treats all tip shapes uniformly and avoids
piecewise analytic gradients at footprint seams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    SHAPE_CORNER,
    SHAPE_DISC,
    SHAPE_EDGE,
    SHAPE_HEMISPHERE,
    IndenterTip,
    SensorConfig,
    sensing_area,
)

NORMAL_FD_STEP = 0.05  # mm, central-difference step for surface normals
DEPTH_CAP_FRACTION = 0.75  # of slab thickness; never indent through the slab
SKIRT_TOL = 0.02  # mm, displacement below which the far field is treated as flat


class MechanicsError(ValueError):
    """Pose outside the sensing area or beyond the depth cap."""


@dataclass(frozen=True)
class IndentationPose:
    """Planar position and depth of a posed tip. Depth is positive into the
    slab; 0 means the tip rests on the surface."""

    x: float
    y: float
    depth: float
    tip: IndenterTip

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "depth": self.depth, "tip": self.tip.to_dict()}


class SurfaceField:
    """Deformed top surface for one pose: height, normals, contact footprint.

    All evaluators are vectorized over ``points`` of shape (n, 2) and are
    pure functions of the construction arguments, so a field can be shared
    across parallel workers.
    """

    def __init__(self, config: SensorConfig, pose: IndentationPose):
        self.config = config
        self.pose = pose
        self.thickness = config.slab_thickness
        self.w = config.skirt_w
        self.flat = pose.depth <= 0.0
        self.center = np.array([pose.x, pose.y])
        d = max(pose.depth, 0.0)
        self.max_height = 0.0 if self.flat else d
        tip = pose.tip
        phi = math.radians(tip.orientation_deg)
        self._rot = np.array([[math.cos(phi), math.sin(phi)], [-math.sin(phi), math.cos(phi)]])
        self._rotate = abs(phi) > 1e-12 and tip.shape not in (SHAPE_HEMISPHERE, SHAPE_DISC)
        r = tip.radius
        if self.flat:
            self._edge_max = 0.0
            self._foot_extent = 0.0
        elif tip.shape == SHAPE_HEMISPHERE:
            self._rc = math.sqrt(d * (2 * r - d)) if d < r else r
            self._edge_max = max(d - r, 0.0)
            self._foot_extent = self._rc
        elif tip.shape == SHAPE_DISC:
            self._rc = r
            self._edge_max = d
            self._foot_extent = r
        elif tip.shape == SHAPE_EDGE:
            self._half_len = r
            self._edge_max = d  # cliff at the edge ends
            self._foot_extent = math.hypot(r, d)
        elif tip.shape == SHAPE_CORNER:
            self._half_wid = min(d, r)
            self._edge_max = max(d - r, 0.0)
            self._foot_extent = math.sqrt(2.0) * self._half_wid
        else:  # pragma: no cover - tip constructors validate shapes
            raise MechanicsError(f"unhandled tip shape {tip.shape!r}")
        if self._edge_max > SKIRT_TOL:
            skirt_reach = self.w * math.sqrt(2.0 * math.log(self._edge_max / SKIRT_TOL))
        else:
            skirt_reach = 0.0
        # Two horizons for the tracer: inside inner_radius the surface spans
        # the full indentation depth; between inner_radius and
        # influence_radius only the skirt (height <= skirt_max) deviates from
        # flat; beyond influence_radius the surface is flat within SKIRT_TOL.
        self.inner_radius = self._foot_extent + NORMAL_FD_STEP
        self.skirt_max = self._edge_max
        self.influence_radius = self._foot_extent + skirt_reach + NORMAL_FD_STEP

    def _local(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.center
        return rel @ self._rot.T if self._rotate else rel

    def _profile_and_boundary(self, points: np.ndarray):
        """Per-point footprint membership, penetration profile, boundary
        distance and boundary height (vectorized)."""
        d = self.pose.depth
        tip = self.pose.tip
        q = self._local(points)
        if tip.shape in (SHAPE_HEMISPHERE, SHAPE_DISC):
            rho = np.hypot(q[:, 0], q[:, 1])
            inside = rho <= self._rc
            if tip.shape == SHAPE_HEMISPHERE:
                r = tip.radius
                prof = d - r + np.sqrt(np.maximum(r * r - rho * rho, 0.0))
            else:
                prof = np.full(len(q), d)
            delta = np.maximum(rho - self._rc, 0.0)
            h_edge = np.full(len(q), self._edge_max)
            return inside, prof, delta, h_edge
        if tip.shape == SHAPE_EDGE:
            u, s = q[:, 0], q[:, 1]
            su, ss = np.abs(u), np.abs(s)
            inside = (su <= self._half_len) & (ss <= d)
            prof = d - ss
            uc = np.clip(u, -self._half_len, self._half_len)
            sc = np.clip(s, -d, d)
            delta = np.hypot(u - uc, s - sc)
            h_edge = d - np.abs(sc)
            return inside, prof, delta, h_edge
        # corner: square-pyramid apex, 45-degree faces
        u, v = np.abs(q[:, 0]), np.abs(q[:, 1])
        m = self._half_wid
        inside = np.maximum(u, v) <= m
        prof = d - np.maximum(u, v)
        uc = np.clip(q[:, 0], -m, m)
        vc = np.clip(q[:, 1], -m, m)
        delta = np.hypot(q[:, 0] - uc, q[:, 1] - vc)
        h_edge = d - np.maximum(np.abs(uc), np.abs(vc))
        return inside, prof, delta, h_edge

    def height(self, points: np.ndarray) -> np.ndarray:
        """Downward displacement (mm, >= 0) at in-plane points (n, 2)."""
        return self.height_raw(np.atleast_2d(np.asarray(points, dtype=float)))

    def height_raw(self, points: np.ndarray) -> np.ndarray:
        """height() without input coercion; points must be (n, 2) float64."""
        if self.flat:
            return np.zeros(len(points))
        inside, prof, delta, h_edge = self._profile_and_boundary(points)
        skirt = h_edge * np.exp(-(delta * delta) / (2.0 * self.w * self.w))
        return np.where(inside, np.maximum(prof, 0.0), skirt)

    def in_footprint(self, points: np.ndarray) -> np.ndarray:
        """True where the surface point is in direct contact with the tip."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.flat:
            return np.zeros(len(points), dtype=bool)
        inside, _, _, _ = self._profile_and_boundary(points)
        return inside

    def normal(self, points: np.ndarray) -> np.ndarray:
        """Outward unit surface normals at in-plane points (n, 2) -> (n, 3)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = np.zeros((len(points), 3))
        n[:, 2] = 1.0
        if self.flat:
            return n
        s = NORMAL_FD_STEP
        ex = np.array([s, 0.0])
        ey = np.array([0.0, s])
        hx = (self.height(points + ex) - self.height(points - ex)) / (2 * s)
        hy = (self.height(points + ey) - self.height(points - ey)) / (2 * s)
        n[:, 0] = hx
        n[:, 1] = hy
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return n


def deform(config: SensorConfig, pose: IndentationPose) -> SurfaceField:
    """Deformed-surface field for a posed tip.

    Poses with non-positive depth give the identically flat field. Raises
    MechanicsError for poses outside the sensing area or deeper than
    0.75 x slab thickness.
    """
    if pose.depth > DEPTH_CAP_FRACTION * config.slab_thickness:
        raise MechanicsError(
            f"depth {pose.depth} exceeds cap {DEPTH_CAP_FRACTION * config.slab_thickness} mm"
        )
    if pose.depth > 0.0:
        xmin, ymin, xmax, ymax = sensing_area(config, pose.tip)
        eps = 1e-9
        if not (xmin - eps <= pose.x <= xmax + eps and ymin - eps <= pose.y <= ymax + eps):
            raise MechanicsError(f"pose ({pose.x}, {pose.y}) outside sensing area {(xmin, ymin, xmax, ymax)}")
    return SurfaceField(config, pose)


def flat_field(config: SensorConfig, tip: IndenterTip | None = None) -> SurfaceField:
    """The undeformed surface (no contact)."""
    from .geometry import hemisphere_tip

    tip = tip or hemisphere_tip()
    return SurfaceField(config, IndentationPose(config.slab_width / 2, config.slab_length / 2, 0.0, tip))


def strain_field(field: SurfaceField, config: SensorConfig):
    """Compressive strain evaluator eps(points, z) for the deformed slab.

    At the surface the strain is height/thickness; it attenuates linearly
    with depth below the surface, reaching 0 at the base (z = 0).
    """
    t = config.slab_thickness

    def eps(points: np.ndarray, z: np.ndarray | float) -> np.ndarray:
        h = field.height(points)
        zfrac = np.clip(np.asarray(z, dtype=float) / t, 0.0, 1.0)
        return np.clip(h / t * zfrac, 0.0, DEPTH_CAP_FRACTION)

    return eps


# Load-vs-depth anchors: (0, 0), (0.1, 0.11) and (0.3, 0.55) are stated
# operating points; beyond 0.3 mm the curve is a monotone convex power-law
# fit F = 0.55 * (d / 0.3)^1.5 sampled every 0.5 mm.
_FORCE_KNOTS_D = [0.0, 0.1, 0.3] + [0.5 + 0.5 * i for i in range(10)]
_FORCE_KNOTS_F = [0.0, 0.11, 0.55] + [0.55 * ((0.5 + 0.5 * i) / 0.3) ** 1.5 for i in range(10)]


def depth_to_force(d: float) -> float:
    """Indentation depth (mm) to load (N) via the piecewise-linear stiffness
    curve of the 1:20 elastomer. Valid for d in [0, 5]."""
    if not (0.0 <= d <= 5.0):
        raise MechanicsError(f"depth {d} outside the calibrated range [0, 5] mm")
    return float(np.interp(d, _FORCE_KNOTS_D, _FORCE_KNOTS_F))
