"""Monte Carlo ray-cast forward model of light transport through the slab.

Rays leave each emitter over a cosine-weighted cone, travel in straight
segments, and interact with the deformed free surface: hits inside the
contact footprint are absorbed by the indenter, hits elsewhere either
totally-internally reflect (incidence angle from the local normal at or above
the critical angle) or exit and are lost. Walls and the base absorb unless a
wall reflectivity is configured; a ray ending on a receiver's active area
within its acceptance cone contributes one count. Deformed-surface hits are
located by ray marching plus bisection refinement; far from the contact the
surface is exactly flat and intersections are analytic.

Two behaviors follow directly from this mechanism: a light touch perturbs the
reflected-path population (first interaction mode), and a deep indentation
occludes direct line-of-sight paths (second mode). Layer thickness controls
whether the two modes are contiguous in depth; :func:`thickness_sweep`
exposes the dead band that opens between them on thick slabs.

Sampling determinism: the ray pattern of each emitter is a fixed property of
the sensor config (seeded by ``config.seed`` and the emitter id), mirroring a
physical LED's fixed emission profile. ``rng_seed`` drives only the
shot-noise stream, so two frames of the same geometry differ by noise alone
and a learned model sees a smooth, repeatable signal field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import NoiseParams, SensorConfig, Terminal, enumerate_pairs
from .mechanics import IndentationPose, SurfaceField, deform, flat_field
from .util import derive_seed

GAIN_TARGET_FRACTION = 0.6  # undeformed strongest channel reads ~60% full scale
_EPS = 1e-12


class OpticsError(ValueError):
    """Non-optical config, bad budget, or degenerate ray-trace inputs."""


@dataclass(frozen=True)
class RayBudget:
    """Monte Carlo sampling budget for one frame."""

    rays_per_emitter: int = 20000
    max_bounces: int = 4
    march_step: float = 0.2  # mm

    def __post_init__(self):
        if self.rays_per_emitter < 1000:
            raise OpticsError("rays_per_emitter must be >= 1000 for reported signals")
        if self.max_bounces < 1:
            raise OpticsError("max_bounces must be >= 1")
        if self.march_step <= 0:
            raise OpticsError("march_step must be positive")

    def key(self) -> tuple:
        return (self.rays_per_emitter, self.max_bounces, self.march_step)


@dataclass
class RawOpticalFrame:
    """Per-state, per-receiver ADC readings for one measurement.

    ``readings[s, r]`` is the reading of receiver ``receiver_ids[r]`` in
    excitation state ``states[s]``; the last state is the all-off ambient
    state. ``captured`` holds the noiseless capture counts per emitter state
    (diagnostics), split into direct (no surface bounce) and reflected parts.
    """

    readings: np.ndarray
    states: tuple[int, ...]
    receiver_ids: tuple[int, ...]
    gain: float
    captured_direct: np.ndarray | None = None
    captured_reflected: np.ndarray | None = None

    @property
    def ambient(self) -> np.ndarray:
        return self.readings[-1]

    def features(self) -> np.ndarray:
        """Ambient-subtracted per-(emitter state, receiver) channel vector."""
        return (self.readings[:-1] - self.readings[-1][None, :]).ravel()


def reflect_or_exit(incident, normal, n_in: float, n_out: float):
    """Classify one surface interaction: total internal reflection or exit.

    Angles are measured from the surface normal; TIR occurs at or above the
    critical angle arcsin(n_out / n_in). Returns ("reflected", direction) or
    ("exit", None).
    """
    incident = np.asarray(incident, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(incident) - 1.0) > 1e-9 or abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise OpticsError("incident and normal must be unit vectors")
    if not n_in > n_out:
        raise OpticsError("TIR requires n_in > n_out")
    cos_i = abs(float(np.dot(incident, normal)))
    sin_i = math.sqrt(max(0.0, 1.0 - cos_i * cos_i))
    if sin_i >= n_out / n_in - 1e-15:
        d = float(np.dot(incident, normal))
        return ("reflected", incident - 2.0 * d * normal)
    return ("exit", None)


class _Rect:
    """Receiver active square in wall-plane coordinates."""

    __slots__ = ("wall", "c1", "c2", "half", "orient", "cos_acc", "index")

    def __init__(self, wall, c1, c2, half, orient, cos_acc, index):
        self.wall = wall
        self.c1 = c1
        self.c2 = c2
        self.half = half
        self.orient = orient
        self.cos_acc = cos_acc
        self.index = index


# wall id -> (axis, boundary is high side)
_WALLS = ((0, False), (0, True), (1, False), (1, True), (2, False))


def _wall_of(term: Terminal, cfg: SensorConfig) -> int:
    x, y, z = term.position
    if abs(x) <= 1e-9:
        return 0
    if abs(x - cfg.slab_width) <= 1e-9:
        return 1
    if abs(y) <= 1e-9:
        return 2
    if abs(y - cfg.slab_length) <= 1e-9:
        return 3
    if abs(z) <= 1e-9:
        return 4
    raise OpticsError(f"terminal {term.id} not on a wall or the base")


_PLANE_AXES = {0: (1, 2), 1: (1, 2), 2: (0, 2), 3: (0, 2), 4: (0, 1)}


class OpticalTracer:
    """Precompiled tracer for one (config, budget) pair.

    Holds the fixed emitter ray patterns and the calibrated ADC gain; the
    heavy per-frame work happens in :meth:`trace`. Instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, config: SensorConfig, budget: RayBudget | None = None):
        if config.transduction != "optical":
            raise OpticsError("ray tracer requires an optical config")
        self.config = config
        self.budget = budget or RayBudget()
        self.pair_index = enumerate_pairs(config)
        self.emitter_ids = list(self.pair_index.states[:-1])
        self.receiver_ids = list(self.pair_index.receiver_ids)
        self.n_emitters = len(self.emitter_ids)
        self.n_receivers = len(self.receiver_ids)
        by_id = {t.id: t for t in config.terminals}
        self.emitters = [by_id[i] for i in self.emitter_ids]
        self.receivers = [by_id[i] for i in self.receiver_ids]
        n1, n2 = config.refractive_index_elastomer, config.refractive_index_air
        sin_c = n2 / n1
        self.cos_crit = math.sqrt(max(0.0, 1.0 - sin_c * sin_c))
        self.box = np.array([config.slab_width, config.slab_length, config.slab_thickness])
        self._receiver_rects = self._compile_receivers()
        self._origins, self._dirs, self._states = self._sample_rays()
        self._gain: float | None = None

    # --- construction helpers -------------------------------------------------

    def _compile_receivers(self):
        rects: dict[int, list[_Rect]] = {w: [] for w in range(5)}
        for idx, term in enumerate(self.receivers):
            w = _wall_of(term, self.config)
            a1, a2 = _PLANE_AXES[w]
            half = math.sqrt(term.active_area) / 2.0
            rects[w].append(
                _Rect(
                    wall=w,
                    c1=term.position[a1],
                    c2=term.position[a2],
                    half=half,
                    orient=np.asarray(term.orientation, dtype=float),
                    cos_acc=math.cos(math.radians(term.acceptance_half_angle)),
                    index=idx,
                )
            )
        return rects

    def _sample_rays(self):
        """Fixed cosine-weighted cone samples per emitter, stacked."""
        n = self.budget.rays_per_emitter
        t_thick = self.config.slab_thickness
        origins, dirs, states = [], [], []
        for s_idx, term in enumerate(self.emitters):
            rng = np.random.default_rng(derive_seed(self.config.seed, "rays", term.id, n))
            o = np.asarray(term.orientation, dtype=float)
            b1 = np.cross(o, [0.0, 0.0, 1.0])
            if np.linalg.norm(b1) < 1e-9:  # base-mounted emitter
                b1 = np.array([1.0, 0.0, 0.0])
            b1 /= np.linalg.norm(b1)
            b2 = np.cross(o, b1)
            half = math.sqrt(term.active_area) / 2.0
            off1 = rng.uniform(-half, half, n)
            off2 = rng.uniform(-half, half, n)
            pos = np.asarray(term.position) + off1[:, None] * b1[None, :] + off2[:, None] * b2[None, :]
            pos[:, 2] = np.clip(pos[:, 2], 0.05, t_thick - 0.05)
            sin_max = math.sin(math.radians(term.emission_half_angle))
            sin_t = np.sqrt(rng.uniform(0.0, 1.0, n)) * sin_max
            cos_t = np.sqrt(1.0 - sin_t * sin_t)
            phi = rng.uniform(0.0, 2.0 * math.pi, n)
            d = (
                cos_t[:, None] * o[None, :]
                + (sin_t * np.cos(phi))[:, None] * b1[None, :]
                + (sin_t * np.sin(phi))[:, None] * b2[None, :]
            )
            origins.append(pos + 1e-6 * o[None, :])
            dirs.append(d)
            states.append(np.full(n, s_idx, dtype=np.int64))
        return (
            np.concatenate(origins, axis=0),
            np.concatenate(dirs, axis=0),
            np.concatenate(states, axis=0),
        )

    # --- tracing core ----------------------------------------------------------

    def _wall_hit(self, o: np.ndarray, u: np.ndarray):
        """Distance to the nearest absorbing boundary plane and its wall id
        (top surface excluded)."""
        n = len(o)
        t_best = np.full(n, np.inf)
        wall = np.full(n, -1, dtype=np.int64)
        for w, (axis, high) in enumerate(_WALLS):
            bound = self.box[axis] if high else 0.0
            denom = u[:, axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (bound - o[:, axis]) / denom
            ok = (denom > _EPS) if high else (denom < -_EPS)
            t = np.where(ok, t, np.inf)
            better = t < t_best
            t_best = np.where(better, t, t_best)
            wall = np.where(better, w, wall)
        return t_best, wall

    _MARCH_BLOCK = 16  # march steps evaluated per vector call

    def _march(self, field: SurfaceField, o, u, t0, t1):
        """First crossing of z = T - h(x, y) within [t0, t1] per ray.

        Returns (hit mask, t_hit). Crossing detection marches at
        budget.march_step (evaluated in blocks to amortize call overhead)
        then bisects to sub-1e-3 mm.
        """
        T = self.config.slab_thickness
        o_xy, o_z = o[:, :2], o[:, 2]
        u_xy, u_z = u[:, :2], u[:, 2]

        def f(idx, t):
            return o_z[idx] + t * u_z[idx] - T + field.height_raw(o_xy[idx] + t[:, None] * u_xy[idx])

        n = len(t0)
        t_hit = np.full(n, np.nan)
        hit = np.zeros(n, dtype=bool)
        t_prev = t0.copy()
        f0 = f(np.arange(n), t_prev)
        immediate = f0 >= 0.0
        t_hit[immediate] = t0[immediate]
        hit[immediate] = True
        act = np.flatnonzero(~immediate)
        step = self.budget.march_step
        block = self._MARCH_BLOCK
        offsets = step * np.arange(1, block + 1)
        while len(act):
            grid = np.minimum(t_prev[act][:, None] + offsets[None, :], t1[act][:, None])
            pz = o_z[act][:, None] + grid * u_z[act][:, None]
            pxy = o_xy[act][:, None, :] + grid[:, :, None] * u_xy[act][:, None, :]
            fg = pz - T + field.height_raw(pxy.reshape(-1, 2)).reshape(grid.shape)
            above = fg >= 0.0
            crossed = above.any(axis=1)
            if crossed.any():
                rows = np.flatnonzero(crossed)
                first = above[rows].argmax(axis=1)
                c = act[rows]
                hi = grid[rows, first]
                lo = np.where(first > 0, grid[rows, np.maximum(first - 1, 0)], t_prev[c])
                for _ in range(9):
                    mid = 0.5 * (lo + hi)
                    fm = f(c, mid)
                    up = fm >= 0.0
                    hi = np.where(up, mid, hi)
                    lo = np.where(up, lo, mid)
                t_hit[c] = hi
                hit[c] = True
            ended = grid[:, -1] >= t1[act] - 1e-12
            keep = ~crossed & ~ended
            t_prev[act[keep]] = grid[keep, -1]
            act = act[keep]
        return hit, t_hit

    def _top_surface_hits(self, field: SurfaceField, o, u, t_wall):
        """Per-ray top-surface crossing parameter (inf where none)."""
        n = len(o)
        T = self.config.slab_thickness
        uz = u[:, 2]
        if field.flat:
            with np.errstate(divide="ignore", invalid="ignore"):
                t_top = (T - o[:, 2]) / uz
            return np.where((uz > _EPS) & (t_top <= t_wall), t_top, np.inf)

        with np.errstate(divide="ignore", invalid="ignore"):
            t_at_top = (T - o[:, 2]) / uz
        ascending = uz > _EPS

        def band_window(zlo: float):
            """Per-ray [lo, hi] while z is within [zlo, T], clipped to the wall."""
            with np.errstate(divide="ignore", invalid="ignore"):
                t_at_lo = (zlo - o[:, 2]) / uz
            in_band = (o[:, 2] >= zlo - 1e-12) & (o[:, 2] <= T + 1e-12)
            lo = np.where(ascending, np.maximum(t_at_lo, 0.0), 0.0)
            hi = np.where(ascending, t_at_top, np.where(uz < -_EPS, t_at_lo, t_wall))
            hi = np.minimum(hi, t_wall)
            empty = np.where(np.abs(uz) <= _EPS, ~in_band, np.where(uz < -_EPS, ~in_band, t_at_top < 0.0))
            return lo, hi, empty | (hi <= lo)

        c = np.asarray(field.center)
        rel = o[:, :2] - c[None, :]
        a2 = np.maximum((u[:, :2] ** 2).sum(axis=1), _EPS)
        bq = (rel * u[:, :2]).sum(axis=1)
        rel2 = (rel * rel).sum(axis=1)

        def circle_window(radius: float):
            """Per-ray [lo, hi] while the xy track is within the circle."""
            disc = bq * bq - a2 * (rel2 - radius * radius)
            sq = np.sqrt(np.maximum(disc, 0.0))
            return (-bq - sq) / a2, (-bq + sq) / a2, disc <= 0.0

        # Zone 1: full-depth band, inside the footprint cylinder.
        # Zone 2: thin skirt band, inside the influence circle (empty when the
        # footprint boundary carries no displacement, e.g. a shallow
        # hemisphere).
        zones = [(T - field.max_height, field.inner_radius)]
        if field.skirt_max > 0.0:
            zones.append((T - min(field.skirt_max * 1.0001 + 1e-6, field.max_height), field.influence_radius))

        t_hit = np.full(n, np.inf)
        for zlo, radius in zones:
            b_lo, b_hi, b_empty = band_window(zlo)
            c_lo, c_hi, c_empty = circle_window(radius)
            lo = np.maximum(b_lo, c_lo)
            hi = np.minimum(b_hi, c_hi)
            rows = np.flatnonzero(~b_empty & ~c_empty & (hi > lo + 1e-15))
            if len(rows):
                hit, t_m = self._march(field, o[rows], u[rows], lo[rows], hi[rows])
                got = rows[hit]
                t_hit[got] = np.minimum(t_hit[got], t_m[hit])

        # Ascending rays with no marched crossing exit through the flat
        # surface outside the circles (rays that reach z = T inside a march
        # window always register there, since f(z=T) = h >= 0).
        flat_rows = ascending & ~np.isfinite(t_hit) & (t_at_top >= -1e-12)
        t_hit[flat_rows] = t_at_top[flat_rows]
        return np.where(t_hit <= t_wall + 1e-12, t_hit, np.inf)

    def trace_counts(self, field: SurfaceField):
        """Noiseless capture counts per (emitter state, receiver).

        Returns (captured, direct, reflected) float arrays of shape (E, R);
        captured = direct + reflected. Deterministic for a given field.
        """
        cfg = self.config
        o = self._origins.copy()
        u = self._dirs.copy()
        state = self._states.copy()
        weight = np.ones(len(o))
        bounces = np.zeros(len(o), dtype=np.int64)
        direct = np.zeros((self.n_emitters, self.n_receivers))
        reflected = np.zeros((self.n_emitters, self.n_receivers))
        refl_w = cfg.wall_reflectivity

        for _ in range(self.budget.max_bounces + 1):
            if len(o) == 0:
                break
            t_wall, wall = self._wall_hit(o, u)
            t_top = self._top_surface_hits(field, o, u, t_wall)
            top = t_top < t_wall

            # --- top-surface interactions
            keep_o = []
            keep_u = []
            keep_state = []
            keep_w = []
            keep_b = []
            if top.any():
                ti = np.flatnonzero(top)
                q = o[ti] + t_top[ti][:, None] * u[ti]
                absorbed = field.in_footprint(q[:, :2])
                live = ~absorbed
                if live.any():
                    li = ti[live]
                    ql = q[live]
                    nrm = field.normal(ql[:, :2])
                    cos_i = (u[li] * nrm).sum(axis=1)
                    tir = (cos_i <= self.cos_crit) & (cos_i > 0.0)
                    if tir.any():
                        ri = li[tir]
                        nr = nrm[tir]
                        ci = cos_i[tir]
                        new_u = u[ri] - 2.0 * ci[:, None] * nr
                        new_o = ql[tir] + 1e-6 * new_u
                        keep_o.append(new_o)
                        keep_u.append(new_u)
                        keep_state.append(state[ri])
                        keep_w.append(weight[ri])
                        keep_b.append(bounces[ri] + 1)

            # --- wall hits: receiver capture, absorption or wall reflection
            wi = np.flatnonzero(~top & np.isfinite(t_wall))
            if len(wi):
                q = o[wi] + t_wall[wi][:, None] * u[wi]
                captured = np.zeros(len(wi), dtype=bool)
                for w in range(5):
                    mask = wall[wi] == w
                    if not mask.any():
                        continue
                    rects = self._receiver_rects[w]
                    if not rects:
                        continue
                    a1, a2 = _PLANE_AXES[w]
                    sub = np.flatnonzero(mask)
                    for rect in rects:
                        inside = (
                            (np.abs(q[sub, a1] - rect.c1) <= rect.half)
                            & (np.abs(q[sub, a2] - rect.c2) <= rect.half)
                            & ~captured[sub]
                        )
                        if not inside.any():
                            continue
                        cand = sub[inside]
                        accept = -(u[wi[cand]] @ rect.orient) >= rect.cos_acc
                        got = cand[accept]
                        if len(got):
                            captured[got] = True
                            gb = bounces[wi[got]] == 0
                            np.add.at(direct, (state[wi[got[gb]]], rect.index), weight[wi[got[gb]]])
                            np.add.at(
                                reflected,
                                (state[wi[got[~gb]]], rect.index),
                                weight[wi[got[~gb]]],
                            )
                if refl_w > 0.0:
                    miss = np.flatnonzero(~captured)
                    if len(miss):
                        mi = wi[miss]
                        axis = np.array([_WALLS[w][0] for w in wall[mi]])
                        new_u = u[mi].copy()
                        new_u[np.arange(len(mi)), axis] *= -1.0
                        new_o = q[miss] + 1e-6 * new_u
                        new_w = weight[mi] * refl_w
                        strong = new_w > 0.02
                        keep_o.append(new_o[strong])
                        keep_u.append(new_u[strong])
                        keep_state.append(state[mi][strong])
                        keep_w.append(new_w[strong])
                        keep_b.append(bounces[mi][strong] + 1)

            if keep_o:
                o = np.concatenate(keep_o, axis=0)
                u = np.concatenate(keep_u, axis=0)
                state = np.concatenate(keep_state, axis=0)
                weight = np.concatenate(keep_w, axis=0)
                bounces = np.concatenate(keep_b, axis=0)
            else:
                break

        return direct + reflected, direct, reflected

    # --- calibration and frame assembly ----------------------------------------

    @property
    def gain(self) -> float:
        """ADC gain: calibrated once so the undeformed strongest channel reads
        GAIN_TARGET_FRACTION of full scale."""
        if self._gain is None:
            captured, _, _ = self.trace_counts(flat_field(self.config))
            peak = captured.max() / self.budget.rays_per_emitter
            if peak <= 0:
                raise OpticsError("gain calibration failed: no light reaches any receiver")
            self._gain = GAIN_TARGET_FRACTION * self.config.noise.adc_full_scale / peak
        return self._gain

    def frame(
        self,
        field: SurfaceField,
        noise: NoiseParams | None = None,
        rng_seed: int = 0,
        counts: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
        emitter_efficiency: np.ndarray | None = None,
    ) -> RawOpticalFrame:
        """Assemble one raw frame: trace (or reuse ``counts``), scale by the
        calibrated gain, add ambient light and shot noise, clip to ADC range."""
        noise = noise if noise is not None else self.config.noise
        captured, direct, refl = counts if counts is not None else self.trace_counts(field)
        signal = captured / self.budget.rays_per_emitter * self.gain
        if emitter_efficiency is not None:
            signal = signal * np.asarray(emitter_efficiency)[:, None]
        readings = np.zeros((self.n_emitters + 1, self.n_receivers))
        readings[: self.n_emitters] = signal
        readings += noise.ambient_level
        if noise.shot_noise_sigma > 0:
            rng = np.random.default_rng(rng_seed)
            readings = readings + rng.normal(0.0, noise.shot_noise_sigma, readings.shape)
        readings = np.clip(readings, 0.0, noise.adc_full_scale)
        return RawOpticalFrame(
            readings=readings,
            states=self.pair_index.states,
            receiver_ids=tuple(self.receiver_ids),
            gain=self.gain,
            captured_direct=direct,
            captured_reflected=refl,
        )


_TRACER_CACHE: dict[tuple, OpticalTracer] = {}


def get_tracer(config: SensorConfig, budget: RayBudget | None = None) -> OpticalTracer:
    """Shared tracer instance for a (config, budget) pair."""
    budget = budget or RayBudget()
    key = (config.digest(), budget.key())
    tracer = _TRACER_CACHE.get(key)
    if tracer is None:
        tracer = OpticalTracer(config, budget)
        if len(_TRACER_CACHE) > 32:
            _TRACER_CACHE.clear()
        _TRACER_CACHE[key] = tracer
    return tracer


def trace_frame(
    config: SensorConfig,
    field: SurfaceField,
    budget: RayBudget | None = None,
    noise: NoiseParams | None = None,
    rng_seed: int = 0,
) -> RawOpticalFrame:
    """One raw optical frame for a deformed surface. Deterministic given
    (config, field, budget, rng_seed)."""
    return get_tracer(config, budget).frame(field, noise=noise, rng_seed=rng_seed)


def apply_drift(
    frames: list[RawOpticalFrame],
    noise: NoiseParams,
    event_ids: list[int] | None = None,
    seed: int = 0,
) -> list[RawOpticalFrame]:
    """THT bonding-drift emulation over a frame sequence.

    With ``bond_detach`` each emitter's efficiency decays multiplicatively
    event by event (the elastomer detaching from the LED face); the ambient
    component is unaffected. Without ``bond_detach`` and with zero
    ``drift_rate`` the sequence is returned unchanged (the SMT behavior).
    """
    if not frames:
        return frames
    if not noise.bond_detach and noise.drift_rate == 0:
        return frames
    if not noise.bond_detach:
        return frames
    event_ids = event_ids if event_ids is not None else list(range(len(frames)))
    n_emit = len(frames[0].states) - 1
    base = noise.drift_rate if noise.drift_rate > 0 else 0.002
    rng = np.random.default_rng(derive_seed(seed, "bond-detach"))
    rates = base * rng.uniform(0.5, 1.5, n_emit)
    out = []
    for frame, ev in zip(frames, event_ids):
        eff = (1.0 - rates) ** ev
        ambient = frame.readings[-1][None, :]
        readings = frame.readings.copy()
        readings[:-1] = ambient + (readings[:-1] - ambient) * eff[:, None]
        out.append(
            RawOpticalFrame(
                readings=readings,
                states=frame.states,
                receiver_ids=frame.receiver_ids,
                gain=frame.gain,
                captured_direct=frame.captured_direct,
                captured_reflected=frame.captured_reflected,
            )
        )
    return out


def drift_efficiencies(noise: NoiseParams, n_emitters: int, event_index: int, seed: int = 0) -> np.ndarray | None:
    """Per-emitter efficiency factors for one event under bond-detach drift."""
    if not noise.bond_detach:
        return None
    base = noise.drift_rate if noise.drift_rate > 0 else 0.002
    rng = np.random.default_rng(derive_seed(seed, "bond-detach"))
    rates = base * rng.uniform(0.5, 1.5, n_emitters)
    return (1.0 - rates) ** event_index


# --- thickness sweep ------------------------------------------------------------


def sweep_rig(thickness: float, seed: int = 0) -> SensorConfig:
    """Single facing emitter/receiver pair 20 mm apart, mid-layer height."""
    from .geometry import ROLE_EMITTER, ROLE_RECEIVER

    side = 24.0
    z = thickness / 2.0
    terminals = (
        Terminal(id=0, role=ROLE_EMITTER, position=(0.0, side / 2, z), orientation=(1.0, 0.0, 0.0), active_area=25.0),
        Terminal(id=1, role=ROLE_RECEIVER, position=(20.0, side / 2, z), orientation=(-1.0, 0.0, 0.0), active_area=2.65 * 2.65),
    )
    from .geometry import WALL_REFLECTIVITY_DEFAULT

    return SensorConfig(
        build="sweep-rig",
        slab_width=20.0,
        slab_length=side,
        slab_thickness=thickness,
        transduction="optical",
        terminals=terminals,
        margin=3.0,
        wall_reflectivity=WALL_REFLECTIVITY_DEFAULT,
        seed=seed,
    )


@dataclass
class SweepCurve:
    thickness: float
    depths: np.ndarray
    signal: np.ndarray
    dead_band: tuple[float, float] | None


def detect_dead_band(
    depths: np.ndarray,
    signal: np.ndarray,
    flat_eps: float,
    min_len: float = 1.0,
) -> tuple[float, float] | None:
    """Maximal depth interval of length >= min_len where consecutive signal
    changes stay below flat_eps while the signal changes again at greater
    depth. Returns (d_start, d_end) or None."""
    diffs = np.abs(np.diff(signal))
    flat = diffs < flat_eps
    best = None
    i = 0
    while i < len(flat):
        if flat[i]:
            j = i
            while j + 1 < len(flat) and flat[j + 1]:
                j += 1
            span = depths[j + 1] - depths[i]
            changes_later = np.any(~flat[j + 1 :])
            if span >= min_len and changes_later:
                if best is None or span > best[1] - best[0]:
                    best = (float(depths[i]), float(depths[j + 1]))
            i = j + 1
        else:
            i += 1
    return best


def thickness_sweep(
    thicknesses: list[float],
    depths: np.ndarray | list[float] | None = None,
    budget: RayBudget | None = None,
    flat_eps_fraction: float = 0.002,
    seed: int = 0,
) -> list[SweepCurve]:
    """Signal-vs-depth curves of the facing test pair for each layer height.

    A hemisphere tip indents the midpoint between the pair; depths beyond the
    0.75 x thickness cap of a thin layer are clipped for that layer. Noiseless.
    """
    from .geometry import hemisphere_tip

    if not thicknesses or (depths is not None and len(depths) == 0):
        raise OpticsError("thickness_sweep needs non-empty thicknesses and depths")
    depths = np.arange(0.0, 5.0001, 0.1) if depths is None else np.asarray(depths, dtype=float)
    budget = budget or RayBudget()
    curves = []
    for t in thicknesses:
        cfg = sweep_rig(t, seed=seed)
        tracer = OpticalTracer(cfg, budget)
        cap = 0.75 * t
        ds = depths[depths <= cap + 1e-9]
        mid = (10.0, cfg.slab_length / 2)
        sig = np.zeros(len(ds))
        for i, d in enumerate(ds):
            field = deform(cfg, IndentationPose(mid[0], mid[1], float(d), hemisphere_tip()))
            frame = tracer.frame(field, noise=NoiseParams(), rng_seed=0)
            sig[i] = frame.readings[0, 0]
        flat_eps = flat_eps_fraction * cfg.noise.adc_full_scale
        band = detect_dead_band(ds, sig, flat_eps)
        curves.append(SweepCurve(thickness=t, depths=ds, signal=sig, dead_band=band))
    return curves
