"""Resistor-lattice forward model of the piezoresistive slab.

The slab volume is discretized as a cubic lattice of nodes joined by
conductances; compressive strain raises edge conductance exponentially,
``g = g0 * exp(beta * eps_eff)``. Pairwise terminal resistances come from
nodal (graph-Laplacian) analysis with one grounded node and unit current
injected/extracted at the electrode supernodes. Strain reaches each edge
through a first-order lag with a fast loading and a slow unloading time
constant, which opens the measured hysteresis loop; optional conductance
drift is a zero-mean random walk on the baseline conductances.

Electrodes bind every boundary node within a fixed physical patch radius and
those nodes are merged into one supernode, so the contact size (and with it
the baseline resistance) is stable under lattice refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .geometry import SensorConfig
from .mechanics import SurfaceField, strain_field

BETA_DEFAULT = 8.0  # conductance-strain exponent; positive: compression raises conductance
G0_SIGMA = 1.0e-3  # S/mm material conductance scale: 1 mS edges at 1 mm pitch
ELECTRODE_PATCH_RADIUS = 2.5  # mm, boundary patch merged into each electrode supernode
FRAME_PERIOD_S = 0.025  # one full 6-pair frame every 25 ms (40 Hz sampling)


class LatticeError(ValueError):
    """Disconnected lattice, singular system or missing baseline."""


@dataclass
class Lattice:
    """Conductance lattice with electrode supernodes.

    ``edges`` are (n_edges, 2) compressed node indices, ``g0`` the baseline
    edge conductances in siemens, ``electrode_nodes[k]`` the supernode index
    bound to electrode k (in config terminal order), ``midpoints`` the edge
    midpoints in slab coordinates (used to sample the strain field).
    """

    n_nodes: int
    edges: np.ndarray
    g0: np.ndarray
    electrode_nodes: list[int]
    midpoints: np.ndarray
    pitch: float

    def __post_init__(self):
        if np.any(self.g0 <= 0):
            raise LatticeError("edge conductances must be positive")

    def laplacian(self, g: np.ndarray) -> sparse.csc_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([j, i, i, j])
        vals = np.concatenate([-g, -g, g, g])
        return sparse.coo_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_nodes)).tocsc()


def build_lattice(config: SensorConfig, pitch: float = 1.0) -> Lattice:
    """Cubic lattice over the slab at the given node pitch."""
    if config.transduction != "resistive":
        raise LatticeError("lattice model applies to resistive configs only")
    w, l, t = config.slab_width, config.slab_length, config.slab_thickness
    nx, ny, nz = (int(round(w / pitch)) + 1, int(round(l / pitch)) + 1, int(round(t / pitch)) + 1)
    xs = np.linspace(0.0, w, nx)
    ys = np.linspace(0.0, l, ny)
    zs = np.linspace(0.0, t, nz)

    def nid(ix, iy, iz):
        return (ix * ny + iy) * nz + iz

    n_grid = nx * ny * nz
    # merge electrode patches into supernodes via a node relabeling
    owner = np.full(n_grid, -1, dtype=np.int64)
    gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    coords = np.stack([xs[gx.ravel()], ys[gy.ravel()], zs[gz.ravel()]], axis=1)
    on_boundary = (
        (coords[:, 0] < 1e-9)
        | (coords[:, 0] > w - 1e-9)
        | (coords[:, 1] < 1e-9)
        | (coords[:, 1] > l - 1e-9)
        | (coords[:, 2] < 1e-9)
    )
    for k, term in enumerate(config.terminals):
        p = np.asarray(term.position)
        close = on_boundary & (np.linalg.norm(coords - p, axis=1) <= ELECTRODE_PATCH_RADIUS + 1e-9)
        if not close.any():
            raise LatticeError(f"electrode {term.id} binds no boundary node at pitch {pitch}")
        owner[close] = k

    # compressed indices: electrode supernodes first, then free nodes
    n_elec = len(config.terminals)
    comp = np.empty(n_grid, dtype=np.int64)
    free = owner < 0
    comp[~free] = owner[~free]
    comp[free] = n_elec + np.arange(int(free.sum()))
    n_nodes = n_elec + int(free.sum())

    edge_list = []
    mid_list = []
    idx = np.arange(n_grid).reshape(nx, ny, nz)
    for axis in range(3):
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(0, -1)
        sl_b[axis] = slice(1, None)
        a = idx[tuple(sl_a)].ravel()
        b = idx[tuple(sl_b)].ravel()
        edge_list.append(np.stack([comp[a], comp[b]], axis=1))
        mid_list.append(0.5 * (coords[a] + coords[b]))
    edges = np.concatenate(edge_list, axis=0)
    midpoints = np.concatenate(mid_list, axis=0)
    # drop edges internal to a supernode
    keep = edges[:, 0] != edges[:, 1]
    edges, midpoints = edges[keep], midpoints[keep]
    # continuum scaling: edge conductance = sigma * pitch
    g0 = np.full(len(edges), G0_SIGMA * pitch)
    return Lattice(n_nodes=n_nodes, edges=edges, g0=g0, electrode_nodes=list(range(n_elec)), midpoints=midpoints, pitch=pitch)


def _solve_potentials(lattice: Lattice, g: np.ndarray, injections: list[tuple[int, int]]) -> np.ndarray:
    """Node potentials for unit current a->b injections, grounding node 0.

    Returns an array of shape (len(injections), n_nodes).
    """
    lap = lattice.laplacian(g)
    reduced = lap[1:, :][:, 1:].tocsc()
    try:
        lu = splu(reduced)
    except RuntimeError as exc:  # singular beyond grounding
        raise LatticeError(f"nodal system singular: {exc}") from exc
    out = np.zeros((len(injections), lattice.n_nodes))
    for row, (a, b) in enumerate(injections):
        rhs = np.zeros(lattice.n_nodes)
        rhs[a] += 1.0
        rhs[b] -= 1.0
        v = lu.solve(rhs[1:])
        if not np.all(np.isfinite(v)):
            raise LatticeError("nodal solve produced non-finite potentials (disconnected lattice?)")
        out[row, 1:] = v
    return out


def pair_resistance(lattice: Lattice, pair: tuple[int, int], g: np.ndarray | None = None) -> float:
    """Effective resistance (ohms) between two electrode supernodes."""
    g = lattice.g0 if g is None else g
    a, b = lattice.electrode_nodes[pair[0]], lattice.electrode_nodes[pair[1]]
    v = _solve_potentials(lattice, g, [(a, b)])[0]
    return float(v[a] - v[b])


def pair_resistances(lattice: Lattice, pairs: list[tuple[int, int]], g: np.ndarray | None = None) -> np.ndarray:
    """Effective resistances for many pairs with one factorization."""
    g = lattice.g0 if g is None else g
    injections = [(lattice.electrode_nodes[a], lattice.electrode_nodes[b]) for a, b in pairs]
    v = _solve_potentials(lattice, g, injections)
    return np.array([v[row, a] - v[row, b] for row, (a, b) in enumerate(injections)])


def strained_conductance(g0: np.ndarray | float, eps_eff: np.ndarray | float, beta: float = BETA_DEFAULT):
    """Edge conductance under effective compressive strain."""
    return g0 * np.exp(beta * np.asarray(eps_eff, dtype=float))


@dataclass
class HysteresisState:
    """Per-edge effective strain with asymmetric first-order lag plus an
    optional conductance random walk. Strictly sequential per event timeline."""

    eps_eff: np.ndarray
    tau_load: float = 0.3
    tau_unload: float = 2.0
    drift_sigma: float = 0.0  # relative conductance random-walk scale per sqrt(s)
    g0_mult: np.ndarray | None = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    baseline: np.ndarray | None = None

    def __post_init__(self):
        if not self.tau_unload > self.tau_load:
            raise LatticeError("loading must respond faster than recovery (tau_unload > tau_load)")
        if self.g0_mult is None:
            self.g0_mult = np.ones_like(self.eps_eff)


def new_state(lattice: Lattice, drift_sigma: float = 0.0, seed: int = 0) -> HysteresisState:
    return HysteresisState(
        eps_eff=np.zeros(len(lattice.edges)),
        drift_sigma=drift_sigma,
        rng=np.random.default_rng(seed),
    )


def step_hysteresis(state: HysteresisState, eps_target: np.ndarray, dt: float) -> HysteresisState:
    """Advance the effective strain one time step (in place, returns state).

    The lag uses the exact exponential update ``eps += (1 - exp(-dt/tau)) *
    (target - eps)`` so large steps converge to the target instead of
    overshooting; tau is the loading constant where strain is rising and the
    unloading constant where it is relaxing.
    """
    if dt <= 0:
        raise LatticeError("dt must be positive")
    eps_target = np.asarray(eps_target, dtype=float)
    rising = eps_target > state.eps_eff
    tau = np.where(rising, state.tau_load, state.tau_unload)
    state.eps_eff += (1.0 - np.exp(-dt / tau)) * (eps_target - state.eps_eff)
    if state.drift_sigma > 0:
        step = state.rng.normal(0.0, state.drift_sigma * np.sqrt(dt), size=state.g0_mult.shape)
        state.g0_mult = np.maximum(state.g0_mult + step, 0.05)
    return state


def edge_strain_targets(lattice: Lattice, field_: SurfaceField, config: SensorConfig) -> np.ndarray:
    """Strain-field samples at the lattice edge midpoints."""
    eps = strain_field(field_, config)
    return eps(lattice.midpoints[:, :2], lattice.midpoints[:, 2])


def conductances(lattice: Lattice, state: HysteresisState, beta: float = BETA_DEFAULT) -> np.ndarray:
    return strained_conductance(lattice.g0 * state.g0_mult, state.eps_eff, beta)


def capture_baseline(lattice: Lattice, state: HysteresisState, pairs: list[tuple[int, int]], beta: float = BETA_DEFAULT) -> np.ndarray:
    """Record the pre-contact pair resistances used for subtraction."""
    state.baseline = pair_resistances(lattice, pairs, conductances(lattice, state, beta))
    return state.baseline


def resistive_frame(
    config: SensorConfig,
    lattice: Lattice,
    state: HysteresisState,
    pairs: list[tuple[int, int]],
    beta: float = BETA_DEFAULT,
    noise_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Baseline-subtracted pair-resistance changes r^1..r^6 (ohms).

    Requires a baseline captured at depth 0 immediately before the
    indentation; Gaussian measurement noise (config.noise.shot_noise_sigma,
    in ohms for resistive builds) is added when a noise rng is supplied.
    """
    if state.baseline is None:
        raise LatticeError("baseline not captured before indentation")
    r = pair_resistances(lattice, pairs, conductances(lattice, state, beta)) - state.baseline
    sigma = config.noise.shot_noise_sigma
    if noise_rng is not None and sigma > 0:
        r = r + noise_rng.normal(0.0, sigma, size=r.shape)
    return r
