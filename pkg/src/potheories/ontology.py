"""Primitive ontology extraction: matter fields, flashes and particle paths."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .core import HBAR, Configuration, DensityMatrix, GridSpec, StateVector, marginal
from .errors import BadArgument, StepSizeUnderflow

NODE_EPS = 1e-12
MAX_STEPS = 2_000_000


@dataclass(eq=False)
class MatterField:
    """m(x) on the single-particle grid (units mass / length^d)."""
    values: np.ndarray
    t: float
    grid: GridSpec

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def mass_in(self, mask) -> float:
        return float(np.sum(self.values[mask]) * self.grid.cell_volume)


@dataclass(eq=False)
class FlashSet:
    times: np.ndarray
    centers: np.ndarray
    labels: np.ndarray
    grid: GridSpec

    def __len__(self):
        return len(self.times)

    @property
    def positions(self) -> np.ndarray:
        return self.centers * self.grid.spacing

    @property
    def flashes(self):
        return [(tuple(x), float(t), int(i)) for x, t, i in zip(self.positions, self.times, self.labels)]

    def window(self, t1, t2) -> np.ndarray:
        return (self.times >= t1) & (self.times <= t2)

    def count_in(self, t1, t2) -> int:
        return int(np.count_nonzero(self.window(t1, t2)))


@dataclass(eq=False)
class ParticlePath:
    """Configurations at ``times``; ``node_flags[k]`` marks a regularised velocity
    somewhere in the interval (times[k], times[k+1])."""
    times: np.ndarray
    positions: np.ndarray
    node_flags: np.ndarray
    grid: GridSpec
    meta: dict = field(default_factory=dict)

    def at(self, t) -> Configuration:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise BadArgument(f"path has no sample at t={t}")
        return Configuration(self.positions[k], self.grid)

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.node_flags))


# ---------------------------------------------------------------------------
# Matter density


def matter_density(psi: StateVector, grid: GridSpec | None = None, weights=None, t=0.0) -> MatterField:
    """m(x) = sum_i w_i (marginal of |psi|^2 for particle i)(x) / a^d; weights default to masses."""
    grid = grid or psi.grid
    return _field_from_probabilities(psi.probabilities(), grid, weights, t)


def matter_density_from_dm(rho: DensityMatrix, grid: GridSpec | None = None, weights=None, t=0.0) -> MatterField:
    """tr(rho M(x)); depends only on the diagonal of rho."""
    grid = grid or rho.grid
    return _field_from_probabilities(rho.probabilities(), grid, weights, t)


def _field_from_probabilities(prob, grid, weights, t):
    w = grid.masses if weights is None else tuple(weights)
    if len(w) != grid.n_particles:
        raise BadArgument("need one weight per particle")
    vals = sum(wi * marginal(prob, grid, i) for i, wi in enumerate(w))
    return MatterField(np.asarray(vals) / grid.cell_volume, float(t), grid)


def matter_fields_batch(prob, grid, weights=None):
    """Fields for a batch of configuration-grid probability arrays (B, *shape) -> (B, *site_shape)."""
    w = grid.masses if weights is None else tuple(weights)
    return sum(wi * marginal(prob, grid, i, batch_ndim=1) for i, wi in enumerate(w)) / grid.cell_volume


# ---------------------------------------------------------------------------
# Trigonometric interpolation


def _mode_table(x, grid):
    """exp(i k x) for the grid's Fourier modes in FFT order, built from powers of one phase."""
    n = grid.points_per_dim
    base = np.exp(2j * np.pi * x / grid.box)
    half = n // 2
    pw = np.cumprod(np.broadcast_to(base[..., None], x.shape + (half,)), axis=-1)
    e = np.empty(x.shape + (n,), dtype=complex)
    e[..., 0] = 1.0
    e[..., 1:half + 1] = pw
    neg = n - half - 1
    if neg:
        e[..., half + 1:] = np.conj(pw[..., :neg][..., ::-1])
    return e


def interp_weights(x, grid: GridSpec, derivative=False):
    """Real weights w_j(x) with f(x) = sum_j f_j w_j(x) for the band-limited periodic
    interpolant of grid values f_j (Nyquist mode as a cosine).  Shape (..., L)."""
    return interp_weight_pair(x, grid)[1 if derivative else 0]


def interp_weight_pair(x, grid: GridSpec):
    """(weights, derivative weights) of :func:`interp_weights`."""
    w = interp_weight_derivatives(x, grid, order=1)
    return w[0], w[1]


def interp_weight_derivatives(x, grid: GridSpec, order=2):
    """Weights of the interpolant and of its first ``order`` derivatives, stacked on axis 0."""
    x = np.asarray(x, dtype=float)
    n = grid.points_per_dim
    k = grid.wavenumbers()
    e = _mode_table(x, grid)
    tables = [e * (1j * k) ** m for m in range(order + 1)]
    if n % 2 == 0:
        kn = abs(k[n // 2])
        c, s = e[..., n // 2].real, e[..., n // 2].imag
        # cos(kn x) and its derivatives: -kn sin, -kn^2 cos, kn^3 sin, ...
        for m, tab in enumerate(tables):
            tab[..., n // 2] = kn ** m * (c, -s, -c, s)[m % 4]
    return np.fft.fft(np.stack(tables), axis=-1).real / n


def _contract(arr, weights, shared):
    """Contract the leading grid axis of ``arr`` with per-path weights (B, L)."""
    if shared:
        return (weights @ arr.reshape(arr.shape[0], -1)).reshape((len(weights),) + arr.shape[1:])
    b, n = weights.shape
    out = np.matmul(weights[:, None, :], arr.reshape(b, n, -1))
    return out.reshape((b,) + arr.shape[2:])


def _interp_all(arr, w, dw, shared):
    """Interpolated value and all first derivatives at the paths' configurations.

    ``arr`` is (*shape) if ``shared`` else (B, *shape); w, dw are lists over axes of (B, L).
    Partial contractions are shared between the value and the derivatives.
    """
    n_axes = len(w)
    # (partially contracted array, axis differentiated so far or None)
    parts = [(arr, None)]
    for ax in range(n_axes):
        sh = shared and ax == 0
        nxt = []
        for cur, d in parts:
            nxt.append((_contract(cur, w[ax], sh), d))
            if d is None:
                nxt.append((_contract(cur, dw[ax], sh), ax))
        parts = nxt
    value = next(cur for cur, d in parts if d is None)
    grads = [next(cur for cur, d in parts if d == k) for k in range(n_axes)]
    return value, np.stack(grads, axis=-1)


def _axis_weights(q, grid):
    flat = q.reshape(len(q), grid.n_axes)
    pairs = [interp_weight_pair(flat[:, ax], grid) for ax in range(grid.n_axes)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _mass_per_axis(grid):
    return np.repeat(np.asarray(grid.masses, dtype=float), grid.dims)


def _regularise(v, flagged, grid):
    """Clamp each particle's speed to pi hbar / (a m_min) on flagged paths."""
    if not np.any(flagged):
        return v
    vmax = math.pi * HBAR / (grid.spacing * min(grid.masses))
    sub = np.nan_to_num(v[flagged], nan=0.0, posinf=0.0, neginf=0.0).reshape(-1, grid.n_particles, grid.dims)
    speed = np.linalg.norm(sub, axis=-1, keepdims=True)
    scale = np.where(speed > vmax, vmax / np.maximum(speed, 1e-300), 1.0)
    v = v.copy()
    v[flagged] = (sub * scale).reshape(-1, grid.n_axes)
    return v


def bohm_velocity_batch(amplitudes, q, grid: GridSpec):
    """Velocities (B, N, d) and node flags (B,) for paths at ``q`` (B, N, d).

    ``amplitudes`` is either one amplitude array (*shape) shared by all paths or
    a batch (B, *shape)."""
    q = np.asarray(q, dtype=float).reshape(-1, grid.n_particles, grid.dims)
    shared = amplitudes.ndim == grid.n_axes
    w, dw = _axis_weights(q, grid)
    val, grad = _interp_all(amplitudes, w, dw, shared)
    dens = np.abs(val) ** 2
    if shared:
        peak = np.max(np.abs(amplitudes) ** 2)
    else:
        peak = np.max(np.abs(amplitudes.reshape(len(q), -1)) ** 2, axis=1)
    flagged = dens < NODE_EPS * peak
    with np.errstate(divide="ignore", invalid="ignore"):
        v = HBAR * np.imag(np.conj(val)[:, None] * grad) / (dens[:, None] * _mass_per_axis(grid))
    v = _regularise(v, flagged, grid)
    return v.reshape(q.shape), flagged


def bohm_velocity(psi: StateVector, Q: Configuration):
    v, flagged = bohm_velocity_batch(psi.amplitudes, Q.positions[None], psi.grid)
    return v[0].ravel(), bool(flagged[0])


def _product_weights(ws, b):
    out = np.ones((b, 1))
    for w in ws:
        out = (out[:, :, None] * w[:, None, :]).reshape(b, -1)
    return out


def mbm_velocity_batch(rho_entries, q, grid: GridSpec):
    """MBM velocities for paths at ``q``; ``rho_entries`` (dim, dim) shared or (B, dim, dim)."""
    q = np.asarray(q, dtype=float).reshape(-1, grid.n_particles, grid.dims)
    b = len(q)
    w, dw = _axis_weights(q, grid)
    phi = _product_weights(w, b)
    shared = rho_entries.ndim == 2
    if shared:
        rphi = phi @ rho_entries.T
        peak = np.max(np.real(np.diagonal(rho_entries)))
    else:
        rphi = np.einsum("bqp,bp->bq", rho_entries, phi)
        peak = np.max(np.real(np.diagonal(rho_entries, axis1=1, axis2=2)), axis=1)
    den = np.real(np.sum(phi * rphi, axis=1))
    num = np.empty((b, grid.n_axes))
    for k in range(grid.n_axes):
        dphi = _product_weights([dw[ax] if ax == k else w[ax] for ax in range(grid.n_axes)], b)
        num[:, k] = np.imag(np.sum(dphi * rphi, axis=1))
    flagged = den < NODE_EPS * peak
    with np.errstate(divide="ignore", invalid="ignore"):
        v = HBAR * num / (den[:, None] * _mass_per_axis(grid))
    v = _regularise(v, flagged, grid)
    return v.reshape(q.shape), flagged


def mbm_current_divergence(rho_entries, q, grid: GridSpec):
    """Interpolated density P(q) = <q|rho|q> and the divergence of the MBM current P v at ``q``.

    The current's k-th component is Im(d_k Phi . rho Phi) / m_k, so its divergence needs
    second-derivative weights; the (d_k Phi . rho d_k Phi) term is real and drops out.
    """
    q = np.asarray(q, dtype=float).reshape(-1, grid.n_particles, grid.dims)
    b = len(q)
    flat = q.reshape(b, grid.n_axes)
    tabs = [interp_weight_derivatives(flat[:, ax], grid, order=2) for ax in range(grid.n_axes)]
    w = [t[0] for t in tabs]
    phi = _product_weights(w, b)
    rphi = phi @ np.asarray(rho_entries).T
    dens = np.real(np.sum(phi * rphi, axis=1))
    masses = _mass_per_axis(grid)
    div = np.zeros(b)
    for k in range(grid.n_axes):
        d2phi = _product_weights([tabs[ax][2] if ax == k else w[ax] for ax in range(grid.n_axes)], b)
        div += HBAR * np.imag(np.sum(d2phi * rphi, axis=1)) / masses[k]
    return dens, div


def mbm_velocity(rho: DensityMatrix, Q: Configuration):
    v, flagged = mbm_velocity_batch(rho.entries, Q.positions[None], rho.grid)
    return v[0].ravel(), bool(flagged[0])


# ---------------------------------------------------------------------------
# Path integration


def integrate_paths(velocity_source, q0, t_grid, grid: GridSpec, v_typ=None, h_max=None):
    """RK4 transport of a batch of configurations.

    ``velocity_source(t, q)`` returns (v, flags) for q of shape (B, N, d).
    Returns positions (T, B, N, d), flagged-step counts (T-1, B) and the number
    of RK4 steps taken on each interval (T-1,).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise BadArgument("t_grid must be non-decreasing")
    q = np.mod(np.asarray(q0, dtype=float).reshape(-1, grid.n_particles, grid.dims), grid.box)
    out = [q.copy()]
    counts, steps = [], []
    if v_typ is None:
        v0, f0 = velocity_source(t_grid[0], q)
        ok = ~f0
        v_typ = float(np.max(np.abs(v0[ok]), initial=0.0)) if np.any(ok) else 0.0
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        span = t1 - t0
        fl = np.zeros(len(q), dtype=int)
        n = 0
        if span > 0:
            h = span / 4
            if v_typ > 0:
                h = min(h, grid.spacing / (4 * v_typ))
            if h_max is not None:
                h = min(h, h_max)
            n = int(math.ceil(span / h - 1e-12))
            if n > MAX_STEPS:
                raise StepSizeUnderflow(f"{n} RK4 steps needed on [{t0}, {t1}]")
            h = span / n
            for s in range(n):
                t = t0 + s * h
                k1, f1 = velocity_source(t, q)
                k2, f2 = velocity_source(t + h / 2, q + h / 2 * k1)
                k3, f3 = velocity_source(t + h / 2, q + h / 2 * k2)
                k4, f4 = velocity_source(t + h, q + h * k3)
                q = np.mod(q + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), grid.box)
                fl += f1 | f2 | f3 | f4
        out.append(q.copy())
        counts.append(fl)
        steps.append(n)
    counts = np.array(counts, dtype=int).reshape(len(t_grid) - 1, len(q))
    return np.stack(out), counts, np.array(steps, dtype=int)


def grid_speed_scale(velocity_source, t, grid: GridSpec) -> float:
    """Largest unflagged speed over all grid configurations: a batch-independent step scale."""
    q = grid.config_indices().reshape(-1, grid.n_particles, grid.dims) * grid.spacing
    v, f = velocity_source(t, q)
    return float(np.max(np.abs(v[~f]), initial=0.0))


def integrate_path(velocity_source, Q0: Configuration, t_grid, v_typ=None, h_max=None) -> ParticlePath:
    grid = Q0.grid
    pos, counts, steps = integrate_paths(velocity_source, Q0.positions[None], t_grid, grid, v_typ, h_max)
    return ParticlePath(np.asarray(t_grid, dtype=float), pos[:, 0], counts[:, 0] > 0, grid,
                        {"flagged_steps": int(counts.sum()), "steps": int(steps.sum())})


# ---------------------------------------------------------------------------
# Quantum equilibrium sampling


def configurations_from_uniforms(prob_flat, grid: GridSpec, u_cat, u_jit=None):
    """Categorical configuration draws from ``prob_flat`` (dim,) or (B, dim) plus optional
    in-cell jitter from uniforms (B, N, d) in [0, 1)."""
    p = np.asarray(prob_flat, dtype=float)
    cdf = np.cumsum(p, axis=-1)
    u = np.asarray(u_cat, dtype=float)
    if p.ndim == 1:
        idx = np.searchsorted(cdf, u * cdf[-1], side="left")
    else:
        idx = np.sum(cdf < (u * cdf[:, -1])[:, None], axis=1)
    idx = np.minimum(idx, grid.dim - 1)
    sites = np.stack(np.unravel_index(idx, grid.shape), axis=-1).astype(float)
    q = sites * grid.spacing
    if u_jit is not None:
        q = q + (np.asarray(u_jit).reshape(q.shape) - 0.5) * grid.spacing
    return np.mod(q, grid.box).reshape(-1, grid.n_particles, grid.dims)


def equilibrium_uniforms(seed, run_index, grid: GridSpec):
    rng = streams.stream(seed, run_index, streams.CONFIG)
    return rng.random(), rng.random(grid.n_axes)


def sample_quantum_equilibrium(state, seed, run_index=0, jitter=True) -> Configuration:
    """Q ~ |psi|^2 (or <q|rho|q>) on the grid, uniformly spread over the cell if ``jitter``."""
    grid = state.grid
    prob = state.probabilities().ravel()
    u, uj = equilibrium_uniforms(seed, run_index, grid)
    q = configurations_from_uniforms(prob, grid, np.array([u]), uj[None] if jitter else None)
    return Configuration(q[0], grid)


def sample_equilibrium_batch(state, seed, run_ids, jitter=True):
    """Batch version of :func:`sample_quantum_equilibrium` for the given run indices."""
    grid = state.grid
    draws = [equilibrium_uniforms(seed, r, grid) for r in run_ids]
    u = np.array([d[0] for d in draws])
    uj = np.array([d[1] for d in draws]) if jitter else None
    return configurations_from_uniforms(state.probabilities().ravel(), grid, u, uj)


def extract_flashes(record) -> FlashSet:
    return FlashSet(np.array(record.times, dtype=float), np.array(record.centers, dtype=int).reshape(-1, record.grid.dims),
                    np.array(record.labels, dtype=int), record.grid)
