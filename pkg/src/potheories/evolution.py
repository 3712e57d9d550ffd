"""Unitary, stochastic-collapse, master-equation and discrete-time Kraus evolution."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from . import streams
from .core import (DensityMatrix, GridSpec, GrwParams, Hamiltonian, StateVector,
                   collapse_matrix, offset_table, smear)
from .errors import BadArgument, CapExceeded, MissingSnapshot, StepSizeUnderflow, ZeroWeight

log = logging.getLogger(__name__)

KRAUS_CAP = 200_000
_SCHEDULE_CHUNK = 64


def expected_flash_rate(n_particles, lam):
    """Total collapse (flash) rate N * lambda."""
    return n_particles * lam


@dataclass(frozen=True)
class CollapseEvent:
    t: float
    x: tuple
    i: int


@dataclass(eq=False)
class TrajectoryRecord:
    """One sampled collapse history plus state snapshots.

    ``centers`` holds grid indices (K, d); particle labels are 0-based.
    """
    seed: int
    run_index: int
    grid: GridSpec
    params: GrwParams
    times: np.ndarray
    centers: np.ndarray
    labels: np.ndarray
    snapshots: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def events(self):
        return [CollapseEvent(float(t), tuple(int(v) for v in x), int(i))
                for t, x, i in zip(self.times, self.centers, self.labels)]

    @property
    def n_events(self):
        return len(self.times)

    def snapshot(self, t):
        for key, val in self.snapshots.items():
            if abs(key - t) <= 1e-12:
                return val
        raise MissingSnapshot(f"no snapshot at t={t} in run {self.run_index}")

    def count_in(self, t1, t2):
        return int(np.count_nonzero((self.times >= t1) & (self.times <= t2)))


# ---------------------------------------------------------------------------
# Schedules


def draw_schedule(seed, run_index, n_particles, lam, t_final, forced=()):
    """Pre-drawn event times, labels and center uniforms for one run.

    Waiting times are Exp(N lam) by inverse CDF; labels uniform over particles.
    ``forced`` adds (time, label) events on top of the Poisson ones.
    """
    rng = streams.stream(seed, run_index, streams.EVENTS)
    rate = n_particles * lam
    times, labels = [], []
    t = 0.0
    if rate > 0:
        while True:
            u = rng.random(_SCHEDULE_CHUNK)
            lab = rng.integers(0, n_particles, _SCHEDULE_CHUNK)
            waits = -np.log1p(-u) / rate
            cum = t + np.cumsum(waits)
            keep = cum <= t_final
            times.append(cum[keep])
            labels.append(lab[keep])
            if not keep.all():
                break
            t = cum[-1]
    times = np.concatenate(times) if times else np.zeros(0)
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=int)
    forced_flag = np.zeros(len(times), dtype=bool)
    if len(forced):
        ft = np.array([f[0] for f in forced], dtype=float)
        fl = np.array([f[1] for f in forced], dtype=int)
        if np.any(ft < 0) or np.any(ft > t_final) or np.any((fl < 0) | (fl >= n_particles)):
            raise BadArgument("forced events must lie in [0, t_final] with valid labels")
        times = np.concatenate([times, ft])
        labels = np.concatenate([labels, fl])
        forced_flag = np.concatenate([forced_flag, np.ones(len(ft), dtype=bool)])
        order = np.argsort(times, kind="stable")
        times, labels, forced_flag = times[order], labels[order], forced_flag[order]
    cu = 1.0 - streams.stream(seed, run_index, streams.CENTERS).random(len(times))
    return times, labels.astype(int), cu, forced_flag


def _padded_schedules(seed, run_ids, n_particles, lam, t_final, forced):
    rows = [draw_schedule(seed, r, n_particles, lam, t_final, forced) for r in run_ids]
    kmax = max([len(r[0]) for r in rows] + [0])
    b = len(rows)
    times = np.full((b, kmax + 1), np.inf)
    labels = np.zeros((b, kmax + 1), dtype=int)
    cu = np.ones((b, kmax + 1))
    counts = np.zeros(b, dtype=int)
    for j, (t, lab, u, _) in enumerate(rows):
        n = len(t)
        times[j, :n], labels[j, :n], cu[j, :n], counts[j] = t, lab, u, n
    return times, labels, cu, counts


# ---------------------------------------------------------------------------
# Batched state adapters


class PureBatch:
    """Batch of amplitude arrays (B, *grid.shape)."""
    mixed = False

    def __init__(self, grid, H):
        self.grid, self.H = grid, H

    def init(self, state, b):
        return np.broadcast_to(state.amplitudes, (b,) + self.grid.shape).copy()

    def probabilities(self, arr):
        return np.abs(arr) ** 2

    def propagate(self, arr, dt):
        return self.H.propagate(arr, dt)

    def scale(self, arr, mult):
        out = arr * mult
        norm = np.sqrt(np.sum(np.abs(out.reshape(len(out), -1)) ** 2, axis=1))
        return out, norm

    def renorm(self, arr, norm):
        return arr / norm.reshape((-1,) + (1,) * self.grid.n_axes)

    def wrap(self, arr):
        return StateVector.normalized(arr, self.grid)


class MixedBatch:
    """Batch of density matrices (B, dim, dim)."""
    mixed = True

    def __init__(self, grid, H):
        self.grid, self.H = grid, H
        if H.is_zero:
            self.evals = self.evecs = None
        else:
            self.evals, self.evecs = H.eig

    def init(self, state, b):
        return np.broadcast_to(state.entries, (b, self.grid.dim, self.grid.dim)).copy()

    def probabilities(self, arr):
        return np.real(np.diagonal(arr, axis1=1, axis2=2)).reshape((len(arr),) + self.grid.shape)

    def propagate(self, arr, dt):
        if self.evals is None:
            return arr.copy()
        v = self.evecs
        ph = np.exp(-1j * np.multiply.outer(np.asarray(dt, dtype=float), self.evals))
        inner = v.conj().T @ arr @ v
        inner = ph[:, :, None] * inner * ph.conj()[:, None, :]
        return v @ inner @ v.conj().T

    def scale(self, arr, mult):
        m = np.broadcast_to(mult, (len(arr),) + self.grid.shape).reshape(len(arr), -1)
        out = m[:, :, None] * arr * m[:, None, :]
        tr = np.real(np.trace(out, axis1=1, axis2=2))
        return out, np.sqrt(np.maximum(tr, 0.0))

    def renorm(self, arr, norm):
        out = arr / (norm**2)[:, None, None]
        return 0.5 * (out + np.conj(np.swapaxes(out, 1, 2)))

    def wrap(self, arr):
        return DensityMatrix(0.5 * (arr + arr.conj().T) / np.trace(arr).real, self.grid)


def center_probabilities(prob, grid, labels, sigma, symmetric=False):
    """Per-run center distribution p(x) = Z^2(x) a^d over single-particle sites, (B, n_sites)."""
    b = len(prob)
    out = np.empty((b, grid.n_sites))
    if symmetric:
        acc = 0.0
        for i in range(grid.n_particles):
            acc = acc + _smeared_marginal(prob, grid, i, sigma)
        out[:] = (acc / grid.n_particles).reshape(b, -1)
    else:
        for i in np.unique(labels):
            sel = labels == i
            out[sel] = _smeared_marginal(prob[sel], grid, int(i), sigma).reshape(sel.sum(), -1)
    return out * grid.cell_volume


def _smeared_marginal(prob, grid, i, sigma):
    keep = set(a + 1 for a in grid.particle_axes(i))
    axes = tuple(a for a in range(1, grid.n_axes + 1) if a not in keep)
    marg = prob.sum(axis=axes) if axes else prob
    return smear(marg, grid, sigma, batch_ndim=1)


def sample_categorical(p, u):
    """Inverse-CDF draw per row of ``p`` with uniforms ``u`` in (0, 1]."""
    cdf = np.cumsum(p, axis=1)
    idx = np.sum(cdf < (u * cdf[:, -1])[:, None], axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def collapse_multipliers(grid, labels, centers, sigma, symmetric=False):
    """sqrt of the collapse operator for each run, broadcastable to (B, *grid.shape)."""
    b = len(centers)
    s = collapse_matrix(grid, sigma, sqrt=True)
    if symmetric:
        g = collapse_matrix(grid, sigma)
        acc = np.zeros((b,) + grid.shape)
        for i in range(grid.n_particles):
            term = np.ones((b,) + (1,) * grid.n_axes)
            for ax, j in zip(grid.particle_axes(i), range(grid.dims)):
                shape = [b] + [1] * grid.n_axes
                shape[ax + 1] = grid.points_per_dim
                term = term * g[centers[:, j]].reshape(shape)
            acc = acc + term
        return np.sqrt(acc / grid.n_particles)
    out = np.ones((b,) + grid.shape)
    for j in range(grid.dims):
        rows = s[centers[:, j]]
        for i in np.unique(labels):
            sel = labels == i
            ax = grid.particle_axes(int(i))[j]
            shape = [int(sel.sum())] + [1] * grid.n_axes
            shape[ax + 1] = grid.points_per_dim
            out[sel] = out[sel] * rows[sel].reshape(shape)
    return out


class CollapseHooks:
    """Extension points for theories that carry extra variables along a collapse run."""

    def advance(self, idx, state, t, dt):
        pass

    def centers(self, idx, state, labels, t):
        return None

    def after_collapse(self, idx, state, labels, centers, t):
        pass

    def snapshot(self, t, state):
        pass


def run_collapse_batch(ops, state0, params, seed, run_ids, t_final, snapshot_times=(),
                       forced=(), hooks=None, symmetric=False, keep_states=True):
    """Advance a batch of collapse runs in lockstep.

    Runs whose next event falls before the next checkpoint are handled
    together; every run carries its own pre-drawn schedule, so the result of a
    run does not depend on which other runs share its batch.
    """
    grid = ops.grid
    hooks = hooks or CollapseHooks()
    run_ids = list(run_ids)
    b = len(run_ids)
    times, labels, cu, counts = _padded_schedules(seed, run_ids, grid.n_particles, params.lam,
                                                  t_final, forced)
    centers = np.zeros((b, times.shape[1], grid.dims), dtype=int)
    state = ops.init(state0, b)
    t = np.zeros(b)
    k = np.zeros(b, dtype=int)
    rows = np.arange(b)
    snaps = sorted(set(float(s) for s in snapshot_times))
    if any(s < 0 or s > t_final + 1e-12 for s in snaps):
        raise BadArgument("snapshot times must lie in [0, t_final]")
    bounds = sorted(set(snaps) | {float(t_final)})
    stored = {}
    for s in bounds:
        while True:
            nxt = times[rows, k]
            act = np.nonzero(nxt <= s)[0]
            if len(act) == 0:
                break
            dt = nxt[act] - t[act]
            hooks.advance(act, state[act], t[act], dt)
            sub = ops.propagate(state[act], dt)
            lab = labels[act, k[act]]
            chosen = hooks.centers(act, sub, lab, nxt[act])
            if chosen is None:
                p = center_probabilities(ops.probabilities(sub), grid, lab, params.sigma, symmetric)
                site = sample_categorical(p, cu[act, k[act]])
                chosen = np.stack(np.unravel_index(site, grid.site_shape), axis=1)
            mult = collapse_multipliers(grid, lab, chosen, params.sigma, symmetric)
            sub, norm = ops.scale(sub, mult)
            bad = norm <= 1e-15
            if np.any(bad):
                r = run_ids[act[np.argmax(bad)]]
                raise ZeroWeight(f"run {r}: collapse weight vanished at the chosen center")
            sub = ops.renorm(sub, norm)
            state[act] = sub
            centers[act, k[act]] = chosen
            hooks.after_collapse(act, sub, lab, chosen, nxt[act])
            t[act] = nxt[act]
            k[act] += 1
        dt = s - t
        hooks.advance(rows, state, t.copy(), dt)
        state = ops.propagate(state, dt)
        t[:] = s
        if s in snaps:
            hooks.snapshot(s, state)
            if keep_states:
                stored[s] = state.copy()
    records = []
    for j, r in enumerate(run_ids):
        n = counts[j]
        snap = {s: ops.wrap(stored[s][j]) for s in stored}
        records.append(TrajectoryRecord(seed, r, grid, params, times[j, :n].copy(),
                                        centers[j, :n].copy(), labels[j, :n].copy(), snap))
    return records


def _chunks(n_runs, run_offset, chunk_size):
    ids = np.arange(run_offset, run_offset + n_runs)
    return [ids[i:i + chunk_size] for i in range(0, n_runs, chunk_size)]


def sample_grw_ensemble(psi0: StateVector, H: Hamiltonian, params: GrwParams, t_final,
                        snapshot_times=(), seed=0, n_runs=1, run_offset=0, forced=(),
                        symmetric=False, chunk_size=2048, n_jobs=1, keep_states=True):
    """Independent GRW trajectories for run indices run_offset .. run_offset + n_runs - 1."""
    if n_runs < 1:
        raise BadArgument("need at least one run")
    if t_final < 0:
        raise BadArgument("t_final must be >= 0")
    ops = PureBatch(psi0.grid, H)

    def work(ids):
        return run_collapse_batch(ops, psi0, params, seed, ids, t_final, snapshot_times, forced,
                                  symmetric=symmetric, keep_states=keep_states)

    chunks = _chunks(n_runs, run_offset, chunk_size)
    if n_jobs == 1:
        parts = [work(c) for c in chunks]
    else:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=n_jobs)(delayed(work)(c) for c in chunks)
    return [rec for part in parts for rec in part]


def sample_grw_trajectory(psi0, H, params, t_final, snapshot_times=(), seed=0, run_index=0,
                          forced=()):
    """Single GRW run; identical to the corresponding member of an ensemble."""
    return sample_grw_ensemble(psi0, H, params, t_final, snapshot_times, seed, 1, run_index,
                               forced)[0]


def mgrwf_ensemble(rho0: DensityMatrix, H, params, t_final, snapshot_times=(), seed=0,
                   n_runs=1, run_offset=0, forced=(), chunk_size=512):
    """Density-matrix collapse runs: flash density tr(rho g) a^d, update g^1/2 rho g^1/2 / C."""
    ops = MixedBatch(rho0.grid, H)
    out = []
    for ids in _chunks(n_runs, run_offset, chunk_size):
        out.extend(run_collapse_batch(ops, rho0, params, seed, ids, t_final, snapshot_times, forced))
    return out


def mgrwf_trajectory(rho0, H, params, t_final, seed=0, snapshot_times=(), run_index=0):
    return mgrwf_ensemble(rho0, H, params, t_final, snapshot_times, seed, 1, run_index)[0]


def ensemble_density_matrix(records, t) -> DensityMatrix:
    """(1/M) sum_m |psi_t^m><psi_t^m| from stored snapshots."""
    if not records:
        raise BadArgument("no records")
    snaps = [r.snapshot(t) for r in records]
    grid = snaps[0].grid
    if isinstance(snaps[0], DensityMatrix):
        rho = np.mean([s.entries for s in snaps], axis=0)
    else:
        v = np.stack([s.vector for s in snaps])
        rho = v.T @ v.conj() / len(v)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho / np.trace(rho).real, grid)


# ---------------------------------------------------------------------------
# Unitary and master-equation evolution


def schrodinger_propagate(state, H: Hamiltonian, dt):
    if dt < 0:
        raise BadArgument("dt must be >= 0")
    if isinstance(state, DensityMatrix):
        if H.is_zero or dt == 0:
            return state
        u = H.unitary(dt)
        rho = u @ state.entries @ u.conj().T
        return DensityMatrix(0.5 * (rho + rho.conj().T), state.grid)
    return StateVector.normalized(H.propagate(state.amplitudes, dt), state.grid)


def overlap_kernel(grid: GridSpec, sigma: float) -> np.ndarray:
    """gamma[delta] = sum_u a sqrt(g1[u] g1[u + delta]) for one axis."""
    g1 = offset_table(grid, sigma)
    sq = np.sqrt(g1)
    return np.array([grid.spacing * np.sum(sq * np.roll(sq, -dl)) for dl in range(grid.points_per_dim)])


def dissipator(grid: GridSpec, params: GrwParams) -> np.ndarray:
    """Elementwise multiplier D(q, q') of the collapse term acting on rho."""
    gam = overlap_kernel(grid, params.sigma)
    idx = grid.config_indices()
    out = np.zeros((grid.dim, grid.dim))
    for i in range(grid.n_particles):
        term = np.ones((grid.dim, grid.dim))
        for ax in grid.particle_axes(i):
            term *= gam[(idx[:, ax][:, None] - idx[:, ax][None, :]) % grid.points_per_dim]
        out += term - 1.0
    return params.lam * out


def collapse_channel(rho: np.ndarray, grid: GridSpec, params: GrwParams) -> np.ndarray:
    """Literal lam sum_i sum_x a^d g^1/2 rho g^1/2 - N lam rho (dense oracle)."""
    s = collapse_matrix(grid, params.sigma, sqrt=True)
    idx = grid.config_indices()
    acc = np.zeros_like(rho, dtype=complex)
    for i in range(grid.n_particles):
        for x in itertools.product(range(grid.points_per_dim), repeat=grid.dims):
            m = np.ones(grid.dim)
            for ax, xj in zip(grid.particle_axes(i), x):
                m = m * s[xj][idx[:, ax]]
            acc += grid.cell_volume * m[:, None] * rho * m[None, :]
    return params.lam * acc - grid.n_particles * params.lam * rho


class MasterEquation:
    """d rho/dt = -i[H, rho] + D o rho, integrated by step-doubling RK4."""

    def __init__(self, grid, H, params, tol=1e-11, h_min=1e-9, closed_form=True):
        self.grid, self.H, self.params = grid, H, params
        # with H = 0 every entry decays independently: rho_t = rho_0 o exp(t D)
        self.closed_form = closed_form and H.is_zero
        self.h_dense = None if H.is_zero else H.dense()
        self.D = dissipator(grid, params)
        self.tol, self.h_min = tol, h_min
        scale = (0 if self.h_dense is None else np.max(np.abs(np.linalg.eigvalsh(self.h_dense)))) \
            + np.max(np.abs(self.D), initial=0.0)
        self.h0 = 0.5 / max(scale, 1e-12)
        self.renormalizations = 0

    def rhs(self, rho):
        out = self.D * rho
        if self.h_dense is not None:
            hr = self.h_dense @ rho
            out = out - 1j * (hr - hr.conj().T)
        return out

    def _rk4(self, rho, h):
        k1 = self.rhs(rho)
        k2 = self.rhs(rho + 0.5 * h * k1)
        k3 = self.rhs(rho + 0.5 * h * k2)
        k4 = self.rhs(rho + h * k3)
        return rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def evolve(self, rho, times):
        """rho at each of the increasing ``times`` (measured from 0)."""
        rho = np.array(rho, dtype=complex)
        if self.closed_form:
            if np.any(np.diff(np.concatenate([[0.0], times])) < -1e-15):
                raise BadArgument("times must be increasing and >= 0")
            return [rho * np.exp(self.D * tt) for tt in times]
        t, h = 0.0, self.h0
        out = []
        for target in times:
            if target < t - 1e-15:
                raise BadArgument("times must be increasing and >= 0")
            while target - t > 1e-15:
                step = min(h, target - t)
                full = self._rk4(rho, step)
                half = self._rk4(self._rk4(rho, step / 2), step / 2)
                err = np.max(np.abs(full - half))
                if err <= self.tol or step <= self.h_min:
                    if err > self.tol:
                        raise StepSizeUnderflow(f"error {err:.2e} at minimum step {step:.2e}")
                    rho = half + (half - full) / 15
                    rho = 0.5 * (rho + rho.conj().T)
                    tr = np.trace(rho).real
                    if abs(tr - 1) > 1e-9:
                        self.renormalizations += 1
                        log.warning("trace drift %.3e at t=%.4f; renormalising", tr - 1, t + step)
                        rho = rho / tr
                    t += step
                    h = step * min(2.0, 0.9 * (self.tol / max(err, 1e-300)) ** 0.2)
                else:
                    h = step * max(0.2, 0.9 * (self.tol / err) ** 0.2)
            out.append(rho.copy())
        return out

    def superoperator(self):
        d = self.grid.dim
        eye = sp.identity(d, format="csr", dtype=complex)
        gen = sp.diags(self.D.ravel().astype(complex))
        if self.h_dense is not None:
            h = sp.csr_matrix(self.h_dense)
            gen = gen - 1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
        return gen.tocsc()

    def evolve_exact(self, rho, times):
        if self.grid.dim > 64:
            raise CapExceeded("exact superoperator exponentiation limited to dimension 64")
        gen = self.superoperator()
        vec = np.asarray(rho, dtype=complex).ravel()
        out, t = [], 0.0
        for target in times:
            vec = expm_multiply(gen * (target - t), vec)
            t = target
            m = vec.reshape(self.grid.dim, self.grid.dim)
            out.append(0.5 * (m + m.conj().T))
        return out


def master_propagate(rho: DensityMatrix, H, params, dt, method="rk4", tol=1e-11):
    if dt < 0:
        raise BadArgument("dt must be >= 0")
    eq = MasterEquation(rho.grid, H, params, tol=tol)
    res = (eq.evolve_exact if method == "exact" else eq.evolve)(rho.entries, [dt])[0]
    return DensityMatrix(res / np.trace(res).real, rho.grid)


def master_evolve(rho: DensityMatrix, H, params, times, method="rk4", tol=1e-11):
    """List of DensityMatrix at increasing ``times``."""
    eq = MasterEquation(rho.grid, H, params, tol=tol)
    res = (eq.evolve_exact if method == "exact" else eq.evolve)(rho.entries, list(times))
    return [DensityMatrix(r / np.trace(r).real, rho.grid) for r in res]


# ---------------------------------------------------------------------------
# Discrete-time Kraus tree


@dataclass(eq=False)
class KrausNode:
    history: tuple
    operator: np.ndarray
    probability: float

    @property
    def label(self):
        return history_label(self.history)


def history_label(history):
    if not history:
        return ""
    return ",".join("-" if s is None else f"{s[0]}@{'.'.join(str(v) for v in s[1])}" for s in history)


def kraus_step_operators(grid, H, params, dt):
    """[(branch, K)] for one step; branch None means no collapse, else (i, x)."""
    n = grid.n_particles
    if n * params.lam * dt > 1 + 1e-15:
        raise BadArgument(f"N lam dt = {n * params.lam * dt} exceeds 1")
    u = np.eye(grid.dim, dtype=complex) if (dt == 0 or H.is_zero) else H.unitary(dt)
    ops = [(None, math.sqrt(max(0.0, 1 - n * params.lam * dt)) * u)]
    if params.lam > 0:
        s = collapse_matrix(grid, params.sigma, sqrt=True)
        idx = grid.config_indices()
        amp = math.sqrt(params.lam * dt * grid.cell_volume)
        for i in range(n):
            for x in itertools.product(range(grid.points_per_dim), repeat=grid.dims):
                m = np.ones(grid.dim)
                for ax, xj in zip(grid.particle_axes(i), x):
                    m = m * s[xj][idx[:, ax]]
                ops.append(((i, tuple(x)), amp * m[:, None] * u))
    return ops


def kraus_operators(grid, H, params, n_steps, dt, cap=KRAUS_CAP):
    """[(history, K_h)] for every discrete-time history, K_h = K_{s_n} ... K_{s_1}."""
    per = 1 + (grid.n_particles * grid.n_sites if params.lam > 0 else 0)
    if per**n_steps > cap:
        raise CapExceeded(f"{per}^{n_steps} branches exceed cap {cap}")
    step = kraus_step_operators(grid, H, params, dt) if n_steps else []
    nodes = [((), np.eye(grid.dim, dtype=complex))]
    for _ in range(n_steps):
        nodes = [(h + (b,), k @ op) for h, op in nodes for b, k in step]
    return nodes


def kraus_tree(init, H, params, n_steps, dt, cap=KRAUS_CAP):
    """All discrete-time collapse histories with their Kraus operators and probabilities."""
    out = []
    for h, op in kraus_operators(init.grid, H, params, n_steps, dt, cap):
        if isinstance(init, DensityMatrix):
            p = float(np.real(np.trace(op @ init.entries @ op.conj().T)))
        else:
            p = float(np.sum(np.abs(op @ init.vector) ** 2))
        out.append(KrausNode(h, op, p))
    return out


def sample_discrete_histories(psi0: StateVector, H, params, n_steps, dt, n_runs, seed=0,
                              chunk_size=250_000):
    """Sequential discrete-time sampler: per step, no collapse with prob 1 - N lam dt,
    else label i and center x with prob lam dt Z_i(x)^2 a^d.  Returns branch codes
    (n_runs, n_steps): 0 for no collapse, 1 + i * n_sites + site otherwise."""
    grid = psi0.grid
    n = grid.n_particles
    if n * params.lam * dt > 1:
        raise BadArgument("N lam dt exceeds 1")
    u = None if (H.is_zero or dt == 0) else H.unitary(dt)
    codes = np.zeros((n_runs, n_steps), dtype=np.int64)
    for start in range(0, n_runs, chunk_size):
        m = min(chunk_size, n_runs - start)
        rng = streams.stream(seed, start // chunk_size, streams.EVENTS)
        psi = np.broadcast_to(psi0.vector, (m, grid.dim)).copy()
        for s in range(n_steps):
            if u is not None:
                psi = psi @ u.T
            prob = (np.abs(psi) ** 2).reshape((m,) + grid.shape)
            branch = np.empty((m, 1 + n * grid.n_sites))
            branch[:, 0] = 1 - n * params.lam * dt
            for i in range(n):
                zi = _smeared_marginal(prob, grid, i, params.sigma).reshape(m, -1)
                branch[:, 1 + i * grid.n_sites:1 + (i + 1) * grid.n_sites] = \
                    params.lam * dt * grid.cell_volume * zi
            pick = sample_categorical(branch, 1.0 - rng.random(m))
            codes[start:start + m, s] = pick
            hit = pick > 0
            if np.any(hit):
                lab = (pick[hit] - 1) // grid.n_sites
                site = (pick[hit] - 1) % grid.n_sites
                centers = np.stack(np.unravel_index(site, grid.site_shape), axis=1)
                mult = collapse_multipliers(grid, lab, centers, params.sigma).reshape(len(lab), -1)
                new = psi[hit] * mult
                psi[hit] = new / np.linalg.norm(new, axis=1)[:, None]
    return codes


def branch_code(grid, branch):
    if branch is None:
        return 0
    i, x = branch
    return 1 + i * grid.n_sites + int(np.ravel_multi_index(tuple(x), grid.site_shape))
