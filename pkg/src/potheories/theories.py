"""Registry of theories: each turns initial data and a seed into primitive-ontology histories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import streams
from .core import (Configuration, DensityMatrix, GridSpec, GrwParams, Hamiltonian, StateVector,
                   build_grid, marginal)
from .errors import BadArgument, BadInit
from .evolution import (CollapseHooks, MasterEquation, MixedBatch, PureBatch, TrajectoryRecord,
                        _chunks, _padded_schedules, center_probabilities, run_collapse_batch,
                        sample_categorical)
from .ontology import (FlashSet, MatterField, ParticlePath, bohm_velocity_batch,
                       configurations_from_uniforms, extract_flashes, grid_speed_scale, integrate_paths,
                       interp_weights, matter_density, matter_density_from_dm,
                       matter_fields_batch, mbm_velocity_batch, sample_equilibrium_batch)


class TheoryId(str, Enum):
    BM = "BM"
    GRWM = "GRWm"
    GRWF = "GRWf"
    GRWP1 = "GRWP1"
    GRWP2 = "GRWP2"
    GRWP3 = "GRWP3"
    GRWP4 = "GRWP4"
    GRWP5 = "GRWP5"
    GRWP5C = "GRWP5C"
    GRWP6 = "GRWP6"
    BELL_IID = "BELL_IID"
    MBM = "MBM"
    SM = "Sm"
    MM = "Mm"
    MF = "Mf"
    MGRWF = "MGRWf"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for member in cls:
            if member.value.lower() == str(name).lower() or member.name.lower() == str(name).lower():
                return member
        raise BadArgument(f"unknown theory {name!r}")


PARTICLES, MATTER, FLASHES = "particles", "matter", "flashes"

PO_KIND = {
    TheoryId.BM: PARTICLES, TheoryId.GRWM: MATTER, TheoryId.GRWF: FLASHES,
    TheoryId.GRWP1: PARTICLES, TheoryId.GRWP2: PARTICLES, TheoryId.GRWP3: PARTICLES,
    TheoryId.GRWP4: PARTICLES, TheoryId.GRWP5: PARTICLES, TheoryId.GRWP5C: PARTICLES,
    TheoryId.GRWP6: PARTICLES, TheoryId.BELL_IID: PARTICLES, TheoryId.MBM: PARTICLES,
    TheoryId.SM: MATTER, TheoryId.MM: MATTER, TheoryId.MF: FLASHES, TheoryId.MGRWF: FLASHES,
}

_USES_RHO = {TheoryId.MBM, TheoryId.MM, TheoryId.MF, TheoryId.MGRWF}
_TAKES_Q0 = {TheoryId.BM, TheoryId.MBM, TheoryId.GRWP1, TheoryId.GRWP2, TheoryId.GRWP3,
             TheoryId.GRWP5, TheoryId.GRWP5C, TheoryId.GRWP6}
_GRW_PARTICLES = {TheoryId.GRWP1, TheoryId.GRWP2, TheoryId.GRWP3, TheoryId.GRWP4,
                  TheoryId.GRWP5, TheoryId.GRWP5C, TheoryId.GRWP6}

EQUILIBRIUM = "equilibrium"


@dataclass
class InitialData:
    """``q0`` is a Configuration, an array (N, d), EQUILIBRIUM, or None.

    ``forced`` lists (time, label) collapses added to the Poisson schedule;
    ``label_symmetric`` switches GRWP4 to the label-symmetric collapse
    operator ((1/N) sum_i g_{i,x})^(1/2)."""
    psi0: StateVector | None = None
    rho0: DensityMatrix | None = None
    q0: object = None
    seed: int = 0
    jitter: bool = True
    forced: tuple = ()
    label_symmetric: bool = False


@dataclass(eq=False)
class POHistory:
    theory: str
    kind: str
    times: np.ndarray
    path: ParticlePath | None = None
    fields: list | None = None
    flashes: FlashSet | None = None
    record: TrajectoryRecord | None = None
    meta: dict = field(default_factory=dict)

    def field_at(self, t) -> MatterField:
        for f in self.fields:
            if abs(f.t - t) <= 1e-12:
                return f
        raise BadArgument(f"no matter field at t={t}")


def validate_init(theory: TheoryId, init: InitialData):
    if theory in _USES_RHO:
        if init.rho0 is None or init.psi0 is not None:
            raise BadInit(f"{theory.value} needs rho0 and no psi0")
    else:
        if init.psi0 is None or init.rho0 is not None:
            raise BadInit(f"{theory.value} needs psi0 and no rho0")
    if theory in _TAKES_Q0:
        if init.q0 is None:
            raise BadInit(f"{theory.value} needs q0 (a configuration or '{EQUILIBRIUM}')")
    elif init.q0 is not None:
        raise BadInit(f"{theory.value} takes no initial configuration")
    if init.label_symmetric and theory is not TheoryId.GRWP4:
        raise BadInit("label-symmetric collapse is only defined for GRWP4")


def _initial_positions(init, state, run_ids, grid):
    if isinstance(init.q0, str):
        if init.q0 != EQUILIBRIUM:
            raise BadInit(f"unknown q0 policy {init.q0!r}")
        return sample_equilibrium_batch(state, init.seed, run_ids, init.jitter)
    pos = init.q0.positions if isinstance(init.q0, Configuration) else np.asarray(init.q0, dtype=float)
    q = Configuration(pos, grid).positions
    return np.broadcast_to(q, (len(run_ids),) + q.shape).copy()


SYMMETRY_TOL = 1e-9


def circular_mean_positions(prob, grid: GridSpec, symmetric=False):
    """Per particle and axis, the circular mean of the marginal; prob is (B, *shape).

    With ``symmetric`` the marginals must agree to SYMMETRY_TOL (else BadInit); the
    remaining rounding-level differences are removed by reading every particle off
    the particle-averaged marginal."""
    b = len(prob)
    out = np.empty((b, grid.n_particles, grid.dims))
    phase = np.exp(2j * np.pi * np.arange(grid.points_per_dim) / grid.points_per_dim)
    margs = [marginal(prob, grid, i, batch_ndim=1) for i in range(grid.n_particles)]
    if symmetric:
        avg = sum(margs) / grid.n_particles
        gap = max(float(np.max(np.abs(m - avg))) for m in margs)
        if gap > SYMMETRY_TOL:
            raise BadInit(f"particle marginals differ by {gap:.2e}; state is not permutation symmetric")
        margs = [avg] * grid.n_particles
    for i, marg in enumerate(margs):
        for j in range(grid.dims):
            other = tuple(1 + a for a in range(grid.dims) if a != j)
            line = marg.sum(axis=other) if other else marg
            z = line @ phase
            out[:, i, j] = np.mod(np.angle(z) / (2 * np.pi) * grid.box, grid.box)
    return out


# ---------------------------------------------------------------------------
# Particle bookkeeping along collapse runs


def _real_up_to_phase(amps, tol=1e-13):
    flat = amps.reshape(len(amps), -1)
    ref = flat[np.arange(len(flat)), np.argmax(np.abs(flat), axis=1)]
    rot = flat * (np.conj(ref) / np.maximum(np.abs(ref), 1e-300))[:, None]
    return np.max(np.abs(rot.imag), axis=1) <= tol * np.abs(ref)


class GaussianOffset:
    """Standard-normal offsets Z (one row per collapse) added, times sigma, to GRWP3 centers."""

    @staticmethod
    def draw(seed, run_index, count, dims):
        return streams.stream(seed, run_index, streams.OFFSET).standard_normal((count, dims))


class ParticleHooks(CollapseHooks):
    def __init__(self, theory, grid, H, params, q, seed, run_ids, kmax, path_times, h_max, jitter,
                 symmetric=False):
        self.theory, self.grid, self.H, self.params = theory, grid, H, params
        self.q = q
        self.h_max = h_max
        self.jitter = jitter
        self.symmetric = symmetric
        self.k = np.zeros(len(q), dtype=int)
        self.flagged_steps = np.zeros(len(q), dtype=int)
        self.steps = np.zeros(len(q), dtype=int)
        self.path = {}
        self.path_times = set(path_times)
        kk = kmax + 1
        if theory in (TheoryId.GRWP5C, TheoryId.GRWP6):
            # the first 1 + n_axes draws of the CONFIG stream went to the initial configuration
            self.u = np.empty((len(q), kk, 1 + grid.n_axes))
            for j, r in enumerate(run_ids):
                rng = streams.stream(seed, r, streams.CONFIG)
                rng.random(1 + grid.n_axes)
                self.u[j] = rng.random((kk, 1 + grid.n_axes))
            self.u[:, :, 0] = 1.0 - self.u[:, :, 0]
        if theory is TheoryId.GRWP3:
            self.offsets = np.stack([GaussianOffset.draw(seed, r, kk, grid.dims) for r in run_ids])

    def advance(self, idx, state, t, dt):
        if self.theory is TheoryId.GRWP4 or not np.any(dt > 0):
            return
        grid, H = self.grid, self.H
        if H.is_zero:
            # a static state that is real up to a global phase carries no current at all
            moving = (dt > 0) & ~_real_up_to_phase(state)
            if not np.any(moving):
                return
            idx, state, dt = idx[moving], state[moving], dt[moving]
        q = self.q[idx]
        v, f = bohm_velocity_batch(state, q, grid)
        # per-run step size from the run's own speed, so a path never depends on its batch mates
        vtyp = np.where(f, 0.0, np.max(np.abs(v.reshape(len(q), -1)), axis=1))
        h = np.where(vtyp > 0, np.minimum(self.h_max, grid.spacing / (4 * np.maximum(vtyp, 1e-300))), self.h_max)
        n = np.where(dt > 0, np.ceil(dt / h - 1e-12), 0).astype(int)
        hr = dt / np.maximum(n, 1)
        at = H.evolver(state)
        amp_start = state.copy()
        for s in range(int(n.max())):
            rows = np.nonzero(n > s)[0]
            hh = hr[rows]
            hb = hh[:, None, None]
            qq = q[rows]
            a0 = amp_start[rows]
            if H.is_zero:
                am = ae = a0
            else:
                am = at((s + 0.5) * hh, rows)
                ae = at((s + 1) * hh, rows)
            k1, f1 = bohm_velocity_batch(a0, qq, grid)
            k2, f2 = bohm_velocity_batch(am, qq + hb / 2 * k1, grid)
            k3, f3 = bohm_velocity_batch(am, qq + hb / 2 * k2, grid)
            k4, f4 = bohm_velocity_batch(ae, qq + hb * k3, grid)
            amp_start[rows] = ae
            q[rows] = np.mod(qq + hb / 6 * (k1 + 2 * k2 + 2 * k3 + k4), grid.box)
            self.flagged_steps[idx[rows]] += f1 | f2 | f3 | f4
            self.steps[idx[rows]] += 1
        self.q[idx] = q

    def centers(self, idx, state, labels, t):
        grid = self.grid
        if self.theory is TheoryId.GRWP2:
            pos = self.q[idx, labels]
        elif self.theory is TheoryId.GRWP3:
            pos = self.q[idx, labels] + self.params.sigma * self.offsets[idx, self.k[idx]]
        else:
            return None
        return np.rint(np.mod(pos, grid.box) / grid.spacing).astype(int) % grid.points_per_dim

    def after_collapse(self, idx, state, labels, centers, t):
        grid = self.grid
        if self.theory is TheoryId.GRWP5:
            self.q[idx, labels] = centers * grid.spacing
        elif self.theory is TheoryId.GRWP6:
            u = self.u[idx, self.k[idx]]
            prob = (np.abs(state) ** 2).reshape(len(idx), -1)
            self.q[idx] = configurations_from_uniforms(prob, grid, u[:, 0],
                                                       u[:, 1:] if self.jitter else None)
        elif self.theory is TheoryId.GRWP5C:
            u = self.u[idx, self.k[idx]]
            for i in np.unique(labels):
                sel = np.nonzero(labels == i)[0]
                cond = conditional_site_density(state[sel], self.q[idx[sel]], int(i), grid)
                site = sample_categorical(cond, u[sel, 0])
                x = np.stack(np.unravel_index(site, grid.site_shape), axis=1) * grid.spacing
                if self.jitter:
                    x = x + (u[sel, 1:1 + grid.dims] - 0.5) * grid.spacing
                rows = idx[sel]
                self.q[rows, int(i)] = np.mod(x, grid.box)
        self.k[idx] += 1

    def snapshot(self, t, state):
        if self.theory is TheoryId.GRWP4:
            self.q = circular_mean_positions(np.abs(state) ** 2, self.grid, self.symmetric)
        if t in self.path_times:
            self.path[t] = self.q.copy()


def conditional_site_density(amps, q, i, grid: GridSpec):
    """|psi|^2 along particle i's sites with the other particles at their continuum positions.

    amps (B, *shape), q (B, N, d); returns (B, n_sites), rows summing to one."""
    b = len(amps)
    own = grid.particle_axes(i)
    others = [ax for ax in range(grid.n_axes) if ax not in own]
    arr = np.moveaxis(amps, [1 + ax for ax in own], list(range(grid.n_axes + 1 - len(own), grid.n_axes + 1)))
    flat_q = q.reshape(b, grid.n_axes)
    for ax in others:
        w = interp_weights(flat_q[:, ax], grid)
        arr = np.einsum("bj,bj...->b...", w, arr)
    dens = (np.abs(arr) ** 2).reshape(b, -1)
    tot = dens.sum(axis=1, keepdims=True)
    return dens / np.where(tot > 0, tot, 1.0)


# ---------------------------------------------------------------------------
# Runners


def _sample_times(sample_times, t_final):
    ts = sorted(set(float(t) for t in sample_times))
    if any(t < 0 or t > t_final + 1e-12 for t in ts):
        raise BadArgument("sample times must lie in [0, t_final]")
    return ts


def _meta(theory, init, params, run_index, extra=None):
    m = {"theory": theory.value, "seed": int(init.seed), "run_index": int(run_index),
         "lambda": params.lam, "sigma": params.sigma}
    if theory in _TAKES_Q0:
        m["q0_policy"] = init.q0 if isinstance(init.q0, str) else "given"
    if extra:
        m.update(extra)
    return m


def _run_collapse_family(theory, grid, H, params, init, t_final, ts, run_ids, h_max):
    kind = PO_KIND[theory]
    ops = PureBatch(grid, H)
    hooks = None
    if theory in _GRW_PARTICLES:
        if theory is TheoryId.GRWP4:
            q = circular_mean_positions(init.psi0.probabilities()[None], grid,
                                        init.label_symmetric).repeat(len(run_ids), 0)
        else:
            q = _initial_positions(init, init.psi0, run_ids, grid)
        times, *_ = _padded_schedules(init.seed, run_ids, grid.n_particles, params.lam, t_final, init.forced)
        hooks = ParticleHooks(theory, grid, H, params, q, init.seed, run_ids, times.shape[1] - 1,
                              ts, h_max, init.jitter, init.label_symmetric)
    snaps = sorted(set(ts) | ({0.0} if hooks is not None else set()))
    records = run_collapse_batch(ops, init.psi0, params, init.seed, run_ids, t_final, snaps,
                                 init.forced, hooks=hooks, symmetric=init.label_symmetric)
    out = []
    for j, rec in enumerate(records):
        h = POHistory(theory.value, kind, np.array(ts), record=rec,
                      meta=_meta(theory, init, params, rec.run_index))
        if kind == FLASHES:
            h.flashes = extract_flashes(rec)
        elif kind == MATTER:
            h.fields = [matter_density(rec.snapshot(t), t=t) for t in ts]
        else:
            pos = np.stack([hooks.path[t][j] for t in ts]) if ts else np.zeros((0, grid.n_particles, grid.dims))
            h.path = ParticlePath(np.array(ts), pos, np.zeros(max(len(ts) - 1, 0), dtype=bool), grid)
            h.meta["flagged_steps"] = int(hooks.flagged_steps[j])
            h.meta["steps"] = int(hooks.steps[j])
        out.append(h)
    return out


class _StateClock:
    """Deterministic state at requested times, stepping forward and caching recent values."""

    def __init__(self, fn_at):
        self.fn_at = fn_at
        self.cache = {}

    def __call__(self, t):
        key = round(float(t), 13)
        if key not in self.cache:
            if len(self.cache) > 8:
                self.cache.pop(next(iter(self.cache)))
            self.cache[key] = self.fn_at(t)
        return self.cache[key]


class _MasterClock:
    def __init__(self, rho0, H, params):
        self.eq = MasterEquation(rho0.grid, H, params)
        self.t = 0.0
        self.rho = np.array(rho0.entries)
        self.cache = {0.0: self.rho}

    def __call__(self, t):
        key = round(float(t), 13)
        if key in self.cache:
            return self.cache[key]
        if t < self.t - 1e-13:
            raise BadArgument("master-equation clock only runs forward")
        self.rho = self.eq.evolve(self.rho, [t - self.t])[0]
        self.t = t
        if len(self.cache) > 8:
            self.cache.pop(next(iter(self.cache)))
        self.cache[key] = self.rho
        return self.rho


def _current_free(theory, init):
    """With H = 0 a real (up to phase) psi, or a real rho, carries no current at any time."""
    if theory is TheoryId.BM:
        return bool(_real_up_to_phase(init.psi0.amplitudes[None])[0])
    return not np.any(np.asarray(init.rho0.entries).imag)


def _run_deterministic(theory, grid, H, params, init, t_final, ts, run_ids, h_max):
    kind = PO_KIND[theory]
    path_t = sorted(set([0.0] + ts))
    out = []
    if theory in (TheoryId.BM, TheoryId.BELL_IID, TheoryId.SM):
        psi0 = init.psi0
        clock = _StateClock(lambda t: psi0.amplitudes if H.is_zero else H.propagate(psi0.amplitudes, t))
    else:
        mclock = _MasterClock(init.rho0, H, params)
    if theory is TheoryId.SM:
        fields = [matter_density(StateVector.normalized(clock(t), grid), t=t) for t in ts]
    elif theory is TheoryId.MM:
        fields = [matter_density_from_dm(DensityMatrix(_herm(mclock(t)), grid), t=t) for t in ts]
    if kind == MATTER:
        return [POHistory(theory.value, kind, np.array(ts), fields=fields,
                          meta=_meta(theory, init, params, r)) for r in run_ids]

    if theory is TheoryId.MF:
        return _run_mf(grid, H, params, init, t_final, ts, run_ids)

    flagged_steps = np.zeros(len(run_ids), dtype=int)
    n_steps = 0
    if theory is TheoryId.BELL_IID:
        pos = []
        for r in run_ids:
            rng = streams.stream(init.seed, r, streams.CONFIG)
            u = rng.random((len(ts), 1 + grid.n_axes))
            rows = [configurations_from_uniforms(np.abs(clock(t).ravel()) ** 2, grid, u[k, :1],
                                                 u[k, 1:][None] if init.jitter else None)[0]
                    for k, t in enumerate(ts)]
            pos.append(np.stack(rows) if rows else np.zeros((0, grid.n_particles, grid.dims)))
        flags = np.zeros((max(len(ts) - 1, 0), len(run_ids)), dtype=bool)
        positions = np.stack(pos, axis=1) if ts else np.zeros((0, len(run_ids), grid.n_particles, grid.dims))
        t_out = ts
    else:
        if theory is TheoryId.BM:
            q0 = _initial_positions(init, init.psi0, run_ids, grid)

            def vel(t, q):
                return bohm_velocity_batch(clock(t), q, grid)
        else:
            q0 = _initial_positions(init, init.rho0, run_ids, grid)

            def vel(t, q):
                return mbm_velocity_batch(mclock(t), q, grid)
        if H.is_zero and _current_free(theory, init):
            positions = np.broadcast_to(np.mod(q0, grid.box), (len(path_t),) + q0.shape).copy()
            counts = np.zeros((len(path_t) - 1, len(run_ids)), dtype=int)
            steps = np.zeros(len(path_t) - 1, dtype=int)
        else:
            v_typ = grid_speed_scale(vel, 0.0, grid)
            positions, counts, steps = integrate_paths(vel, q0, path_t, grid, v_typ=v_typ, h_max=h_max)
        keep = [path_t.index(t) for t in ts]
        positions = positions[keep]
        t_out = ts
        # interval flags relative to the reported sample times
        cum = np.concatenate([np.zeros((1, len(run_ids)), dtype=int), np.cumsum(counts, axis=0)])
        flags = (np.diff(cum[keep], axis=0) > 0) if len(keep) > 1 else np.zeros((0, len(run_ids)), dtype=bool)
        flagged_steps = counts.sum(axis=0)
        n_steps = int(steps.sum())
    for j, r in enumerate(run_ids):
        path = ParticlePath(np.array(t_out), positions[:, j], flags[:, j], grid)
        m = _meta(theory, init, params, r, {"flagged_steps": int(flagged_steps[j]), "steps": n_steps})
        out.append(POHistory(theory.value, kind, np.array(ts), path=path, meta=m))
    return out


def _herm(m):
    m = 0.5 * (m + m.conj().T)
    return m / np.trace(m).real


def _run_mf(grid, H, params, init, t_final, ts, run_ids):
    """Flashes at rate N lam with density tr(rho_t g_{I,x}) a^d and no back-action."""
    times, labels, cu, counts = _padded_schedules(init.seed, run_ids, grid.n_particles, params.lam,
                                                  t_final, init.forced)
    centers = np.zeros(times.shape + (grid.dims,), dtype=int)
    run_idx, k_idx = np.nonzero(np.isfinite(times))
    order = np.argsort(times[run_idx, k_idx], kind="stable")
    run_idx, k_idx = run_idx[order], k_idx[order]
    ev_t = times[run_idx, k_idx]
    eq = MasterEquation(grid, H, params)
    rho = np.array(init.rho0.entries)
    static = H.is_zero
    diag0 = np.real(np.diagonal(rho)).reshape(grid.shape)
    uniq, inv = np.unique(ev_t, return_inverse=True)
    diags = np.empty((len(uniq),) + grid.shape)
    t_cur = 0.0
    for n, t in enumerate(uniq):
        if static:
            diags[n] = diag0
            continue
        rho = eq.evolve(rho, [t - t_cur])[0]
        t_cur = t
        diags[n] = np.real(np.diagonal(rho)).reshape(grid.shape)
    if len(run_idx):
        lab = labels[run_idx, k_idx]
        p = center_probabilities(diags[inv], grid, lab, params.sigma)
        site = sample_categorical(p, cu[run_idx, k_idx])
        centers[run_idx, k_idx] = np.stack(np.unravel_index(site, grid.site_shape), axis=1)
    out = []
    for j, r in enumerate(run_ids):
        n = counts[j]
        rec = TrajectoryRecord(init.seed, r, grid, params, times[j, :n].copy(), centers[j, :n].copy(),
                               labels[j, :n].copy())
        out.append(POHistory(TheoryId.MF.value, FLASHES, np.array(ts), flashes=extract_flashes(rec),
                             record=rec, meta=_meta(TheoryId.MF, init, params, r)))
    return out


def _run_mgrwf(grid, H, params, init, t_final, ts, run_ids):
    ops = MixedBatch(grid, H)
    records = run_collapse_batch(ops, init.rho0, params, init.seed, run_ids, t_final, ts, init.forced)
    return [POHistory(TheoryId.MGRWF.value, FLASHES, np.array(ts), flashes=extract_flashes(rec),
                      record=rec, meta=_meta(TheoryId.MGRWF, init, params, rec.run_index))
            for rec in records]


_COLLAPSE_FAMILY = {TheoryId.GRWM, TheoryId.GRWF} | _GRW_PARTICLES


def run_ensemble(theory, grid: GridSpec, H: Hamiltonian, params: GrwParams, init: InitialData,
                 t_final, sample_times=(), n_runs=1, run_offset=0, chunk_size=2048, h_max=0.05):
    """POHistory for run indices run_offset .. run_offset + n_runs - 1."""
    theory = TheoryId.parse(theory)
    validate_init(theory, init)
    state = init.rho0 if theory in _USES_RHO else init.psi0
    if state.grid != grid:
        raise BadInit("initial state lives on a different grid")
    if n_runs < 1:
        raise BadArgument("need at least one run")
    ts = _sample_times(sample_times, t_final)
    out = []
    for ids in _chunks(n_runs, run_offset, chunk_size):
        ids = [int(r) for r in ids]
        if theory in _COLLAPSE_FAMILY:
            out.extend(_run_collapse_family(theory, grid, H, params, init, t_final, ts, ids, h_max))
        elif theory is TheoryId.MGRWF:
            out.extend(_run_mgrwf(grid, H, params, init, t_final, ts, ids))
        else:
            out.extend(_run_deterministic(theory, grid, H, params, init, t_final, ts, ids, h_max))
    return out


def run_theory(theory, grid, H, params, init, t_final, sample_times=(), run_index=0, **kw) -> POHistory:
    return run_ensemble(theory, grid, H, params, init, t_final, sample_times, 1, run_index, **kw)[0]


# ---------------------------------------------------------------------------
# Cat scenario


@dataclass(eq=False)
class CatBundle:
    grid: GridSpec
    H: Hamiltonian
    params: GrwParams
    init: InitialData
    branches: dict
    regions: dict
    psi: StateVector


def gaussian_packet(grid: GridSpec, center, width):
    """Product of real periodic Gaussians (one per particle axis) centred at ``center``."""
    x = grid.coords()
    amp = np.ones(())
    for _ in range(grid.n_axes):
        d = (x - center + grid.box / 2) % grid.box - grid.box / 2
        amp = np.multiply.outer(amp, np.exp(-d**2 / (4 * width**2)))
    return StateVector.normalized(amp, grid)


def cat_scenario(theory="GRWf", separation=8, n_particles=2, points_per_dim=None, spacing=1.0,
                 width=0.6, lam=0.5, sigma=0.5, seed=0, hamiltonian="zero", mixture=False,
                 q0=EQUILIBRIUM) -> CatBundle:
    """(|here>^N + |there>^N)/sqrt(2) with branches ``separation`` apart on a 1D ring.

    ``width`` is the position standard deviation of each packet.  Density-matrix
    theories start from the cat projector, or from the branch mixture if ``mixture``.
    """
    theory = TheoryId.parse(theory)
    L = points_per_dim or 2 * int(separation)
    grid = build_grid(n_particles, 1, L, spacing, [1.0] * n_particles, mixed=theory in _USES_RHO)
    if separation * spacing >= grid.box:
        raise BadArgument("separation does not fit in the box")
    c1 = grid.box / 4
    c2 = c1 + separation * spacing
    dead = gaussian_packet(grid, c1, width)
    alive = gaussian_packet(grid, c2, width)
    overlap = float(np.sum(np.minimum(dead.probabilities(), alive.probabilities())))
    if overlap > 1e-6:
        raise BadArgument(f"branches overlap by {overlap:.2e} in |psi|^2 mass")
    psi = StateVector.normalized(dead.amplitudes + alive.amplitudes, grid)
    if hamiltonian == "zero":
        H = Hamiltonian.zero(grid)
    elif hamiltonian == "free":
        H = Hamiltonian(grid)
    else:
        raise BadArgument(f"unknown hamiltonian {hamiltonian!r}")
    half = separation * spacing / 2
    regions = {"dead": (c1 - half, c1 + half), "alive": (c2 - half, c2 + half)}
    if theory in _USES_RHO:
        rho = (DensityMatrix.mixture([dead, alive], [0.5, 0.5]) if mixture else psi.projector())
        init = InitialData(rho0=rho, q0=q0 if theory in _TAKES_Q0 else None, seed=seed)
    else:
        init = InitialData(psi0=psi, q0=q0 if theory in _TAKES_Q0 else None, seed=seed)
    return CatBundle(grid, H, GrwParams(lam, sigma), init, {"dead": dead, "alive": alive}, regions, psi)
