"""Flash-history POVMs, experiment POVMs on a subsystem, and the three-rule update calculus."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DensityMatrix, GridSpec, GrwParams, Hamiltonian, StateVector, TensorSplit, tensor_split
from .errors import BadArgument, PartialZeta, ZeroProbabilityOutcome
from .evolution import KRAUS_CAP, history_label, kraus_operators


@dataclass(eq=False)
class POVMElement:
    label: object
    operator: np.ndarray

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.operator + self.operator.conj().T))[0])


@dataclass(eq=False)
class FlashModel:
    grid: GridSpec
    H: Hamiltonian
    params: GrwParams


def completeness_gap(povm) -> float:
    elems = list(povm.values())
    total = sum(e.operator for e in elems)
    return float(np.max(np.abs(total - np.eye(total.shape[0]))))


def flash_history_povm(model: FlashModel, n_steps, dt, cap=KRAUS_CAP):
    """{history: E_h = K_h^dagger K_h} over all discrete-time flash histories."""
    out = {}
    for h, k in kraus_operators(model.grid, model.H, model.params, n_steps, dt, cap):
        e = k.conj().T @ k
        out[h] = POVMElement(h, 0.5 * (e + e.conj().T))
    return out


def history_probabilities(state, povm) -> dict:
    """P(h) = <psi|E_h|psi> or tr(rho E_h)."""
    return outcome_distribution(state, povm, check=False)


@dataclass(eq=False)
class ExperimentSpec:
    """Joint model, system/environment split, environment state and outcome map.

    ``zeta`` maps a history (tuple of None or (label, center)) to an outcome; it
    may be a callable or a dict.  Returning None or raising KeyError marks the
    history as unmapped.
    """
    model: FlashModel
    system: tuple
    phi_env: StateVector
    n_steps: int
    dt: float
    zeta: object

    @property
    def split(self) -> TensorSplit:
        return tensor_split(self.model.grid, self.system)

    def outcome(self, history):
        try:
            z = self.zeta[history] if isinstance(self.zeta, dict) else self.zeta(history)
        except KeyError:
            z = None
        return z


def experiment_povm(spec: ExperimentSpec, cap=KRAUS_CAP, reach_tol=1e-14):
    """P_z = <phi| sum_{h in zeta^-1(z)} E_h |phi>_env on the system space."""
    split = spec.split
    if spec.phi_env.grid != split.env_grid:
        raise BadArgument("environment state lives on the wrong grid")
    acc = {}
    for h, elem in flash_history_povm(spec.model, spec.n_steps, spec.dt, cap).items():
        z = spec.outcome(h)
        if z is None:
            if np.max(np.abs(elem.operator)) > reach_tol:
                raise PartialZeta(f"outcome map undefined on reachable history {history_label(h)!r}")
            continue
        acc[z] = acc.get(z, 0) + elem.operator
    out = {}
    for z, op in acc.items():
        p = split.partial_inner(op, spec.phi_env)
        out[z] = POVMElement(z, 0.5 * (p + p.conj().T))
    return out


def outcome_distribution(state, povm, check=True) -> dict:
    """P(Z = z) = <psi|P_z|psi> (or tr(rho P_z)) for each element of ``povm``."""
    if isinstance(state, DensityMatrix):
        rho = state.entries
        probs = {z: float(np.real(np.sum(e.operator * rho.T))) for z, e in povm.items()}
    elif isinstance(state, StateVector):
        v = state.vector
        probs = {z: float(np.real(v.conj() @ e.operator @ v)) for z, e in povm.items()}
    else:
        raise BadArgument("expected a StateVector or DensityMatrix")
    if check:
        total = sum(probs.values())
        if abs(total - 1) > 1e-8:
            raise BadArgument(f"POVM not complete on this state (total {total})")
        if min(probs.values()) < -1e-10:
            raise BadArgument("negative outcome probability")
    return {z: max(p, 0.0) for z, p in probs.items()}


def formalism_update(rho: DensityMatrix, kraus_ops) -> DensityMatrix:
    """rho' = C(rho) / tr C(rho) with C(rho) = sum_k A_k rho A_k^dagger."""
    ops = [np.asarray(a, dtype=complex) for a in kraus_ops]
    if not ops:
        raise BadArgument("need at least one Kraus operator")
    c = sum(a @ rho.entries @ a.conj().T for a in ops)
    tr = float(np.real(np.trace(c)))
    if tr <= 1e-15:
        raise ZeroProbabilityOutcome(f"outcome has probability {tr:.3e}")
    c = c / tr
    return DensityMatrix(0.5 * (c + c.conj().T), rho.grid)


def ideal_operation(projector):
    """Kraus list for the ideal measurement update C(rho) = P rho P."""
    return [np.asarray(projector)]


# ---------------------------------------------------------------------------
# No-signalling


def marginal_history(history, labels):
    """Keep only flashes whose particle label is in ``labels``; others read as no flash."""
    return tuple(s if (s is not None and s[0] in labels) else None for s in history)


def marginal_distribution(state, model: FlashModel, n_steps, dt, labels, cap=KRAUS_CAP) -> dict:
    out = {}
    for h, elem in flash_history_povm(model, n_steps, dt, cap).items():
        key = marginal_history(h, labels)
        p = outcome_distribution(state, {0: elem}, check=False)[0]
        out[key] = out.get(key, 0.0) + p
    return out


def tv_gap(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def no_signaling_check(state, grid: GridSpec, params: GrwParams, h1, h2_variants, n_steps, dt,
                       interaction=None, system_labels=(0,), cap=KRAUS_CAP) -> float:
    """Max TV distance between system-1 flash marginals over choices of the far Hamiltonian.

    ``h1`` and each entry of ``h2_variants`` are dense single-system matrices; the joint
    Hamiltonian is h1 (x) I + I (x) h2 (+ ``interaction`` if given, as a dense joint matrix).
    """
    split = tensor_split(grid, system_labels)
    dists = []
    for h2 in h2_variants:
        joint = split.kron(h1, np.eye(split.env_grid.dim)) + split.kron(np.eye(split.sys_grid.dim), h2)
        if interaction is not None:
            joint = joint + np.asarray(interaction)
        model = FlashModel(grid, Hamiltonian.from_dense(grid, joint), params)
        dists.append(marginal_distribution(state, model, n_steps, dt, set(system_labels), cap))
    return max((tv_gap(a, b) for i, a in enumerate(dists) for b in dists[i + 1:]), default=0.0)


def povm_to_json(povm) -> dict:
    """Label -> dense matrix as [[re, im], ...] row-major pairs."""
    out = {}
    for z, e in povm.items():
        key = z if isinstance(z, str) else (history_label(z) if isinstance(z, tuple) else str(z))
        out[key] = [[[float(v.real), float(v.imag)] for v in row] for row in e.operator]
    return out


# ---------------------------------------------------------------------------
# Desk-scale model shared by tests, scripts and the CLI


def tiny_1p1(lam=0.1, sigma=1.0, spacing=2.0, coupling=0.5):
    """System particle 0 and environment particle 1, two sites each, with an on-site coupling."""
    from .core import build_grid

    grid = build_grid(2, 1, 2, spacing, [1.0, 1.0])
    idx = grid.config_indices()
    v = coupling * (idx[:, 0] == idx[:, 1]).astype(float).reshape(grid.shape)
    return FlashModel(grid, Hamiltonian(grid, v), GrwParams(lam, sigma))


def first_system_flash(history, system_label=0):
    """Outcome: site of the first flash of the system particle, or 'none'."""
    for s in history:
        if s is not None and s[0] == system_label:
            return f"x={s[1][0]}"
    return "none"


def tiny_1p1_experiment(n_steps=3, dt=0.5, phi_env=None, **kw) -> ExperimentSpec:
    model = tiny_1p1(**kw)
    split = tensor_split(model.grid, (0,))
    if phi_env is None:
        phi_env = StateVector.normalized(np.array([1.0, 0.5j]), split.env_grid)
    return ExperimentSpec(model, (0,), phi_env, n_steps, dt, first_system_flash)
