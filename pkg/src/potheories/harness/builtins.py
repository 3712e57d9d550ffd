"""Named scenarios shipped with the package."""
from __future__ import annotations

import copy

import numpy as np

from .scenarios import Scenario

CAT_TIMES = [2.0, 10.0]
CAT_READOUT = {"window": 5.0}

_TWO_PACKETS = {"kind": "packets", "terms": [
    {"centers": [3.0, 5.0], "width": 1.0, "momenta": [0.5, 0.0]},
    {"centers": [5.0, 3.0], "width": 1.0},
]}
_SMOOTH_PAIR = {"kind": "grid", "grid": {"n_particles": 2, "points": 8, "spacing": 1.0},
                "hamiltonian": {"kind": "harmonic", "omega": 0.5}, "params": {"lam": 0.2, "sigma": 1.0},
                "state": _TWO_PACKETS}
_OSCILLATOR = {"kind": "grid", "grid": {"n_particles": 1, "points": 32, "spacing": 0.5},
               "hamiltonian": {"kind": "harmonic", "omega": 0.25},
               "state": {"kind": "eigen", "modes": [0, 1], "coefficients": [[1.0, 0.0], [0.8, 0.6]]}}


def _with(model, **params):
    m = copy.deepcopy(model)
    m["params"] = {**m.get("params", {}), **params}
    return m


def _cat(**kw):
    return {"kind": "cat", "cat": kw}


_CONFIGS = [
    {"name": "flash-rate", "theories": ["GRWf"], "n_runs": 10000, "seed": 1, "t_final": 100.0,
     "model": {"kind": "grid", "grid": {"n_particles": 2, "points": 8, "spacing": 1.0},
               "hamiltonian": {"kind": "harmonic", "omega": 0.5}, "params": {"lam": 0.5, "sigma": 1.0},
               "state": _TWO_PACKETS},
     "test": {"kind": "event-count", "threshold": 3.0},
     "description": "mean number of collapses over [0, t] against N lambda t"},
    {"name": "ensemble-vs-master", "theories": ["GRWm"], "n_runs": 10000, "seed": 5, "t_final": 5.0,
     "model": _SMOOTH_PAIR, "test": {"kind": "master-gap", "threshold": 0.05},
     "description": "trace-norm distance between the averaged collapsed states and the master equation"},
    {"name": "diagonal-invariance", "theories": ["Mm"], "n_runs": 1, "times": [1.0, 5.0, 20.0],
     "model": {**_with(_SMOOTH_PAIR, lam=0.5), "hamiltonian": {"kind": "zero"}},
     "test": {"kind": "diagonal-invariance", "threshold": 1e-8},
     "description": "with H = 0 the collapse term leaves the configuration density untouched"},
    {"name": "mbm-continuity", "theories": ["MBM"], "n_runs": 1, "times": [0.5, 1.0, 2.0],
     "model": _SMOOTH_PAIR, "test": {"kind": "continuity", "threshold": 1e-4},
     "description": "continuity equation for the MBM current on grid configurations"},
    {"name": "bm-equivariance", "theories": ["BM"], "n_runs": 10000, "seed": 11, "times": [1.0, 5.0],
     "model": _OSCILLATOR, "init": {"q0": "equilibrium"}, "test": {"kind": "ks-equivariance", "threshold": 0.01},
     "description": "Bohmian positions stay |psi_t|^2 distributed"},
    {"name": "mbm-equivariance", "theories": ["MBM"], "n_runs": 10000, "seed": 12, "times": [1.0, 5.0],
     "model": _with(_OSCILLATOR, lam=0.1, sigma=1.0), "init": {"q0": "equilibrium"},
     "test": {"kind": "ks-equivariance", "threshold": 0.01},
     "description": "MBM positions stay distributed by the master-equation diagonal"},
    {"name": "grwp3-conditional", "theories": ["GRWP3"], "n_runs": 10000, "seed": 21, "t_final": 1.0,
     "times": [1.0],
     "model": {"kind": "grid", "grid": {"n_particles": 1, "points": 32, "spacing": 1.0},
               "params": {"lam": 0.0, "sigma": 2.0},
               "state": {"kind": "packets", "terms": [{"centers": [16.0], "width": 5.0}]}},
     "init": {"q0": "equilibrium", "forced": [[1.0, 0]]},
     "test": {"kind": "grwp3-conditional", "expect": "pass", "threshold": 0.01},
     "description": "given the collapse record, Q(t) follows the collapsed |psi_t|^2"},
    {"name": "grwp2-control", "theories": ["GRWP2"], "n_runs": 10000, "seed": 21, "t_final": 1.0,
     "times": [1.0],
     "model": {"kind": "grid", "grid": {"n_particles": 1, "points": 32, "spacing": 1.0},
               "params": {"lam": 0.0, "sigma": 2.0},
               "state": {"kind": "packets", "terms": [{"centers": [16.0], "width": 5.0}]}},
     "init": {"q0": "equilibrium", "forced": [[1.0, 0]]},
     "test": {"kind": "grwp3-conditional", "expect": "reject", "threshold": 1e-3},
     "description": "the same conditional test must reject the jump-to-center variant"},
    {"name": "grwp4-coincidence", "theories": ["GRWP4"], "n_runs": 100, "seed": 3, "t_final": 5.0,
     "times": [float(t) for t in np.linspace(0.0, 5.0, 26)],
     "model": {"kind": "grid", "grid": {"n_particles": 2, "points": 16, "spacing": 1.0},
               "hamiltonian": {"kind": "harmonic", "omega": 0.3}, "params": {"lam": 0.5, "sigma": 1.0},
               "state": {"kind": "packets", "terms": [
                   {"centers": [5.0, 10.0], "width": [1.0, 1.2], "momenta": [0.0, 0.3]},
                   {"centers": [10.0, 5.0], "width": [1.2, 1.0], "momenta": [0.3, 0.0]}]}},
     "init": {"label_symmetric": True}, "test": {"kind": "coincidence", "threshold": 1e-12},
     "description": "circular-mean positions of an exchange-symmetric state coincide"},
    {"name": "grwp6-equivariance", "theories": ["GRWP6"], "n_runs": 10000, "seed": 9, "times": [1.0, 5.0],
     "model": _with(_OSCILLATOR, lam=0.2, sigma=1.0), "init": {"q0": "equilibrium"},
     "test": {"kind": "chi2-equivariance", "threshold": 0.01},
     "description": "GRWP6 positions follow the master-equation diagonal"},
    {"name": "cat-grwf", "theories": ["GRWf"], "n_runs": 10000, "seed": 31, "times": [10.0], "t_final": 15.0,
     "model": _cat(), "readout": CAT_READOUT,
     "test": {"kind": "classification", "expect": {"dead": [0.5, 0.02], "alive": [0.5, 0.02]}},
     "description": "flash readout picks one branch with probability one half each"},
    {"name": "cat-grwm", "theories": ["GRWm"], "n_runs": 10000, "seed": 31, "times": [10.0], "t_final": 15.0,
     "model": _cat(), "readout": CAT_READOUT,
     "test": {"kind": "classification", "expect": {"dead": [0.5, 0.02], "alive": [0.5, 0.02]}},
     "description": "matter readout picks one branch with probability one half each"},
    {"name": "cat-mm", "theories": ["Mm"], "n_runs": 100, "seed": 31, "times": CAT_TIMES, "t_final": 15.0,
     "model": _cat(), "readout": CAT_READOUT, "test": {"kind": "classification", "expect": {"mixed": [1.0, 0.0]}},
     "description": "the density-matrix matter theory never selects a branch"},
    {"name": "mm-field-identity", "theories": ["Mm"], "n_runs": 1, "seed": 31, "times": CAT_TIMES, "t_final": 15.0,
     "model": _cat(), "readout": CAT_READOUT, "test": {"kind": "mixture-field", "threshold": 1e-10},
     "description": "Mm matter field equals the average of the two branch fields"},
    {"name": "equivalence-grwm-grwf", "theories": ["GRWm", "GRWf"], "n_runs": 10000, "seed": 41,
     "times": [10.0], "t_final": 15.0, "model": _cat(), "readout": CAT_READOUT,
     "test": {"kind": "equivalence", "expect": "equivalent", "threshold": 0.01},
     "description": "macro-label distributions of GRWm and GRWf agree"},
    {"name": "equivalence-mbm-grwm", "theories": ["MBM", "GRWm"], "n_runs": 10000, "seed": 41,
     "times": [10.0], "t_final": 15.0, "model": _cat(), "readout": CAT_READOUT,
     "test": {"kind": "equivalence", "expect": "equivalent", "threshold": 0.01},
     "description": "macro-label distributions of MBM and GRWm agree"},
    {"name": "witness-grwp1", "theories": ["GRWP1", "GRWf"], "n_runs": 1000, "seed": 51,
     "times": CAT_TIMES, "t_final": 15.0, "model": _cat(hamiltonian="free"), "readout": CAT_READOUT,
     "test": {"kind": "equivalence", "expect": "inequivalent", "threshold": 1e-3},
     "description": "GRWP1 and GRWf disagree on the cat once the packets move"},
    {"name": "witness-grwp5", "theories": ["GRWP5", "GRWf"], "n_runs": 10000, "seed": 51,
     "times": CAT_TIMES, "t_final": 15.0, "model": _cat(), "readout": CAT_READOUT,
     "test": {"kind": "equivalence", "expect": "inequivalent", "threshold": 1e-3},
     "description": "GRWP5 and GRWf disagree on the cat"},
    {"name": "no-signaling", "theories": ["GRWf"], "n_runs": 1, "model": {"kind": "bell"},
     "test": {"kind": "no-signaling", "threshold": 1e-10},
     "description": "far-side Hamiltonian leaves near-side flash statistics unchanged"},
    {"name": "povm-exactness", "theories": ["GRWf"], "n_runs": 1, "seed": 4,
     "model": {"kind": "tiny-1p1", "tiny": {"n_steps": 3, "dt": 0.5}},
     "test": {"kind": "povm", "draws": 1000000},
     "description": "flash-history POVM identities and the sampler against the exact law"},
]


def builtin_configs() -> dict:
    return {c["name"]: copy.deepcopy(c) for c in _CONFIGS}


def builtin(name) -> Scenario:
    from ..errors import BadArgument

    cfgs = builtin_configs()
    if name not in cfgs:
        raise BadArgument(f"unknown scenario {name!r}; known: {', '.join(sorted(cfgs))}")
    return Scenario.from_dict(cfgs[name])
