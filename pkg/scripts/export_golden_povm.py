"""Independent exhaustive-history POVM for the two-site, two-particle model.

Uses numpy only (no package imports) so the committed golden file checks the
package's Kraus tree against a separate construction.

    python3 scripts/export_golden_povm.py --steps 3 --out tests/golden/tiny-1p1_steps-3.json
"""
import argparse
import itertools
import json
from pathlib import Path

import numpy as np

POINTS, SPACING, MASS = 2, 2.0, 1.0
LAM, SIGMA, COUPLING = 0.1, 1.0, 0.5
N_PARTICLES = 2


def wrapped_gaussian(u, sigma, box, images=60):
    n = np.arange(-images, images + 1)
    d = np.asarray(u, dtype=float)[:, None] + n[None, :] * box
    return np.exp(-d**2 / (2 * sigma**2)).sum(axis=1) / np.sqrt(2 * np.pi * sigma**2)


def hamiltonian():
    # kinetic term built in the plane-wave basis of each axis, then summed over axes
    k = 2 * np.pi * np.fft.fftfreq(POINTS, d=SPACING)
    x = np.arange(POINTS)
    waves = np.exp(1j * np.outer(x * SPACING, k)) / np.sqrt(POINTS)
    t1 = (waves * (k**2 / (2 * MASS))) @ waves.conj().T
    eye = np.eye(POINTS)
    kinetic = np.kron(t1, eye) + np.kron(eye, t1)
    configs = list(itertools.product(range(POINTS), repeat=N_PARTICLES))
    potential = np.diag([COUPLING * float(c[0] == c[1]) for c in configs])
    return kinetic + potential, configs


def step_operators(dt):
    h, configs = hamiltonian()
    e, v = np.linalg.eigh(h)
    u = (v * np.exp(-1j * e * dt)) @ v.conj().T
    profile = wrapped_gaussian(np.arange(POINTS) * SPACING, SIGMA, POINTS * SPACING)
    profile = profile / (profile.sum() * SPACING)
    ops = [(None, np.sqrt(1 - N_PARTICLES * LAM * dt) * u)]
    for i in range(N_PARTICLES):
        for centre in range(POINTS):
            mult = np.array([np.sqrt(profile[(c[i] - centre) % POINTS]) for c in configs])
            ops.append(((i, centre), np.sqrt(LAM * dt * SPACING) * mult[:, None] * u))
    return ops


def label(history):
    return ",".join("-" if s is None else f"{s[0]}@{s[1]}" for s in history)


def povm(n_steps, dt):
    step = step_operators(dt)
    out = {}
    for combo in itertools.product(step, repeat=n_steps):
        k = np.eye(POINTS**N_PARTICLES, dtype=complex)
        for _, op in combo:
            k = op @ k
        e = k.conj().T @ k
        out[label([b for b, _ in combo])] = 0.5 * (e + e.conj().T)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=3)
    ap.add_argument("--dt", type=float, default=0.5)
    ap.add_argument("--out", default="tests/golden/tiny-1p1_steps-3.json")
    args = ap.parse_args()
    elems = povm(args.steps, args.dt)
    gap = np.max(np.abs(sum(elems.values()) - np.eye(POINTS**N_PARTICLES)))
    doc = {"model": "tiny-1p1", "n_steps": args.steps, "dt": args.dt,
           "grid": {"n_particles": N_PARTICLES, "points": POINTS, "spacing": SPACING},
           "params": {"lam": LAM, "sigma": SIGMA},
           "elements": {k: [[[float(z.real), float(z.imag)] for z in row] for row in m] for k, m in elems.items()}}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(f"{len(elems)} elements, completeness gap {gap:.2e}, wrote {args.out}")


if __name__ == "__main__":
    main()
