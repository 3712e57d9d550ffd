"""Macro-label tables for the cat state under several theories, with and without free motion.

With H = 0 every particle theory that keeps Q inside the support of |psi|^2 reports the branch
weights 1/2, 1/2 at a single time, so a single-time witness only separates GRWP1 from GRWf once
the packets spread (free H).  This script prints both tables.

    python3 scripts/cat_witness.py --runs 1000 --t 2 10
"""
import argparse

from potheories.harness.builtins import builtin_configs
from potheories.harness.scenarios import (Scenario, build_model, ensemble, macro_labels, partition_for,
                                          readout_horizon)
from potheories.harness.stats import chi2_two_sample, label_counts

CATEGORIES = ["dead", "alive", "mixed", "none"]


def table(hamiltonian, theories, runs, times, seed):
    cfg = builtin_configs()["witness-grwp1"]
    cfg.update(theories=["GRWf"], n_runs=runs, seed=seed, times=list(times))
    cfg["model"] = {"kind": "cat", "cat": {"hamiltonian": hamiltonian}}
    sc = Scenario.from_dict(cfg)
    window = sc.readout.get("window", 1.0)
    counts = {}
    for th in theories:
        b = build_model(sc, th)
        hs = ensemble(sc, th, b, list(sc.times), t_final=readout_horizon(sc, th))
        part = partition_for(sc, b)
        counts[th] = {t: label_counts(macro_labels(hs, part, t, window), CATEGORIES) for t in sc.times}
    print(f"H = {hamiltonian}, {runs} runs per theory")
    print(f"{'theory':8s} {'t':>5s} " + " ".join(f"{c:>6s}" for c in CATEGORIES))
    for th in theories:
        for t, c in counts[th].items():
            print(f"{th:8s} {t:5.1f} " + " ".join(f"{int(v):6d}" for v in c))
    ref = theories[-1]
    for th in theories[:-1]:
        for t in sc.times:
            stat, p = chi2_two_sample(counts[th][t][:3], counts[ref][t][:3])
            print(f"{th} vs {ref} at t={t}: chi2 {stat:.2f}, p {p:.3g}")
    print()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=500)
    ap.add_argument("--t", type=float, nargs="+", default=[2.0, 10.0])
    ap.add_argument("--seed", type=int, default=51)
    args = ap.parse_args()
    for ham in ("zero", "free"):
        table(ham, ["GRWP1", "GRWP5", "GRWf"], args.runs, args.t, args.seed)


if __name__ == "__main__":
    main()
