"""The fourteen acceptance criteria, each mapped onto one or more named scenarios."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from ..evolution import expected_flash_rate
from .builtins import builtin
from .scenarios import run_scenario

# scenarios cheap enough to rerun in full for the determinism check
FAST = ["diagonal-invariance", "mbm-continuity", "no-signaling", "povm-exactness", "mm-field-identity",
        "cat-mm", "grwp4-coincidence", "ensemble-vs-master", "grwp3-conditional", "grwp2-control"]
# heavier ensembles are rerun at this size, serially and with two workers over small chunks
DETERMINISM_RUNS = 300
DETERMINISM_CHUNK = 64


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    runtime: float = 0.0
    reports: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d} {self.title}: {self.summary}"


class Runner:
    """Runs named scenarios once and keeps the reports for later criteria."""

    def __init__(self, n_jobs=1):
        self.n_jobs = n_jobs
        self.reports = {}
        self.runtime = {}

    def __call__(self, name):
        if name not in self.reports:
            t0 = time.perf_counter()
            self.reports[name] = run_scenario(builtin(name), self.n_jobs)
            self.runtime[name] = time.perf_counter() - t0
        return self.reports[name]


def _fmt(v):
    return "n/a" if v is None else f"{v:.3g}"


def c01(run):
    r = run("flash-rate")
    lo, hi = 99.0, 101.0
    mean = r.statistic
    ok = r.passed and lo <= mean <= hi and run.runtime["flash-rate"] < 30
    return ok, (f"mean count {mean:.3f} in [{lo}, {hi}], 3 SE = {r.threshold:.3f}, "
                f"{run.runtime['flash-rate']:.1f}s < 30s"), [r]


def c02(run):
    rate = expected_flash_rate(1e23, 1e-15)
    return rate == 1e8, f"expected_flash_rate(1e23, 1e-15) = {rate!r} == 1e8", []


def c03(run):
    r = run("ensemble-vs-master")
    return (r.passed and run.runtime["ensemble-vs-master"] < 300,
            f"trace-norm gap {r.gap:.4f} <= 0.05, {run.runtime['ensemble-vs-master']:.1f}s < 300s", [r])


def c04(run):
    r = run("diagonal-invariance")
    return r.passed, f"max diagonal drift {r.gap:.2e} <= 1e-8", [r]


def c05(run):
    r = run("mbm-continuity")
    return r.passed, f"max continuity residual {r.gap:.2e} <= 1e-4", [r]


def c06(run):
    bm, mbm = run("bm-equivariance"), run("mbm-equivariance")
    ps = [row["p_value"] for r in (bm, mbm) for row in r.per_time]
    return bm.passed and mbm.passed, "KS p " + ", ".join(f"{p:.3g}" for p in ps) + " all > 0.01", [bm, mbm]


def c07(run):
    p3, p2 = run("grwp3-conditional"), run("grwp2-control")
    return (p3.passed and p2.passed,
            f"GRWP3 combined p {_fmt(p3.p_value)} > 0.01, GRWP2 control p {_fmt(p2.p_value)} < 1e-3", [p3, p2])


def c08(run):
    r = run("grwp4-coincidence")
    return r.passed, f"max |Q1 - Q2| {r.gap:.2e} <= 1e-12 over {r.n_runs} runs", [r]


def c09(run):
    r = run("grwp6-equivariance")
    return r.passed, "chi2 p " + ", ".join(f"{row['p_value']:.3g}" for row in r.per_time) + " > 0.01", [r]


def c10(run):
    names = ["cat-grwf", "cat-grwm", "cat-mm", "mm-field-identity"]
    rs = [run(n) for n in names]
    f, m = rs[0].per_time[-1]["frequencies"], rs[1].per_time[-1]["frequencies"]
    summary = (f"GRWf dead/alive {f.get('dead', 0):.4f}/{f.get('alive', 0):.4f}, "
               f"GRWm {m.get('dead', 0):.4f}/{m.get('alive', 0):.4f} (1/2 +- 0.02); "
               f"Mm mixed {rs[3].details['mixed_fraction']:.0%}; field identity {rs[3].gap:.1e} <= 1e-10")
    return all(r.passed for r in rs), summary, rs


def c11(run):
    rs = [run("witness-grwp1"), run("witness-grwp5")]
    return (all(r.passed for r in rs),
            f"min p GRWP1 vs GRWf {_fmt(rs[0].p_value)}, GRWP5 vs GRWf {_fmt(rs[1].p_value)}, both < 1e-3", rs)


def c12(run):
    r = run("povm-exactness")
    d = r.details
    ok = r.passed and run.runtime["povm-exactness"] < 120
    return ok, (f"completeness {d['completeness']:.1e}, factorization {d['factorization']:.1e}, "
                f"mixture {d['mixture']:.1e}, sampler p {r.p_value:.3g}, "
                f"{run.runtime['povm-exactness']:.1f}s < 120s"), [r]


def c13(run):
    r = run("no-signaling")
    return (r.passed, f"marginal TV gap {r.gap:.1e} <= 1e-10, interaction control "
                      f"{r.details['interaction_gap']:.3g} > 0.01", [r])


def determinism_pairs(run):
    """(name, first bytes, second bytes) for every scenario checked."""
    out = []
    for name in FAST:
        out.append((name, run(name).to_json(), run_scenario(builtin(name)).to_json()))
    for name in [n for n in ALL_SCENARIOS if n not in FAST]:
        sc = builtin(name).with_overrides(n_runs=DETERMINISM_RUNS)
        sc.chunk_size = DETERMINISM_CHUNK
        serial = run_scenario(sc).to_json()
        again = run_scenario(sc).to_json()
        parallel = run_scenario(sc, n_jobs=2).to_json()
        out.append((name, serial, again))
        out.append((name + " (2 workers)", serial, parallel))
    return out


def c14(run):
    pairs = determinism_pairs(run)
    bad = [n for n, a, b in pairs if a != b]
    return not bad, (f"{len(pairs) - len(bad)}/{len(pairs)} reruns byte-identical"
                     + (f"; differing: {', '.join(bad)}" if bad else "")), []


CRITERIA = [
    (1, "flash-rate law", c01),
    (2, "rate arithmetic", c02),
    (3, "ensemble vs master equation", c03),
    (4, "diagonal invariance", c04),
    (5, "MBM continuity residual", c05),
    (6, "BM and MBM equivariance", c06),
    (7, "GRWP3 conditional law", c07),
    (8, "GRWP4 coincidence", c08),
    (9, "GRWP6 equivariance", c09),
    (10, "cat classifications", c10),
    (11, "inequivalence witnesses", c11),
    (12, "POVM exactness", c12),
    (13, "no-signaling", c13),
    (14, "determinism", c14),
]

ALL_SCENARIOS = ["flash-rate", "ensemble-vs-master", "diagonal-invariance", "mbm-continuity",
                 "bm-equivariance", "mbm-equivariance", "grwp3-conditional", "grwp2-control",
                 "grwp4-coincidence", "grwp6-equivariance", "cat-grwf", "cat-grwm", "cat-mm",
                 "mm-field-identity", "equivalence-grwm-grwf", "equivalence-mbm-grwm", "witness-grwp1",
                 "witness-grwp5", "no-signaling", "povm-exactness"]


def check(number, runner: Runner) -> CriterionResult:
    for n, title, fn in CRITERIA:
        if n == number:
            t0 = time.perf_counter()
            ok, summary, reports = fn(runner)
            return CriterionResult(n, title, bool(ok), summary, time.perf_counter() - t0,
                                   {r.scenario: r for r in reports})
    raise KeyError(number)


def run_acceptance(n_jobs=1, numbers=None, echo=None):
    runner = Runner(n_jobs)
    out = []
    for n, _, _ in CRITERIA:
        if numbers and n not in numbers:
            continue
        res = check(n, runner)
        if echo:
            echo(res.line())
        out.append(res)
    return out, runner
