"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned here independently of
the thresholds stored in the scenario configs.

    python3 -m pytest tests/test_acceptance.py -v      (or: python3 tests/test_acceptance.py)
"""
import sys

import pytest

from potheories.evolution import expected_flash_rate
from potheories.harness.acceptance import CRITERIA, Runner, check

FLASH_MEAN = (99.0, 101.0)
FLASH_RUNTIME = 30.0
MASTER_GAP = 0.05
MASTER_RUNTIME = 300.0
DIAGONAL_DRIFT = 1e-8
CONTINUITY = 1e-4
EQUIVARIANCE_P = 0.01
GRWP3_P = 0.01
GRWP2_P = 1e-3
COINCIDENCE = 1e-12
COINCIDENCE_RUNS = 100
CAT_HALF, CAT_TOL = 0.5, 0.02
FIELD_IDENTITY = 1e-10
WITNESS_P = 1e-3
COMPLETENESS = 1e-8
FACTORIZATION = 1e-10
MIXTURE = 1e-12
SAMPLER_P = 0.01
SAMPLER_DRAWS = 10**6
POVM_RUNTIME = 120.0
NO_SIGNAL = 1e-10
CONTROL_GAP = 0.01
ENSEMBLE = 10**4


def pinned_01(res, run):
    r = res.reports["flash-rate"]
    assert r.n_runs == ENSEMBLE
    assert FLASH_MEAN[0] <= r.statistic <= FLASH_MEAN[1]
    assert run.runtime["flash-rate"] < FLASH_RUNTIME


def pinned_02(res, run):
    assert expected_flash_rate(1e23, 1e-15) == 1e8


def pinned_03(res, run):
    r = res.reports["ensemble-vs-master"]
    assert r.n_runs == ENSEMBLE and r.gap <= MASTER_GAP
    assert run.runtime["ensemble-vs-master"] < MASTER_RUNTIME


def pinned_04(res, run):
    assert res.reports["diagonal-invariance"].gap <= DIAGONAL_DRIFT


def pinned_05(res, run):
    assert res.reports["mbm-continuity"].gap <= CONTINUITY


def pinned_06(res, run):
    for name in ("bm-equivariance", "mbm-equivariance"):
        r = res.reports[name]
        assert r.n_runs == ENSEMBLE
        assert sorted(row["t"] for row in r.per_time) == [1.0, 5.0]
        assert all(row["p_value"] > EQUIVARIANCE_P for row in r.per_time)


def pinned_07(res, run):
    assert res.reports["grwp3-conditional"].p_value > GRWP3_P
    assert res.reports["grwp2-control"].p_value < GRWP2_P


def pinned_08(res, run):
    r = res.reports["grwp4-coincidence"]
    assert r.n_runs == COINCIDENCE_RUNS and r.gap <= COINCIDENCE


def pinned_09(res, run):
    r = res.reports["grwp6-equivariance"]
    assert r.n_runs == ENSEMBLE
    assert all(row["p_value"] > EQUIVARIANCE_P for row in r.per_time)


def pinned_10(res, run):
    for name in ("cat-grwf", "cat-grwm"):
        r = res.reports[name]
        assert r.n_runs == ENSEMBLE
        freq = r.per_time[-1]["frequencies"]
        assert abs(freq["dead"] - CAT_HALF) <= CAT_TOL and abs(freq["alive"] - CAT_HALF) <= CAT_TOL
    for row in res.reports["cat-mm"].per_time:
        assert row["frequencies"] == {"mixed": 1.0}
    field = res.reports["mm-field-identity"]
    assert field.gap <= FIELD_IDENTITY and field.details["mixed_fraction"] == 1.0


def pinned_11(res, run):
    for name in ("witness-grwp1", "witness-grwp5"):
        assert res.reports[name].p_value < WITNESS_P


def pinned_12(res, run):
    r = res.reports["povm-exactness"]
    d = r.details
    assert d["completeness"] <= COMPLETENESS
    assert d["factorization"] <= FACTORIZATION
    assert d["mixture"] <= MIXTURE
    assert d["draws"] >= SAMPLER_DRAWS and r.p_value > SAMPLER_P
    assert run.runtime["povm-exactness"] < POVM_RUNTIME


def pinned_13(res, run):
    r = res.reports["no-signaling"]
    assert r.gap <= NO_SIGNAL and r.details["interaction_gap"] > CONTROL_GAP


def pinned_14(res, run):
    assert res.passed


PINNED = {n: globals()[f"pinned_{n:02d}"] for n, _, _ in CRITERIA}


@pytest.fixture(scope="module")
def runner():
    return Runner()


@pytest.mark.slow
@pytest.mark.parametrize("number", [n for n, _, _ in CRITERIA], ids=[f"criterion-{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, runner, capsys):
    res = check(number, runner)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
    PINNED[number](res, runner)


if __name__ == "__main__":
    run = Runner()
    results = [check(n, run) for n, _, _ in CRITERIA]
    for res in results:
        print(res.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
