import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from potheories.core import GrwParams, Hamiltonian, StateVector, build_grid
from potheories.errors import BadArgument, DegenerateInput
from potheories.evolution import sample_grw_trajectory
from potheories.harness.builtins import builtin, builtin_configs
from potheories.harness.cli import main
from potheories.harness.scenarios import (PLANS, Scenario, TestReport, _report, load_schema, readout_horizon,
                                          run_scenario)
from potheories.harness.stats import (cell_cdf, chi2_test, chi2_two_sample, fisher_combine, ks_test,
                                      label_counts, merge_bins, tv_distance)
from potheories.io import (load_snapshots, read_event_log, save_snapshots, write_event_log, write_matter_csv,
                           write_outcomes_csv, write_path_csv)
from potheories.ontology import matter_density
from potheories.theories import InitialData, run_theory

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden" / "tiny-1p1_steps-3.json"


# statistics


@given(st.lists(st.integers(0, 50), min_size=1, max_size=30), st.integers(0, 2**31 - 1))
def test_merge_bins_conserves_totals(counts, seed):
    expected = np.random.default_rng(seed).uniform(0.1, 10.0, size=len(counts))
    oc, ec = merge_bins(counts, expected)
    assert oc.sum() == pytest.approx(sum(counts))
    assert ec.sum() == pytest.approx(expected.sum())
    if ec.sum() >= 5:
        assert np.all(ec >= 5 - 1e-12)


def test_chi2_two_sample_matches_pearson_formula():
    a = np.array([30.0, 50.0, 20.0])
    b = np.array([45.0, 35.0, 40.0])
    total = a.sum() + b.sum()
    col = a + b
    stat = sum((x - col[j] * row.sum() / total) ** 2 / (col[j] * row.sum() / total)
               for row in (a, b) for j, x in enumerate(row))
    got_stat, got_p = chi2_two_sample(a, b)
    assert got_stat == pytest.approx(stat)
    assert got_p == pytest.approx(math.exp(-stat / 2))  # chi-square survival with two degrees of freedom


def test_chi2_test_edge_cases():
    assert chi2_test([1, 0], [0, 1]) == (float("inf"), 0.0)
    assert chi2_test([10], [10]) == (0.0, 1.0)
    with pytest.raises(DegenerateInput):
        chi2_test([], [])
    with pytest.raises(DegenerateInput):
        chi2_two_sample([0, 0], [1, 2])


def test_chi2_test_rescales_expected():
    stat, p = chi2_test([50, 50], [1, 1])
    assert stat == 0.0 and p == pytest.approx(1.0)


def test_tv_and_fisher():
    assert tv_distance([1, 0], [0, 2]) == 1.0
    assert tv_distance([2, 2], [1, 1]) == 0.0
    p = [0.2, 0.5]
    stat = -2 * sum(math.log(v) for v in p)
    assert fisher_combine(p) == pytest.approx(stats.chi2.sf(stat, 4))
    with pytest.raises(DegenerateInput):
        fisher_combine([])
    with pytest.raises(DegenerateInput):
        tv_distance([1], [1, 2])


def test_cell_cdf_shape():
    cdf = cell_cdf([0.5, 0.25, 0.25], 2.0)
    assert cdf(0.0) == 0.0 and cdf(5.999999) == pytest.approx(1.0, abs=1e-6)
    assert cdf(1.0) == pytest.approx(0.25)
    assert cdf(3.0) == pytest.approx(0.5)
    assert cdf(5.0) == pytest.approx(0.75)
    assert np.all(np.diff(cdf(np.linspace(0, 5.99, 200))) >= 0)


def test_ks_on_exact_samples():
    cdf = cell_cdf(np.ones(4), 1.0)
    x = np.random.default_rng(0).uniform(0, 4, 2000)
    assert ks_test(x, cdf)[1] > 0.01
    with pytest.raises(DegenerateInput):
        ks_test([], cdf)


def test_label_counts():
    assert list(label_counts(["a", "b", "a"], ["a", "b", "c"])) == [2, 1, 0]


# schema and scenarios


def test_docs_schema_is_the_package_schema():
    assert json.loads((ROOT / "docs" / "config_schema.json").read_text()) == load_schema()


def test_schema_enumerates_every_plan():
    assert set(load_schema()["properties"]["test"]["properties"]["kind"]["enum"]) == set(PLANS)


@pytest.mark.parametrize("name", sorted(builtin_configs()))
def test_builtin_scenarios_validate_and_round_trip(name):
    sc = builtin(name)
    again = Scenario.from_dict(sc.to_dict())
    assert again == sc


@pytest.mark.parametrize("patch", [{"n_runs": 0}, {"theories": []}, {"test": {"kind": "vibes"}},
                                   {"theories": ["GRWx"]}, {"model": {"kind": "torus"}}])
def test_bad_configs_are_rejected(patch):
    cfg = {**builtin_configs()["no-signaling"], **patch}
    with pytest.raises(BadArgument):
        Scenario.from_dict(cfg)


def test_zero_ensemble_override_is_rejected():
    with pytest.raises(BadArgument):
        builtin("flash-rate").with_overrides(n_runs=0)
    sc = builtin("flash-rate")
    sc.n_runs = 0
    with pytest.raises(BadArgument):
        run_scenario(sc)
    with pytest.raises(BadArgument):
        builtin("no-such-scenario")


def test_readout_horizon_depends_on_ontology():
    sc = builtin("witness-grwp1")
    assert readout_horizon(sc, "GRWf") == 15.0
    assert readout_horizon(sc, "GRWP1") == 10.0


def test_flagged_status():
    class Fake:
        meta = {"flagged_steps": 2, "steps": 100}

    sc = builtin("cat-grwf")
    rep = _report(sc, "classification", 0.0, None, 0.0, 0.0, True, histories=[Fake()])
    assert rep.status == "flagged" and not rep.passed
    ok = _report(sc, "classification", 0.0, None, 0.0, 0.0, True, histories=[Fake()] * 0)
    assert ok.status == "pass"


def test_report_json_is_stable_and_has_no_runtime():
    rep = run_scenario(builtin("diagonal-invariance"))
    assert rep.passed and rep.gap <= 1e-8
    doc = json.loads(rep.to_json())
    assert "runtime" not in json.dumps(doc)
    assert rep.to_json() == run_scenario(builtin("diagonal-invariance")).to_json()


@pytest.mark.parametrize("name", ["grwp6-equivariance", "cat-grwf", "equivalence-mbm-grwm"])
def test_serial_and_parallel_reports_are_identical(name):
    sc = builtin(name).with_overrides(n_runs=24)
    sc.chunk_size = 8
    assert run_scenario(sc).to_json() == run_scenario(sc, n_jobs=2).to_json()


def test_seed_changes_results():
    sc = builtin("cat-grwf").with_overrides(n_runs=60)
    assert run_scenario(sc).to_json() != run_scenario(sc.with_overrides(seed=99)).to_json()


# command line


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "GRWP6" in out and "witness-grwp1" in out and "acceptance" in out


def test_cli_run_writes_report_and_manifest(tmp_path):
    assert main(["run", "--scenario", "no-signaling", "--out", str(tmp_path), "--format", "csv"]) == 0
    report = json.loads((tmp_path / "no-signaling.json").read_text())
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert report["status"] == "pass"
    assert (tmp_path / "no-signaling.csv").exists()
    entry = manifest["scenarios"]["no-signaling"]
    assert entry["seed"] == 0 and entry["n_runs"] == 1 and len(entry["config_hash"]) == 64
    assert manifest["command"][:3] == ["run", "--scenario", "no-signaling"]


def test_cli_run_from_config_file(tmp_path):
    cfg = builtin_configs()["diagonal-invariance"]
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 0


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "no-signaling", "--ensemble", "0"],
    ["run", "--scenario", "nonexistent"],
    ["run"],
    ["run", "--config", "/nonexistent/cfg.json"],
    ["suite", "bogus"],
    ["frobnicate"],
])
def test_cli_config_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] in ("run", "suite") else argv) == 2


def test_cli_failed_test_exits_1(tmp_path):
    cfg = builtin_configs()["diagonal-invariance"]
    cfg["test"] = {"kind": "diagonal-invariance", "threshold": -1.0}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "out")]) == 1


def test_cli_povm_matches_golden(tmp_path):
    out = tmp_path / "povm.json"
    assert main(["povm", "--model", "tiny-1p1", "--steps", "3", "--dt", "0.5", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    gold = json.loads(GOLDEN.read_text())
    assert set(doc) == set(gold) and doc["params"] == gold["params"] and doc["grid"] == gold["grid"]
    worst = max(np.max(np.abs(np.array(doc["elements"][k]) - np.array(v))) for k, v in gold["elements"].items())
    assert worst <= 1e-12
    assert main(["povm", "--model", "tiny-2p2"]) == 2


# persistence


@pytest.fixture
def record():
    g = build_grid(2, 1, 8, 0.5, [1.0, 1.0])
    psi = StateVector.normalized(np.ones(g.shape), g)
    return sample_grw_trajectory(psi, Hamiltonian(g), GrwParams(1.0, 1.0), 3.0, snapshot_times=[1.0, 3.0],
                                 seed=6, run_index=2)


def test_event_log_round_trip(record, tmp_path):
    path = tmp_path / "events.jsonl"
    write_event_log(record, path)
    header, times, centers, labels = read_event_log(path)
    assert header["seed"] == 6 and header["run_index"] == 2 and header["grid"] == record.grid
    assert header["params"] == record.params
    assert np.array_equal(times, record.times)
    assert np.array_equal(centers, np.asarray(record.centers).reshape(-1, 1))
    assert np.array_equal(labels, record.labels)


def test_event_log_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format": "other", "version": 1}\n')
    with pytest.raises(BadArgument):
        read_event_log(bad)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(BadArgument):
        read_event_log(empty)


def test_snapshot_round_trip(record, tmp_path):
    path = tmp_path / "snaps.npz"
    save_snapshots(record, path)
    loaded = load_snapshots(path)
    assert sorted(loaded) == [1.0, 3.0]
    assert np.array_equal(loaded[3.0], record.snapshot(3.0).amplitudes)


def test_csv_writers(record, tmp_path):
    g = record.grid
    write_matter_csv([matter_density(record.snapshot(1.0), t=1.0)], tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "t,x0,value" and len(rows) == 1 + 8
    with pytest.raises(BadArgument):
        write_matter_csv([], tmp_path / "none.csv")
    psi = StateVector.normalized(np.ones(g.shape) + 0j, g)
    h = run_theory("BM", g, Hamiltonian(g), GrwParams(), InitialData(psi0=psi, q0="equilibrium"), 1.0, [0.0, 1.0])
    write_path_csv(h.path, tmp_path / "p.csv", run_id=7)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "run,t,particle,q0,flag" and len(lines) == 1 + 4 and lines[1].startswith("7,")
    write_outcomes_csv([(0, 1, 10.0, "dead", 0)], tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_text().splitlines()[1] == "0,1,10.0,dead,0"


def test_report_is_a_dataclass_not_a_test():
    assert TestReport.__test__ is False
