import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import random_state
from potheories.core import (DensityMatrix, GrwParams, Hamiltonian, StateVector, build_grid, collapse_weights,
                             harmonic_potential, offset_table)
from potheories.evolution import (MasterEquation, PureBatch, MixedBatch, center_probabilities, draw_schedule,
                                  ensemble_density_matrix, expected_flash_rate, kraus_tree, master_evolve,
                                  master_propagate, mgrwf_ensemble, mgrwf_trajectory, sample_categorical,
                                  sample_discrete_histories, sample_grw_ensemble, sample_grw_trajectory,
                                  schrodinger_propagate, branch_code)
from potheories.errors import BadArgument, CapExceeded, MissingSnapshot


def oscillator(points=16, spacing=0.5, omega=0.4, n=1):
    g = build_grid(n, 1, points, spacing, [1.0] * n)
    return g, Hamiltonian(g, harmonic_potential(g, omega))


def trace_norm(a):
    return np.sum(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T))))


# unitary propagation


def test_zero_time_is_identity(rng):
    g, h = oscillator()
    psi = random_state(rng, g)
    assert np.allclose(schrodinger_propagate(psi, h, 0.0).vector, psi.vector, atol=1e-14)


def test_eigenstate_acquires_phase():
    g, h = oscillator()
    e, v = h.eig
    psi = StateVector.normalized(v[:, 2].reshape(g.shape), g)
    out = schrodinger_propagate(psi, h, 1.3)
    overlap = np.vdot(psi.vector, out.vector)
    assert abs(abs(overlap) - 1) < 1e-10
    assert np.angle(overlap) == pytest.approx(np.angle(np.exp(-1j * e[2] * 1.3)), abs=1e-9)


def test_free_packet_dispersion():
    g = build_grid(1, 1, 128, 0.5, [1.0])
    x = g.coords()
    s0 = 2.0
    psi = StateVector.normalized(np.exp(-(x - 32.0) ** 2 / (4 * s0**2)), g)
    h = Hamiltonian(g)
    for t in (1.0, 2.0, 4.0):
        p = schrodinger_propagate(psi, h, t).probabilities()
        mean = np.sum(p * x)
        var = np.sum(p * (x - mean) ** 2)
        analytic = s0**2 * (1 + (t / (2 * s0**2)) ** 2)
        assert var == pytest.approx(analytic, rel=1e-3)


def test_density_matrix_conjugation(rng):
    g, h = oscillator()
    psi = random_state(rng, g)
    out = schrodinger_propagate(psi.projector(), h, 0.8)
    v = schrodinger_propagate(psi, h, 0.8).vector
    assert np.allclose(out.entries, np.outer(v, v.conj()), atol=1e-10)


def test_negative_time_rejected(rng):
    g, h = oscillator()
    with pytest.raises(BadArgument):
        schrodinger_propagate(random_state(rng, g), h, -1.0)


# GRW sampler


def test_rate_arithmetic():
    assert expected_flash_rate(1e23, 1e-15) == 1e8


def test_no_collapse_at_zero_rate(rng):
    g, h = oscillator()
    psi = random_state(rng, g)
    rec = sample_grw_trajectory(psi, h, GrwParams(0.0, 1.0), 3.0, [1.0, 3.0], seed=4)
    assert rec.n_events == 0
    for t in (1.0, 3.0):
        assert np.allclose(rec.snapshot(t).vector, schrodinger_propagate(psi, h, t).vector, atol=1e-12)


def test_same_seed_same_record_and_batch_independence(rng):
    g, h = oscillator(8, 1.0, 0.5, n=2)
    psi = random_state(rng, g)
    params = GrwParams(0.5, 1.0)
    batch = sample_grw_ensemble(psi, h, params, 4.0, [4.0], seed=9, n_runs=40, chunk_size=16)
    alone = sample_grw_trajectory(psi, h, params, 4.0, [4.0], seed=9, run_index=23)
    again = sample_grw_trajectory(psi, h, params, 4.0, [4.0], seed=9, run_index=23)
    for rec in (alone, again):
        assert np.array_equal(rec.times, batch[23].times)
        assert np.array_equal(rec.centers, batch[23].centers)
        assert np.array_equal(rec.labels, batch[23].labels)
    assert np.allclose(alone.snapshot(4.0).vector, batch[23].snapshot(4.0).vector, atol=1e-13)


def test_waiting_times_exponential():
    lam, n = 0.5, 2
    waits = []
    run = 0
    while len(waits) < 10_000:
        t, *_ = draw_schedule(17, run, n, lam, 50.0)
        waits.extend(np.diff(np.concatenate([[0.0], t])))
        run += 1
    _, p = stats.kstest(waits[:10_000], "expon", args=(0, 1 / (n * lam)))
    assert p > 0.01


def test_labels_uniform():
    labels = np.concatenate([draw_schedule(3, r, 3, 1.0, 20.0)[1] for r in range(300)])
    counts = np.bincount(labels, minlength=3)
    assert stats.chisquare(counts).pvalue > 0.01


@given(st.integers(0, 10**6), st.integers(1, 4), st.floats(0.01, 3.0), st.floats(0.0, 20.0))
def test_schedule_times_ordered_in_range(seed, n, lam, t_final):
    t, lab, cu, _ = draw_schedule(seed, 0, n, lam, t_final)
    assert np.all(np.diff(t) > 0) and np.all((t >= 0) & (t <= t_final))
    assert np.all((lab >= 0) & (lab < n)) and np.all((cu > 0) & (cu <= 1))


def test_forced_events_merged():
    t, lab, _, forced = draw_schedule(0, 0, 2, 0.0, 5.0, forced=[(2.5, 1), (1.0, 0)])
    assert list(t) == [1.0, 2.5] and list(lab) == [0, 1] and forced.all()
    with pytest.raises(BadArgument):
        draw_schedule(0, 0, 2, 0.0, 5.0, forced=[(6.0, 0)])


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8), st.floats(1e-9, 1.0))
def test_sample_categorical_inverse_cdf(weights, u):
    p = np.array(weights) + 1e-3
    idx = sample_categorical(p[None, :], np.array([u]))[0]
    cdf = np.cumsum(p) / p.sum()
    assert 0 <= idx < len(p)
    assert cdf[idx] >= u - 1e-12 and (idx == 0 or cdf[idx - 1] < u + 1e-12)


def test_collapse_centers_follow_weights():
    g = build_grid(1, 1, 4, 1.0, [1.0])
    psi = StateVector(np.sqrt([0.1, 0.2, 0.3, 0.4]), g)
    params = GrwParams(1.0, 0.8)
    recs = sample_grw_ensemble(psi, Hamiltonian.zero(g), params, 5.0, seed=2, n_runs=20_000, keep_states=False,
                               forced=[(1e-9, 0)])
    first = np.array([r.centers[0, 0] for r in recs])
    expected = collapse_weights(psi, 0, 0.8) * g.spacing
    assert stats.chisquare(np.bincount(first, minlength=4), expected * len(first)).pvalue > 0.01


# master equation


def test_master_zero_rate_is_unitary(rng):
    g, h = oscillator()
    psi = random_state(rng, g)
    out = master_propagate(psi.projector(), h, GrwParams(0.0, 1.0), 1.5)
    ref = schrodinger_propagate(psi.projector(), h, 1.5)
    assert np.max(np.abs(out.entries - ref.entries)) < 1e-9


@pytest.mark.parametrize("closed", [True, False])
def test_master_zero_hamiltonian_keeps_diagonal(rng, closed):
    g = build_grid(2, 1, 4, 1.0, [1.0, 1.0])
    rho = random_state(rng, g).projector().entries
    eq = MasterEquation(g, Hamiltonian.zero(g), GrwParams(0.7, 1.0), closed_form=closed)
    for r in eq.evolve(rho, [0.5, 2.0, 10.0]):
        assert np.max(np.abs(np.diagonal(r) - np.diagonal(rho))) <= 1e-8


def test_two_site_coherence_decay():
    g = build_grid(1, 1, 2, 1.0, [1.0])
    psi = StateVector.normalized(np.array([1.0, 1.0]), g)
    params = GrwParams(0.3, 1.0)
    g1 = offset_table(g, 1.0)
    gamma = sum(g.spacing * np.sqrt(g1[(0 - x) % 2] * g1[(1 - x) % 2]) for x in range(2))
    eq = MasterEquation(g, Hamiltonian.zero(g), params, closed_form=False)
    for t in (0.5, 2.0, 5.0):
        rk = eq.evolve(psi.projector().entries, [t])[0]
        ex = eq.evolve_exact(psi.projector().entries, [t])[0]
        assert abs(rk[0, 1]) == pytest.approx(0.5 * np.exp(-params.lam * (1 - gamma) * t), abs=1e-8)
        assert np.max(np.abs(rk - ex)) < 1e-8


def test_rk4_matches_superoperator_exponential(rng):
    g, h = oscillator(8, 1.0, 0.5)
    rho = random_state(rng, g).projector()
    params = GrwParams(0.4, 1.2)
    a = master_propagate(rho, h, params, 3.0)
    b = master_propagate(rho, h, params, 3.0, method="exact")
    assert np.max(np.abs(a.entries - b.entries)) < 1e-8


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 2.0), st.floats(0.3, 3.0))
def test_master_preserves_trace_hermiticity_positivity(seed, lam, sigma):
    g, h = oscillator(6, 1.0, 0.5)
    rho = random_state(np.random.default_rng(seed), g).projector()
    for r in master_evolve(rho, h, GrwParams(lam, sigma), [0.5, 2.0]):
        e = r.entries
        assert abs(np.trace(e).real - 1) < 1e-8
        assert np.max(np.abs(e - e.conj().T)) < 1e-8
        assert r.min_eigenvalue() >= -1e-7


def test_master_rejects_decreasing_times(rng):
    g, h = oscillator(6, 1.0, 0.5)
    eq = MasterEquation(g, h, GrwParams(0.1, 1.0))
    with pytest.raises(BadArgument):
        eq.evolve(random_state(rng, g).projector().entries, [2.0, 1.0])


# ensemble density matrix


def test_single_record_is_projector(rng):
    g, h = oscillator()
    rec = sample_grw_trajectory(random_state(rng, g), h, GrwParams(0.3, 1.0), 2.0, [2.0], seed=1)
    assert ensemble_density_matrix([rec], 2.0).is_pure()
    with pytest.raises(MissingSnapshot):
        ensemble_density_matrix([rec], 1.0)


def test_zero_rate_ensemble_is_exact(rng):
    g, h = oscillator()
    psi = random_state(rng, g)
    recs = sample_grw_ensemble(psi, h, GrwParams(0.0, 1.0), 2.0, [2.0], n_runs=7)
    ref = schrodinger_propagate(psi, h, 2.0).projector()
    assert np.max(np.abs(ensemble_density_matrix(recs, 2.0).entries - ref.entries)) < 1e-12


@pytest.mark.parametrize("m", [1000, 10_000])
def test_ensemble_approaches_master(m):
    g = build_grid(2, 1, 8, 1.0, [1.0, 1.0])
    h = Hamiltonian(g, harmonic_potential(g, 0.5))
    x = g.coords()
    a = np.exp(-(x - 3) ** 2 / 4 + 0.5j * x)
    b = np.exp(-(x - 5) ** 2 / 4)
    psi = StateVector.normalized(np.multiply.outer(a, b) + np.multiply.outer(b, a.real), g)
    params = GrwParams(0.2, 1.0)
    recs = sample_grw_ensemble(psi, h, params, 5.0, [5.0], seed=5, n_runs=m)
    gap = trace_norm(ensemble_density_matrix(recs, 5.0).entries - master_propagate(psi.projector(), h, params, 5.0).entries)
    assert gap <= 5 / np.sqrt(m)


# MGRWf


def test_mgrwf_pure_stays_rank_one_and_matches_grw(rng):
    g, h = oscillator(8, 1.0, 0.5)
    psi = random_state(rng, g)
    params = GrwParams(0.6, 1.0)
    dm = mgrwf_ensemble(psi.projector(), h, params, 3.0, [3.0], seed=8, n_runs=50)
    wf = sample_grw_ensemble(psi, h, params, 3.0, [3.0], seed=8, n_runs=50)
    for a, b in zip(dm, wf):
        assert a.snapshot(3.0).is_pure(1e-9)
        assert np.array_equal(a.centers, b.centers) and np.array_equal(a.times, b.times)
        v = b.snapshot(3.0).vector
        assert np.max(np.abs(a.snapshot(3.0).entries - np.outer(v, v.conj()))) < 1e-9


def test_mgrwf_flash_density_equals_collapse_weights(rng):
    g, h = oscillator(8, 1.0, 0.5)
    psi = random_state(rng, g)
    p_dm = center_probabilities(MixedBatch(g, h).probabilities(MixedBatch(g, h).init(psi.projector(), 1)),
                                g, np.array([0]), 1.3)
    assert np.max(np.abs(p_dm[0] - collapse_weights(psi, 0, 1.3) * g.spacing)) < 1e-12


def test_mgrwf_zero_rate_has_no_flashes(rng):
    g, h = oscillator(8, 1.0, 0.5)
    rec = mgrwf_trajectory(random_state(rng, g).projector(), h, GrwParams(0.0, 1.0), 5.0)
    assert rec.n_events == 0


def test_mgrwf_mixture_first_flash():
    g = build_grid(1, 1, 2, 1.0, [1.0])
    p1 = StateVector(np.array([1.0, 0.0]), g)
    p2 = StateVector.normalized(np.array([1.0, 1j]), g)
    rho = DensityMatrix.mixture([p1, p2], [0.5, 0.5])
    h = Hamiltonian.zero(g)
    params = GrwParams(1.0, 0.7)
    exact = 0.5 * (collapse_weights(p1, 0, 0.7) + collapse_weights(p2, 0, 0.7)) * g.spacing
    recs = mgrwf_ensemble(rho, h, params, 1.0, seed=6, n_runs=20_000, forced=[(1e-9, 0)])
    counts = np.bincount([r.centers[0, 0] for r in recs], minlength=2)
    assert stats.chisquare(counts, exact * len(recs)).pvalue > 0.01


@pytest.mark.slow
def test_mgrwf_pure_first_flash_two_sample():
    g, h = oscillator(4, 1.0, 0.7)
    psi = StateVector.normalized(np.array([1.0, 2.0, 0.5j, 1.0]), g)
    params = GrwParams(0.01, 0.8)
    dm = mgrwf_ensemble(psi.projector(), h, params, 0.5, seed=1, n_runs=100_000, forced=[(0.5, 0)],
                        chunk_size=4096)
    wf = sample_grw_ensemble(psi, h, params, 0.5, seed=2, n_runs=100_000, forced=[(0.5, 0)], keep_states=False)
    a = np.bincount([r.centers[0, 0] for r in dm], minlength=4)
    b = np.bincount([r.centers[0, 0] for r in wf], minlength=4)
    assert stats.chi2_contingency(np.stack([a, b]))[1] > 0.01


# Kraus tree


def test_kraus_tree_depth_zero(rng):
    g = build_grid(1, 1, 2, 1.0, [1.0])
    nodes = kraus_tree(random_state(rng, g), Hamiltonian(g), GrwParams(0.1, 1.0), 0, 0.5)
    assert len(nodes) == 1 and np.allclose(nodes[0].operator, np.eye(2))


def test_kraus_tree_one_step_probabilities(rng):
    g = build_grid(1, 1, 2, 1.0, [1.0])
    nodes = kraus_tree(random_state(rng, g), Hamiltonian(g), GrwParams(0.2, 1.0), 1, 0.5)
    assert len(nodes) == 3
    assert sum(n.probability for n in nodes) == pytest.approx(1.0, abs=1e-10)


@given(st.integers(1, 3), st.floats(0.0, 0.4), st.floats(0.3, 3.0), st.integers(1, 2))
def test_kraus_completeness_every_depth(depth, lam, sigma, n_particles):
    g = build_grid(n_particles, 1, 2, 1.0, [1.0] * n_particles)
    h = Hamiltonian(g, lambda c: 0.3 * c[0])
    rho = DensityMatrix(np.eye(g.dim) / g.dim, g)
    nodes = kraus_tree(rho, h, GrwParams(lam, sigma), depth, 0.5)
    total = sum(n.operator.conj().T @ n.operator for n in nodes)
    assert np.max(np.abs(total - np.eye(g.dim))) <= 1e-8


def test_kraus_cap():
    g = build_grid(2, 1, 4, 1.0, [1.0, 1.0])
    with pytest.raises(CapExceeded):
        kraus_tree(StateVector.normalized(np.ones(g.shape), g), Hamiltonian(g), GrwParams(0.1, 1.0), 6, 0.1)


def test_discrete_sampler_matches_tree():
    g = build_grid(1, 1, 2, 1.0, [1.0])
    h = Hamiltonian(g, lambda c: 0.4 * c[0])
    psi = StateVector.normalized(np.array([1.0, 0.6 + 0.3j]), g)
    params = GrwParams(0.2, 1.0)
    nodes = kraus_tree(psi, h, params, 3, 0.5)
    codes = sample_discrete_histories(psi, h, params, 3, 0.5, 10**6, seed=3)
    flat = codes[:, 0] + 3 * codes[:, 1] + 9 * codes[:, 2]
    counts = np.bincount(flat, minlength=27)
    n = len(flat)
    for node in nodes:
        key = sum(branch_code(g, b) * 3**s for s, b in enumerate(node.history))
        sd = np.sqrt(n * node.probability * (1 - node.probability))
        assert abs(counts[key] - n * node.probability) <= 4 * sd + 1e-9
