import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from conftest import random_state
from potheories.core import Configuration, DensityMatrix, GrwParams, Hamiltonian, StateVector, build_grid
from potheories.errors import BadArgument
from potheories.evolution import sample_grw_trajectory
from potheories.ontology import (bohm_velocity, bohm_velocity_batch, extract_flashes, integrate_path,
                                 integrate_paths, interp_weights, matter_density, matter_density_from_dm,
                                 mbm_current_divergence, mbm_velocity, sample_equilibrium_batch,
                                 sample_quantum_equilibrium)


def fourier_interp(values, x, spacing, derivative=False):
    """Band-limited periodic interpolant evaluated by an explicit mode sum (Nyquist as a cosine)."""
    n = len(values)
    coef = np.fft.fft(values) / n
    k = 2 * np.pi * np.fft.fftfreq(n, d=spacing)
    total = 0j
    for c, kk, j in zip(coef, k, range(n)):
        if n % 2 == 0 and j == n // 2:
            kn = np.pi / spacing
            total += c * (-kn * np.sin(kn * x) if derivative else np.cos(kn * x))
        else:
            total += c * (1j * kk * np.exp(1j * kk * x) if derivative else np.exp(1j * kk * x))
    return total


@pytest.fixture
def line():
    return build_grid(1, 1, 16, 0.5, [1.0])


# matter density


def test_matter_density_integrates_to_total_mass(rng):
    g = build_grid(2, 1, 6, 0.5, [1.0, 3.0])
    m = matter_density(random_state(rng, g))
    assert m.total_mass == pytest.approx(4.0, rel=1e-12)


def test_matter_density_matches_marginals(rng):
    g = build_grid(2, 1, 6, 0.5, [1.0, 3.0])
    psi = random_state(rng, g)
    p = psi.probabilities()
    expected = (1.0 * p.sum(axis=1) + 3.0 * p.sum(axis=0)) / g.cell_volume
    assert np.allclose(matter_density(psi).values, expected, atol=1e-14)


def test_matter_density_custom_weights_and_errors(rng):
    g = build_grid(2, 1, 4, 1.0, [1.0, 1.0])
    psi = random_state(rng, g)
    assert matter_density(psi, weights=[1.0, 0.0]).total_mass == pytest.approx(1.0)
    with pytest.raises(BadArgument):
        matter_density(psi, weights=[1.0])


def test_matter_density_from_dm_uses_diagonal_only(rng):
    g = build_grid(1, 1, 8, 1.0, [1.0], mixed=True)
    a, b = random_state(rng, g), random_state(rng, g)
    mix = DensityMatrix.mixture([a, b], [0.3, 0.7])
    field = matter_density_from_dm(mix)
    assert np.allclose(field.values, 0.3 * matter_density(a).values + 0.7 * matter_density(b).values)
    mask = np.zeros(g.site_shape, dtype=bool)
    mask[:4] = True
    assert field.mass_in(mask) + field.mass_in(~mask) == pytest.approx(field.total_mass)


# interpolation and velocities


@given(st.floats(0.0, 8.0, allow_nan=False))
def test_interp_weights_match_mode_sum(x):
    g = build_grid(1, 1, 16, 0.5, [1.0])
    vals = np.random.default_rng(7).normal(size=16)
    w = interp_weights(np.array([x]), g)[0]
    dw = interp_weights(np.array([x]), g, derivative=True)[0]
    assert w @ vals == pytest.approx(fourier_interp(vals, x, 0.5).real, abs=1e-10)
    assert dw @ vals == pytest.approx(fourier_interp(vals, x, 0.5, derivative=True).real, abs=1e-9)


def test_interp_weights_reproduce_grid_values(line):
    x = np.arange(16) * 0.5
    assert np.allclose(interp_weights(x, line), np.eye(16), atol=1e-12)


@pytest.mark.parametrize("mode", [1, 3, -2])
def test_plane_wave_velocity(line, mode):
    k = 2 * np.pi * mode / line.box
    psi = StateVector.normalized(np.exp(1j * k * line.coords().ravel()), line)
    v, flagged = bohm_velocity(psi, Configuration([1.37], line))
    assert not flagged
    assert v[0] == pytest.approx(k, rel=1e-10)


def test_bohm_velocity_mass_scaling():
    g = build_grid(1, 1, 16, 0.5, [2.5])
    k = 2 * np.pi / g.box
    psi = StateVector.normalized(np.exp(1j * k * g.coords().ravel()), g)
    assert bohm_velocity(psi, Configuration([0.3], g))[0][0] == pytest.approx(k / 2.5)


def test_bohm_velocity_matches_mode_sum(line, rng):
    psi = random_state(rng, line)
    x = 2.71
    val = fourier_interp(psi.amplitudes, x, 0.5)
    grad = fourier_interp(psi.amplitudes, x, 0.5, derivative=True)
    v, _ = bohm_velocity(psi, Configuration([x], line))
    assert v[0] == pytest.approx(np.imag(grad / val), rel=1e-9)


def test_real_state_has_zero_velocity(rng):
    g = build_grid(2, 1, 6, 1.0, [1.0, 1.0])
    psi = StateVector.normalized(rng.normal(size=g.shape), g)
    v, _ = bohm_velocity_batch(psi.amplitudes, rng.uniform(0, 6, size=(20, 2, 1)), g)
    assert np.max(np.abs(v)) < 1e-10


def test_batch_and_shared_amplitudes_agree(rng):
    g = build_grid(2, 1, 6, 1.0, [1.0, 2.0])
    psi = random_state(rng, g)
    q = rng.uniform(0, 6, size=(5, 2, 1))
    shared, _ = bohm_velocity_batch(psi.amplitudes, q, g)
    batched, _ = bohm_velocity_batch(np.broadcast_to(psi.amplitudes, (5,) + g.shape).copy(), q, g)
    assert np.allclose(shared, batched, atol=1e-12)


def test_node_is_flagged_and_speed_clamped(line):
    # sin has an exact node at x = 0
    psi = StateVector.normalized(np.sin(2 * np.pi * line.coords().ravel() / line.box) + 0j, line)
    v, flagged = bohm_velocity(psi, Configuration([0.0], line))
    assert flagged
    assert np.all(np.isfinite(v)) and abs(v[0]) <= np.pi / line.spacing


@given(st.integers(0, 2**31 - 1))
def test_mbm_velocity_of_pure_state_is_bohmian(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(2, 1, 4, 1.0, [1.0, 1.5], mixed=True)
    psi = random_state(rng, g)
    q = Configuration(rng.uniform(0, 4, size=2), g)
    vb, fb = bohm_velocity(psi, q)
    vm, fm = mbm_velocity(psi.projector(), q)
    if not fb:
        assert np.allclose(vb, vm, rtol=1e-8, atol=1e-8)


def test_mbm_divergence_of_plane_wave_mixture_vanishes():
    g = build_grid(1, 1, 8, 1.0, [1.0], mixed=True)
    waves = [StateVector.normalized(np.exp(2j * np.pi * m * g.coords().ravel() / g.box), g) for m in (1, 2)]
    rho = DensityMatrix.mixture(waves, [0.4, 0.6])
    dens, div = mbm_current_divergence(rho.entries, np.linspace(0, 8, 11)[:, None, None], g)
    assert np.allclose(dens, 1 / 8, atol=1e-12)
    assert np.max(np.abs(div)) < 1e-12


# path integration


def test_constant_velocity_paths_wrap(line):
    def source(t, q):
        return np.full_like(q, 1.5), np.zeros(len(q), dtype=bool)

    path = integrate_path(source, Configuration([7.0], line), [0.0, 1.0, 2.0])
    assert np.allclose(path.positions.ravel(), [7.0, 0.5, 2.0])
    assert path.n_flagged == 0
    assert path.at(1.0).positions[0, 0] == pytest.approx(0.5)
    with pytest.raises(BadArgument):
        path.at(0.5)


def test_rk4_exact_for_time_polynomial(line):
    # dq/dt = t^2 has q(t) = t^3 / 3, integrated exactly by RK4
    def source(t, q):
        return np.full_like(q, t**2), np.zeros(len(q), dtype=bool)

    pos, counts, steps = integrate_paths(source, np.array([[[0.0]]]), [0.0, 1.5], line, v_typ=1.0)
    assert pos[-1, 0, 0, 0] == pytest.approx(1.5**3 / 3, abs=1e-12)
    assert steps[0] >= 1 and counts.sum() == 0


def test_integrate_rejects_decreasing_times(line):
    with pytest.raises(BadArgument):
        integrate_paths(lambda t, q: (q * 0, np.zeros(len(q), bool)), np.zeros((1, 1, 1)), [1.0, 0.0], line)


def test_free_packet_moves_with_group_velocity():
    g = build_grid(1, 1, 64, 0.5, [1.0])
    x = g.coords().ravel()
    k0 = 2 * np.pi * 4 / g.box
    psi0 = StateVector.normalized(np.exp(-(x - 8.0) ** 2 / 4 + 1j * k0 * x), g)
    H = Hamiltonian(g)

    def source(t, q):
        return bohm_velocity_batch(H.propagate(psi0.amplitudes, t), q, g)

    path = integrate_path(source, Configuration([8.0], g), [0.0, 1.0])
    assert path.positions[-1, 0, 0] == pytest.approx(8.0 + k0, abs=1e-3)


# equilibrium sampling


def test_equilibrium_sampling_is_reproducible(line, rng):
    psi = random_state(rng, line)
    a = sample_quantum_equilibrium(psi, seed=3, run_index=5)
    b = sample_quantum_equilibrium(psi, seed=3, run_index=5)
    assert np.array_equal(a.positions, b.positions)
    batch = sample_equilibrium_batch(psi, 3, [4, 5, 6])
    assert np.array_equal(batch[1], a.positions)


def test_equilibrium_sampling_follows_born_rule(line, rng):
    psi = random_state(rng, line)
    q = sample_equilibrium_batch(psi, 11, range(20000), jitter=False)
    sites = np.rint(q.ravel() / line.spacing).astype(int) % 16
    counts = np.bincount(sites, minlength=16)
    assert stats.chisquare(counts, 20000 * psi.probabilities()).pvalue > 1e-3


def test_jitter_stays_inside_cell(line, rng):
    psi = random_state(rng, line)
    q = sample_equilibrium_batch(psi, 2, range(500))
    plain = sample_equilibrium_batch(psi, 2, range(500), jitter=False)
    gap = np.abs((q - plain + line.box / 2) % line.box - line.box / 2)
    assert np.all(gap <= line.spacing / 2 + 1e-12)


# flashes


def test_extract_flashes_from_trajectory():
    g = build_grid(2, 1, 8, 1.0, [1.0, 1.0])
    psi = StateVector.normalized(np.ones(g.shape), g)
    rec = sample_grw_trajectory(psi, Hamiltonian.zero(g), GrwParams(1.0, 1.0), 5.0, seed=2)
    fl = extract_flashes(rec)
    assert len(fl) == rec.n_events
    assert fl.count_in(0.0, 5.0) == len(fl)
    assert np.allclose(fl.positions, rec.centers * g.spacing)
    if len(fl):
        t0 = float(fl.times[0])
        assert fl.count_in(t0, t0) >= 1
        x, t, i = fl.flashes[0]
        assert t == t0 and i in (0, 1) and len(x) == 1
