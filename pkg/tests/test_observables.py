import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snlslab.noise import ConstantBump, GaussianBump, NoiseModel
from snlslab.observables import (
    ObservableRecord, ObservableSeries, check_bounds, energy, energy_rate_rhs, energy_rate_terms,
    fit_gronwall_constant, kinetic, mass, measure, potential, raw_energy_rate_terms,
)
from snlslab.spectral import ComplexField, Grid, random_band_limited


def test_constant_fields():
    g = Grid(2, 16, 3.0)
    one = ComplexField.constant(g, 1.0)
    V = g.volume
    assert mass(one, one) == pytest.approx(3 * V)
    assert kinetic(one, one) == pytest.approx(0.0, abs=1e-12)
    assert potential(one, one) == pytest.approx(V)
    assert energy(one, one) == pytest.approx(-2 * V)
    zero = ComplexField.zeros(g)
    assert mass(zero, zero) == 0.0


def test_plane_wave_kinetic():
    g = Grid(2, 32, 2 * np.pi)
    u = ComplexField.from_function(g, lambda x, y: np.exp(1j * (3 * x + 4 * y)))
    v = ComplexField.zeros(g)
    assert kinetic(u, v) == pytest.approx(25 * mass(u, v), rel=1e-12)
    assert potential(u, v) == 0.0


def test_homogeneity(rng):
    g = Grid(2, 16, 6.0)
    u, v = random_band_limited(g, rng), random_band_limited(g, rng)
    assert potential(2 * u, 2 * v) == pytest.approx(8 * potential(u, v), rel=1e-12)
    assert kinetic(2 * u, 2 * v) == pytest.approx(4 * kinetic(u, v), rel=1e-12)


def test_mass_invariant_under_conservative_phase(rng):
    g = Grid(2, 32, 16.0)
    m = NoiseModel(g, [GaussianBump(0.8, (0.5, 0.0), 1.0)])
    y, z = random_band_limited(g, rng), random_band_limited(g, rng)
    ph = m.noise_phase([1.7])
    assert mass(y * np.exp(1j * ph), z * np.exp(2j * ph)) == pytest.approx(mass(y, z), rel=1e-12)


def _model(d, n=64, L=32.0):
    g = Grid(d, n, L)
    return NoiseModel(g, [GaussianBump(0.7, (1.0,) * d, 2.0),
                          GaussianBump(-0.4, (-2.0,) + (0.5,) * (d - 1), 1.5)])


@pytest.mark.parametrize("d", [1, 2])
def test_cancellation_identity(d, rng):
    m = _model(d)
    for _ in range(10):
        y = random_band_limited(m.grid, rng, 8)
        z = random_band_limited(m.grid, rng, 8)
        B = rng.normal(size=2)
        raw = raw_energy_rate_terms(y, z, m, B)
        assert abs(raw[1]) > 1e-3  # the cubic gradient term exists before cancellation
        assert energy_rate_rhs(y, z, m, B) == pytest.approx(raw.sum(), rel=1e-8)


def test_rate_vanishes_without_noise_derivatives(rng):
    g = Grid(2, 32, 32.0)
    y, z = random_band_limited(g, rng), random_band_limited(g, rng)
    m = _model(2, 32, 32.0)
    assert energy_rate_rhs(y, z, m, [0.0, 0.0]) == 0.0
    assert not np.any(raw_energy_rate_terms(y, z, m, [0.0, 0.0]))
    flat = NoiseModel(g, [ConstantBump(0.9)], test_only=True)
    assert energy_rate_rhs(y, z, flat, [1.4]) == 0.0
    assert np.abs(raw_energy_rate_terms(y, z, flat, [1.4])).max() == 0.0


def test_rate_terms_scale_with_B(rng):
    m = _model(2, 32, 32.0)
    y, z = random_band_limited(m.grid, rng, 5), random_band_limited(m.grid, rng, 5)
    B = np.array([0.6, -1.1])
    t1, t2 = energy_rate_terms(y, z, m, B), energy_rate_terms(y, z, m, 2 * B)
    linear = [0, 1, 2, 3, 6]
    quadratic = [4, 5]
    assert np.allclose(t2[linear], 2 * t1[linear], rtol=1e-12, atol=1e-14)
    assert np.allclose(t2[quadratic], 4 * t1[quadratic], rtol=1e-12, atol=1e-14)


def test_measure_record_consistency(rng):
    g = Grid(2, 16, 8.0)
    u, v = random_band_limited(g, rng), random_band_limited(g, rng)
    r = measure(0.5, u, v)
    assert r.E == pytest.approx(r.K - 2 * r.P, rel=1e-12)
    assert r.M > 0 and np.isnan(r.dE_rhs)


def _series(E, K, M=1.0, dt=0.1):
    return ObservableSeries([ObservableRecord(i * dt, M, k, 0.5 * (k - e), e) for i, (e, k) in enumerate(zip(E, K))])


def test_gronwall_fit_and_envelope():
    s = _series([1.0, 1.0, 1.0], [2.0, 2.0, 2.0])
    assert fit_gronwall_constant(s) == 0.0
    assert check_bounds(s, 10.0, 0.0).envelope_violation is None
    # E rises by 0.3 at t=0.2 where ∫K = 0.4: smallest constant is 0.3 / 1.4
    s = _series([1.0, 1.1, 1.3], [2.0, 2.0, 2.0])
    C = fit_gronwall_constant(s)
    assert C == pytest.approx(0.3 / 1.4)
    assert check_bounds(s, 10.0, C).envelope_violation is None
    rep = check_bounds(s, 10.0, 0.9 * C)
    assert rep.envelope_violation == 2 and s.records[2].flag_gronwall


def test_coercivity_flags_spike():
    K = np.array([1.0, 1.0, 50.0, 1.0])
    E = np.array([0.5, 0.5, 0.5, 0.5])
    s = _series(E, K, M=0.25)
    rep = check_bounds(s, 1.0, 1.0)  # factor 1 - sqrt(0.25) = 0.5
    assert rep.threshold_applicable and rep.coercivity_violation == 2
    assert [r.flag_E2 for r in s.records] == [False, False, True, False]
    above = check_bounds(_series(E, K, M=2.0), 1.0, 1.0)
    assert not above.threshold_applicable and above.coercivity_violation is None
    assert "skipped" in above.notice


def test_series_csv_roundtrip(tmp_path):
    s = _series([1.0, 1.5], [2.0, 3.0])
    s.records[1].flag_E2 = True
    s.meta = {"seed": 4}
    s.to_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "# snlslab observables v1 seed=4"
    assert lines[1] == "t,M,K,P,E,dE_rhs,H1_sum,flag_E2,flag_gronwall"
    back = ObservableSeries.from_csv(tmp_path / "o.csv")
    assert back.records[1].flag_E2 and back.records[1].E == 1.5


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), B=st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_cancellation_property(seed, B):
    rng = np.random.default_rng(seed)
    m = _model(1)
    y, z = random_band_limited(m.grid, rng, 8), random_band_limited(m.grid, rng, 8)
    raw = raw_energy_rate_terms(y, z, m, B)
    scale = np.abs(raw).sum() + 1e-300
    assert abs(energy_rate_rhs(y, z, m, B) - raw.sum()) <= 1e-10 * scale
