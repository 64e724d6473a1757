import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperspod.errors import DegenerateBand, LengthMismatch, ZeroReflectanceDivisor
from hyperspod.hsicube import HyperCube
from hyperspod.specmodel import (
    SpectrumStats,
    estimate_stats,
    fluctuate,
    read_spectrum_csv,
    reflectance_to_radiance,
    simulate_spectrum,
    standardized_factors,
    write_spectrum_csv,
)


def test_fluctuate_hand_value():
    # (0.1*0.5 + 1) * ((0.2 + 0.4)*0.5 + 1) * 100 = 1.05 * 1.3 * 100
    out = fluctuate([100.0], [0.5], 0.2, [0.4], 0.1)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(136.5, abs=1e-12)


def test_zero_factors_return_baseline():
    base = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(fluctuate(base, [0.1, 0.2, 0.3], 0.0, np.zeros(3), 0.0), base)


def test_estimate_stats_hand_region():
    region = np.array([[1.0, 10.0], [3.0, 30.0]])
    st_ = estimate_stats(region)
    assert st_.mu.tolist() == [2.0, 20.0]
    assert st_.sigma.tolist() == [1.0, 10.0]
    assert st_.gamma.tolist() == [0.5, 0.5]
    # standardized factors are (-1, -1) and (1, 1): a = +-1, no residual
    assert st_.sigma_a == pytest.approx(1.0)
    assert np.allclose(st_.sigma_v, 0.0)


def test_cv_orientation_flag():
    region = np.array([[1.0, 10.0], [3.0, 30.0]])
    assert estimate_stats(region, "mu_over_sigma").gamma.tolist() == [2.0, 2.0]
    with pytest.raises(ValueError):
        estimate_stats(region, "sideways")


def test_estimate_from_cube_and_degenerate_band():
    rng = np.random.default_rng(0)
    data = rng.uniform(100, 200, (4, 4, 3))
    s = estimate_stats(HyperCube(data))
    assert s.bands == 3
    data[..., 1] = 150.0
    with pytest.raises(DegenerateBand):
        estimate_stats(HyperCube(data))


@pytest.mark.parametrize("sigma_a,sigma_v", [(0.8, 0.6), (0.3, 1.2), (1.5, 0.2)])
def test_statistical_round_trip(sigma_a, sigma_v):
    n_bands = 60
    rng = np.random.default_rng(2024)
    gamma = np.linspace(0.02, 0.08, n_bands)
    stats = SpectrumStats(np.full(n_bands, 1000.0), 1000.0 * gamma, gamma, sigma_a, np.full(n_bands, sigma_v))
    base = np.linspace(800.0, 1500.0, n_bands)
    draws = simulate_spectrum(stats, base, b=0.0, rng=rng, size=10_000)
    a, resid = standardized_factors(draws, base, gamma)
    # the band mean of v leaks into a: Var(a_hat) = sigma_a^2 + sigma_v^2 / N
    expected_a = np.sqrt(sigma_a**2 + sigma_v**2 / n_bands)
    assert a.std() == pytest.approx(expected_a, rel=0.05)
    assert np.allclose(resid.std(axis=0), sigma_v * np.sqrt(1 - 1 / n_bands), rtol=0.05)


def test_wide_area_factor_divides_out():
    rng = np.random.default_rng(1)
    stats = SpectrumStats.synthetic(10)
    base = np.full(10, 500.0)
    b = 0.2
    draws = simulate_spectrum(stats, base, b=b, rng=rng, size=50)
    again = simulate_spectrum(stats, base, b=0.0, rng=np.random.default_rng(1), size=50)
    assert np.allclose(draws / (b * stats.gamma + 1.0), again)


@given(st.floats(-0.3, 0.29), st.floats(0.001, 0.01), st.integers(0, 2**31))
def test_monotone_in_b(b, step, seed):
    stats = SpectrumStats.synthetic(8)
    base = np.linspace(100, 900, 8)
    lo = simulate_spectrum(stats, base, b=b, rng=np.random.default_rng(seed))
    hi = simulate_spectrum(stats, base, b=b + step, rng=np.random.default_rng(seed))
    local = lo / ((b * stats.gamma + 1) * base)
    positive = local > 0
    assert np.all(hi[positive] > lo[positive])


def test_b_drawn_in_range_when_omitted():
    gamma = np.linspace(0.02, 0.08, 4)
    stats = SpectrumStats(np.ones(4), gamma, gamma, 0.0, np.zeros(4))
    base = np.full(4, 100.0)
    rng = np.random.default_rng(3)
    bs = []
    for _ in range(2000):
        out = simulate_spectrum(stats, base, rng=rng)
        b = (out / base - 1.0) / gamma
        assert np.allclose(b, b[0])
        bs.append(b[0])
    bs = np.array(bs)
    assert bs.min() >= -0.3 and bs.max() <= 0.3
    assert bs.min() < -0.28 and bs.max() > 0.28


def test_simulate_rejects_wrong_length_and_nonfinite_b():
    stats = SpectrumStats.synthetic(4)
    with pytest.raises(LengthMismatch):
        simulate_spectrum(stats, np.ones(5))
    with pytest.raises(ValueError):
        simulate_spectrum(stats, np.ones(4), b=np.inf)


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=30), st.floats(2000, 3000))
def test_radiance_peak_equals_m_t(r_t, m_t):
    n = len(r_t)
    spec = reflectance_to_radiance(r_t, np.linspace(0.02, 0.06, n), np.linspace(400, 900, n), m_t)
    assert abs(spec.radiance_baseline.max() - m_t) <= 1e-6 * m_t
    assert np.allclose(spec.reflectance, r_t)


def test_radiance_is_linear_in_reflectance():
    r_w = np.array([0.02, 0.04, 0.05])
    s_w = np.array([400.0, 600.0, 800.0])
    spec = reflectance_to_radiance([0.1, 0.2, 0.3], r_w, s_w, 2500.0)
    raw = s_w / r_w * np.array([0.1, 0.2, 0.3])
    assert np.allclose(spec.radiance_baseline / raw, 2500.0 / raw.max())


def test_radiance_errors():
    with pytest.raises(ZeroReflectanceDivisor):
        reflectance_to_radiance([0.1, 0.2], [0.0, 0.1], [1.0, 1.0], 2000)
    with pytest.raises(LengthMismatch):
        reflectance_to_radiance([0.1], [0.1, 0.1], [1.0, 1.0], 2000)


def test_stats_json_and_csv_roundtrip(tmp_path):
    s = SpectrumStats.synthetic(5, sigma_a=0.7)
    back = SpectrumStats.from_json(s.to_json())
    assert back.sigma_a == 0.7 and np.array_equal(back.gamma, s.gamma)
    vals = np.array([1.5, 2.25, 1e-7])
    write_spectrum_csv(tmp_path / "s.csv", vals, [400.0, 500.0, 600.0])
    wl, v = read_spectrum_csv(tmp_path / "s.csv")
    assert wl.tolist() == [400.0, 500.0, 600.0] and v.tolist() == vals.tolist()


def test_seeded_draws_reproduce():
    stats = SpectrumStats.synthetic(6)
    base = np.arange(1.0, 7.0) * 100
    a = simulate_spectrum(stats, base, rng=np.random.default_rng(9), size=3)
    b = simulate_spectrum(stats, base, rng=np.random.default_rng(9), size=3)
    assert a.tobytes() == b.tobytes()
