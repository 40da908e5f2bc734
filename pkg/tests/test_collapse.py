import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from neckforge.collapse import (
    CollapseError,
    diameter,
    diameter_closed_form,
    diameter_fit,
    limit_density,
    limit_density_integral,
    log_t_law,
    measure_profile,
    neck_length,
    neck_measure_compare,
    pushforward_density,
    reduced_volume,
    volume_scaling_report,
    x_of_xi,
    xi_density,
    xi_of_x,
)
from neckforge.greens import FlatTorusCY, point_divisor_pairing
from neckforge.neck import NeckConfig, NeckModel, neck_volume_closed_form

SWEEP = [50, 100, 200, 400, 800]
degrees = st.tuples(st.integers(2, 5), st.integers(1, 4), st.integers(1, 4))


@given(st.integers(2, 5), st.floats(5, 1000), st.integers(1, 3), st.integers(1, 3))
def test_unsmoothed_diameter_matches_closed_form(n, T, km, d1):
    assert diameter(n, T, km, -d1, smoothed=False) == pytest.approx(diameter_closed_form(n, T, km, -d1), rel=1e-10)


def test_smoothing_changes_diameter_only_near_center():
    for T in (20.0, 200.0):
        gap = abs(diameter(3, T) - diameter_closed_form(3, T))
        # the smoothing only acts on |z| <= 1, where sqrt of the metric is O(T^{1/n})
        assert gap < 2 * T ** (1 / 3)


@given(st.integers(2, 4), st.floats(5, 500), st.integers(1, 3), st.integers(1, 3))
def test_reduced_volume_matches_neck_volume(n, T, km, d1):
    assert reduced_volume(n, T, km, -d1, 2.0) == pytest.approx(neck_volume_closed_form(n, T, km, -d1, 2.0), rel=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_exponent_fits(n):
    assert diameter_fit(n, SWEEP)["exponent"] == pytest.approx((n + 1) / n, abs=0.01)
    assert log_t_law(n, SWEEP)["exponent"] == pytest.approx(0.5, abs=0.01)
    rep = volume_scaling_report(n, SWEEP)
    assert rep["diameter_normalized_volume"] == pytest.approx(-2 * n, abs=0.05)
    assert rep["volume_normalized_diameter"] == pytest.approx(1.0, abs=0.01)


def test_sweep_checks(caplog):
    with pytest.raises(CollapseError, match="at least 4"):
        diameter_fit(3, [50, 100, 200])
    with caplog.at_level(logging.WARNING):
        diameter_fit(3, [50, 100, 150, 200])
    assert "less than a decade" in caplog.text


# --- limit measure ---------------------------------------------------------------


@given(degrees, st.floats(0, 1))
def test_x_xi_inverse(deg, t):
    n, d1, d2 = deg
    xi = -1 / d2 + t * (1 / d1 + 1 / d2)
    assert float(xi_of_x(x_of_xi(xi, n, d1, d2), n, d1, d2)) == pytest.approx(xi, abs=1e-12)


@given(degrees)
def test_x_of_xi_endpoints(deg):
    n, d1, d2 = deg
    assert float(x_of_xi(-1 / d2, n, d1, d2)) == pytest.approx(0.0, abs=1e-14)
    assert float(x_of_xi(0.0, n, d1, d2)) == pytest.approx(d1 / (d1 + d2))
    assert float(x_of_xi(1 / d1, n, d1, d2)) == pytest.approx(1.0)


@given(degrees)
def test_pushforward_preserves_mass(deg):
    n, d1, d2 = deg
    mass = (1 / d1 + 1 / d2) / n
    xm = integrate.quad(lambda s: float(xi_density(s, n, d1, d2)), -1 / d2, 1 / d1, points=[0.0])[0]
    assert xm == pytest.approx(mass, rel=1e-10)
    prof = measure_profile(n, d2, -d1, d1, d2, samples=101)
    assert prof.normalization() == pytest.approx(1.0, rel=1e-9)


@given(degrees)
def test_pushforward_is_the_power_law(deg):
    n, d1, d2 = deg
    x = np.linspace(0.01, 0.99, 41)
    a = pushforward_density(x, n, d1, d2) / ((1 / d1 + 1 / d2) / n)
    b = limit_density(x, n, d1, d2) / limit_density_integral(n, d1, d2)
    assert np.allclose(a, b, rtol=1e-10)


@given(degrees)
def test_limit_density_integral_closed_form(deg):
    n, d1, d2 = deg
    j = d1 / (d1 + d2)
    f = lambda t: float(limit_density(t, n, d1, d2))
    num = integrate.quad(f, 0, j)[0] + integrate.quad(f, j, 1)[0]
    assert num == pytest.approx(limit_density_integral(n, d1, d2), rel=1e-9)


def test_density_continuous_at_junction_with_kink():
    prof = measure_profile(3, 2, -1, 1, 2, samples=1000)
    j = prof.junction
    e = 1e-9
    left = float(pushforward_density(j - e, 3, 1, 2))
    right = float(pushforward_density(j + e, 3, 1, 2))
    assert left == pytest.approx(right, rel=1e-6)
    assert prof.kink_location() == pytest.approx(j, abs=2e-3)


def test_measure_profile_degree_checks():
    with pytest.raises(CollapseError, match="d1 = -k_\\+"):
        measure_profile(3, 1, -1, 2, 1)
    with pytest.raises(CollapseError):
        measure_profile(1, 1, -1, 1, 1)


# --- comparison with a sampled neck ----------------------------------------------


def test_neck_length_and_slab_measure():
    torus = FlatTorusCY()
    L = math.sqrt(2 * math.pi)
    pr = point_divisor_pairing(torus, np.array([[0.3 * L, 0.4 * L], [0.7 * L, 0.8 * L]]), modes=200)
    m = NeckModel(NeckConfig(20.0, torus, pr, modes=200, base_counts=8, nz=17))
    assert neck_length(m, [1.5, 0.2]) == pytest.approx(diameter(2, 20.0), rel=1e-2)
    assert neck_measure_compare(m) < 1e-3
