import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neckforge.greens import FlatTorusCY, point_divisor_pairing, synthetic_pairing
from neckforge.neck import NeckConfig, NeckModel
from neckforge.weighted import (
    WeightError,
    WeightParams,
    _sample_points,
    comparability_sample,
    cylinder_compare,
    delta_cap,
    err_weighted_report,
    fr,
    log_weight,
    rescaled_model_compare,
    u_profile,
    weight_lemma_check,
    weight_lower_bound,
    weighted_c0_norm,
)

L = math.sqrt(2 * math.pi)
PTS = np.array([[0.3 * L, 0.4 * L], [0.7 * L, 0.8 * L]])
TORUS = FlatTorusCY()
PAIRING = point_divisor_pairing(TORUS, PTS, modes=200)


def n2_model(T):
    return NeckModel(NeckConfig(float(T), TORUS, PAIRING, modes=200, base_counts=16, nz=17))


# --- parameters -----------------------------------------------------------------


def test_default_params_are_admissible():
    for n in (2, 3, 4):
        p = WeightParams.default(n)
        assert p.validate(n) is p
        assert p.mu == pytest.approx((1 - 1 / n) * (p.nu + 2 + p.alpha))
        assert p.delta == pytest.approx(0.5 * math.sqrt(2 * math.pi) / (2 * n))


def test_delta_cap_formula():
    assert delta_cap(3, 2, -1, 4.0) == pytest.approx(2.0 / 9.0)


@pytest.mark.parametrize(
    "kw,msg",
    [
        ({"delta": 0.0}, "delta"),
        ({"delta": 0.1, "nu": 0.5}, "nu"),
        ({"delta": 0.1, "alpha": 1.0}, "alpha"),
        ({"delta": 0.1, "nu": -0.2, "alpha": 0.5}, "nu \\+ alpha"),
    ],
)
def test_params_reject_inadmissible(kw, msg):
    with pytest.raises(WeightError, match=msg):
        WeightParams(**kw)


def test_validate_checks_mu_and_delta_cap():
    with pytest.raises(WeightError, match="mu"):
        WeightParams(0.1, -0.5, 0.0, 0.25).validate(3)
    mu = WeightParams.mu_for(2, -0.5, 0.25)
    with pytest.raises(WeightError, match="below"):
        WeightParams(10.0, -0.5, mu, 0.25).validate(2)


def test_params_json_roundtrip():
    p = WeightParams.default(3)
    assert WeightParams.from_json(p.to_json()) == p
    with pytest.raises(WeightError, match="missing"):
        WeightParams.from_json({"delta": 0.1})


def test_error_exponent_value():
    p = WeightParams(0.1, -0.5, WeightParams.mu_for(3, -0.5, 0.25), 0.25)
    assert p.error_exponent(3) == pytest.approx(-2 - 0.25 / 3 + (2 / 3) * 1.75)


# --- scales ----------------------------------------------------------------------------


@given(st.floats(8, 500), st.floats(0, 2), st.floats(0, 2))
def test_fr_monotone(T, a, b):
    lo, hi = sorted((a, b))
    assert float(fr(lo, T)) <= float(fr(hi, T)) + 1e-15


@given(st.floats(8, 500))
def test_fr_regimes(T):
    assert float(fr(0.5 / T, T)) == pytest.approx(1 / T)
    assert float(fr(1.0, T)) == 1.0
    r = np.linspace(2 / T, 0.25, 7)
    assert np.allclose(fr(r, T), r)


def test_fr_needs_large_T():
    with pytest.raises(WeightError):
        fr(0.1, 4.0)


def test_u_profile_vanishes_at_center_and_grows_outward():
    m = n2_model(20)
    assert float(u_profile(m, 0.0)) == pytest.approx(0.0, abs=1e-12)
    tm, tp = m.profile.boundaries
    assert float(u_profile(m, tm)) > 0 and float(u_profile(m, tp)) > 0


def test_weighted_norm_skips_masked_nodes():
    vals = np.array([1.0, np.nan, 2.0])
    lr = np.log(np.array([3.0, 1e10, 1.0]))
    assert weighted_c0_norm(vals, lr) == pytest.approx(3.0)
    assert weighted_c0_norm([np.nan], [0.0]) == 0.0


# --- weight lemma ----------------------------------------------------------------------


@settings(max_examples=15)
@given(st.floats(8, 300), st.integers(0, 2))
def test_weight_lemma_holds_on_grid(T, k):
    m = n2_model(T)
    p = WeightParams.default(2)
    x, z = _sample_points(m, 8, 65)
    res = weight_lemma_check(m, p, k, x, z)
    assert res["pass"], res
    assert res["regime"] == ("a>=0" if p.nu + k + p.alpha >= 0 else "a<0")


def test_weight_lower_bound_regimes():
    p = WeightParams.default(3)
    a0 = p.nu + p.alpha
    a1 = a0 + 1
    assert weight_lower_bound(3, 100.0, 0, p) == pytest.approx((a0 / 3 + p.mu) * math.log(100))
    assert weight_lower_bound(3, 100.0, 1, p) == pytest.approx(((1 / 3 - 1) * a1 + p.mu) * math.log(100))


def test_log_weight_composition():
    m = n2_model(30)
    p = WeightParams.default(2)
    x = np.array([[1.0, 1.0]])
    z = np.array([2.0])
    diff = log_weight(m, x, z, 1, p) - log_weight(m, x, z, 0, p)
    from neckforge.weighted import log_scale_s

    assert np.allclose(diff, log_scale_s(m, x, z))


# --- model comparisons ---------------------------------------------------------------


def test_rescaled_taub_nut_deviation_halves():
    d = [rescaled_model_compare(n2_model(T), 0.5)["deviation"] for T in (20, 40, 80)]
    assert d[1] / d[0] == pytest.approx(0.5, rel=0.1)
    assert d[2] / d[1] == pytest.approx(0.5, rel=0.1)


def test_cylinder_deviation_decays_like_inverse_T():
    d = [cylinder_compare(n2_model(T), 3.0) for T in (20, 40, 80)]
    slope = np.polyfit(np.log([20, 40, 80]), np.log(d), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.15)


def test_rescaled_compare_needs_point_divisor():
    torus = FlatTorusCY(2)
    m = NeckModel(NeckConfig(50.0, torus, synthetic_pairing(torus, modes=20), modes=20, base_counts=4, nz=5))
    with pytest.raises(Exception, match="n = 2"):
        rescaled_model_compare(m, 0.5)


def test_comparability_is_T_stable():
    p = WeightParams.default(2)
    for T in (20, 80):
        c = comparability_sample(n2_model(T), p, pairs=2000)
        assert 1 / 8 <= c["s_ratio_min"] and c["s_ratio_max"] <= 8
        assert 1 / 8 <= c["rho_ratio_min"] and c["rho_ratio_max"] <= 8


def test_comparability_is_reproducible():
    p = WeightParams.default(2)
    m = n2_model(20)
    assert comparability_sample(m, p, pairs=500, seed=3) == comparability_sample(m, p, pairs=500, seed=3)


# --- weighted error report (n = 3) -----------------------------------------------


def test_err_report_slopes():
    torus = FlatTorusCY(2)
    cfg = NeckConfig(50.0, torus, synthetic_pairing(torus, modes=60, seed=1), modes=60, base_counts=8, nz=33)
    p = WeightParams.default(3)
    rep = err_weighted_report(cfg, p, [50, 100, 200], counts=4, nz=33)
    assert rep["plain_slope"] == pytest.approx(-2.0, abs=0.1)
    assert rep["weighted_slope"] <= rep["target"] + 0.1
    assert len(rep["rows"]) == 3
