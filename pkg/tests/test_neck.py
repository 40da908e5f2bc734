import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neckforge.greens import FlatTorusCY, point_divisor_pairing, synthetic_pairing
from neckforge.neck import (
    NeckConfig,
    NeckError,
    NeckModel,
    ReducedProfile,
    build_neck,
    closedness_residual,
    cohomology_slope,
    connection_residual,
    end_potential_exponent,
    l0_profile,
    load_neck,
    matching_constants,
    n2_exactness,
    neck_chern_integral,
    neck_volume,
    neck_volume_closed_form,
    potential_residual,
    q0_profile,
    q_profile,
    smoothstep,
    t_boundaries,
)

L = math.sqrt(2 * math.pi)
PTS = np.array([[0.3 * L, 0.4 * L], [0.7 * L, 0.8 * L]])


def n2_config(T=10.0, **kw):
    torus = FlatTorusCY()
    pr = point_divisor_pairing(torus, PTS, modes=200)
    kw.setdefault("base_counts", 16)
    kw.setdefault("nz", 17)
    return NeckConfig(T, torus, pr, modes=200, **kw)


@pytest.fixture(scope="module")
def neck2():
    return build_neck(n2_config())


# --- profiles ----------------------------------------------------------------


@given(st.floats(0, 1))
def test_smoothstep_range_and_symmetry(t):
    s = float(smoothstep(t))
    assert 0.0 <= s <= 1.0
    assert s + float(smoothstep(1 - t)) == pytest.approx(1.0, abs=1e-14)


def test_smoothstep_flat_at_ends():
    e = 1e-4
    for t in (0.0, 1.0):
        d1 = (smoothstep(t + e) - smoothstep(t - e)) / (2 * e)
        assert abs(float(d1)) < 1e-6


@given(st.integers(1, 4), st.integers(-4, -1), st.floats(1.0, 5.0))
def test_l0_is_linear_outside_unit_interval(km, kp, z):
    assert float(l0_profile(z, km, kp)) == pytest.approx(kp * z)
    assert float(l0_profile(-z, km, kp)) == pytest.approx(-km * z)
    assert float(l0_profile(0.0, km, kp)) == 0.0


@given(st.integers(2, 4), st.floats(5, 50))
def test_q_agrees_with_unsmoothed_off_unit_interval(n, T):
    z = np.array([-3.0, -1.5, 1.5, 3.0])
    assert np.allclose(q_profile(n, T, z), q0_profile(n, T, z), rtol=1e-13)


@given(st.integers(2, 4), st.floats(4, 100), st.integers(1, 3), st.integers(-3, -1))
def test_boundaries_hit_target(n, T, km, kp):
    tm, tp = t_boundaries(n, T, km, kp)
    target = T ** ((n - 2) / n)
    assert T + km * tm == pytest.approx(target)
    assert T + kp * tp == pytest.approx(target)


def test_boundaries_reject_bad_degrees():
    with pytest.raises(NeckError):
        t_boundaries(2, 10.0, 1, 1)
    with pytest.raises(NeckError):
        q_profile(1, 10.0, 0.0)


def test_reduced_profile_n2_is_piecewise_linear():
    # for n = 2 the averaged h is exactly T + k_pm z
    P = ReducedProfile(2, 10.0, 2, -1)
    z = np.array([-4.0, -0.7, -0.1, 0.3, 0.9, 4.0])
    assert np.allclose(P.hbar(z), 10.0 + np.where(z > 0, -1, 2) * z, atol=1e-12)


@given(st.floats(3, 40))
def test_phibar_symmetric_oracle(T):
    # n = 2, k = (1, -1): phibar(T_-) = M(T_-) - M(T_+) with M(a) = T a^2/2 - |a|^3/3 even
    P = ReducedProfile(2, T)
    tm, tp = P.boundaries
    assert float(P.phibar(tp)) == 0.0
    a = T - 1.0
    assert float(P.M(a)) == pytest.approx(T * a * a / 2 - a**3 / 3, rel=1e-12)
    assert float(P.phibar(tm)) == pytest.approx(0.0, abs=1e-9 * T**3)


# hbar has slope kinks at z = -1, 0, 1; keep the central difference off them
off_kinks = st.floats(-3, 3).filter(lambda z: min(abs(z + 1), abs(z), abs(z - 1)) > 1e-4)


@given(st.integers(2, 4), st.floats(5, 40), off_kinks)
def test_antiderivative_of_hbar(n, T, z):
    P = ReducedProfile(n, T)
    e = 1e-5
    fd = (P.H(z + e) - P.H(z - e)) / (2 * e)
    assert float(fd) == pytest.approx(float(P.hbar(z)), rel=1e-6)
    fdm = (P.M(z + e) - P.M(z - e)) / (2 * e)
    assert float(fdm) == pytest.approx(z * float(P.hbar(z)), rel=1e-5, abs=1e-5)


# --- matching constants --------------------------------------------------------


@given(st.integers(2, 4), st.floats(10, 1000), st.integers(1, 4), st.integers(1, 4))
def test_matching_identities(n, T, d1, d2):
    c = matching_constants(n, T, d1, d2)
    assert c.balancing_defect() <= 1e-12
    assert c.t_relation_defect() <= 1e-12
    assert c.sandwich_constant() == pytest.approx(1.0 / (n * d1 * d2), abs=1e-9 * T**2)
    assert (c.T_minus, c.T_plus) == t_boundaries(n, T, d2, -d1)


def test_matching_t_underflows_gracefully():
    c = matching_constants(2, 100.0, 1, 1)
    assert c.log_t == pytest.approx(-(100.0**2 - 1) / 2)
    assert c.t_abs == 0.0
    assert json.loads(json.dumps(c.to_json()))["log_t"] == c.log_t


def test_matching_degree_checks():
    with pytest.raises(NeckError):
        matching_constants(2, 10.0, 0, 1)
    with pytest.raises(NeckError, match="k_-"):
        matching_constants(2, 10.0, 1, 2, k_minus=1)


# --- configuration --------------------------------------------------------------


def test_config_rejects_small_T_and_bad_fields():
    with pytest.raises(NeckError):
        n2_config(T=1.0)
    with pytest.raises(NeckError, match="smoothing"):
        n2_config(smoothing="cubic")
    with pytest.raises(NeckError, match="nodes"):
        n2_config(nz=2)


def test_config_json_roundtrip():
    cfg = n2_config()
    again = NeckConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again.T == cfg.T and again.n == 2 and again.exact
    m1, m2 = NeckModel(cfg), NeckModel(again)
    x = np.array([[1.0, 1.0]])
    z = np.array([2.0])
    assert np.array_equal(m1.h(x, z), m2.h(x, z))


# --- n = 2 neck ---------------------------------------------------------------------


def test_n2_error_vanishes(neck2):
    ex = n2_exactness(neck2)
    assert ex["max_err"] <= 1e-12
    assert ex["truncation_defect"] < 1e-3
    assert np.isnan(neck2.err[neck2.mask]).all()


def test_n2_sphere_flux(neck2):
    assert neck_chern_integral(neck2.model, [*PTS[0], 0.0], 0.3) == pytest.approx(-1.0, abs=1e-6)
    assert neck_chern_integral(neck2.model, [1.0, 1.0, 2.0], 0.3) == pytest.approx(0.0, abs=1e-6)


def test_cohomology_slope_follows_degrees(neck2):
    assert np.allclose(cohomology_slope(neck2.model, [-3.0, -0.5, 0.5, 3.0]), [1, 1, -1, -1], atol=1e-10)


def test_volume_matches_closed_form_and_frozen_value():
    # 4 pi^2 (T^2 - 1) at T = 20 for a square torus of area 2 pi
    assert neck_volume_closed_form(2, 20.0, 1, -1, 2 * math.pi) == pytest.approx(15751.8886241386, rel=1e-13)
    m = NeckModel(n2_config())
    assert neck_volume(m) == pytest.approx(neck_volume_closed_form(2, 10.0, 1, -1, 2 * math.pi), rel=1e-12)


def test_potential_derivative_is_z_h(neck2):
    m = neck2.model
    x = np.array([[1.0, 1.0], [2.0, 0.3]])
    for z in (2.0, -3.0, 0.5):
        zz = np.full(2, z)
        e = 1e-5
        fd = (m.potential(x, zz + e) - m.potential(x, zz - e)) / (2 * e)
        assert np.allclose(fd, z * m.h(x, zz), rtol=1e-6)


def test_local_residuals_converge(neck2):
    m = neck2.model
    c = [1.0, 1.0, 2.0]
    r1, r2 = potential_residual(m, c, 1e-2), potential_residual(m, c, 5e-3)
    assert 1.8 < math.log2(r1 / r2) < 2.3
    assert connection_residual(m, c) < 1e-6
    assert max(closedness_residual(m, c)) < 1e-6


def test_end_exponent_n2():
    m = NeckModel(n2_config(T=100.0))
    assert end_potential_exponent(m, "-") == pytest.approx(1.5, rel=0.01)
    assert end_potential_exponent(m, "+") == pytest.approx(1.5, rel=0.01)


def test_save_and_load_neck(neck2, tmp_path):
    path = neck2.save(tmp_path / "neck.bin")
    errf, cfg, meta = load_neck(path)
    assert cfg.T == neck2.config.T
    assert meta["masked_nodes"] == int(neck2.mask.sum())
    got = errf.coeffs[()]
    assert np.array_equal(got, np.nan_to_num(neck2.err, nan=0.0))


def test_positivity_failure_names_node():
    torus = FlatTorusCY(1, ((4 * L, 0.0), (0.0, L)))
    pr = point_divisor_pairing(torus, [[1.0, 1.2]], [8], modes=400)
    cfg = NeckConfig(2.0, torus, pr, modes=400, base_counts=(64, 16), nz=33)
    with pytest.raises(NeckError, match=r"positivity fails at node \("):
        build_neck(cfg)


def test_n3_error_small_and_decreasing():
    torus = FlatTorusCY(2)
    errs = []
    for T in (50.0, 200.0):
        cfg = NeckConfig(T, torus, synthetic_pairing(torus, modes=60, seed=1), modes=60, base_counts=4, nz=9)
        errs.append(build_neck(cfg).max_err())
    assert errs[1] < errs[0] < 0.5
