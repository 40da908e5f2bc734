import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from neckforge import _kernels
from neckforge.greens import (
    BumpTestForm,
    DivisorPairing,
    FlatTorusCY,
    GreensCurrentSeries,
    GreensError,
    TruncationWarning,
    _ewald_setup,
    bessel_k,
    bessel_k0_series,
    bessel_k_derivatives,
    bessel_ode_residual,
    build_greens_current,
    distributional_residual,
    fd_laplacian_scalar,
    half_line_green_r3,
    half_line_green_r4,
    mode_solution,
    point_divisor_pairing,
    product_green,
    sphere_chern_integral,
    synthetic_pairing,
    tropical_far_field_slopes,
    tropical_green_matrix,
)

L = math.sqrt(2 * math.pi)
# scipy returns nan for subnormal orders, so keep the oracle away from them
orders = st.one_of(st.just(0.0), st.floats(1e-3, 3))
PTS = np.array([[0.3 * L, 0.4 * L], [0.7 * L, 0.8 * L]])


@pytest.fixture(scope="module")
def series():
    T = FlatTorusCY()
    return build_greens_current(T, point_divisor_pairing(T, PTS, modes=400), 400)


# --- Bessel functions ------------------------------------------------------


@given(orders, st.floats(0.05, 20))
def test_bessel_k_matches_scipy(alpha, x):
    assert bessel_k(alpha, x) == pytest.approx(special.kv(alpha, x), rel=1e-10)


@pytest.mark.parametrize("x", [0.01, 0.1, 0.5, 1.0, 2.0])
def test_bessel_k0_series_agrees_with_quadrature(x):
    assert bessel_k0_series(x) == pytest.approx(bessel_k(0.0, x), rel=1e-12)


@given(orders, st.floats(0.2, 10))
def test_bessel_derivatives_match_scipy(alpha, x):
    k0, k1, k2 = bessel_k_derivatives(alpha, x)
    assert k0 == pytest.approx(special.kv(alpha, x), rel=1e-10)
    assert k1 == pytest.approx(special.kvp(alpha, x, 1), rel=1e-10)
    assert k2 == pytest.approx(special.kvp(alpha, x, 2), rel=1e-10)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
def test_bessel_ode_residual_is_roundoff(alpha):
    assert max(bessel_ode_residual(alpha, x) for x in np.linspace(0.3, 9, 12)) < 1e-10


def test_bessel_rejects_nonpositive_argument():
    with pytest.raises(GreensError):
        bessel_k(0.0, 0.0)
    with pytest.raises(GreensError):
        bessel_k_derivatives(1.0, -1.0)


# --- half-line and tropical Green's functions -------------------------------


def test_half_line_closed_values():
    assert float(half_line_green_r3(np.array([0.0, 1.0, 0.0]))) == pytest.approx(math.log(2), abs=1e-15)
    assert float(half_line_green_r3(np.array([-3.0, 0.0, 0.0]))) == pytest.approx(-math.log(3), abs=1e-15)
    assert float(half_line_green_r4(np.array([0.0, 1.0, 0.0, 0.0]))) == pytest.approx(math.pi / 2, abs=1e-15)


def test_half_line_far_side_has_no_cancellation():
    # |x| - x.e is tiny on the near side; the rewritten form keeps full precision
    x = np.array([1e8, 1.0, 0.0])
    assert float(half_line_green_r3(x)) == pytest.approx(-math.log(0.5 / 1e8) + math.log(2), rel=1e-12)


def test_half_line_raises_on_the_line():
    with pytest.raises(GreensError):
        half_line_green_r3(np.array([2.0, 0.0, 0.0]))
    with pytest.raises(GreensError):
        half_line_green_r4(np.array([1.0, 0.0, 0.0, 0.0]))


def test_half_line_direction_covariance():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    x = rng.normal(size=(10, 3)) + 2.0
    e = np.array([1.0, 0.0, 0.0])
    assert np.allclose(half_line_green_r3(x @ Q.T, Q @ e), half_line_green_r3(x, e), atol=1e-12)


@pytest.mark.parametrize(
    "f,dim",
    [
        (half_line_green_r3, 3),
        (half_line_green_r4, 4),
        (lambda p: tropical_green_matrix(p)[..., 0, 1], 3),
        (lambda p: tropical_green_matrix(p)[..., 1, 1], 3),
    ],
)
def test_harmonic_off_the_legs(f, dim):
    rng = np.random.default_rng(7)
    x = rng.uniform(-2, 2, (15, dim))
    x[:, 1] = 0.6 + np.abs(x[:, 1])
    e1 = np.max(np.abs(fd_laplacian_scalar(f, x, 0.04)))
    e2 = np.max(np.abs(fd_laplacian_scalar(f, x, 0.02)))
    assert 1.8 < math.log2(e1 / e2) < 2.3


def test_tropical_matrix_symmetric_and_far_field_ratio():
    M = tropical_green_matrix(np.array([[1.0, 2.0, 0.5], [-1.0, 0.3, 2.0]]))
    assert np.allclose(M, np.swapaxes(M, -1, -2))
    dg, off = tropical_far_field_slopes((1, 2, 0.5))
    assert dg / off == pytest.approx(-3.0, rel=0.05)


# --- mode problem and pairings ---------------------------------------------


@given(st.floats(0.01, 10), st.floats(-3, 3))
def test_mode_solution_jump(lam, c):
    h = mode_solution(lam, c)
    e = 1e-6
    jump = (h(2 * e) - h(e)) / e - (h(-e) - h(-2 * e)) / e
    assert jump == pytest.approx(-c, abs=1e-4 * (1 + abs(c)))


def test_zero_mode_two_slope_branch():
    h = mode_solution(0.0, 3.0, k_minus=2, k_plus=-1)
    assert h(1.0) == pytest.approx(-1.0)
    assert h(-1.0) == pytest.approx(-2.0)
    with pytest.raises(GreensError):
        mode_solution(-1.0, 1.0)


def test_pairing_multiplicity_must_match_degree():
    T = FlatTorusCY()
    with pytest.raises(GreensError, match="multiplicity"):
        point_divisor_pairing(T, PTS[:1])


def test_pairing_sign_conventions():
    T = FlatTorusCY()
    p = synthetic_pairing(T, modes=20)
    with pytest.raises(GreensError):
        DivisorPairing(T, 1, 1, p.m, p.xi, p.theta, p.c, p.c0)
    with pytest.raises(GreensError, match="zero-mode"):
        DivisorPairing(T, 1, -1, p.m, p.xi, p.theta, p.c, p.c0 + 1.0)


def test_torus_area_must_be_integral():
    with pytest.raises(GreensError):
        FlatTorusCY(1, ((1.0, 0.0), (0.0, 1.0)))


def test_characters_come_in_pairs():
    ms, xi = FlatTorusCY(2).characters(40)
    assert np.array_equal(ms[0::2], -ms[1::2])
    norms = np.linalg.norm(xi, axis=1)
    assert np.all(np.diff(norms) >= -1e-12)


# --- kernels: numba and numpy agree -----------------------------------------


needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not importable")


@needs_numba
@given(st.integers(0, 2), st.integers(0, 2**16))
def test_mode_sum_backends_agree(zorder, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, L, (30, 2))
    z = rng.uniform(-2, 2, 30)
    _, xi = FlatTorusCY().characters(60)
    theta = rng.uniform(0, 2 * math.pi, len(xi))
    amp = rng.normal(size=len(xi))
    kappa = np.linalg.norm(xi, axis=1)
    a = _kernels.mode_sum(x, z, xi, theta, amp, kappa, zorder, use_numba=False)
    b = _kernels.mode_sum(x, z, xi, theta, amp, kappa, zorder, use_numba=True)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12 * max(1.0, np.max(np.abs(u))))


@needs_numba
def test_ewald_backends_agree():
    rng = np.random.default_rng(0)
    images, recip, area, alpha = _ewald_setup(FlatTorusCY())
    x = rng.uniform(0, L, (25, 2))
    z = rng.uniform(-0.5, 0.5, 25)
    a = _kernels.ewald_sum(x, z, PTS, np.ones(2), images, recip, area, alpha, use_numba=False)
    b = _kernels.ewald_sum(x, z, PTS, np.ones(2), images, recip, area, alpha, use_numba=True)
    for u, v in zip(a, b):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12)


# --- Green's current ----------------------------------------------------------


def test_ewald_agrees_with_mode_series_away_from_slice(series):
    x = np.array([[0.5, 0.9], [1.3, 2.0], [2.2, 0.1]])
    z = np.array([0.7, -1.1, 1.5])
    exact, grad = series.exact_scalar(x, z)
    assert np.allclose(exact, series.trace(x, z), atol=1e-8)
    assert np.allclose(grad[:, 2], series.trace(x, z, zorder=1), atol=1e-7)


def test_sphere_flux_counts_the_divisor(series):
    assert sphere_chern_integral(series, [*PTS[0], 0.0], 0.3) == pytest.approx(-1.0, abs=1e-8)
    assert sphere_chern_integral(series, [1.0, 1.0, 1.0], 0.3) == pytest.approx(0.0, abs=1e-8)


def test_distributional_mismatch_shrinks_with_modes():
    T = FlatTorusCY()
    pr = point_divisor_pairing(T, PTS, modes=3200)
    bump = BumpTestForm(tuple(PTS[0]), 0.0, 0.1)
    m1 = distributional_residual(build_greens_current(T, pr, 200), bump)["mismatch"]
    m2 = distributional_residual(build_greens_current(T, pr, 800), bump)["mismatch"]
    assert m2 < 0.5 * m1


def test_bump_too_wide_is_rejected(series):
    with pytest.raises(GreensError, match="boundary"):
        distributional_residual(series, BumpTestForm(tuple(PTS[0]), 0.0, 0.5))


def test_tail_bound_decreases_and_warns():
    T = FlatTorusCY()
    pr = point_divisor_pairing(T, PTS, modes=400)
    S = build_greens_current(T, pr, 40)
    b = S.tail_bound(np.array([0.25, 0.5, 1.0, 2.0]))
    assert np.all(np.diff(b) < 0)
    with pytest.warns(TruncationWarning):
        build_greens_current(T, pr, 40, tol=1e-12, z_eval=0.25)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_greens_current(T, pr, 40, tol=1.0, z_eval=2.0)
    with pytest.raises(GreensError, match="requested"):
        build_greens_current(T, pr, 10**6)


def test_series_json_roundtrip(series, tmp_path):
    path = tmp_path / "s.json"
    series.save(path)
    again = GreensCurrentSeries.load(path)
    x = np.array([[0.5, 0.9], [1.3, 2.0]])
    z = np.array([0.4, -0.8])
    assert np.array_equal(again.trace(x, z), series.trace(x, z))


def test_trace_slope_jump_for_asymmetric_degrees():
    T = FlatTorusCY()
    S = build_greens_current(T, point_divisor_pairing(T, PTS, [2, 1], 2, -1, modes=200), 200)
    x = T.grid(6).points()
    h = 1e-4
    cd = (S.trace(x, np.full(len(x), h)) - S.trace(x, np.full(len(x), -h))) / (2 * h)
    assert np.allclose(cd, 0.5, atol=1e-8)


# --- product Green's functions ------------------------------------------------


@pytest.mark.parametrize("m", [1, 2])
def test_product_green_is_harmonic_off_source(m):
    T = FlatTorusCY()
    G = product_green(m, T, modes=30)
    d = m + 2

    def f(p):
        return G(p[:, :m], p[:, m:])

    x = np.array([[1.2] + [0.4] * (m - 1) + [0.3, 1.1], [0.8] + [-0.5] * (m - 1) + [2.0, 0.2]])
    assert x.shape[1] == d
    e1 = np.max(np.abs(fd_laplacian_scalar(f, x, 0.04)))
    e2 = np.max(np.abs(fd_laplacian_scalar(f, x, 0.02)))
    assert 1.8 < math.log2(e1 / e2) < 2.3


def test_product_green_approaches_far_field():
    T = FlatTorusCY()
    G = product_green(1, T, modes=60)
    yt = T.grid(6).points()
    gaps = []
    for r in (2.0, 4.0):
        xf = np.full((len(yt), 1), r)
        gaps.append(np.max(np.abs(G(xf, yt) - G.far_field(xf))))
    assert gaps[1] / gaps[0] < math.exp(-0.9 * math.sqrt(T.first_eigenvalue()) * 2.0)


def test_product_green_argument_checks():
    T = FlatTorusCY()
    with pytest.raises(GreensError):
        product_green(0, T)
    with pytest.raises(GreensError, match="singular"):
        product_green(1, T, modes=4)(np.zeros((1, 1)), np.ones((1, 2)))


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("", "numba" if _kernels.HAVE_NUMBA else "numpy")])
def test_backend_flag(flag, expected):
    import os
    import subprocess
    import sys

    env = dict(os.environ, NECKFORGE_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from neckforge import _kernels; print(_kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
