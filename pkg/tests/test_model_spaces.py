import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neckforge.discrete_exterior import (
    ChartGrid,
    FormField,
    evaluate_on,
    monge_ampere_ratio,
    standard_complex_structure,
    wedge,
)
from neckforge.model_spaces import (
    CalabiParams,
    GHData,
    ModelError,
    TaubNutParams,
    calabi_ansatz,
    circle_generator,
    gh_monge_ampere,
    hopf_jacobian,
    hopf_project,
    lebrun_coordinates,
    model_connection,
    model_curvature,
    nonlinear_gh_residual,
    sphere_flux,
    taub_nut_complex_structure,
    taub_nut_forms,
    taub_nut_potential,
)

cplx = st.tuples(st.floats(-2, 2), st.floats(-2, 2)).map(lambda t: complex(*t)).filter(lambda c: abs(c) > 0.1)


@given(cplx, cplx, st.floats(0, 3))
def test_taub_nut_monge_ampere_is_one(u1, u2, lam):
    om, Om = taub_nut_forms(TaubNutParams(lam), np.array([u1]), np.array([u2]))
    assert abs(monge_ampere_ratio(om, Om, 2).value()[0] - 1) < 1e-9


@given(cplx, cplx, st.floats(0, 3))
def test_taub_nut_complex_structure(u1, u2, lam):
    J = taub_nut_complex_structure(TaubNutParams(lam), np.array([u1]), np.array([u2]))[0]
    assert np.allclose(J @ J, -np.eye(4), atol=1e-9)
    if lam == 0:
        assert np.allclose(J, standard_complex_structure(4), atol=1e-9)


def test_taub_nut_kahler_potential_fd():
    # omega = sqrt(-1) d dbar phi = (1/2) d(J dphi) for the Taub-NUT J, which varies in the u-chart
    rng = np.random.default_rng(3)
    for lam in (0.0, 0.7, 2.0):
        p = TaubNutParams(lam)
        x0 = rng.normal(size=4)
        phi = lambda x: taub_nut_potential(p, x[0] + 1j * x[1], x[2] + 1j * x[3])

        def beta(x, e=1e-4):
            g = np.array([(phi(x + e * v) - phi(x - e * v)) / (2 * e) for v in np.eye(4)])
            J = taub_nut_complex_structure(p, np.array([x[0] + 1j * x[1]]), np.array([x[2] + 1j * x[3]]))[0]
            return g @ J

        h = 1e-3
        D = np.array([(beta(x0 + h * v) - beta(x0 - h * v)) / (2 * h) for v in np.eye(4)])
        W = 0.5 * (D - D.T)
        om, _ = taub_nut_forms(p, np.array([x0[0] + 1j * x0[1]]), np.array([x0[2] + 1j * x0[3]]))
        M = om.as_matrix()[0]
        assert np.max(np.abs(W - M)) < 1e-5 * max(1.0, np.max(np.abs(M)))
        if lam == 0:
            # flat case: the standard structure gives the same form
            assert np.allclose(M[0, 1], 1.0) and np.allclose(M[2, 3], 1.0)


def test_lebrun_coordinates_reproduce_omega():
    rng = np.random.default_rng(0)
    u1 = rng.normal(size=8) + 1j * rng.normal(size=8)
    u2 = rng.normal(size=8) + 1j * rng.normal(size=8)
    p = TaubNutParams(1.0)
    X = np.stack([u1.real, u1.imag, u2.real, u2.imag], -1)
    errs = []
    for h in (1e-2, 5e-3):
        d = [{}, {}]
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            a = lebrun_coordinates(p, *(lambda Y: (Y[..., 0] + 1j * Y[..., 1], Y[..., 2] + 1j * Y[..., 3]))(X + e))
            b = lebrun_coordinates(p, *(lambda Y: (Y[..., 0] + 1j * Y[..., 1], Y[..., 2] + 1j * Y[..., 3]))(X - e))
            for s in range(2):
                d[s][(i,)] = (a[s] - b[s]) / (2 * h)
        _, Om = taub_nut_forms(p, u1, u2)
        errs.append((wedge(FormField(4, 1, d[0]), FormField(4, 1, d[1])) - Om).max_abs())
    assert 3.8 < errs[0] / errs[1] < 4.2


def test_taub_nut_rejects_origin_and_negative_lambda():
    with pytest.raises(ModelError):
        TaubNutParams(-1.0)
    with pytest.raises(ModelError):
        taub_nut_forms(TaubNutParams(0.0), np.array([0j]), np.array([0j]))


@given(cplx, cplx)
def test_hopf_identities(u1, u2):
    a, b = np.array([u1]), np.array([u2])
    gen = circle_generator(a, b)
    assert abs(evaluate_on(model_connection(a, b), [gen])[0] + 1) < 1e-12
    assert np.max(np.abs(hopf_jacobian(a, b)[0] @ gen[0])) < 1e-12
    y, z, r = hopf_project(a, b)
    assert abs(r[0] - math.sqrt(abs(y[0]) ** 2 + z[0] ** 2)) < 1e-12


def test_model_curvature_flux():
    for c, rad in (([0, 0, 0], 1.0), ([0.1, -0.2, 0.05], 0.7)):
        flux = sphere_flux(lambda p: model_curvature(p[:, 0] + 1j * p[:, 1], p[:, 2]), c, rad)
        assert abs(flux / (2 * math.pi) + 1) < 1e-10
    # no charge inside: zero flux
    flux = sphere_flux(lambda p: model_curvature(p[:, 0] + 1j * p[:, 1], p[:, 2]), [3, 0, 0], 1.0)
    assert abs(flux) < 1e-10


@pytest.mark.parametrize("n", [2, 3, 4])
def test_calabi_normalized_equation(n):
    rng = np.random.default_rng(n)
    xi = rng.uniform(0.05, 0.95, 20)
    w = rng.normal(size=(20, n - 1)) + 1j * rng.normal(size=(20, n - 1))
    cs = calabi_ansatz(CalabiParams(n), xi, w=w, arg=0.4)
    assert np.allclose(cs.ma_constant, 1 / (n * 2 ** (n - 1)), rtol=1e-12)
    # |d/d arg zeta|^2 = 2 z^{1-n} / n from the fibre term z^{1-n}/n sqrt(-1) ds ^ ds-bar
    assert np.allclose(cs.h_metric, 0.5 * n * cs.z ** (n - 1), rtol=1e-10)
    assert np.allclose(cs.h, cs.z ** (n - 1))


def test_calabi_rejects_bad_range():
    with pytest.raises(ModelError):
        calabi_ansatz(CalabiParams(2), np.array([1.2]))
    with pytest.raises(ModelError):
        CalabiParams(1)


def test_gh_residual_harmonic_n2_second_order():
    errs = []
    for N in (16, 32):
        L = 2 * math.pi
        g = ChartGrid.uniform([0, 0, 0], [L, L, 1], [N, N, N + 1], periodic=[True, True, False])
        X, _, Z = g.mesh()
        V = 2 + 0.3 * np.exp(Z) * np.cos(X)
        R, zs = nonlinear_gh_residual(GHData(g, FormField(3, 2, {(0, 1): V}, g), V))
        errs.append(R.max_abs())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_gh_rejects_nonpositive_h():
    g = ChartGrid.uniform([0, 0, 0], [1, 1, 1], [3, 3, 3])
    with pytest.raises(ModelError, match="node"):
        GHData(g, FormField(3, 2, {(0, 1): np.ones(g.shape)}, g), -np.ones(g.shape))


def test_gh_assembly_flat_is_calabi_yau():
    # constant h, omega~ = h omega_D, theta = 0: flat product, ratio 1 up to the GH scaling
    g = ChartGrid.uniform([0, 0, 0], [1, 1, 1], [4, 4, 4])
    h = 2.0 * np.ones(g.shape)
    data = GHData(g, FormField(3, 2, {(0, 1): h}, g), h, theta=FormField(3, 1, {(0,): np.zeros(g.shape)}, g))
    ma = gh_monge_ampere(data)
    assert np.allclose(ma, ma.flat[0]) and ma.flat[0] > 0
