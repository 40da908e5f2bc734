import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neckforge.discrete_exterior import (
    ChartGrid,
    FormError,
    FormField,
    MetricSample,
    fd_d,
    fd_ddc,
    hodge_laplacian,
    hodge_star,
    load_field,
    monge_ampere_ratio,
    partial,
    save_field,
    standard_complex_structure,
    wedge,
    wedge_power,
)

coef = st.floats(-2, 2, allow_nan=False)


def _grid3(n=9, h=0.1):
    return ChartGrid.uniform([0, 0, 0], [h * (n - 1)] * 3, [n] * 3)


def test_grid_validation():
    with pytest.raises(FormError):
        ChartGrid((0.0,), (1.0,), (0.3,), (True,))
    g = ChartGrid.uniform([0], [1], [4], periodic=[True])
    assert g.shape == (4,) and g.spacing[0] == 0.25


@given(st.lists(coef, min_size=10, max_size=10))
def test_dd_vanishes(c):
    # d d f = 0 exactly for the centered difference (shifts commute)
    g = _grid3()
    X, Y, Z = g.mesh()
    f = c[0] * X**3 + c[1] * X * Y * Z + c[2] * np.sin(Y) * Z + c[3] * np.cos(X + 2 * Z) + c[4] * Y**2
    dd = fd_d(fd_d(FormField.scalar(3, f, g)))
    assert dd.max_abs() < 1e-10


@given(st.lists(coef, min_size=6, max_size=6))
def test_wedge_graded_commutativity(c):
    a = FormField(4, 1, {(0,): c[0], (2,): c[1], (3,): c[2]})
    b = FormField(4, 1, {(1,): c[3], (2,): c[4], (0,): c[5]})
    assert (wedge(a, b) + wedge(b, a)).max_abs() < 1e-12
    assert wedge(a, a).max_abs() < 1e-12


@given(st.lists(coef, min_size=4, max_size=4))
def test_wedge_associative(c):
    a = FormField(4, 1, {(0,): c[0], (1,): c[1]})
    b = FormField(4, 1, {(2,): c[2], (1,): 1.0})
    e = FormField(4, 2, {(0, 3): c[3], (1, 2): 1.0})
    assert (wedge(wedge(a, b), e) - wedge(a, wedge(b, e))).max_abs() < 1e-12


@pytest.mark.parametrize("q", [0, 1, 2, 3])
def test_hodge_star_involution(q):
    # ** = (-1)^{q(m-q)} on a Riemannian 3-manifold, for a non-diagonal constant metric
    rng = np.random.default_rng(q)
    A = rng.normal(size=(3, 3))
    met = MetricSample(None, A @ A.T + 3 * np.eye(3))
    from neckforge.discrete_exterior import basis_indices

    f = FormField(3, q, {i: float(rng.normal()) for i in basis_indices(3, q)})
    ss = hodge_star(hodge_star(f, met), met)
    assert (ss - f * (-1) ** (q * (3 - q))).max_abs() < 1e-12


def test_ddc_of_norm_squared():
    # dd^c |z|^2 = 4 dx ^ dy with dd^c = 2 i d dbar (oracle: 2i * (-2i))
    g = ChartGrid.uniform([-1, -1], [1, 1], [9, 9])
    X, Y = g.mesh()
    w = fd_ddc(FormField.scalar(2, X**2 + Y**2, g))
    assert np.allclose(w.component((0, 1)), 4.0)


def test_standard_complex_structure_squares_to_minus_one():
    J = standard_complex_structure(6)
    assert np.allclose(J @ J, -np.eye(6))


def test_compact_laplacian_exact_on_cubics():
    # the compact stencil has no error on polynomials of degree <= 3
    g = _grid3()
    X, Y, Z = g.mesh()
    f = X**3 - 2 * X * Y**2 + Z**2 * Y + 4 * X * Z
    L = hodge_laplacian(FormField.scalar(3, f, g), MetricSample.flat(g)).value()
    exact = -(6 * X - 4 * X + 2 * Y)
    inner = (slice(1, -1),) * 3
    assert np.max(np.abs(L[inner] - exact[inner])) < 1e-9


def test_compact_vs_central_stencil_constants():
    # both second order; the central composition has four times the constant
    errs = {}
    for st_name in ("compact", "central"):
        e = []
        for h in (0.04, 0.02):
            g = ChartGrid.centered_box([0.3, 0.2, 0.1], h, 3)
            X, Y, Z = g.mesh()
            f = np.sin(X) * np.exp(Y) * np.cos(2 * Z)
            L = hodge_laplacian(FormField.scalar(3, f, g), MetricSample.flat(g), stencil=st_name).value()
            c = g.center_index()
            exact = 4 * math.sin(0.3) * math.exp(0.2) * math.cos(0.2)
            e.append(abs(L[c] - exact))
        errs[st_name] = e
        assert 3.6 < e[0] / e[1] < 4.4
    assert 3.5 < errs["central"][0] / errs["compact"][0] < 4.5


def test_laplacian_one_form_flat():
    # Delta (f dx) = (Delta f) dx on flat space
    g = ChartGrid.uniform([0, 0, 0], [1, 1, 1], [11, 11, 11])
    X, Y, Z = g.mesh()
    f = X**2 * Y + Z**3
    L = hodge_laplacian(FormField(3, 1, {(0,): f}, g), MetricSample.flat(g))
    inner = (slice(2, -2),) * 3
    assert np.max(np.abs(L.component((0,))[inner] + (2 * Y + 6 * Z)[inner])) < 1e-9
    assert max(np.max(np.abs(L.component((i,))[inner])) for i in (1, 2)) < 1e-9


def test_staggered_partials_compose_to_second_difference():
    g = ChartGrid.uniform([0], [2 * math.pi], [64], periodic=[True])
    x = g.axes()[0]
    f = np.sin(x)
    d2 = partial(partial(f, 0, g, "forward"), 0, g, "backward")
    h = g.spacing[0]
    assert np.allclose(d2, (np.roll(f, -1) - 2 * f + np.roll(f, 1)) / h**2)
    with pytest.raises(FormError):
        partial(f, 0, ChartGrid.uniform([0], [1], [4]), "sideways")


def test_monge_ampere_flat_pair():
    # flat C^2: omega = dx1^dy1 + dx2^dy2, Omega = dz1 ^ dz2 -> ratio 1
    om = FormField(4, 2, {(0, 1): 1.0, (2, 3): 1.0})
    dz1 = FormField(4, 1, {(0,): 1.0 + 0j, (1,): 1j})
    dz2 = FormField(4, 1, {(2,): 1.0 + 0j, (3,): 1j})
    assert abs(monge_ampere_ratio(om, wedge(dz1, dz2), 2).value() - 1) < 1e-14
    assert abs(wedge_power(om, 2).top() - 2.0) < 1e-14


def test_save_load_roundtrip(tmp_path):
    g = ChartGrid.uniform([0, 0], [1, 2], [5, 7], periodic=[False, True])
    X, Y = g.mesh()
    f = FormField(2, 1, {(0,): X * Y, (1,): np.cos(Y)}, g)
    save_field(f, tmp_path / "f.bin")
    h = load_field(tmp_path / "f.bin")
    assert h.grid == g
    assert (h - f).max_abs() == 0.0
