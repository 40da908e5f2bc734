"""Closed-form model geometries: Hopf reduction of C^2, the Taub-NUT family,
the Calabi model space and the non-linear Gibbons-Hawking operator.

Real coordinates on C^2 are ``(Re u1, Im u1, Re u2, Im u2)``; on the
quotient R^3 they are ``(Re y, Im y, z)``.  Every form returned here is a
pointwise :class:`FormField` (``grid=None``) whose coefficient arrays
broadcast over the sample shape of the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discrete_exterior import (
    ChartGrid,
    FormError,
    FormField,
    evaluate_on,
    fd_d,
    monge_ampere_ratio,
    partial,
    pullback,
    standard_complex_structure,
    wedge,
    wedge_power,
)


class ModelError(ValueError):
    pass


def _c(u):
    return np.asarray(u, dtype=complex)


def _complex_differentials(u1, u2):
    """du1, du2 as complex 1-forms on R^4."""
    shape = np.broadcast_shapes(np.shape(u1), np.shape(u2))
    one = np.ones(shape)
    zero = np.zeros(shape)
    du1 = FormField(4, 1, {(0,): one + 0j, (1,): 1j * one, (2,): zero + 0j, (3,): zero + 0j})
    du2 = FormField(4, 1, {(0,): zero + 0j, (1,): zero + 0j, (2,): one + 0j, (3,): 1j * one})
    return du1, du2


# ---------------------------------------------------------------------------
# Hopf reduction
# ---------------------------------------------------------------------------


def hopf_project(u1, u2):
    """(u1, u2) -> (y, z, r) with y = u1 u2, z = (|u1|^2-|u2|^2)/2, r = |u|^2/2."""
    u1, u2 = _c(u1), _c(u2)
    a, b = np.abs(u1) ** 2, np.abs(u2) ** 2
    return u1 * u2, 0.5 * (a - b), 0.5 * (a + b)


def hopf_jacobian(u1, u2):
    """Jacobian d(Re y, Im y, z)/d(x1, y1, x2, y2), shape (..., 3, 4)."""
    u1, u2 = _c(u1), _c(u2)
    x1, y1, x2, y2 = u1.real, u1.imag, u2.real, u2.imag
    shape = np.broadcast_shapes(u1.shape, u2.shape)
    jac = np.zeros(shape + (3, 4))
    # y = (x1 x2 - y1 y2) + i (x1 y2 + y1 x2)
    jac[..., 0, :] = np.stack(np.broadcast_arrays(x2, -y2, x1, -y1), axis=-1)
    jac[..., 1, :] = np.stack(np.broadcast_arrays(y2, x2, y1, x1), axis=-1)
    jac[..., 2, :] = np.stack(np.broadcast_arrays(x1, y1, -x2, -y2), axis=-1)
    return jac


def circle_generator(u1, u2):
    """Generator of (u1, u2) -> (e^{-it} u1, e^{it} u2) as a real vector field."""
    u1, u2 = _c(u1), _c(u2)
    v1 = -1j * u1
    v2 = 1j * u2
    return np.stack(np.broadcast_arrays(v1.real, v1.imag, v2.real, v2.imag), axis=-1)


def model_connection(u1, u2) -> FormField:
    """Connection 1-form Theta_0 on C^2 minus the origin."""
    u1, u2 = _c(u1), _c(u2)
    _, _, r = hopf_project(u1, u2)
    if np.any(r == 0):
        raise ModelError("connection undefined on fixed locus")
    x1, y1, x2, y2 = u1.real, u1.imag, u2.real, u2.imag
    s = 1.0 / (2.0 * r)
    coeffs = np.broadcast_arrays(-y1 * s, x1 * s, y2 * s, -x2 * s)
    return FormField(4, 1, {(i,): c for i, c in enumerate(coeffs)})


def model_curvature(y, z) -> FormField:
    """Curvature 2-form Upsilon_0 on R^3 minus the origin (equals *d(1/2r))."""
    y = _c(y)
    z = np.asarray(z, dtype=float)
    r = np.sqrt(np.abs(y) ** 2 + z**2)
    if np.any(r == 0):
        raise ModelError("curvature undefined at the origin")
    c = -1.0 / (2.0 * r**3)
    y1, y2 = y.real, y.imag
    return FormField(3, 2, {(0, 1): c * z, (0, 2): -c * y2, (1, 2): c * y1})


def sphere_flux(two_form_fn, center, radius, n_theta=64, n_phi=128) -> float:
    """Integral of a 2-form on R^3 over a round sphere (outward orientation).

    ``two_form_fn(points)`` takes an (N, 3) array and returns a 3-dimensional
    2-form sampled at those points.  Gauss-Legendre in cos(theta), trapezoid
    in phi.
    """
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    CT, PH = np.meshgrid(ct, phi, indexing="ij")
    ST = np.sqrt(1.0 - CT**2)
    nrm = np.stack([ST * np.cos(PH), ST * np.sin(PH), CT], axis=-1)
    pts = np.asarray(center, dtype=float) + radius * nrm
    form = two_form_fn(pts.reshape(-1, 3))
    # flux of the dual vector: (F_12, -F_02, F_01) . n dA
    f01 = form.component((0, 1)).reshape(CT.shape)
    f02 = form.component((0, 2)).reshape(CT.shape)
    f12 = form.component((1, 2)).reshape(CT.shape)
    integrand = f12 * nrm[..., 0] - f02 * nrm[..., 1] + f01 * nrm[..., 2]
    return float(np.sum(integrand * wt[:, None]) * (2.0 * math.pi / n_phi) * radius**2)


# ---------------------------------------------------------------------------
# Taub-NUT family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaubNutParams:
    lam: float = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ModelError("Taub-NUT parameter must be non-negative")


def _dy(u1, u2):
    du1, du2 = _complex_differentials(u1, u2)
    return du1 * _c(u2) + du2 * _c(u1)


def _dz(u1, u2):
    u1, u2 = _c(u1), _c(u2)
    c = np.broadcast_arrays(u1.real, u1.imag, -u2.real, -u2.imag)
    return FormField(4, 1, {(i,): v for i, v in enumerate(c)})


def taub_nut_forms(p: TaubNutParams, u1, u2):
    """Kahler form and holomorphic volume form of the Taub-NUT metric."""
    u1, u2 = _c(u1), _c(u2)
    _, _, r = hopf_project(u1, u2)
    if np.any(r == 0):
        raise ModelError("fibered chart undefined at the origin; use taub_nut_potential")
    V = 1.0 / (2.0 * r) + p.lam
    dy = _dy(u1, u2)
    dz = _dz(u1, u2)
    theta = model_connection(u1, u2)
    base = (wedge(dy, dy.conj()) * (0.5j)).real
    omega = base * V + wedge(dz, theta)
    du1, du2 = _complex_differentials(u1, u2)
    Omega = wedge(du1, du2) + wedge(dz * (p.lam + 0j), dy)
    return omega, Omega


def taub_nut_potential(p: TaubNutParams, u1, u2):
    """phi = |u|^2/2 + (lam/4)(|u1|^4 + |u2|^4); omega = sqrt(-1) d dbar phi."""
    a = np.abs(_c(u1)) ** 2
    b = np.abs(_c(u2)) ** 2
    return 0.5 * (a + b) + 0.25 * p.lam * (a**2 + b**2)


def taub_nut_complex_structure(p: TaubNutParams, u1, u2):
    """Complex structure of the Taub-NUT metric on covectors in the u-chart.

    Built on the coframe (Re dy, Im dy, dz, Theta_0) with J dRe y = dIm y and
    J dz = V^{-1} Theta_0, then rewritten in the basis (dx1, dy1, dx2, dy2).
    """
    u1, u2 = _c(u1), _c(u2)
    _, _, r = hopf_project(u1, u2)
    V = 1.0 / (2.0 * r) + p.lam
    dy = _dy(u1, u2)
    dz = _dz(u1, u2)
    th = model_connection(u1, u2)
    shape = np.broadcast_shapes(u1.shape, u2.shape)
    E = np.zeros(shape + (4, 4))
    for j in range(4):
        E[..., 0, j] = np.real(dy.component((j,)))
        E[..., 1, j] = np.imag(dy.component((j,)))
        E[..., 2, j] = dz.component((j,))
        E[..., 3, j] = th.component((j,))
    M = np.zeros(shape + (4, 4))
    M[..., 0, 1] = 1.0
    M[..., 1, 0] = -1.0
    M[..., 2, 3] = 1.0 / V
    M[..., 3, 2] = -V
    return np.linalg.solve(E, M @ E)


def lebrun_coordinates(p: TaubNutParams, u1, u2):
    """Holomorphic coordinates (eta_+, eta_-) of the Taub-NUT complex structure."""
    u1, u2 = _c(u1), _c(u2)
    a, b = np.abs(u1) ** 2, np.abs(u2) ** 2
    s = 0.5 * p.lam * (a - b)
    return u1 * np.exp(s), u2 * np.exp(-s)


# ---------------------------------------------------------------------------
# Calabi model space over a flat base
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalabiParams:
    n: int = 2
    z_range: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self):
        if self.n < 2:
            raise ModelError("Calabi model needs n >= 2")
        if not 0 < self.z_range[0] < self.z_range[1]:
            raise ModelError("z range must be a positive interval")


@dataclass
class CalabiSample:
    omega: FormField
    Omega: FormField
    z: np.ndarray
    omega_tilde: FormField
    h: np.ndarray
    h_metric: np.ndarray
    ma_constant: np.ndarray


def flat_base_kahler(k: int, shape=()) -> FormField:
    """omega_D = sum dx_a ^ dy_a on C^k, sampled with a given shape."""
    one = np.ones(shape)
    return FormField(2 * k, 2, {(2 * a, 2 * a + 1): one for a in range(k)})


def flat_base_volume(k: int, shape=()) -> FormField:
    """Omega_D = dw_1 ^ ... ^ dw_k on C^k."""
    one = np.ones(shape)
    out = FormField.scalar(2 * k, one + 0j)
    for a in range(k):
        dw = FormField(2 * k, 1, {(2 * a,): one + 0j, (2 * a + 1,): 1j * one})
        out = wedge(out, dw)
    return out


def calabi_ansatz(p: CalabiParams, xi_norm, w=None, arg: float = 0.0) -> CalabiSample:
    """Sample the Calabi model (omega, Omega) at |xi| = xi_norm over base point w.

    Local chart: fibre coordinate zeta and base coordinates w, with hermitian
    norm |xi|^2 = |zeta|^2 exp(-|w|^2/2) whose curvature is omega_D.  Real
    coordinates are (Re zeta, Im zeta, Re w_1, Im w_1, ...).
    """
    n = p.n
    k = n - 1
    xi = np.asarray(xi_norm, dtype=float)
    if np.any(xi <= 0) or np.any(xi >= 1):
        raise ModelError("xi_norm must lie in (0, 1)")
    shape = xi.shape
    w = np.zeros(shape + (k,), dtype=complex) if w is None else np.broadcast_to(_c(w), shape + (k,))
    w2 = np.sum(np.abs(w) ** 2, axis=-1)
    zeta = xi * np.exp(w2 / 4.0) * np.exp(1j * arg)
    s = -np.log(xi**2)
    z = s ** (1.0 / n)
    m = 2 * n
    one = np.ones(shape)
    zero = np.zeros(shape)

    def dcoord(a):
        c = {(i,): zero + 0j for i in range(m)}
        c[(2 * a,)] = one + 0j
        c[(2 * a + 1,)] = 1j * one
        return FormField(m, 1, c)

    dzeta = dcoord(0)
    dws = [dcoord(a + 1) for a in range(k)]
    ds = dzeta * (-1.0 / zeta)
    for a in range(k):
        ds = ds + dws[a] * (0.5 * np.conj(w[..., a]))
    omega_D = FormField.zeros(m, 2, shape)
    for a in range(k):
        omega_D = omega_D + (wedge(dws[a], dws[a].conj()) * 0.5j).real
    fibre = (wedge(ds, ds.conj()) * 1j).real
    omega = omega_D * z + fibre * (z ** (1 - n) / n)
    Omega = dzeta * (1j / zeta)
    for a in range(k):
        Omega = wedge(Omega, dws[a])
    # omega^n/n! = C (sqrt(-1))^{n^2} Omega ^ conj(Omega); report C
    num = wedge_power(omega, n).top() / math.factorial(n)
    den = (1j ** (n * n)) * wedge(Omega, Omega.conj()).top()
    ma_constant = np.real(num / den)
    # inverse squared length of the unit-speed rotation of zeta: (n/2) z^{n-1};
    # the GH function h = z^{n-1} uses the circle parameter rescaled by n/2
    gen = np.stack([-zeta.imag, zeta.real] + [zero, zero] * k, axis=-1)
    J = standard_complex_structure(m)
    Jgen = _apply_J_vector(gen, J)
    g_tt = evaluate_on(omega, [Jgen, gen])
    omega_tilde = flat_base_kahler(k, shape) * z
    return CalabiSample(
        omega=omega,
        Omega=Omega,
        z=z,
        omega_tilde=omega_tilde,
        h=z ** (n - 1),
        h_metric=1.0 / g_tt,
        ma_constant=ma_constant,
    )


def _apply_J_vector(v, Jcov):
    """Action on vectors dual to J dx_i = sum_j Jcov[i, j] dx_j (so dx(JX) = (J dx)(X))."""
    return np.einsum("ij,...j->...i", Jcov, v)


# ---------------------------------------------------------------------------
# reduced data and the non-linear Gibbons-Hawking operator
# ---------------------------------------------------------------------------


@dataclass
class GHData:
    """Reduced data on a grid over Q = base x z (last axis is z)."""

    grid: ChartGrid
    omega_tilde: FormField
    h: np.ndarray
    theta: FormField | None = None
    Omega_D: FormField | None = None

    def __post_init__(self):
        if self.grid.dims % 2 == 0:
            raise ModelError("Q must have odd dimension (base x z)")
        if self.omega_tilde.degree != 2 or self.omega_tilde.dims != self.grid.dims:
            raise ModelError("omega_tilde must be a 2-form on Q")
        zi = self.grid.dims - 1
        if any(zi in idx for idx in self.omega_tilde.coeffs):
            raise ModelError("omega_tilde must not have dz components")
        if np.any(np.asarray(self.h) <= 0):
            bad = tuple(int(i) for i in np.argwhere(np.asarray(self.h) <= 0)[0])
            raise ModelError(f"h is not positive at node {bad}")
        if self.Omega_D is None:
            self.Omega_D = flat_base_volume(self.base_dim // 2)

    @property
    def base_dim(self) -> int:
        return self.grid.dims - 1

    @property
    def n(self) -> int:
        return self.base_dim // 2 + 1


def _base_only(field: FormField, zaxis: int) -> FormField:
    return FormField(
        field.dims, field.degree, {k: v for k, v in field.coeffs.items() if zaxis not in k}, field.grid
    )


def base_dc(f: np.ndarray, grid: ChartGrid) -> FormField:
    """d^c_D f on Q: base derivatives only, standard J on the base."""
    m = grid.dims
    nb = m - 1
    J = np.zeros((m, m))
    J[:nb, :nb] = standard_complex_structure(nb)
    terms = {}
    for i in range(nb):
        di = partial(f, i, grid)
        for j in range(nb):
            if J[i, j]:
                terms[(j,)] = terms.get((j,), 0) + J[i, j] * di
    return FormField(m, 1, terms, grid)


def base_ddc(f: np.ndarray, grid: ChartGrid) -> FormField:
    """d_D d^c_D f on Q."""
    return _base_only(fd_d(base_dc(f, grid)), grid.dims - 1)


def reduced_h(omega_tilde: FormField, Omega_D: FormField, n: int) -> np.ndarray:
    """h solving the reduced volume equation:
    omega~^{n-1}/(n-1)! = (sqrt(-1))^{(n-1)^2} 2^{-(n-1)} h Omega_D ^ conj(Omega_D)."""
    k = n - 1
    base = FormField(2 * k, 2, {i: v for i, v in omega_tilde.coeffs.items() if max(i) < 2 * k})
    top = wedge_power(base, k).top() / math.factorial(k)
    vol = np.real((1j ** (k * k)) * 2.0 ** (-k) * wedge(Omega_D, Omega_D.conj()).top())
    if np.any(np.abs(vol) <= 1e-14):
        raise ModelError("Omega_D degenerate")
    return top / vol


def nonlinear_gh_residual(data: GHData, n: int | None = None) -> tuple[FormField, np.ndarray]:
    """d_z^2 omega~ + d_D d^c_D h(omega~) on interior z-slices.

    Returns the residual 2-form (coefficient arrays over the interior slices)
    and the interior z values.
    """
    n = data.n if n is None else n
    grid = data.grid
    zaxis = grid.dims - 1
    nz = grid.shape[zaxis]
    if nz < 3:
        raise ModelError("need at least three z samples")
    hz = grid.spacing[zaxis]
    h = reduced_h(data.omega_tilde, data.Omega_D, n)
    ddc = base_ddc(h, grid)
    inner = [slice(None)] * grid.dims
    inner[zaxis] = slice(1, nz - 1)
    inner = tuple(inner)
    terms = {}
    for idx in set(data.omega_tilde.coeffs) | set(ddc.coeffs):
        w = data.omega_tilde.component(idx)
        d2 = (np.take(w, range(2, nz), axis=zaxis) - 2 * np.take(w, range(1, nz - 1), axis=zaxis)
              + np.take(w, range(0, nz - 2), axis=zaxis)) / hz**2
        terms[idx] = d2 + ddc.component(idx)[inner]
    zs = grid.axes()[zaxis][1:-1]
    return FormField(grid.dims, 2, terms), zs


def curvature_from_data(data: GHData) -> FormField:
    """Upsilon = d_z omega~ - dz ^ d^c_D h by finite differences on Q."""
    grid = data.grid
    zaxis = grid.dims - 1
    terms = {idx: partial(v, zaxis, grid) for idx, v in data.omega_tilde.coeffs.items()}
    dz_part = base_dc(np.asarray(data.h), grid)
    for (j,), v in dz_part.coeffs.items():
        # -dz ^ v dx_j = v dx_j ^ dz
        terms[(j, zaxis)] = terms.get((j, zaxis), 0) + v
    return FormField(grid.dims, 2, terms, grid)


def gh_assemble(data: GHData, scale: float = 1.0, tol: float | None = None):
    """omega = scale (omega~ + dz ^ Theta), Omega = sqrt(-1)(h dz + sqrt(-1) Theta) ^ Omega_D.

    Theta = -dt + theta with theta taken from ``data.theta``.  Coordinates on
    the total space are (base..., z, t).  When ``tol`` is given the curvature
    relation d theta = Upsilon is checked on the grid interior first.
    """
    if data.theta is None:
        raise ModelError("connection form required")
    grid = data.grid
    mq = grid.dims
    if tol is not None:
        diff = fd_d(data.theta) - curvature_from_data(data)
        inner = tuple(slice(1, -1) for _ in range(mq))
        err = max((float(np.max(np.abs(v[inner]))) for v in diff.coeffs.values()), default=0.0)
        if err > tol:
            raise ModelError(f"connection incompatible with curvature (residual {err:.3e})")
    m = mq + 1
    zaxis, taxis = mq - 1, mq
    shape = grid.shape
    ones = np.ones(shape)
    Theta = FormField(m, 1, {(i,): data.theta.component((i,)) * ones for i in range(mq)})
    Theta = Theta + FormField(m, 1, {(taxis,): -ones})
    dz = FormField(m, 1, {(zaxis,): ones})
    wt = FormField(m, 2, {idx: v * ones for idx, v in data.omega_tilde.coeffs.items()})
    omega = (wt + wedge(dz, Theta)) * scale
    OmD = FormField(m, data.Omega_D.degree, {idx: v * ones for idx, v in data.Omega_D.coeffs.items()})
    kappa = dz * (1j * np.asarray(data.h)) - Theta * (1.0 + 0j)
    Omega = wedge(kappa, OmD)
    return omega, Omega


def gh_monge_ampere(data: GHData, scale: float = 1.0) -> np.ndarray:
    omega, Omega = gh_assemble(data, scale)
    return monge_ampere_ratio(omega, Omega, data.n).value()
