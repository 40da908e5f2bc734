"""Spectral Green's currents on flat torus cylinders, product-space Green's
functions and the explicit half-line Green's functions.

Conventions
-----------
Real eigenfunctions on the torus ``D = R^d / L`` are ``e = sqrt(2/V) cos(xi.x + theta)``
and the matching unit (1,1) eigenforms are ``phi = -dd^c e / |xi|^2`` (for
``d = 2`` this is just ``e * omega_D``).  A pairing number is
``c = 2 pi int_H *phi``.  The current is stored through a potential

    psi(z) = k_pm z omega_D + dd^c F(., z),
    F(x, z) = sum_j b_j exp(-|xi_j| |z|) cos(xi_j.x + theta_j),

with ``b_j = -c_j sqrt(2/V) / (2 |xi_j|^3)``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from . import SCHEMA
from ._kernels import ewald_sum, mode_sum
from .discrete_exterior import ChartGrid, FormField, standard_complex_structure
from .model_spaces import flat_base_kahler, flat_base_volume


class GreensError(ValueError):
    pass


class TruncationWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# flat torus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlatTorusCY:
    """Flat complex torus C^k / L with the standard Kahler and volume forms.

    ``lattice`` rows are the 2k real basis vectors.  The default is the square
    lattice of side sqrt(2 pi) in every real direction, so each complex line
    has area 2 pi.
    """

    complex_dim: int = 1
    lattice: tuple | None = None
    strict: bool = True

    def __post_init__(self):
        k = self.complex_dim
        if k < 1:
            raise GreensError("torus needs complex dimension >= 1")
        if self.lattice is None:
            B = math.sqrt(2 * math.pi) * np.eye(2 * k)
        else:
            B = np.asarray(self.lattice, dtype=float)
        if B.shape != (2 * k, 2 * k):
            raise GreensError(f"lattice must be {2 * k}x{2 * k}")
        if abs(np.linalg.det(B)) < 1e-12:
            raise GreensError("lattice is degenerate")
        object.__setattr__(self, "lattice", tuple(map(tuple, B)))
        if self.strict and k == 1:
            q = abs(np.linalg.det(B)) / (2 * math.pi)
            if abs(q - round(q)) > 1e-9 or round(q) < 1:
                raise GreensError("area must lie in 2 pi Z so that [omega_D] is integral")

    @property
    def dims(self) -> int:
        return 2 * self.complex_dim

    @property
    def basis(self) -> np.ndarray:
        return np.array(self.lattice)

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    @property
    def omega_norm(self) -> float:
        """L^2 norm of omega_D."""
        return math.sqrt(self.complex_dim * self.volume)

    def dual_vector(self, m) -> np.ndarray:
        return 2 * math.pi * np.linalg.solve(self.basis, np.asarray(m, dtype=float).T).T

    def characters(self, count: int):
        """First ``count`` nonzero characters ordered by (|xi|, canonical m, m).

        Returns integer labels (count, d) and dual vectors (count, d).  Each
        +-xi pair is adjacent; ``count`` is rounded down to an even number.
        """
        count = int(count) - int(count) % 2
        if count <= 0:
            return np.zeros((0, self.dims), dtype=int), np.zeros((0, self.dims))
        B = self.basis
        nb = np.linalg.norm(B, 2)
        d = self.dims
        R = 2 * math.pi / nb * (count ** (1.0 / d) + 1)
        while True:
            M = int(math.ceil(nb * R / (2 * math.pi))) + 1
            rng = range(-M, M + 1)
            ms = np.array([m for m in itertools.product(rng, repeat=d) if any(m)], dtype=int)
            xi = self.dual_vector(ms)
            norm = np.linalg.norm(xi, axis=1)
            keep = norm <= R
            if keep.sum() > count:
                break
            R *= 1.5
        ms, xi, norm = ms[keep], xi[keep], norm[keep]

        def key(i):
            m = tuple(ms[i])
            neg = tuple(-ms[i])
            return (round(float(norm[i]), 10), max(m, neg), m)

        order = sorted(range(len(ms)), key=key)[:count]
        return ms[order], xi[order]

    def first_eigenvalue(self) -> float:
        _, xi = self.characters(2)
        return float(np.sum(xi[0] ** 2))

    def min_image(self, dx) -> np.ndarray:
        """Shortest lattice representative of displacements ``dx`` (..., d)."""
        B = self.basis
        dx = np.asarray(dx, dtype=float)
        s = np.linalg.solve(B.T, dx.reshape(-1, self.dims).T).T
        s = s - np.round(s)
        base = s @ B
        best = base.copy()
        bestn = np.sum(base**2, axis=1)
        for sh in itertools.product((-1, 0, 1), repeat=self.dims):
            cand = base + np.asarray(sh, dtype=float) @ B
            cn = np.sum(cand**2, axis=1)
            upd = cn < bestn
            best[upd] = cand[upd]
            bestn[upd] = cn[upd]
        return best.reshape(dx.shape)

    def injectivity_radius(self) -> float:
        ms = np.array([m for m in itertools.product((-1, 0, 1), repeat=self.dims) if any(m)])
        return 0.5 * float(np.min(np.linalg.norm(ms @ self.basis, axis=1)))

    def is_rectangular(self) -> bool:
        B = self.basis
        return bool(np.allclose(B, np.diag(np.diag(B))))

    def grid(self, counts) -> ChartGrid:
        """Periodic node grid on the fundamental box (rectangular lattices only)."""
        if not self.is_rectangular():
            raise GreensError("node grids need a rectangular lattice")
        side = np.abs(np.diag(self.basis))
        counts = np.broadcast_to(np.asarray(counts, dtype=int), (self.dims,))
        return ChartGrid.uniform(
            np.zeros(self.dims), side, counts, periodic=[True] * self.dims
        )

    def kahler_form(self, shape=()) -> FormField:
        return flat_base_kahler(self.complex_dim, shape)

    def volume_form(self, shape=()) -> FormField:
        return flat_base_volume(self.complex_dim, shape)

    def to_json(self) -> dict:
        return {"complex_dim": self.complex_dim, "lattice": [list(r) for r in self.lattice]}

    @classmethod
    def from_json(cls, d) -> "FlatTorusCY":
        return cls(complex_dim=int(d["complex_dim"]), lattice=d.get("lattice"))


# ---------------------------------------------------------------------------
# divisor pairings
# ---------------------------------------------------------------------------


@dataclass
class DivisorPairing:
    """Pairing numbers c_j of a divisor against the real eigenforms.

    Mode j is labelled by an integer character ``m[j]`` (dual vector ``xi[j]``)
    and a phase ``theta[j]``.  ``c0`` is the pairing with the unit harmonic form
    omega_D / |omega_D|.  Optional ``points``/``mults`` record an n = 2 point
    divisor for exact (Ewald) evaluation.
    """

    torus: FlatTorusCY
    k_minus: int
    k_plus: int
    m: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    c: np.ndarray
    c0: float
    points: np.ndarray | None = None
    mults: np.ndarray | None = None
    source: str = "table"

    def __post_init__(self):
        if int(self.k_minus) != self.k_minus or self.k_minus <= 0:
            raise GreensError("k_minus must be a positive integer")
        if int(self.k_plus) != self.k_plus or self.k_plus >= 0:
            raise GreensError("k_plus must be a negative integer")
        self.m = np.asarray(self.m, dtype=int).reshape(-1, self.torus.dims)
        self.xi = np.asarray(self.xi, dtype=float).reshape(-1, self.torus.dims)
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        self.c = np.asarray(self.c, dtype=float).ravel()
        if not (len(self.m) == len(self.xi) == len(self.theta) == len(self.c)):
            raise GreensError("mode arrays have inconsistent lengths")
        expect = self.k * self.torus.omega_norm
        if abs(self.c0 - expect) > 1e-9 * max(1.0, abs(expect)):
            raise GreensError(f"zero-mode pairing {self.c0} inconsistent with k = {self.k}")

    @property
    def k(self) -> int:
        return int(self.k_minus - self.k_plus)

    def __len__(self):
        return len(self.c)


def point_divisor_pairing(torus: FlatTorusCY, points, mults=None, k_minus=1, k_plus=-1, modes=400):
    """Pairings of a point divisor on an elliptic curve (n = 2).

    ``modes`` counts real eigenfunctions (equivalently complex characters).
    The total multiplicity must equal k * area / 2 pi.
    """
    if torus.complex_dim != 1:
        raise GreensError("point divisors need a one-dimensional base")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mu = np.ones(len(pts)) if mults is None else np.asarray(mults, dtype=float)
    k = k_minus - k_plus
    need = k * torus.volume / (2 * math.pi)
    if abs(mu.sum() - need) > 1e-9:
        raise GreensError(f"total multiplicity {mu.sum()} must equal k*area/2pi = {need}")
    ms, xi = torus.characters(modes)
    # keep one representative per +-pair; the sine partner pairs to zero
    ms, xi = ms[0::2], xi[0::2]
    cxi = np.exp(-1j * (xi @ pts.T)) @ mu
    theta = np.angle(cxi)
    c = 2 * math.pi * math.sqrt(2.0 / torus.volume) * np.abs(cxi)
    return DivisorPairing(
        torus, k_minus, k_plus, ms, xi, theta, c, k * torus.omega_norm, pts, mu, source="points"
    )


def synthetic_pairing(torus: FlatTorusCY, k_minus=1, k_plus=-1, modes=200, decay=4.0, scale=1.0, seed=0):
    """Deterministic pairing table with |c_j| = scale |xi_j|^{-decay}."""
    rng = np.random.default_rng(seed)
    ms, xi = torus.characters(modes)
    ms, xi = ms[0::2], xi[0::2]
    norm = np.linalg.norm(xi, axis=1)
    theta = rng.uniform(0, 2 * math.pi, len(ms))
    c = scale * norm ** (-decay) * rng.uniform(0.5, 1.0, len(ms))
    k = k_minus - k_plus
    return DivisorPairing(torus, k_minus, k_plus, ms, xi, theta, c, k * torus.omega_norm, source="synthetic")


# ---------------------------------------------------------------------------
# one-dimensional mode problem
# ---------------------------------------------------------------------------


def mode_solution(lam: float, c: float, k_minus: int = 1, k_plus: int = -1):
    """Decaying solution of -h'' + lam h = 0 off z = 0 with h'(0+) - h'(0-) = -c.

    For lam = 0 the solution is the two-slope branch h = k_pm z c / k.
    """
    if lam < 0:
        raise GreensError("eigenvalue must be non-negative")
    if lam == 0:
        k = k_minus - k_plus
        if k <= 0:
            raise GreensError("k_minus - k_plus must be positive")

        def h0(z):
            z = np.asarray(z, dtype=float)
            return np.where(z > 0, k_plus, k_minus) * z * c / k

        return h0
    s = math.sqrt(lam)

    def h(z):
        return c / (2 * s) * np.exp(-s * np.abs(np.asarray(z, dtype=float)))

    return h


# ---------------------------------------------------------------------------
# Green's current series
# ---------------------------------------------------------------------------


def _ewald_setup(torus: FlatTorusCY, eps=1e-15):
    A = torus.volume
    alpha = math.sqrt(math.pi / A)
    cut = math.sqrt(-math.log(eps))
    B = torus.basis
    rc = cut / alpha + np.max(np.linalg.norm(B, axis=1))
    kc = 2 * alpha * cut
    Mr = int(math.ceil(rc / (np.min(np.linalg.svd(B, compute_uv=False))))) + 1
    lat = np.array([np.array(m) @ B for m in itertools.product(range(-Mr, Mr + 1), repeat=2)])
    images = lat[np.linalg.norm(lat, axis=1) <= rc]
    Mk = int(math.ceil(kc * np.linalg.norm(B, 2) / (2 * math.pi))) + 1
    ks = torus.dual_vector(np.array([m for m in itertools.product(range(-Mk, Mk + 1), repeat=2) if any(m)]))
    recip = ks[np.linalg.norm(ks, axis=1) <= kc]
    return images, recip, A, alpha


@dataclass
class GreensCurrentSeries:
    torus: FlatTorusCY
    pairing: DivisorPairing
    modes: int
    xi: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    z_switch: float = 3.0

    @property
    def n(self) -> int:
        return self.torus.complex_dim + 1

    @property
    def k_minus(self):
        return self.pairing.k_minus

    @property
    def k_plus(self):
        return self.pairing.k_plus

    @property
    def lambda1(self) -> float:
        return self.torus.first_eigenvalue()

    def slope(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z > 0, self.k_plus, np.where(z < 0, self.k_minus, 0.5 * (self.k_plus + self.k_minus)))

    def linear(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z > 0, self.k_plus, self.k_minus) * z

    def mode_functions(self):
        """Per-mode closures h_j(z) multiplying the unit eigenforms."""
        return [mode_solution(float(k * k), float(c)) for k, c in zip(self.kappa, self.pairing.c[: len(self.kappa)])]

    # -- potential F and its derivatives ---------------------------------
    def potential(self, x, z, zorder=0):
        """F (or d^p F / dz^p) with x-gradient and x-Hessian at points x (N, d), z (N,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        return mode_sum(x, z, self.xi, self.theta, self.b, self.kappa, zorder)

    def _hess_to_ddc(self, hess) -> FormField:
        d = self.torus.dims
        J = standard_complex_structure(d)
        A = hess @ J
        M = A - np.swapaxes(A, -1, -2)
        return FormField(d, 2, {(i, j): M[..., i, j] for i in range(d) for j in range(i + 1, d)})

    def psi(self, x, z) -> FormField:
        """psi(z) at base points x as a 2-form on D."""
        _, _, H = self.potential(x, z)
        lin = self.linear(np.broadcast_to(z, (H.shape[0],)))
        return self.torus.kahler_form(lin.shape) * lin + self._hess_to_ddc(H)

    def psi_z(self, x, z) -> FormField:
        _, _, H = self.potential(x, z, zorder=1)
        s = self.slope(np.broadcast_to(z, (H.shape[0],)))
        return self.torus.kahler_form(s.shape) * s + self._hess_to_ddc(H)

    def trace(self, x, z, zorder=0):
        """Tr_{omega_D} psi (or its z-derivatives up to order 2)."""
        _, _, H = self.potential(x, z, zorder=zorder)
        zz = np.broadcast_to(np.asarray(z, dtype=float), (H.shape[0],))
        k = self.torus.complex_dim
        lap = np.trace(H, axis1=-2, axis2=-1)
        if zorder == 0:
            return k * self.linear(zz) + lap
        if zorder == 1:
            return k * self.slope(zz) + lap
        return lap

    def trace_gradient(self, x, z, zorder=0):
        """x-gradient of the oscillatory trace part (Laplacian of F)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        zz = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        amp = -self.b * self.kappa**2
        _, g, _ = mode_sum(x, zz, self.xi, self.theta, amp, self.kappa, zorder)
        return g

    def scalar(self, x, z, exact=None):
        """n = 2 scalar Psi with psi = Psi omega_D; Ewald evaluation near z = 0."""
        if self.n != 2:
            raise GreensError("scalar form only exists for n = 2")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],)).copy()
        use = exact if exact is not None else self.pairing.points is not None
        val = self.trace(x, z)
        if use and self.pairing.points is not None:
            near = np.abs(z) <= self.z_switch
            if near.any():
                val[near] = self.exact_scalar(x[near], z[near])[0]
        return val

    def exact_scalar(self, x, z):
        """Closed-form Psi for point divisors: Ewald sum, no mode truncation.

        Returns (Psi, grad) with grad = (d/dx1, d/dx2, d/dz).
        """
        if self.pairing.points is None:
            raise GreensError("exact evaluation needs a point divisor")
        if not hasattr(self, "_ewald"):
            self._ewald = _ewald_setup(self.torus)
        images, recip, A, alpha = self._ewald
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        phi, g = ewald_sum(x, z, self.pairing.points, self.pairing.mults, images, recip, A, alpha)
        tot = self.pairing.mults.sum()
        val = 0.5 * phi + 0.5 * tot * (2 * math.pi / A) * np.abs(z) + self.linear(z)
        grad = 0.5 * g
        grad[:, 2] += 0.5 * tot * (2 * math.pi / A) * np.sign(z) + self.slope(z)
        return val, grad

    def slice_potential(self, x, z):
        """Oscillatory part of F - z dF/dz (used for Kahler potentials)."""
        F, _, _ = self.potential(x, z)
        Fz, _, _ = self.potential(x, z, zorder=1)
        return F - np.asarray(z) * Fz

    def tail_bound(self, z) -> np.ndarray:
        """Weyl-count bound on the sup of the omitted modes of Tr psi at height z."""
        z = np.abs(np.asarray(z, dtype=float))
        if len(self.kappa) == 0:
            return np.full_like(z, np.inf)
        R = float(self.kappa.max())
        d = self.torus.dims
        V = self.torus.volume
        # largest |c_j| |xi|^{-1} envelope among the kept modes, extrapolated
        env = np.max(np.abs(self.b) * self.kappa**2 * self.kappa) / 1.0
        # count density of characters: V / (2 pi)^d * |S^{d-1}| rho^{d-1}
        sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        dens = V / (2 * math.pi) ** d * sphere
        with np.errstate(divide="ignore", over="ignore"):
            out = np.array(
                [
                    integrate.quad(lambda r: dens * r ** (d - 2) * env * math.exp(-r * zz), R, np.inf)[0]
                    if zz > 0
                    else np.inf
                    for zz in np.atleast_1d(z)
                ]
            )
        return out.reshape(z.shape)

    # -- serialisation ------------------------------------------------------
    def to_json(self) -> dict:
        p = self.pairing
        return {
            "schema": SCHEMA,
            "kind": "GreensCurrentSeries",
            "torus": self.torus.to_json(),
            "k_minus": int(p.k_minus),
            "k_plus": int(p.k_plus),
            "modes": int(self.modes),
            "m": p.m.tolist(),
            "theta": p.theta.tolist(),
            "c": p.c.tolist(),
            "points": None if p.points is None else p.points.tolist(),
            "mults": None if p.mults is None else p.mults.tolist(),
            "source": p.source,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def from_json(cls, d) -> "GreensCurrentSeries":
        if d.get("schema") != SCHEMA or d.get("kind") != "GreensCurrentSeries":
            raise GreensError("not a serialized Green's current")
        torus = FlatTorusCY.from_json(d["torus"])
        m = np.array(d["m"], dtype=int).reshape(-1, torus.dims)
        k = d["k_minus"] - d["k_plus"]
        pairing = DivisorPairing(
            torus,
            d["k_minus"],
            d["k_plus"],
            m,
            torus.dual_vector(m) if len(m) else np.zeros((0, torus.dims)),
            d["theta"],
            d["c"],
            k * torus.omega_norm,
            None if d["points"] is None else np.array(d["points"]),
            None if d["mults"] is None else np.array(d["mults"]),
            d.get("source", "table"),
        )
        return build_greens_current(torus, pairing, d["modes"])

    @classmethod
    def load(cls, path) -> "GreensCurrentSeries":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_greens_current(torus: FlatTorusCY, pairing: DivisorPairing, modes: int | None = None,
                         tol: float | None = None, z_eval: float | None = None) -> GreensCurrentSeries:
    """Assemble the truncated series keeping the lowest ``modes`` real eigenfunctions.

    A :class:`TruncationWarning` is issued when ``tol`` and ``z_eval`` are
    given and the tail bound at ``z_eval`` exceeds ``tol``.
    """
    if pairing.torus != torus:
        raise GreensError("pairing belongs to a different torus")
    avail = 2 * len(pairing)
    modes = avail if modes is None else int(modes)
    if modes > avail:
        raise GreensError(f"only {avail} modes supplied, {modes} requested")
    keep = modes // 2
    xi = pairing.xi[:keep]
    kappa = np.linalg.norm(xi, axis=1)
    if np.any(kappa <= 0):
        raise GreensError("zero character in oscillatory modes")
    b = -pairing.c[:keep] * math.sqrt(2.0 / torus.volume) / (2 * kappa**3)
    s = GreensCurrentSeries(torus, pairing, modes, xi, pairing.theta[:keep].copy(), b, kappa, pairing.m[:keep])
    if tol is not None and z_eval is not None:
        bound = float(s.tail_bound(z_eval))
        if bound > tol:
            warnings.warn(
                f"{modes} modes give a tail bound {bound:.3e} > {tol:.3e} at z = {z_eval}",
                TruncationWarning,
                stacklevel=2,
            )
    return s


# ---------------------------------------------------------------------------
# distributional check against bump test functions (n = 2)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BumpTestForm:
    """chi(x, z) = exp(-(|x - c|^2 + (z - z0)^2) / (2 w^2)) times omega_D ^ dz.

    The support is treated as the ball of radius ``cut * width``.
    """

    center: tuple
    z0: float = 0.0
    width: float = 0.1
    cut: float = 8.0

    @property
    def radius(self) -> float:
        return self.cut * self.width

    def value_and_laplacian(self, dx, dz):
        r2 = np.sum(dx**2, axis=-1) + dz**2
        w2 = self.width**2
        g = np.exp(-r2 / (2 * w2))
        lap = g * (r2 / w2**2 - 3.0 / w2)
        return g, lap


def distributional_residual(series: GreensCurrentSeries, test: BumpTestForm, grid_points: int | None = None,
                            z_nodes: int = 48):
    """Pair psi ^ dz with the Hodge Laplacian of a test 3-form.

    Returns a dict with ``pairing`` = <psi ^ dz, Delta chi>, ``target`` =
    2 pi sum_a m_a chi(p_a, 0) (point divisors) and the relative mismatch.
    The x-integral is done with an FFT over the periodic fundamental domain,
    the z-integral by Gauss-Legendre on each side of z = 0.
    """
    torus = series.torus
    if torus.dims != 2:
        raise GreensError("distributional check implemented for n = 2")
    if test.radius >= torus.injectivity_radius():
        raise GreensError("test form support touches the boundary of the fundamental domain")
    B = torus.basis
    side = float(np.max(np.linalg.norm(B, axis=1)))
    if grid_points is None:
        grid_points = 1 << int(math.ceil(math.log2(4 * side / test.width)))
    N = grid_points
    mmax = int(np.max(np.abs(series.m))) if len(series.m) else 0
    if 2 * mmax >= N:
        raise GreensError("FFT grid too coarse for the requested modes")
    s = (np.arange(N) + 0.5) / N
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    X = np.stack([S1, S2], axis=-1) @ B
    dx = torus.min_image(X - np.asarray(test.center, dtype=float))
    dV = torus.volume / N**2
    lo, hi = test.z0 - test.radius, test.z0 + test.radius
    pieces = [(lo, min(hi, 0.0)), (max(lo, 0.0), hi)]
    gx, gw = np.polynomial.legendre.leggauss(z_nodes)
    pairing = 0.0
    for a, b in pieces:
        if b <= a:
            continue
        zs = 0.5 * (b - a) * gx + 0.5 * (a + b)
        ws = 0.5 * (b - a) * gw
        for zk, wk in zip(zs, ws):
            _, lap = test.value_and_laplacian(dx, zk - test.z0)
            # Delta = -Laplacian on the test function
            Xf = np.fft.fft2(-lap) * dV  # int chi(x) exp(-2 pi i m.s) dx, offset by half-cell
            shift = np.exp(-1j * math.pi * (series.m[:, 0] + series.m[:, 1]) / N)
            vals = Xf[series.m[:, 0] % N, series.m[:, 1] % N] * shift
            amp = -series.b * series.kappa**2
            osc = np.sum(amp * np.exp(-series.kappa * abs(zk)) * np.real(np.exp(-1j * series.theta) * vals))
            lin = float(series.linear(zk)) * float(np.real(Xf[0, 0]))
            pairing += wk * (osc + lin)
    target = None
    mismatch = None
    if series.pairing.points is not None:
        dp = torus.min_image(series.pairing.points - np.asarray(test.center, dtype=float))
        g, _ = test.value_and_laplacian(dp, -test.z0)
        target = 2 * math.pi * float(np.sum(series.pairing.mults * g))
        mismatch = abs(pairing - target) / max(abs(target), 1e-300) if abs(target) > 1e-12 else abs(pairing - target)
    return {"pairing": float(pairing), "target": target, "mismatch": mismatch}


def sphere_chern_integral(series: GreensCurrentSeries, center, radius, n_theta=48, n_phi=96):
    """(1/2pi) * integral of Upsilon over a small sphere in (x1, x2, z), n = 2.

    Upsilon = dPsi/dz dx1^dx2 - dz ^ d^c Psi is the flux of grad Psi; the
    closed-form (Ewald) evaluator is used so no Gibbs deficit arises.
    """
    ct, wt = np.polynomial.legendre.leggauss(n_theta)
    ph = 2 * math.pi * np.arange(n_phi) / n_phi
    CT, PH = np.meshgrid(ct, ph, indexing="ij")
    ST = np.sqrt(1 - CT**2)
    nrm = np.stack([ST * np.cos(PH), ST * np.sin(PH), CT], axis=-1).reshape(-1, 3)
    pts = np.asarray(center, dtype=float) + radius * nrm
    if series.pairing.points is not None:
        _, g = series.exact_scalar(pts[:, :2], pts[:, 2])
    else:
        x, z = pts[:, :2], pts[:, 2]
        g = np.zeros_like(pts)
        g[:, :2] = series.trace_gradient(x, z)
        g[:, 2] = series.trace(x, z, zorder=1)
    flux = np.sum(np.sum(g * nrm, axis=1).reshape(CT.shape) * wt[:, None]) * (2 * math.pi / n_phi) * radius**2
    return float(flux / (2 * math.pi))


# ---------------------------------------------------------------------------
# modified Bessel functions and product-space Green's functions
# ---------------------------------------------------------------------------


def bessel_k(alpha: float, x: float) -> float:
    """K_alpha(x) = int_0^inf exp(-x cosh t) cosh(alpha t) dt by adaptive quadrature."""
    if x <= 0:
        raise GreensError("K_alpha needs a positive argument")
    a = abs(alpha)
    # integrand negligible once x cosh t - a t > 750
    tmax = math.acosh(max(1.0, (750.0 + a * 50) / x)) + 1.0

    def f(t):
        return math.exp(-x * math.cosh(t) + a * t) * 0.5 * (1 + math.exp(-2 * a * t))

    val, _ = integrate.quad(f, 0.0, tmax, epsabs=0.0, epsrel=2e-14, limit=200)
    return val


def bessel_k_derivatives(alpha: float, x: float) -> tuple[float, float, float]:
    """(K, K', K'') from the integral representation differentiated under the integral.

    d^j/dx^j K_alpha(x) = (-1)^j int_0^inf cosh^j(t) exp(-x cosh t) cosh(alpha t) dt.
    """
    if x <= 0:
        raise GreensError("K_alpha needs a positive argument")
    a = abs(alpha)
    tmax = math.acosh(max(1.0, (750.0 + a * 50) / x)) + 1.0
    out = []
    for j in range(3):

        def f(t, j=j):
            return math.cosh(t) ** j * math.exp(-x * math.cosh(t) + a * t) * 0.5 * (1 + math.exp(-2 * a * t))

        val, _ = integrate.quad(f, 0.0, tmax, epsabs=0.0, epsrel=2e-14, limit=200)
        out.append((-1) ** j * val)
    return out[0], out[1], out[2]


def bessel_ode_residual(alpha: float, x: float) -> float:
    """Relative residual of x^2 K'' + x K' - (x^2 + alpha^2) K = 0."""
    k0, k1, k2 = bessel_k_derivatives(alpha, x)
    res = x * x * k2 + x * k1 - (x * x + alpha * alpha) * k0
    return abs(res) / (x * x * abs(k0))


def bessel_k0_series(x: float, terms: int = 40) -> float:
    """Small-argument series of K_0 (for validating :func:`bessel_k`)."""
    s = 0.0
    h = 0.0
    t = 1.0
    y = 0.25 * x * x
    for k in range(terms):
        if k:
            t *= y / (k * k)
            h += 1.0 / k
        s += t * (h - math.log(x / 2) - np.euler_gamma)
    return s


@dataclass
class ProductGreen:
    """Green's function of R^m x K for a flat torus K, -Delta G = 2 pi delta_p."""

    m: int
    torus: FlatTorusCY
    p_flat: np.ndarray
    p_torus: np.ndarray
    xi: np.ndarray
    lam: np.ndarray

    def _radial(self, r, lam):
        m = self.m
        if lam == 0:
            V = self.torus.volume
            if m == 1:
                return -math.pi * r / V
            if m == 2:
                return -math.log(r) / V
            area = 2 * math.pi ** (m / 2) / math.gamma(m / 2)
            return 2 * math.pi / ((m - 2) * area * r ** (m - 2)) / V
        s = math.sqrt(lam)
        if m == 1:
            return math.pi / s * math.exp(-s * r)
        nu = m / 2 - 1
        return 2 * math.pi * (2 * math.pi) ** (-m / 2) * (s / r) ** nu * bessel_k(nu, s * r)

    def far_field(self, x_flat):
        """Zero-mode part Phi (the displayed far-field model)."""
        r = np.linalg.norm(np.atleast_2d(x_flat) - self.p_flat, axis=1)
        return np.array([self._radial(ri, 0.0) for ri in r])

    def __call__(self, x_flat, y_torus):
        xf = np.atleast_2d(np.asarray(x_flat, dtype=float))
        yt = np.atleast_2d(np.asarray(y_torus, dtype=float))
        r = np.linalg.norm(xf - self.p_flat, axis=1)
        if np.any(r == 0):
            raise GreensError("evaluation at the source slice is singular")
        V = self.torus.volume
        out = self.far_field(xf)
        ph = (yt - self.p_torus) @ self.xi.T
        cache = {}
        for i, ri in enumerate(r):
            acc = 0.0
            for j, lam in enumerate(self.lam):
                key = (round(float(lam), 12), float(ri))
                if key not in cache:
                    cache[key] = self._radial(ri, float(lam))
                acc += cache[key] * math.cos(ph[i, j])
            out[i] += acc / V
        return out


def product_green(m: int, torus: FlatTorusCY, p_flat=None, p_torus=None, modes: int = 200) -> ProductGreen:
    """Green's function on R^m x T by separation into torus modes.

    Each mode solves (-Delta_x + lam) g = 2 pi delta; g is exp for m = 1 and a
    modified Bessel function K_{m/2-1} for m >= 2.
    """
    if m < 1:
        raise GreensError("m must be >= 1")
    if m + torus.dims < 3:
        raise GreensError("need m + dim K >= 3")
    p_flat = np.zeros(m) if p_flat is None else np.asarray(p_flat, dtype=float)
    p_torus = np.zeros(torus.dims) if p_torus is None else np.asarray(p_torus, dtype=float)
    _, xi = torus.characters(modes)
    lam = np.sum(xi**2, axis=1)
    return ProductGreen(m, torus, p_flat, p_torus, xi, lam)


# ---------------------------------------------------------------------------
# half-line and tropical Green's functions
# ---------------------------------------------------------------------------


def half_line_green_r3(x, direction=None) -> np.ndarray:
    """-log(|x| - x.e) + log 2 for the half-line R_{>=0} e in R^3."""
    x = np.asarray(x, dtype=float)
    e = np.array([1.0, 0.0, 0.0]) if direction is None else np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    r = np.linalg.norm(x, axis=-1)
    par = x @ e
    perp2 = np.sum((x - par[..., None] * e) ** 2, axis=-1)
    if np.any((perp2 <= 1e-300) & (par >= 0)):
        raise GreensError("point lies on the half-line")
    # |x| - x.e = |perp|^2 / (|x| + x.e) avoids cancellation on the far side
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(par > 0, perp2 / (r + par), r - par)
    return -np.log(gap) + math.log(2.0)


def half_line_green_r4(x) -> np.ndarray:
    """(1/v)(pi/2 + arctan(x1/v)) with v^2 = x2^2 + x3^2 + x4^2."""
    x = np.asarray(x, dtype=float)
    v = np.sqrt(np.sum(x[..., 1:] ** 2, axis=-1))
    if np.any(v <= 0):
        raise GreensError("point lies on the axis (v = 0)")
    return (0.5 * math.pi + np.arctan(x[..., 0] / v)) / v


TROPICAL_LEGS = (
    np.array([1.0, 0.0, 0.0]),
    np.array([0.0, 1.0, 0.0]),
    np.array([-1.0, -1.0, 0.0]) / math.sqrt(2.0),
)


def tropical_green_matrix(x) -> np.ndarray:
    """2x2 matrix Green's function of three half-lines e1, e2, -e1-e2 in the plane x3 = 0."""
    G1, G2, G3 = (half_line_green_r3(x, e) for e in TROPICAL_LEGS)
    out = np.empty(np.shape(G1) + (2, 2))
    out[..., 0, 0] = G2 + 0.5 * G3
    out[..., 0, 1] = out[..., 1, 0] = -0.5 * G3
    out[..., 1, 1] = G1 + 0.5 * G3
    return out


def tropical_far_field_slopes(direction, radii=None):
    """Least-squares slopes of the diagonal and off-diagonal entries against log r."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    radii = np.geomspace(10.0, 1e3, 12) if radii is None else np.asarray(radii, dtype=float)
    M = tropical_green_matrix(radii[:, None] * u)
    lr = np.log(radii)
    diag = np.polyfit(lr, 0.5 * (M[:, 0, 0] + M[:, 1, 1]), 1)[0]
    off = np.polyfit(lr, M[:, 0, 1], 1)[0]
    return float(diag), float(off)


def fd_laplacian_scalar(f, x, h):
    """Second-order centered FD Laplacian of a scalar function at points x (N, m)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = -2 * x.shape[1] * f(x)
    for i in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[i] = h
        out = out + f(x + e) + f(x - e)
    return out / h**2


__all__ = [
    "BumpTestForm",
    "DivisorPairing",
    "FlatTorusCY",
    "GreensCurrentSeries",
    "GreensError",
    "ProductGreen",
    "TruncationWarning",
    "bessel_k",
    "bessel_k_derivatives",
    "bessel_ode_residual",
    "bessel_k0_series",
    "build_greens_current",
    "distributional_residual",
    "fd_laplacian_scalar",
    "half_line_green_r3",
    "half_line_green_r4",
    "mode_solution",
    "point_divisor_pairing",
    "product_green",
    "sphere_chern_integral",
    "synthetic_pairing",
    "tropical_far_field_slopes",
    "tropical_green_matrix",
]
