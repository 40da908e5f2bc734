"""The approximately Calabi-Yau neck family built from a Green's current.

Given a Green's current ``psi(z)`` on a flat torus ``D`` and a large
parameter ``T`` the reduced data are

    omega~(z) = T omega_D + psi(z),     h = Tr omega~ + q(z),

and the total-space forms on ``(base..., z, t)`` are

    omega_T = T^{(2-n)/n} (omega~ + dz ^ Theta),
    Omega_T = sqrt(-1) (h dz + sqrt(-1) Theta) ^ Omega_D,

with ``Theta = -dt + theta`` and ``d theta = Upsilon``.  The connection is
written per side of ``z = 0`` in the local (non-periodic) gauge

    theta = k_pm alpha + d^c_D (dF/dz),   alpha = sum_a x_a dy_a,

which is enough for every pointwise and finite-difference check here; the
Monge-Ampere ratio and the error function do not see the gauge.

Every reduced quantity splits into a function of ``z`` alone (built from
exact polynomial pieces, see :class:`ReducedProfile`) plus the oscillatory
mode sum of the series.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from . import SCHEMA
from ._kernels import mode_sum
from .discrete_exterior import (
    ChartGrid,
    FormField,
    load_field,
    partial,
    save_field,
    standard_complex_structure,
    wedge,
    wedge_power,
)
from .greens import (
    DivisorPairing,
    FlatTorusCY,
    GreensCurrentSeries,
    build_greens_current,
)


class NeckError(ValueError):
    """Raised when the neck data are ill-posed (positivity, parameters)."""


# ---------------------------------------------------------------------------
# one-dimensional profiles
# ---------------------------------------------------------------------------

# quintic smoothstep 6t^5 - 15t^4 + 10t^3: value 0/1 and vanishing first and
# second derivatives at t = 0, 1
_STEP = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


def smoothstep(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    # the polynomial can overshoot 1 by an ulp next to t = 1
    return np.clip(_STEP(t), 0.0, 1.0)


def _l0_poly(k_minus, k_plus) -> Polynomial:
    """L_0 on [-1, 1] as a polynomial in z."""
    s = _STEP(Polynomial([0.5, 0.5]))
    return Polynomial([0.0, 1.0]) * (k_minus + (k_plus - k_minus) * s)


def l0_profile(z, k_minus=1, k_plus=-1):
    """Smooth L_0 with L_0 = k_+ z (z > 1), k_- z (z < -1) and L_0(0) = 0.

    On [-1, 1] the slope blends from k_- to k_+ with the quintic smoothstep,
    which matches value and two derivatives at z = +-1.
    """
    z = np.asarray(z, dtype=float)
    return z * (k_minus + (k_plus - k_minus) * smoothstep(0.5 * (z + 1.0)))


def lt_profile(T, z, k_minus=1, k_plus=-1):
    """L_T(z) = T + L_0(z)."""
    return T + l0_profile(z, k_minus, k_plus)


def q_profile(n, T, z, k_minus=1, k_plus=-1):
    """q(z) = T^{2-n} L_T^{n-1} - (n-1) L_T."""
    if n < 2:
        raise NeckError("n must be at least 2")
    L = lt_profile(T, z, k_minus, k_plus)
    return T ** (2 - n) * L ** (n - 1) - (n - 1) * L


def q0_profile(n, T, z, k_minus=1, k_plus=-1):
    """Unsmoothed q_0 built from the piecewise linear class T + k_pm z."""
    z = np.asarray(z, dtype=float)
    L = T + np.where(z > 0, k_plus, k_minus) * z
    return T ** (2 - n) * L ** (n - 1) - (n - 1) * L


def t_boundaries(n, T, k_minus=1, k_plus=-1):
    """(T_-, T_+) with T + k_pm T_pm = T^{(n-2)/n}."""
    if n < 2:
        raise NeckError("n must be at least 2")
    if not (k_minus > 0 > k_plus):
        raise NeckError("need k_minus > 0 > k_plus")
    target = T ** ((n - 2) / n)
    return (target - T) / k_minus, (target - T) / k_plus


@dataclass(frozen=True)
class ReducedProfile:
    """Base-averaged reduced quantities as exact piecewise polynomials.

    ``hbar(z) = T^{2-n} L_T^{n-1} + (n-1)(k_pm z - L_0)`` is the base average
    of h.  Pieces are split at z = -1, 0, 1 so antiderivatives are exact.
    """

    n: int
    T: float
    k_minus: int = 1
    k_plus: int = -1

    def __post_init__(self):
        n, T, km, kp = self.n, float(self.T), self.k_minus, self.k_plus
        z = Polynomial([0.0, 1.0])
        c = T ** (2 - n)
        lm = T + km * z
        lp = T + kp * z
        l0 = _l0_poly(km, kp)
        mid = c * (T + l0) ** (n - 1)
        pieces = [
            (-np.inf, -1.0, c * lm ** (n - 1)),
            (-1.0, 0.0, mid + (n - 1) * (km * z - l0)),
            (0.0, 1.0, mid + (n - 1) * (kp * z - l0)),
            (1.0, np.inf, c * lp ** (n - 1)),
        ]
        object.__setattr__(self, "_pieces", pieces)
        object.__setattr__(self, "_h_int", [(a, b, p.integ()) for a, b, p in pieces])
        object.__setattr__(self, "_m_int", [(a, b, (z * p).integ()) for a, b, p in pieces])

    @property
    def boundaries(self):
        return t_boundaries(self.n, self.T, self.k_minus, self.k_plus)

    def _eval(self, pieces, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for a, b, p in pieces:
            sel = (z >= a) & (z < b) if b < np.inf else z >= a
            out = np.where(sel, p(z), out)
        return out

    def hbar(self, z):
        return self._eval(self._pieces, z)

    def hbar_z(self, z):
        return self._eval([(a, b, p.deriv()) for a, b, p in self._pieces], z)

    def _from_zero(self, ints, z):
        z = np.asarray(z, dtype=float)
        lo = np.minimum(z, 0.0)
        hi = np.maximum(z, 0.0)
        tot = np.zeros_like(z)
        for a, b, P in ints:
            l = np.maximum(lo, a)
            u = np.minimum(hi, b)
            tot = tot + np.where(u > l, P(u) - P(l), 0.0)
        return np.where(z >= 0, tot, -tot)

    def H(self, z):
        """int_0^z hbar."""
        return self._from_zero(self._h_int, z)

    def M(self, z):
        """int_0^z u hbar(u) du."""
        return self._from_zero(self._m_int, z)

    def phibar(self, z):
        """int_{T_+}^z u hbar(u) du (base-averaged Kahler potential)."""
        return self.M(z) - self.M(self.boundaries[1])

    def lt(self, z):
        return lt_profile(self.T, z, self.k_minus, self.k_plus)


# ---------------------------------------------------------------------------
# configuration and pointwise evaluation
# ---------------------------------------------------------------------------


@dataclass
class NeckConfig:
    """Parameters of one neck.

    ``z_range`` defaults to [T_-, T_+].  ``exact`` selects closed-form
    (Ewald) evaluation of the n = 2 point-divisor current near z = 0; it
    defaults to True whenever the pairing carries point data.
    """

    T: float
    torus: FlatTorusCY
    pairing: DivisorPairing
    modes: int | None = None
    base_counts: int | tuple = 16
    nz: int = 65
    z_range: tuple | None = None
    mask_factor: float = 4.0
    smoothing: str = "quintic"
    exact: bool | None = None

    def __post_init__(self):
        if self.pairing.torus != self.torus:
            raise NeckError("pairing belongs to a different torus")
        if self.smoothing != "quintic":
            raise NeckError(f"unknown smoothing {self.smoothing!r}")
        if not self.T > 1:
            raise NeckError("T must exceed 1")
        tm, tp = t_boundaries(self.n, self.T, self.pairing.k_minus, self.pairing.k_plus)
        if tp < 1.0 or tm > -1.0:
            raise NeckError(f"T = {self.T} too small: the ends [{tm:.3g}, {tp:.3g}] must lie outside [-1, 1]")
        if int(self.nz) < 3:
            raise NeckError("need at least three z nodes")
        if self.mask_factor < 0:
            raise NeckError("mask factor must be non-negative")
        if self.exact is None:
            self.exact = self.pairing.points is not None and self.n == 2
        elif self.exact and (self.pairing.points is None or self.n != 2):
            raise NeckError("exact evaluation needs an n = 2 point divisor")

    @property
    def n(self) -> int:
        return self.torus.complex_dim + 1

    @property
    def k_minus(self):
        return self.pairing.k_minus

    @property
    def k_plus(self):
        return self.pairing.k_plus

    def boundaries(self):
        return t_boundaries(self.n, self.T, self.k_minus, self.k_plus)

    def to_json(self) -> dict:
        series = build_greens_current(self.torus, self.pairing, self.modes)
        return {
            "T": self.T,
            "series": series.to_json(),
            "base_counts": np.atleast_1d(self.base_counts).tolist(),
            "nz": int(self.nz),
            "z_range": None if self.z_range is None else list(self.z_range),
            "mask_factor": self.mask_factor,
            "smoothing": self.smoothing,
            "exact": bool(self.exact),
        }

    @classmethod
    def from_json(cls, d) -> "NeckConfig":
        series = GreensCurrentSeries.from_json(d["series"])
        bc = d.get("base_counts", 16)
        return cls(
            T=float(d["T"]),
            torus=series.torus,
            pairing=series.pairing,
            modes=series.modes,
            base_counts=tuple(bc) if isinstance(bc, list) else bc,
            nz=int(d.get("nz", 65)),
            z_range=None if d.get("z_range") is None else tuple(d["z_range"]),
            mask_factor=float(d.get("mask_factor", 4.0)),
            smoothing=d.get("smoothing", "quintic"),
            exact=d.get("exact"),
        )


def _upper_zero(z):
    """Replace z = 0 by the smallest positive double (evaluate the z > 0 side)."""
    z = np.asarray(z, dtype=float)
    return np.where(z == 0.0, np.nextafter(0.0, 1.0), z)


class NeckModel:
    """Pointwise evaluator of the neck data at base points ``x`` (N, d) and heights ``z`` (N,)."""

    def __init__(self, config: NeckConfig, series: GreensCurrentSeries | None = None):
        self.config = config
        self.series = series or build_greens_current(config.torus, config.pairing, config.modes)
        self.profile = ReducedProfile(config.n, config.T, config.k_minus, config.k_plus)
        self.n = config.n
        self.d = config.torus.dims
        self.T = float(config.T)

    # -- geometry helpers -----------------------------------------------
    def _prep(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],)).copy()
        return x, z

    def distance_to_singular_set(self, x, z):
        """Distance in Q = D x R to P = points x {0}; inf without point data."""
        x, z = self._prep(x, z)
        pts = self.config.pairing.points
        if pts is None:
            return np.full(x.shape[0], np.inf)
        best = np.full(x.shape[0], np.inf)
        for p in pts:
            dx = self.config.torus.min_image(x - p)
            best = np.minimum(best, np.sqrt(np.sum(dx**2, axis=1) + z**2))
        return best

    def _use_exact(self, z, exact):
        use = self.config.exact if exact is None else exact
        if not use:
            return np.zeros(z.shape, dtype=bool)
        return np.abs(z) <= self.series.z_switch

    # -- oscillatory trace part -------------------------------------------
    def trace_osc(self, x, z, exact=None):
        """Oscillatory part of Tr psi with its base gradient and z-derivative."""
        x, z = self._prep(x, z)
        s = self.series
        k = self.n - 1
        osc = s.trace(x, z) - k * s.linear(z)
        grad = s.trace_gradient(x, z)
        osc_z = s.trace(x, z, zorder=1) - k * s.slope(z)
        near = self._use_exact(z, exact)
        if near.any():
            val, g = s.exact_scalar(x[near], z[near])
            osc[near] = val - s.linear(z[near])
            grad[near] = g[:, :2]
            osc_z[near] = g[:, 2] - s.slope(z[near])
        return osc, grad, osc_z

    def psi(self, x, z, exact=None) -> FormField:
        x, z = self._prep(x, z)
        if self.n == 2:
            osc, _, _ = self.trace_osc(x, z, exact)
            psi_val = osc + self.series.linear(z)
            return self.config.torus.kahler_form(psi_val.shape) * psi_val
        return self.series.psi(x, z)

    def psi_z(self, x, z, exact=None) -> FormField:
        x, z = self._prep(x, z)
        if self.n == 2:
            _, _, osc_z = self.trace_osc(x, z, exact)
            val = osc_z + self.series.slope(z)
            return self.config.torus.kahler_form(val.shape) * val
        return self.series.psi_z(x, z)

    # -- reduced data -------------------------------------------------------
    def h(self, x, z, exact=None):
        x, z = self._prep(x, z)
        osc, _, _ = self.trace_osc(x, z, exact)
        return self.profile.hbar(z) + osc

    def omega_tilde(self, x, z, exact=None) -> FormField:
        x, z = self._prep(x, z)
        return self.config.torus.kahler_form(z.shape) * self.T + self.psi(x, z, exact)

    def err(self, x, z, exact=None, method="auto"):
        """Err_CY = T^{-1} h omega_D^{n-1} / (omega_D + T^{-1} psi)^{n-1} - 1.

        ``method="ratio"`` evaluates the defining ratio.  ``"expanded"`` uses
        the equivalent form N / det(I + A/T).  Here A = l I + B is psi
        relative to omega_D, with l = k_pm z and B the oscillatory part, and

            N = sum_{j>=2} T^{-j} [C(n-1, j)(L_0^j - l^j)
                                   - sum_{i>=1} C(n-1-i, j-i) l^{j-i} sigma_i(B)].

        The orders j = 0, 1 cancel identically and B is taken straight from
        the mode sum, so no roundoff floor remains where Err is exponentially
        small.  ``"auto"`` picks the ratio for n = 2 (where N vanishes
        identically) and the expansion otherwise.
        """
        x, z = self._prep(x, z)
        k = self.n - 1
        if method == "auto":
            method = "ratio" if self.n == 2 else "expanded"
        with np.errstate(all="ignore"):
            psi = self.psi(x, z, exact)
            wD = self.config.torus.kahler_form(z.shape)
            den = wedge_power(wD + psi * (1.0 / self.T), k).top() / math.factorial(k)
            if method == "ratio":
                h = self.h(x, z, exact)
                return (h / self.T) / den - 1.0
            if method != "expanded":
                raise NeckError(f"unknown method {method!r}")
            _, _, H = self.series.potential(x, z)
            sig = self._elementary(self.series._hess_to_ddc(H), wD, k)
            l0 = l0_profile(z, self.config.k_minus, self.config.k_plus)
            lin = self.series.linear(z)
            num = np.zeros(z.shape)
            for j in range(2, k + 1):
                term = math.comb(k, j) * (l0**j - lin**j)
                for i in range(1, j + 1):
                    term = term - math.comb(k - i, j - i) * lin ** (j - i) * sig[i]
                num = num + term / self.T**j
            return num / den

    @staticmethod
    def _elementary(B: FormField, wD: FormField, k: int):
        """sigma_j of B relative to omega_D, j = 0..k, from wedge products."""
        vol = wedge_power(wD, k).top() / math.factorial(k)
        out = [np.ones(vol.shape)]
        for j in range(1, k + 1):
            top = wedge(wedge_power(B, j), wedge_power(wD, k - j)).top()
            out.append(top / (math.factorial(j) * math.factorial(k - j) * vol))
        return out

    def theta(self, x, z) -> FormField:
        """Base part theta of the connection (series evaluation, per-side gauge)."""
        x, z = self._prep(x, z)
        zz = _upper_zero(z)
        d = self.d
        _, gFz, _ = self.series.potential(x, zz, zorder=1)
        J = standard_complex_structure(d)
        dc = gFz @ J  # (d^c f)_j = sum_i f_i J[i, j]
        s = np.where(zz > 0, self.config.k_plus, self.config.k_minus)
        coeffs = {(j,): dc[:, j].copy() for j in range(d)}
        for a in range(d // 2):
            coeffs[(2 * a + 1,)] = coeffs[(2 * a + 1,)] + s * x[:, 2 * a]
        return FormField(d + 1, 1, coeffs)

    def upsilon(self, x, z, exact=None) -> FormField:
        """Upsilon = d_z omega~ - dz ^ d^c_D h as a 2-form on Q."""
        x, z = self._prep(x, z)
        d = self.d
        pz = self.psi_z(x, z, exact)
        _, grad, _ = self.trace_osc(x, z, exact)
        dc = grad @ standard_complex_structure(d)
        terms = {idx: v for idx, v in pz.coeffs.items()}
        for j in range(d):
            terms[(j, d)] = dc[:, j]
        return FormField(d + 1, 2, terms)

    def total_forms(self, x, z, exact=None, theta_shift=None):
        """(omega_T, Omega_T) on (base..., z, t) at the given points.

        ``theta_shift`` is an optional base 1-form coefficient array (N, d)
        added to theta (gauge experiments).
        """
        x, z = self._prep(x, z)
        d, n = self.d, self.n
        m = d + 2
        zax, tax = d, d + 1
        one = np.ones(z.shape)
        th = self.theta(x, z)
        Theta = {(i,): th.component((i,)) for i in range(d)}
        if theta_shift is not None:
            for i in range(d):
                Theta[(i,)] = Theta[(i,)] + theta_shift[:, i]
        Theta[(tax,)] = -one
        Theta = FormField(m, 1, Theta)
        dz = FormField(m, 1, {(zax,): one})
        wt = self.omega_tilde(x, z, exact)
        wt = FormField(m, 2, dict(wt.coeffs))
        omega = (wt + wedge(dz, Theta)) * (self.T ** ((2 - n) / n))
        h = self.h(x, z, exact)
        OmD = self.config.torus.volume_form(z.shape)
        OmD = FormField(m, OmD.degree, dict(OmD.coeffs))
        kappa = dz * (1j * h) - Theta * (1.0 + 0j)
        return omega, wedge(kappa, OmD)

    # -- potentials ---------------------------------------------------------
    def potential(self, x, z):
        """phi(x, z) = int_{T_+}^z u h du + phi(T_+), zero-average gauge at T_+."""
        x, z = self._prep(x, z)
        return self.series.slice_potential(x, z) + self.profile.phibar(z)

    def _osc_integral(self, x, z):
        """int_{-inf}^z of the oscillatory part of h, mode by mode."""
        s = self.series
        amp = -s.b * s.kappa**2 / s.kappa
        m1, _, _ = mode_sum(x, z, s.xi, s.theta, amp, s.kappa)
        m0, _, _ = mode_sum(x, np.zeros_like(z), s.xi, s.theta, amp, s.kappa)
        return np.where(z <= 0, m1, 2.0 * m0 - m1)

    def log_r(self, x, z, constants=None):
        """(log r_-, log r_+) from log r_- = A_- - int_{T_-}^z h, log r_+ = A_+ - int_z^{T_+} h."""
        x, z = self._prep(x, z)
        c = constants or matching_constants(self.n, self.T, -self.config.k_plus, self.config.k_minus)
        tm, tp = self.profile.boundaries
        prof = self.profile
        osc = self._osc_integral(x, z)
        osc_m = self._osc_integral(x, np.full_like(z, tm))
        osc_p = self._osc_integral(x, np.full_like(z, tp))
        lm = c.A_minus - (prof.H(z) - prof.H(tm)) - (osc - osc_m)
        lp = c.A_plus - (prof.H(tp) - prof.H(z)) - (osc_p - osc)
        return lm, lp


# ---------------------------------------------------------------------------
# sampled fields
# ---------------------------------------------------------------------------


def _min_metric_eigenvalue(two_form: FormField) -> np.ndarray:
    """Smallest eigenvalue of g(X, Y) = omega(X, JY) for a base 2-form."""
    M = two_form.as_matrix()
    J = standard_complex_structure(two_form.dims)
    g = J.T @ M
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    return np.linalg.eigvalsh(g)[..., 0]


@dataclass
class NeckFields:
    """Neck data sampled on a grid over Q = D x [z_lo, z_hi] (last axis z).

    Coefficient arrays have the grid shape.  ``mask`` marks nodes within the
    singularity exclusion radius; their ``err`` entries are NaN.
    """

    config: NeckConfig
    model: NeckModel = field(repr=False)
    grid: ChartGrid
    omega_tilde: FormField = field(repr=False)
    h: np.ndarray = field(repr=False)
    theta: FormField = field(repr=False)
    upsilon: FormField = field(repr=False)
    err: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    mask_radius: float = 0.0

    @property
    def z(self) -> np.ndarray:
        return self.grid.axes()[-1]

    @property
    def points(self) -> np.ndarray:
        return self.grid.points()

    def omega_T(self) -> FormField:
        return self._assemble()[0]

    def Omega_T(self) -> FormField:
        return self._assemble()[1]

    def _assemble(self):
        pts = self.points
        d = self.model.d
        om, Om = self.model.total_forms(pts[:, :d], pts[:, d])
        shape = self.grid.shape
        om = FormField(om.dims, 2, {k: v.reshape(shape) for k, v in om.coeffs.items()})
        Om = FormField(Om.dims, Om.degree, {k: v.reshape(shape) for k, v in Om.coeffs.items()})
        return om, Om

    def max_err(self) -> float:
        return float(np.nanmax(np.abs(self.err)))

    def save(self, path) -> Path:
        """Write the error field (binary + JSON sidecar) and a metadata file."""
        path = Path(path)
        save_field(FormField(self.grid.dims, 0, {(): np.nan_to_num(self.err, nan=0.0)}, self.grid), path)
        meta = {
            "schema": SCHEMA,
            "kind": "NeckFields",
            "config": self.config.to_json(),
            "mask_radius": self.mask_radius,
            "masked_nodes": int(self.mask.sum()),
        }
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1))
        return path


def load_neck(path):
    """Return (error field, NeckConfig, masked flag array) written by :meth:`NeckFields.save`."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    if meta.get("schema") != SCHEMA or meta.get("kind") != "NeckFields":
        raise NeckError("not a serialized neck")
    cfg = NeckConfig.from_json(meta["config"])
    errf = load_field(path)
    return errf, cfg, meta


def _q_grid(config: NeckConfig) -> ChartGrid:
    torus = config.torus
    base = torus.grid(config.base_counts)
    lo, hi = config.z_range if config.z_range is not None else config.boundaries()
    nz = int(config.nz)
    return ChartGrid(
        base.lower + (float(lo),),
        base.upper + (float(hi),),
        base.spacing + ((float(hi) - float(lo)) / (nz - 1),),
        base.periodic + (False,),
    )


def build_neck(config: NeckConfig, check_positivity: bool = True) -> NeckFields:
    """Sample the neck on D x [z_lo, z_hi] and run the positivity assertion."""
    model = NeckModel(config)
    grid = _q_grid(config)
    d = model.d
    pts = grid.points()
    x, z = pts[:, :d], pts[:, d]
    shape = grid.shape
    r = model.distance_to_singular_set(x, z)
    radius = config.mask_factor * max(grid.spacing[:d])
    mask = r < radius
    with np.errstate(all="ignore"):
        wt = model.omega_tilde(x, z)
        h = model.h(x, z)
        err = model.err(x, z)
        th = model.theta(x, z)
        ups = model.upsilon(x, z)
    if check_positivity:
        lam = _min_metric_eigenvalue(wt)
        bad = ~mask & ~((lam > 0) & (h > 0))
        if bad.any():
            i = int(np.argmax(bad))
            node = tuple(int(v) for v in np.unravel_index(i, shape))
            raise NeckError(
                f"positivity fails at node {node} (x = {x[i].round(4).tolist()}, z = {z[i]:.4g}): "
                f"min eigenvalue of omega~ = {lam[i]:.4g}, h = {h[i]:.4g}"
            )
    err = np.where(mask, np.nan, err)

    def reshape(f: FormField, dims):
        return FormField(dims, f.degree, {k: v.reshape(shape) for k, v in f.coeffs.items()}, grid)

    wt_q = FormField(d + 1, 2, {k: v.reshape(shape) for k, v in wt.coeffs.items()}, grid)
    return NeckFields(
        config,
        model,
        grid,
        wt_q,
        h.reshape(shape),
        reshape(th, d + 1),
        reshape(ups, d + 1),
        err.reshape(shape),
        r.reshape(shape),
        mask.reshape(shape),
        radius,
    )


def err_cy(neck: NeckFields) -> np.ndarray:
    """Err_CY samples on the neck grid (NaN on masked nodes)."""
    return neck.err


# ---------------------------------------------------------------------------
# finite-difference checks on small boxes of Q
# ---------------------------------------------------------------------------


def _d_invariant(form: FormField, qgrid: ChartGrid) -> FormField:
    """Exterior derivative of an S^1-invariant form on (Q, t): no t-derivatives.

    ``form`` lives in dimension ``qgrid.dims + 1`` with coefficient arrays of
    the Q-grid shape.
    """
    terms = {}
    for idx, arr in form.coeffs.items():
        for j in range(qgrid.dims):
            if j in idx:
                continue
            key = tuple(sorted((j,) + idx))
            pos = key.index(j)
            val = ((-1) ** pos) * partial(arr, j, qgrid)
            terms[key] = terms[key] + val if key in terms else val
    return FormField(form.dims, form.degree + 1, terms)


def _box(center, h, half_width):
    g = ChartGrid.centered_box(center, h, half_width)
    return g, g.points()


def _inner(arr, width=1):
    return arr[tuple(slice(width, -width) for _ in range(arr.ndim))]


def connection_residual(model: NeckModel, center, h=1e-3, half_width=2) -> float:
    """max |d theta - Upsilon| on the interior of a small box (series data)."""
    g, pts = _box(center, h, half_width)
    d = model.d
    x, z = pts[:, :d], pts[:, d]
    th = model.theta(x, z)
    th = FormField(d + 1, 1, {k: v.reshape(g.shape) for k, v in th.coeffs.items()}, g)
    from .discrete_exterior import fd_d

    dth = fd_d(th)
    ups = model.upsilon(x, z, exact=False)
    diff = 0.0
    for idx in set(dth.coeffs) | set(ups.coeffs):
        a = dth.component(idx)
        b = ups.component(idx).reshape(g.shape)
        diff = max(diff, float(np.max(np.abs(_inner(a - b)))))
    return diff


def closedness_residual(model: NeckModel, center, h=1e-3, half_width=2):
    """(max |d omega_T|, max |d Omega_T|) by finite differences on a Q box."""
    g, pts = _box(center, h, half_width)
    d = model.d
    om, Om = model.total_forms(pts[:, :d], pts[:, d], exact=False)
    om = FormField(om.dims, 2, {k: v.reshape(g.shape) for k, v in om.coeffs.items()})
    Om = FormField(Om.dims, Om.degree, {k: v.reshape(g.shape) for k, v in Om.coeffs.items()})
    r1 = max((float(np.max(np.abs(_inner(v)))) for v in _d_invariant(om, g).coeffs.values()), default=0.0)
    r2 = max((float(np.max(np.abs(_inner(v)))) for v in _d_invariant(Om, g).coeffs.values()), default=0.0)
    return r1, r2


def potential_residual(model: NeckModel, center, h=1e-3, half_width=2) -> float:
    """max |dd^c phi + T omega_D - (omega~ + dz ^ Theta)| on a Q box.

    d^c on the total space uses J dx = dy on the base and J dz = Theta / h.
    """
    g, pts = _box(center, h, half_width)
    d = model.d
    m = d + 2
    x, z = pts[:, :d], pts[:, d]
    shape = g.shape
    phi = model.potential(x, z).reshape(shape)
    hh = model.h(x, z, exact=False).reshape(shape)
    th = model.theta(x, z)
    J = standard_complex_structure(d)
    grads = [partial(phi, i, g) for i in range(d + 1)]
    dc = {}
    for i in range(d):
        for j in range(d):
            if J[i, j]:
                dc[(j,)] = dc.get((j,), 0.0) + J[i, j] * grads[i]
    # phi_z J dz = (phi_z / h) Theta, Theta = -dt + theta
    f = grads[d] / hh
    for i in range(d):
        dc[(i,)] = dc.get((i,), 0.0) + f * th.component((i,)).reshape(shape)
    dc[(d + 1,)] = -f
    ddc = _d_invariant(FormField(m, 1, dc), g)
    om, _ = model.total_forms(x, z, exact=False)
    scale = model.T ** ((model.n - 2) / model.n)
    target = {k: (v * scale).reshape(shape) for k, v in om.coeffs.items()}
    wD = model.config.torus.kahler_form()
    err = 0.0
    for idx in set(ddc.coeffs) | set(target):
        a = ddc.component(idx)
        if idx in wD.coeffs:
            a = a + model.T
        b = target.get(idx, 0.0)
        # two layers in: the first layer still sees one-sided edge values of d^c phi
        err = max(err, float(np.max(np.abs(_inner(a - b, 2)))))
    return err


# ---------------------------------------------------------------------------
# potentials, end profiles, matching constants
# ---------------------------------------------------------------------------


def kahler_potential(model: NeckModel, x, z):
    """Global potential phi with phi_z = z h and zero base average at T_+."""
    return model.potential(x, z)


def end_potentials(model: NeckModel, side: str, x=None, z=None, constants=None):
    """Leading end potential phi_- (side '-') or phi_+ (side '+').

    phi_pm = n^{(n+1)/n} |k_pm|^{-(n-1)/n} X^{(n+1)/n} / (n+1) - T^{2/n} A_pm / k_pm,
    X = A_pm - log r_pm.  With ``x = None`` the base-averaged profile is used
    (oscillatory parts dropped), otherwise the full log r_pm.  The potential
    of omega~ + dz ^ Theta is T^{(n-2)/n} phi_pm.
    """
    n, T = model.n, model.T
    c = constants or matching_constants(n, T, -model.config.k_plus, model.config.k_minus)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if side not in ("-", "+"):
        raise NeckError("side must be '-' or '+'")
    if x is None:
        tm, tp = model.profile.boundaries
        if side == "-":
            X = model.profile.H(z) - model.profile.H(tm)
        else:
            X = model.profile.H(tp) - model.profile.H(z)
    else:
        lm, lp = model.log_r(x, z, c)
        X = (c.A_minus - lm) if side == "-" else (c.A_plus - lp)
    k = model.config.k_minus if side == "-" else model.config.k_plus
    A = c.A_minus if side == "-" else c.A_plus
    lead = n ** ((n + 1) / n) * abs(k) ** (-(n - 1) / n) * np.abs(X) ** ((n + 1) / n) / (n + 1)
    return lead - T ** (2 / n) * A / k


def global_end_potential(model: NeckModel, side: str, z, constants=None):
    """Base-averaged potential of omega~ + dz ^ Theta written through log r_pm.

    It is phibar(z) - (T / k_-) log r_- on the minus end and
    phibar(z) + (T / k_+) log r_+ on the plus end (log r_+ increases with z),
    the exact counterpart of T^{(n-2)/n} phi_pm up to a constant.
    """
    c = constants or matching_constants(model.n, model.T, -model.config.k_plus, model.config.k_minus)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    tm, tp = model.profile.boundaries
    prof = model.profile
    if side == "-":
        logr = c.A_minus - (prof.H(z) - prof.H(tm))
        k = model.config.k_minus
    else:
        logr = c.A_plus - (prof.H(tp) - prof.H(z))
        k = model.config.k_plus
    sign = -1.0 if side == "-" else 1.0
    return prof.phibar(z) + sign * (model.T / k) * logr


def end_potential_exponent(model: NeckModel, side: str = "-", z=None, constants=None) -> float:
    """Fitted growth exponent of the global end potential in X = A - log r.

    d(potential)/dX is fitted against X on a log-log scale; the exponent of
    the potential itself is one plus the fitted slope.
    """
    n, T = model.n, model.T
    tm, tp = model.profile.boundaries
    if z is None:
        if side == "-":
            z = np.linspace(0.5 * tm, -2.0, 200)
        else:
            z = np.linspace(2.0, 0.5 * tp, 200)
    c = constants or matching_constants(n, T, -model.config.k_plus, model.config.k_minus)
    prof = model.profile
    phi = global_end_potential(model, side, z, c)
    X = (prof.H(z) - prof.H(tm)) if side == "-" else (prof.H(tp) - prof.H(z))
    dphi = np.gradient(phi, X)
    slope = np.polyfit(np.log(X), np.log(np.abs(dphi)), 1)[0]
    return 1.0 + float(slope)


@dataclass(frozen=True)
class MatchingConstants:
    """A_pm, log|t| and the neck ends for given (n, T, d1, d2).

    ``t_abs`` may underflow to 0; comparisons use ``log_t``.
    """

    n: int
    T: float
    d1: int
    d2: int
    A_minus: float
    A_plus: float
    log_t: float
    T_minus: float
    T_plus: float
    divisor_average: float = 0.0

    @property
    def k_minus(self):
        return self.d2

    @property
    def k_plus(self):
        return -self.d1

    @property
    def t_abs(self) -> float:
        return math.exp(self.log_t) if self.log_t > -745 else 0.0

    def balancing_defect(self) -> float:
        """Relative size of k_- A_- + k_+ A_+."""
        a = self.k_minus * self.A_minus
        b = self.k_plus * self.A_plus
        return abs(a + b) / max(abs(a), abs(b), 1e-300)

    def t_relation_defect(self) -> float:
        """Relative difference of -A_-/d1 and -A_+/d2."""
        u = -self.A_minus / self.d1
        v = -self.A_plus / self.d2
        return abs(u - v) / max(abs(u), abs(v), 1e-300)

    def sandwich_constant(self) -> float:
        """log|t| + T^2 / (n d1 d2)."""
        return self.log_t + self.T**2 / (self.n * self.d1 * self.d2)

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": "MatchingConstants",
            "n": self.n,
            "T": self.T,
            "d1": self.d1,
            "d2": self.d2,
            "A_minus": self.A_minus,
            "A_plus": self.A_plus,
            "log_t": self.log_t,
            "t_abs": self.t_abs,
            "T_minus": self.T_minus,
            "T_plus": self.T_plus,
            "divisor_average": self.divisor_average,
        }


def log_norm_section(pairing: DivisorPairing, x, modes: int = 4000):
    """log ||S_H|| for an n = 2 point divisor, zero-average normalization.

    log ||S_H|| = -sum_a m_a G(x - p_a) with the zero-mean torus Green's
    function G = sum_xi 2 pi / (A |xi|^2) cos(xi . (x - p)), so that
    dd^c log ||S_H|| = 2 pi [H] - k omega_D.
    """
    if pairing.points is None:
        raise NeckError("log ||S_H|| is built from point divisors only")
    torus = pairing.torus
    _, xi = torus.characters(modes)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    A = torus.volume
    w = 2 * math.pi / (A * np.sum(xi**2, axis=1))
    out = np.zeros(x.shape[0])
    for p, m in zip(pairing.points, pairing.mults):
        out -= m * np.cos((x - p) @ xi.T) @ w
    return out


def divisor_average(pairing: DivisorPairing, counts: int = 64, modes: int = 4000) -> float:
    """Base average of log ||S_H|| by periodic quadrature (zero by normalization)."""
    g = pairing.torus.grid(counts)
    return float(np.mean(log_norm_section(pairing, g.points(), modes)))


def matching_constants(n, T, d1, d2, divisor=0.0, k_minus=None, k_plus=None) -> MatchingConstants:
    """Matching constants A_pm and |t| for the neck with k_- = d2, k_+ = -d1.

    ``divisor`` is either the base average of log ||S_H|| or a point-divisor
    :class:`DivisorPairing` from which it is computed.
    """
    if int(d1) != d1 or int(d2) != d2 or d1 <= 0 or d2 <= 0:
        raise NeckError("d1 and d2 must be positive integers")
    if k_minus is not None and k_minus != d2:
        raise NeckError(f"d2 = {d2} must equal k_- = {k_minus}")
    if k_plus is not None and k_plus != -d1:
        raise NeckError(f"d1 = {d1} must equal -k_+ = {-k_plus}")
    km, kp = int(d2), -int(d1)
    k = km - kp
    avg = divisor_average(divisor) if isinstance(divisor, DivisorPairing) else float(divisor)
    A_minus = (T**2 - 1) / (n * km) - (-kp) / (2 * k) * avg
    A_plus = (T**2 - 1) / (-n * kp) - km / (2 * k) * avg
    tm, tp = t_boundaries(n, T, km, kp)
    return MatchingConstants(int(n), float(T), int(d1), int(d2), A_minus, A_plus, -A_minus / d1, tm, tp, avg)


def r_pm_profiles(model: NeckModel, z, base_point, constants=None):
    """(log r_-, log r_+) along the vertical line over ``base_point``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    x = np.broadcast_to(np.asarray(base_point, dtype=float), (z.size, model.d))
    return model.log_r(x, z, constants)


def neck_chern_integral(model: NeckModel, center, radius, n_theta=48, n_phi=96) -> float:
    """(1/2 pi) times the flux of the assembled Upsilon through a small sphere in Q (n = 2)."""
    if model.n != 2:
        raise NeckError("the sphere integral is defined for a three-dimensional Q")
    from .model_spaces import sphere_flux

    def form(pts):
        return model.upsilon(pts[:, :2], pts[:, 2])

    return sphere_flux(form, center, radius, n_theta, n_phi) / (2 * math.pi)


def cohomology_slope(model: NeckModel, z, counts=None):
    """Base average of d(omega~)/dz divided by the base average of omega_D, per height."""
    counts = model.config.base_counts if counts is None else counts
    x = model.config.torus.grid(counts).points()
    wD = model.config.torus.kahler_form()
    idx = next(iter(wD.coeffs))
    ref = float(wD.coeffs[idx])
    out = []
    for zz in np.atleast_1d(z):
        pz = model.series.psi_z(x, np.full(x.shape[0], float(zz)))
        out.append(float(np.mean(pz.component(idx))) / ref)
    return np.array(out)


# ---------------------------------------------------------------------------
# n = 2 exactness, volume
# ---------------------------------------------------------------------------


def n2_exactness(neck: NeckFields, z_tail: float = 0.5) -> dict:
    """Max |Err_CY| over unmasked nodes and the series truncation defect.

    For n = 2 the error vanishes identically; the truncation defect
    sup |Psi_J - Psi| over the base grid at |z| = z_tail measures how far the
    truncated current is from the closed-form one.
    """
    model = neck.model
    if model.n != 2:
        raise NeckError("n2_exactness needs n = 2")
    out = {"max_err": neck.max_err(), "z_tail": z_tail, "truncation_defect": None}
    if model.config.pairing.points is not None:
        base = model.config.torus.grid(model.config.base_counts).points()
        defect = 0.0
        for zz in (-z_tail, z_tail):
            z = np.full(base.shape[0], zz)
            approx = model.series.trace(base, z)
            exact, _ = model.series.exact_scalar(base, z)
            defect = max(defect, float(np.max(np.abs(approx - exact))))
        out["truncation_defect"] = defect
    return out


def slice_volume(model: NeckModel, z, counts=None):
    """int_D omega~(z)^{n-1}/(n-1)! by periodic quadrature on the base grid (series data)."""
    counts = model.config.base_counts if counts is None else counts
    g = model.config.torus.grid(counts)
    x = g.points()
    dV = float(np.prod(g.spacing))
    out = []
    for zz in np.atleast_1d(z):
        zv = np.full(x.shape[0], float(zz))
        wt = model.config.torus.kahler_form(zv.shape) * model.T + model.series.psi(x, zv)
        k = model.n - 1
        top = wedge_power(wt, k).top() / math.factorial(k)
        out.append(float(np.sum(top) * dV))
    return np.array(out)


def neck_volume(model: NeckModel, z_nodes: int = 16, counts=None) -> float:
    """int omega_T^n / n! = 2 pi T^{2-n} int dz int_D omega~^{n-1}/(n-1)!.

    Gauss-Legendre in z on [T_-, 0] and [0, T_+]; the fibre contributes 2 pi.
    """
    tm, tp = model.profile.boundaries
    gx, gw = np.polynomial.legendre.leggauss(z_nodes)
    total = 0.0
    for a, b in ((tm, 0.0), (0.0, tp)):
        zs = 0.5 * (b - a) * gx + 0.5 * (a + b)
        total += 0.5 * (b - a) * float(np.sum(gw * slice_volume(model, zs, counts)))
    return 2 * math.pi * model.T ** (2 - model.n) * total


def neck_volume_closed_form(n, T, k_minus, k_plus, base_volume) -> float:
    """2 pi Vol(D) (k_+ - k_-)/(n k_- k_+) (T^2 - 1)."""
    return 2 * math.pi * base_volume * (k_plus - k_minus) / (n * k_minus * k_plus) * (T**2 - 1)


__all__ = [
    "NeckError",
    "smoothstep",
    "l0_profile",
    "lt_profile",
    "q_profile",
    "q0_profile",
    "t_boundaries",
    "ReducedProfile",
    "NeckConfig",
    "NeckModel",
    "NeckFields",
    "build_neck",
    "load_neck",
    "err_cy",
    "connection_residual",
    "closedness_residual",
    "potential_residual",
    "kahler_potential",
    "end_potentials",
    "global_end_potential",
    "end_potential_exponent",
    "r_pm_profiles",
    "neck_chern_integral",
    "cohomology_slope",
    "MatchingConstants",
    "matching_constants",
    "log_norm_section",
    "divisor_average",
    "n2_exactness",
    "slice_volume",
    "neck_volume",
    "neck_volume_closed_form",
]
