"""Large-scale collapsing diagnostics of the neck family.

At large scale the neck is approximated by the interval [T_-, T_+] with the
one-dimensional metric

    g_1 = T^{(2-n)(n+1)/n} L_T(z)^{n-1} dz^2,

and its volume measure by (T + k_pm z)^{n-1} dz.  In the variable xi = z/T
the measure has density (1 + k_pm xi)^{n-1} on [-1/k_-, -1/k_+]; the arc
length of g_1 turns it into a density on the unit interval,

    V(x) = (x/d1)^{(n-1)/(n+1)}          on [0, d1/(d1+d2)],
           ((1-x)/d2)^{(n-1)/(n+1)}      on [d1/(d1+d2), 1],

up to normalization, with d1 = -k_+ and d2 = k_-.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .neck import NeckModel, lt_profile, matching_constants, slice_volume, t_boundaries


log = logging.getLogger(__name__)


class CollapseError(ValueError):
    """Raised on inconsistent collapse parameters."""


# ---------------------------------------------------------------------------
# reduced metric, diameter, volume
# ---------------------------------------------------------------------------


def _linear_lt(T, z, k_minus, k_plus):
    z = np.asarray(z, dtype=float)
    return T + np.where(z > 0, k_plus, k_minus) * z


def reduced_metric(n, T, z, k_minus=1, k_plus=-1, smoothed=True):
    """Coefficient T^{(2-n)(n+1)/n} L_T(z)^{n-1} of the reduced metric dz^2."""
    L = lt_profile(T, z, k_minus, k_plus) if smoothed else _linear_lt(T, z, k_minus, k_plus)
    return T ** ((2 - n) * (n + 1) / n) * L ** (n - 1)


def diameter(n, T, k_minus=1, k_plus=-1, smoothed=True) -> float:
    """Length of [T_-, T_+] in the reduced metric by adaptive quadrature."""
    tm, tp = t_boundaries(n, T, k_minus, k_plus)
    f = lambda z: math.sqrt(float(reduced_metric(n, T, z, k_minus, k_plus, smoothed)))
    cuts = [tm, -1.0, 0.0, 1.0, tp]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            total += integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0]
    return total


def diameter_closed_form(n, T, k_minus=1, k_plus=-1) -> float:
    """Unsmoothed length: sum over sides of 2 (T^{(n+1)/n} - 1) / ((n+1)|k_pm|)."""
    return sum(2.0 * (T ** ((n + 1) / n) - 1.0) / ((n + 1) * abs(k)) for k in (k_minus, k_plus))


def reduced_volume(n, T, k_minus=1, k_plus=-1, base_volume=1.0) -> float:
    """2 pi Vol(D) T^{2-n} int (T + k_pm z)^{n-1} dz over [T_-, T_+] by quadrature."""
    tm, tp = t_boundaries(n, T, k_minus, k_plus)
    f = lambda z: float(_linear_lt(T, z, k_minus, k_plus)) ** (n - 1)
    v = integrate.quad(f, tm, 0.0, epsrel=1e-13)[0] + integrate.quad(f, 0.0, tp, epsrel=1e-13)[0]
    return 2 * math.pi * base_volume * T ** (2 - n) * v


def _fit(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _check_sweep(Tsweep):
    T = np.asarray(sorted(float(t) for t in Tsweep))
    if T.size < 4:
        raise CollapseError("fits need at least 4 values of T")
    if T[-1] / T[0] < 10 - 1e-9:
        log.warning("T sweep spans a factor %.3g, less than a decade", T[-1] / T[0])
    return T


def diameter_fit(n, Tsweep, k_minus=1, k_plus=-1) -> dict:
    """Least-squares exponent of diameter(T) against the target (n+1)/n."""
    T = _check_sweep(Tsweep)
    D = np.array([diameter(n, t, k_minus, k_plus) for t in T])
    return {"exponent": _fit(T, D), "target": (n + 1) / n, "T": T.tolist(), "diameter": D.tolist()}


def log_t_law(n, Tsweep, k_minus=1, k_plus=-1) -> dict:
    """Volume-normalized diameter against log(1/|t|).

    D_V = diam Vol^{-1/(2n)} with |t| from the matching constants; the
    fitted exponent of D_V in log(1/|t|) is compared with 1/2.
    """
    T = _check_sweep(Tsweep)
    d1, d2 = -k_plus, k_minus
    logs, DV = [], []
    for t in T:
        c = matching_constants(n, t, d1, d2)
        logs.append(-c.log_t)
        DV.append(diameter(n, t, k_minus, k_plus) * reduced_volume(n, t, k_minus, k_plus) ** (-1 / (2 * n)))
    return {"exponent": _fit(np.array(logs), np.array(DV)), "target": 0.5, "log_inv_t": logs}


def volume_scaling_report(n, Tsweep, k_minus=1, k_plus=-1) -> dict:
    """Exponents of Vol / diam^{2n} (target -2n) and diam Vol^{-1/(2n)} (target 1)."""
    T = _check_sweep(Tsweep)
    V = np.array([reduced_volume(n, t, k_minus, k_plus) for t in T])
    D = np.array([diameter(n, t, k_minus, k_plus) for t in T])
    return {
        "diameter_normalized_volume": _fit(T, V / D ** (2 * n)),
        "volume_normalized_diameter": _fit(T, D * V ** (-1 / (2 * n))),
        "targets": [-2.0 * n, 1.0],
    }


def neck_length(model: NeckModel, base_point, z_nodes: int = 64) -> float:
    """Length of the vertical segment over ``base_point``: int sqrt(T^{(2-n)/n} h) dz."""
    n, T = model.n, model.T
    tm, tp = model.profile.boundaries
    gx, gw = np.polynomial.legendre.leggauss(z_nodes)
    total = 0.0
    cuts = [tm, -1.0, 0.0, 1.0, tp]
    for a, b in zip(cuts[:-1], cuts[1:]):
        z = 0.5 * (b - a) * gx + 0.5 * (a + b)
        x = np.broadcast_to(np.asarray(base_point, dtype=float), (z.size, model.d))
        h = model.h(x, z, exact=False)
        total += 0.5 * (b - a) * float(np.sum(gw * np.sqrt(T ** ((2 - n) / n) * h)))
    return total


def neck_measure_compare(model: NeckModel, bins: int = 8, counts=8, z_nodes: int = 8) -> float:
    """Max relative difference of slab volumes from the sampled neck and the reduced density."""
    tm, tp = model.profile.boundaries
    edges = np.concatenate([np.linspace(tm, 0.0, bins // 2 + 1), np.linspace(0.0, tp, bins // 2 + 1)[1:]])
    gx, gw = np.polynomial.legendre.leggauss(z_nodes)
    base_vol = model.config.torus.volume
    k = model.n - 1
    worst = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        z = 0.5 * (b - a) * gx + 0.5 * (a + b)
        num = 0.5 * (b - a) * float(np.sum(gw * slice_volume(model, z, counts)))
        ref = 0.5 * (b - a) * float(np.sum(gw * _linear_lt(model.T, z, model.config.k_minus, model.config.k_plus) ** k))
        ref *= base_vol
        worst = max(worst, abs(num / ref - 1.0))
    return worst


# ---------------------------------------------------------------------------
# renormalized limit measure
# ---------------------------------------------------------------------------


def _check_degrees(k_minus, k_plus, d1, d2):
    if d1 != -k_plus or d2 != k_minus:
        raise CollapseError(f"need d1 = -k_+ and d2 = k_- (got d1 = {d1}, d2 = {d2}, k_- = {k_minus}, k_+ = {k_plus})")
    if d1 <= 0 or d2 <= 0:
        raise CollapseError("d1 and d2 must be positive")


def x_of_xi(xi, n, d1, d2):
    """Arc-length coordinate x in [0, 1] of xi in [-1/d2, 1/d1].

    On each side 1 + k_pm (1/k_- - 1/k_+) v = (1 + k_pm xi)^{(n+1)/2} and
    x = v + d1 / (d1 + d2).
    """
    xi = np.asarray(xi, dtype=float)
    c = 1.0 / d2 + 1.0 / d1
    p = (n + 1) / 2
    vm = ((1 + d2 * xi) ** p - 1.0) / (d2 * c)
    vp = ((1 - d1 * np.clip(xi, None, 1.0 / d1)) ** p - 1.0) / (-d1 * c)
    v = np.where(xi <= 0, vm, vp)
    return v + d1 / (d1 + d2)


def xi_of_x(x, n, d1, d2):
    """Inverse of :func:`x_of_xi`."""
    x = np.asarray(x, dtype=float)
    c = 1.0 / d2 + 1.0 / d1
    v = x - d1 / (d1 + d2)
    q = 2.0 / (n + 1)
    xm = (np.clip(1 + d2 * c * v, 0, None) ** q - 1.0) / d2
    xp = (1.0 - np.clip(1 - d1 * c * v, 0, None) ** q) / d1
    return np.where(v <= 0, xm, xp)


def xi_density(xi, n, d1, d2):
    """(1 + k_pm xi)^{n-1} with k_- = d2, k_+ = -d1."""
    xi = np.asarray(xi, dtype=float)
    return np.where(xi <= 0, 1 + d2 * xi, 1 - d1 * xi) ** (n - 1)


def pushforward_density(x, n, d1, d2):
    """Density of the xi-measure in the x variable: (1 + k xi)^{n-1} |d xi / d x|."""
    x = np.asarray(x, dtype=float)
    xi = xi_of_x(x, n, d1, d2)
    c = 1.0 / d2 + 1.0 / d1
    u = np.where(xi <= 0, 1 + d2 * xi, 1 - d1 * xi)
    # u^{(n+1)/2} = 1 +- d_pm c v, so |d xi/dx| = |du/dx| / d_pm = 2 c / ((n+1) u^{(n-1)/2})
    with np.errstate(divide="ignore", invalid="ignore"):
        dxi = 2 * c / ((n + 1) * u ** ((n - 1) / 2))
        out = u ** (n - 1) * dxi
    return np.where(u > 0, out, 0.0)


def limit_density(x, n, d1, d2):
    """Unnormalized V(x): (x/d1)^{p} on the left, ((1-x)/d2)^{p} on the right, p = (n-1)/(n+1)."""
    x = np.asarray(x, dtype=float)
    p = (n - 1) / (n + 1)
    j = d1 / (d1 + d2)
    return np.where(x <= j, np.clip(x, 0, None) / d1, np.clip(1 - x, 0, None) / d2) ** p


def limit_density_integral(n, d1, d2) -> float:
    """int_0^1 of :func:`limit_density` (closed form)."""
    p = (n - 1) / (n + 1)
    j = d1 / (d1 + d2)
    return d1 * (j / d1) ** (p + 1) / (p + 1) + d2 * ((1 - j) / d2) ** (p + 1) / (p + 1)


@dataclass
class LimitMeasureProfile:
    """Samples of the limit measure in xi and on the unit interval (probability density)."""

    n: int
    d1: int
    d2: int
    xi: np.ndarray
    xi_density: np.ndarray
    v: np.ndarray
    density: np.ndarray
    mass: float = 1.0

    @property
    def junction(self) -> float:
        return self.d1 / (self.d1 + self.d2)

    def normalization(self) -> float:
        """int_0^1 density dv by adaptive quadrature split at the junction."""
        f = lambda t: float(pushforward_density(t, self.n, self.d1, self.d2)) / self.mass
        j = self.junction
        return integrate.quad(f, 0, j, epsrel=1e-13, epsabs=0)[0] + integrate.quad(f, j, 1, epsrel=1e-13, epsabs=0)[0]

    def kink_location(self, margin: float = 0.05) -> float:
        """Node of largest second difference of the sampled density.

        Nodes within ``margin`` of the endpoints are skipped: the density
        behaves like a fractional power there and its second differences
        grow without a kink.
        """
        sd = np.abs(np.diff(self.density, 2))
        inner = self.v[1:-1]
        keep = (inner > margin) & (inner < 1 - margin)
        return float(inner[keep][np.argmax(sd[keep])])


def measure_profile(n, k_minus, k_plus, d1, d2, samples: int = 1000) -> LimitMeasureProfile:
    """Push the xi-measure (1 + k_pm xi)^{n-1} d xi forward to [0, 1] and normalize it."""
    _check_degrees(k_minus, k_plus, d1, d2)
    if n < 2:
        raise CollapseError("n must be at least 2")
    xi = np.linspace(-1.0 / d2, 1.0 / d1, samples)
    v = np.linspace(0.0, 1.0, samples)
    # total xi-mass = 1/(n d2) + 1/(n d1); the change of variables preserves it
    mass = (1.0 / d1 + 1.0 / d2) / n
    return LimitMeasureProfile(
        n, d1, d2, xi, xi_density(xi, n, d1, d2), v, pushforward_density(v, n, d1, d2) / mass, mass
    )


__all__ = [
    "CollapseError",
    "reduced_metric",
    "diameter",
    "diameter_closed_form",
    "reduced_volume",
    "diameter_fit",
    "log_t_law",
    "volume_scaling_report",
    "neck_length",
    "neck_measure_compare",
    "x_of_xi",
    "xi_of_x",
    "xi_density",
    "pushforward_density",
    "limit_density",
    "limit_density_integral",
    "LimitMeasureProfile",
    "measure_profile",
]
