"""Regularity scales, weight functions and weighted error diagnostics on the neck.

With r the distance to the singular set P in Q and L_T(z) = T + L_0(z):

    fr    = T^{-1} (r <= 1/T),  r (2/T <= r <= 1/4),  1 (r >= 1/2),
    s     = (L_T / T)^{1/2} fr T^{1/n},
    U_T   = T (1 - (L_T / T)^{n/2}),
    rho_k = exp(delta U_T) s^{nu + k + alpha} T^mu.

Between the regimes ``fr`` blends with the quintic smoothstep, which keeps it
monotone in r.  Everything is evaluated in logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neck import NeckConfig, NeckError, NeckModel, lt_profile, smoothstep


class WeightError(ValueError):
    """Raised on inadmissible weight parameters."""


def delta_cap(n, k_minus, k_plus, lambda1) -> float:
    """Computable part of the delta bound: sqrt(lambda_1) / (n (|k_-| + |k_+|))."""
    return math.sqrt(lambda1) / (n * (abs(k_minus) + abs(k_plus)))


@dataclass(frozen=True)
class WeightParams:
    """Weight exponents (delta, nu, mu, alpha).

    Admissibility: nu in (-1, 0), alpha in (0, 1), nu + alpha < 0,
    mu = (1 - 1/n)(nu + 2 + alpha) and 0 < delta < delta_cap.  The last two
    need (n, k_pm, lambda_1) and are checked by :meth:`validate`.
    """

    delta: float
    nu: float = -0.5
    mu: float = 0.0
    alpha: float = 0.25

    def __post_init__(self):
        if not self.delta > 0:
            raise WeightError("delta must be positive")
        if not -1 < self.nu < 0:
            raise WeightError("nu must lie in (-1, 0)")
        if not 0 < self.alpha < 1:
            raise WeightError("alpha must lie in (0, 1)")
        if not self.nu + self.alpha < 0:
            raise WeightError("need nu + alpha < 0")

    @staticmethod
    def mu_for(n, nu, alpha) -> float:
        return (1 - 1 / n) * (nu + 2 + alpha)

    @classmethod
    def default(cls, n, k_minus=1, k_plus=-1, lambda1=2 * math.pi) -> "WeightParams":
        nu, alpha = -0.5, 0.25
        return cls(0.5 * delta_cap(n, k_minus, k_plus, lambda1), nu, cls.mu_for(n, nu, alpha), alpha)

    def validate(self, n, k_minus=1, k_plus=-1, lambda1=2 * math.pi) -> "WeightParams":
        mu = self.mu_for(n, self.nu, self.alpha)
        if abs(self.mu - mu) > 1e-12 * max(1.0, abs(mu)):
            raise WeightError(f"mu = {self.mu} must equal (1 - 1/n)(nu + 2 + alpha) = {mu}")
        cap = delta_cap(n, k_minus, k_plus, lambda1)
        if not self.delta < cap:
            raise WeightError(f"delta = {self.delta} must be below {cap}")
        return self

    def error_exponent(self, n) -> float:
        """Predicted T-exponent of the weighted sup of Err_CY."""
        return -2 + (self.nu + self.alpha) / n + self.mu

    def to_json(self) -> dict:
        return {"delta": self.delta, "nu": self.nu, "mu": self.mu, "alpha": self.alpha}

    @classmethod
    def from_json(cls, d) -> "WeightParams":
        missing = [k for k in ("delta", "nu", "mu", "alpha") if k not in d]
        if missing:
            raise WeightError(f"weight parameters missing {missing}")
        return cls(float(d["delta"]), float(d["nu"]), float(d["mu"]), float(d["alpha"]))


# ---------------------------------------------------------------------------
# scales and weights
# ---------------------------------------------------------------------------


def fr(r, T):
    """Regularity radius proxy as a function of the distance r to P."""
    if T < 8:
        raise WeightError("the scale regimes need 2/T <= 1/4, i.e. T >= 8")
    r = np.asarray(r, dtype=float)
    s1 = smoothstep((r - 1.0 / T) * T)
    inner = (1.0 - s1) / T + s1 * np.minimum(r, 0.5)
    s2 = smoothstep(4.0 * (r - 0.25))
    return np.where(r <= 0.25, inner, (1.0 - s2) * np.minimum(r, 0.5) + s2)


def _lt(model: NeckModel, z):
    return lt_profile(model.T, z, model.config.k_minus, model.config.k_plus)


def log_scale_s(model: NeckModel, x, z):
    """log s at points (x, z)."""
    x, z = model._prep(x, z)
    n, T = model.n, model.T
    r = model.distance_to_singular_set(x, z)
    return 0.5 * np.log(_lt(model, z) / T) + np.log(fr(r, T)) + math.log(T) / n


def scale_s(model: NeckModel, x, z):
    return np.exp(log_scale_s(model, x, z))


def u_profile(model: NeckModel, z):
    """U_T(z) = T (1 - (L_T / T)^{n/2})."""
    T = model.T
    return T * (1.0 - (_lt(model, z) / T) ** (model.n / 2))


def log_weight(model: NeckModel, x, z, k: int, params: WeightParams):
    """log rho_k = delta U_T + (nu + k + alpha) log s + mu log T."""
    x, z = model._prep(x, z)
    a = params.nu + k + params.alpha
    return params.delta * u_profile(model, z) + a * log_scale_s(model, x, z) + params.mu * math.log(model.T)


def weight(model: NeckModel, x, z, k: int, params: WeightParams):
    return np.exp(log_weight(model, x, z, k, params))


def weighted_c0_norm(values, log_rho) -> float:
    """sup over nodes of rho |f|, ignoring NaN (masked) nodes."""
    values = np.abs(np.asarray(values, dtype=float))
    ok = np.isfinite(values)
    if not ok.any():
        return 0.0
    with np.errstate(over="ignore", under="ignore"):
        prod = np.exp(np.asarray(log_rho)[ok]) * values[ok]
    return float(np.max(prod))


def weight_lower_bound(n, T, k, params: WeightParams) -> float:
    """log of the lower bound on rho_k over the neck.

    T^{(1/n - 1) a + mu} when a = nu + k + alpha >= 0, T^{a/n + mu} otherwise.
    """
    a = params.nu + k + params.alpha
    if a >= 0:
        return ((1 / n - 1) * a + params.mu) * math.log(T)
    return (a / n + params.mu) * math.log(T)


def weight_lemma_check(model: NeckModel, params: WeightParams, k: int, x, z) -> dict:
    """Grid-exhaustive comparison of min rho_k with the lower bound."""
    lr = log_weight(model, x, z, k, params)
    bound = weight_lower_bound(model.n, model.T, k, params)
    a = params.nu + k + params.alpha
    return {
        "k": k,
        "exponent": a,
        "regime": "a>=0" if a >= 0 else "a<0",
        "min_log_rho": float(np.min(lr)),
        "log_bound": bound,
        "margin": float(np.min(lr) - bound),
        "pass": bool(np.min(lr) >= bound - 1e-12),
    }


# ---------------------------------------------------------------------------
# weighted error report
# ---------------------------------------------------------------------------


def _sample_points(model: NeckModel, counts, nz, interior_nz=41, interior=1.0):
    """Base grid times a z set: the full neck plus a dense |z| <= interior band."""
    base = model.config.torus.grid(counts).points()
    tm, tp = model.profile.boundaries
    zs = np.unique(np.concatenate([np.linspace(tm, tp, nz), np.linspace(-interior, interior, interior_nz)]))
    X = np.repeat(base, zs.size, axis=0)
    Z = np.tile(zs, base.shape[0])
    return X, Z


def err_weighted_sample(model: NeckModel, params: WeightParams, counts=8, nz=65, interior=1.0) -> dict:
    """Plain interior sup, weighted sup and the weight at one T."""
    X, Z = _sample_points(model, counts, nz, interior=interior)
    r = model.distance_to_singular_set(X, Z)
    # same exclusion radius as the sampled neck, independent of the sample grid
    g = model.config.torus.grid(model.config.base_counts)
    radius = model.config.mask_factor * max(g.spacing)
    keep = r >= radius
    err = model.err(X[keep], Z[keep])
    inner = np.abs(Z[keep]) <= interior
    if not inner.any():
        raise WeightError(f"no sample nodes with |z| <= {interior} lie outside the exclusion radius {radius:.3g}")
    lr = log_weight(model, X[keep], Z[keep], 0, params)
    return {
        "T": model.T,
        "sup_err": float(np.max(np.abs(err))),
        "interior_sup_err": float(np.max(np.abs(err[inner]))),
        "weighted_sup": weighted_c0_norm(err, lr),
    }


def _fit_slope(T, y) -> float:
    return float(np.polyfit(np.log(T), np.log(y), 1)[0])


def err_weighted_report(config: NeckConfig, params: WeightParams, Tsweep, counts=8, nz=65) -> dict:
    """Fit the T-exponents of the interior plain sup and the weighted sup of Err_CY."""
    rows = []
    for T in Tsweep:
        cfg = NeckConfig(
            float(T), config.torus, config.pairing, config.modes, config.base_counts, config.nz,
            None, config.mask_factor, config.smoothing, config.exact,
        )
        rows.append(err_weighted_sample(NeckModel(cfg), params, counts, nz))
    Ts = np.array([r["T"] for r in rows])
    plain = np.array([r["interior_sup_err"] for r in rows])
    wsup = np.array([r["weighted_sup"] for r in rows])
    n = config.n
    target = params.error_exponent(n)
    ratios = plain[:-1] / plain[1:]
    predicted = (Ts[1:] / Ts[:-1]) ** 2
    for r in rows:
        r["bound_log"] = target * math.log(r["T"])
    return {
        "rows": rows,
        "plain_slope": _fit_slope(Ts, plain),
        "weighted_slope": _fit_slope(Ts, wsup),
        "target": target,
        "ratios": ratios.tolist(),
        "predicted_ratios": predicted.tolist(),
        "max_ratio_error": float(np.max(np.abs(ratios / predicted - 1.0))),
    }


# ---------------------------------------------------------------------------
# comparability of the scales on small balls
# ---------------------------------------------------------------------------


def comparability_sample(model: NeckModel, params: WeightParams, pairs: int = 10000, k: int = 0,
                         seed: int = 0, fraction: float = 0.25) -> dict:
    """Ratios s(y)/s(x) and rho(y)/rho(x) for y in the g_T-ball of radius fraction * s(x).

    The ball is drawn in the local metric T^{(2-n)/n}(T |dx|^2 + hbar dz^2);
    hbar <= h away from P, so the sampled ball contains the true one.  Base
    points x cluster near P and heights cover the whole neck.
    """
    rng = np.random.default_rng(seed)
    n, T, d = model.n, model.T, model.d
    torus = model.config.torus
    tm, tp = model.profile.boundaries
    B = np.asarray(torus.basis)
    x = rng.uniform(0, 1, (pairs, d)) @ B
    pts = model.config.pairing.points
    if pts is not None:
        near = rng.uniform(size=pairs) < 0.5
        rad = np.exp(rng.uniform(math.log(0.1 / T), math.log(1.0), pairs))
        dirn = rng.normal(size=(pairs, d + 1))
        dirn /= np.linalg.norm(dirn, axis=1, keepdims=True)
        which = rng.integers(0, len(pts), pairs)
        off = pts[which] + rad[:, None] * dirn[:, :d]
        x = np.where(near[:, None], off, x)
        z = np.where(near, rad * dirn[:, d], rng.uniform(tm, tp, pairs))
    else:
        z = rng.uniform(tm, tp, pairs)
    ls_x = log_scale_s(model, x, z)
    radius = fraction * np.exp(ls_x)
    u = rng.normal(size=(pairs, d + 1))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    u *= rng.uniform(size=(pairs, 1)) ** (1.0 / (d + 1))
    c = T ** ((2 - n) / n)
    hb = model.profile.hbar(z)
    y = x + u[:, :d] * (radius / math.sqrt(c * T))[:, None]
    zy = np.clip(z + u[:, d] * radius / np.sqrt(c * hb), tm, tp)
    sr = np.exp(log_scale_s(model, y, zy) - ls_x)
    rr = np.exp(log_weight(model, y, zy, k, params) - log_weight(model, x, z, k, params))
    return {
        "T": T,
        "pairs": int(pairs),
        "s_ratio_min": float(sr.min()),
        "s_ratio_max": float(sr.max()),
        "rho_ratio_min": float(rr.min()),
        "rho_ratio_max": float(rr.max()),
    }


# ---------------------------------------------------------------------------
# comparison with the rescaled model geometries
# ---------------------------------------------------------------------------


def rescaled_model_compare(model: NeckModel, sigma0: float, patch: float = 1.0, samples: int = 400,
                           seed: int = 0, r_min: float = 0.05) -> dict:
    """Compare the neck near P with a Taub-NUT model after rescaling (n = 2).

    At distance r = sigma0 / T from P the scale is fr; with a = fr^2 T the
    rescaled coordinates are x = p + a x^, z = a z^ and the rescaled
    Gibbons-Hawking potential is V^ = a (T + Psi).  The model is
    m / (2 r^) + lambda with lambda = (T fr)^2, the sup of |V^ - model| over
    r_min <= r^ <= patch is returned.  The comparison uses the closed-form
    current, so it is free of truncation.
    """
    if model.n != 2 or model.config.pairing.points is None:
        raise NeckError("the Taub-NUT comparison needs an n = 2 point divisor")
    T = model.T
    p = np.asarray(model.config.pairing.points[0], dtype=float)
    mult = float(model.config.pairing.mults[0])
    rf = float(fr(sigma0 / T, T))
    a = rf * rf * T
    lam = (T * rf) ** 2
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(samples, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rh = rng.uniform(r_min, patch, samples)
    hat = u * rh[:, None]
    x = p + a * hat[:, :2]
    z = a * hat[:, 2]
    psi, _ = model.series.exact_scalar(x, z)
    V = a * (T + psi)
    Vm = mult / (2 * rh) + lam
    dev = np.abs(V - Vm)
    return {"T": T, "sigma0": sigma0, "fr": rf, "lambda": lam, "scale": a, "deviation": float(dev.max())}


def cylinder_compare(model: NeckModel, z: float, counts=16) -> float:
    """sup over the base of the rescaled metric difference from g_D + dz^2 at height z.

    Away from P the rescaled metric is (T / L_T)(g_D + psi / T + (h / T) dz^2).
    """
    from .discrete_exterior import standard_complex_structure

    T, d = model.T, model.d
    x = model.config.torus.grid(counts).points()
    zz = np.full(x.shape[0], float(z))
    L = float(_lt(model, z))
    psi = model.psi(x, zz, exact=False).as_matrix()
    J = standard_complex_structure(d)
    g1 = J.T @ psi
    g1 = 0.5 * (g1 + np.swapaxes(g1, -1, -2))
    base = (T / L - 1.0) * np.eye(d) + (1.0 / L) * g1
    h = model.h(x, zz, exact=False)
    dz = (h / L) - 1.0
    return float(max(np.max(np.abs(base)), np.max(np.abs(dz))))


__all__ = [
    "WeightError",
    "WeightParams",
    "delta_cap",
    "fr",
    "scale_s",
    "log_scale_s",
    "u_profile",
    "weight",
    "log_weight",
    "weighted_c0_norm",
    "weight_lower_bound",
    "weight_lemma_check",
    "err_weighted_sample",
    "err_weighted_report",
    "comparability_sample",
    "rescaled_model_compare",
    "cylinder_compare",
]
