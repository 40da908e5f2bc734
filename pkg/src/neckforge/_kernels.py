"""Hot loops: spectral mode sums and 2D-periodic Ewald sums.

Every kernel has a numba implementation and a pure numpy twin.  The
numba path is used unless ``NECKFORGE_DISABLE_NUMBA`` is set to a truthy
value or numba cannot be imported.  Both paths are always importable so
tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erfc as _erfc_np

_FLAG = os.environ.get("NECKFORGE_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED

_SQRT_PI = math.sqrt(math.pi)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# mode sums
#
#   S(x, z) = sum_m amp_m * f_m(z) * cos(xi_m . x + theta_m)
#   f_m(z)  = (-kappa_m * sgn z)^p * exp(-kappa_m |z|)
#
# The kernel returns S, its x-gradient and its x-Hessian.
# ---------------------------------------------------------------------------


def _mode_sum_numpy(x, z, xi, theta, amp, kappa, zorder, chunk=2048):
    n, d = x.shape
    val = np.zeros(n)
    grad = np.zeros((n, d))
    hess = np.zeros((n, d, d))
    sgn = np.sign(z)
    for s in range(0, n, chunk):
        e = min(n, s + chunk)
        ph = x[s:e] @ xi.T + theta[None, :]
        w = amp[None, :] * np.exp(-np.abs(z[s:e, None]) * kappa[None, :])
        if zorder:
            w = w * (-kappa[None, :] * sgn[s:e, None]) ** zorder
        c = w * np.cos(ph)
        sn = w * np.sin(ph)
        val[s:e] = c.sum(axis=1)
        grad[s:e] = -sn @ xi
        hess[s:e] = -np.einsum("nm,mi,mj->nij", c, xi, xi)
    return val, grad, hess


def _mode_sum_loop(x, z, xi, theta, amp, kappa, zorder):
    n, d = x.shape
    m = xi.shape[0]
    val = np.zeros(n)
    grad = np.zeros((n, d))
    hess = np.zeros((n, d, d))
    for i in range(n):
        az = abs(z[i])
        sg = 0.0
        if z[i] > 0.0:
            sg = 1.0
        elif z[i] < 0.0:
            sg = -1.0
        for k in range(m):
            w = amp[k] * math.exp(-az * kappa[k])
            if zorder > 0:
                w *= (-kappa[k] * sg) ** zorder
            ph = theta[k]
            for a in range(d):
                ph += xi[k, a] * x[i, a]
            c = w * math.cos(ph)
            s = w * math.sin(ph)
            val[i] += c
            for a in range(d):
                grad[i, a] -= s * xi[k, a]
                for b in range(d):
                    hess[i, a, b] -= c * xi[k, a] * xi[k, b]
    return val, grad, hess


# ---------------------------------------------------------------------------
# Ewald sum for a doubly periodic array of unit point charges in R^3
#
#   phi(x, z) = sum_lattice 1/|r - lambda|  (neutralised by a uniform sheet)
#
# Real-space part, reciprocal part and the k = 0 background term follow the
# standard Parry split.  Returns phi and its gradient (d/dx1, d/dx2, d/dz).
# ---------------------------------------------------------------------------


def _ewald_numpy(x, z, src, mult, images, recip, area, alpha):
    n = x.shape[0]
    phi = np.zeros(n)
    grad = np.zeros((n, 3))
    kn = np.sqrt(np.sum(recip**2, axis=1))
    a_k = kn / (2.0 * alpha)
    for p in range(src.shape[0]):
        q = mult[p]
        dx = x - src[p][None, :]
        # real space
        for lam in images:
            rx = dx - lam[None, :]
            rho2 = rx[:, 0] ** 2 + rx[:, 1] ** 2 + z**2
            rho = np.sqrt(rho2)
            f = _erfc_np(alpha * rho) / rho
            fp = -2.0 * alpha * np.exp(-(alpha**2) * rho2) / (_SQRT_PI * rho) - f / rho
            phi += q * f
            grad[:, 0] += q * fp * rx[:, 0] / rho
            grad[:, 1] += q * fp * rx[:, 1] / rho
            grad[:, 2] += q * fp * z / rho
        # reciprocal space
        ph = dx @ recip.T
        zz = z[:, None]
        t1 = np.exp(kn[None, :] * zz) * _erfc_np(a_k[None, :] + alpha * zz)
        t2 = np.exp(-kn[None, :] * zz) * _erfc_np(a_k[None, :] - alpha * zz)
        g = t1 + t2
        gp = kn[None, :] * (t1 - t2)
        pref = (math.pi / area) / kn[None, :]
        cs = np.cos(ph)
        sn = np.sin(ph)
        phi += q * np.sum(pref * cs * g, axis=1)
        grad[:, 0] += q * np.sum(-pref * sn * g * recip[None, :, 0], axis=1)
        grad[:, 1] += q * np.sum(-pref * sn * g * recip[None, :, 1], axis=1)
        grad[:, 2] += q * np.sum(pref * cs * gp, axis=1)
        # neutralising background
        erfz = 1.0 - _erfc_np(alpha * z)
        phi -= q * (2.0 * math.pi / area) * (
            z * erfz + np.exp(-(alpha * z) ** 2) / (alpha * _SQRT_PI)
        )
        grad[:, 2] -= q * (2.0 * math.pi / area) * erfz
    return phi, grad


def _ewald_loop(x, z, src, mult, images, recip, area, alpha):
    n = x.shape[0]
    phi = np.zeros(n)
    grad = np.zeros((n, 3))
    nk = recip.shape[0]
    for i in range(n):
        zi = z[i]
        for p in range(src.shape[0]):
            q = mult[p]
            d0 = x[i, 0] - src[p, 0]
            d1 = x[i, 1] - src[p, 1]
            for l in range(images.shape[0]):
                r0 = d0 - images[l, 0]
                r1 = d1 - images[l, 1]
                rho2 = r0 * r0 + r1 * r1 + zi * zi
                rho = math.sqrt(rho2)
                f = math.erfc(alpha * rho) / rho
                fp = -2.0 * alpha * math.exp(-alpha * alpha * rho2) / (_SQRT_PI * rho) - f / rho
                phi[i] += q * f
                grad[i, 0] += q * fp * r0 / rho
                grad[i, 1] += q * fp * r1 / rho
                grad[i, 2] += q * fp * zi / rho
            for k in range(nk):
                k0 = recip[k, 0]
                k1 = recip[k, 1]
                kn = math.sqrt(k0 * k0 + k1 * k1)
                ak = kn / (2.0 * alpha)
                t1 = math.exp(kn * zi) * math.erfc(ak + alpha * zi)
                t2 = math.exp(-kn * zi) * math.erfc(ak - alpha * zi)
                pref = (math.pi / area) / kn
                ph = k0 * d0 + k1 * d1
                cs = math.cos(ph)
                sn = math.sin(ph)
                g = t1 + t2
                phi[i] += q * pref * cs * g
                grad[i, 0] -= q * pref * sn * g * k0
                grad[i, 1] -= q * pref * sn * g * k1
                grad[i, 2] += q * pref * cs * kn * (t1 - t2)
            erfz = math.erf(alpha * zi)
            phi[i] -= q * (2.0 * math.pi / area) * (
                zi * erfz + math.exp(-(alpha * zi) ** 2) / (alpha * _SQRT_PI)
            )
            grad[i, 2] -= q * (2.0 * math.pi / area) * erfz
    return phi, grad


if HAVE_NUMBA:
    _mode_sum_jit = njit(cache=True, nogil=True)(_mode_sum_loop)
    _ewald_jit = njit(cache=True, nogil=True)(_ewald_loop)
else:  # pragma: no cover
    _mode_sum_jit = None
    _ewald_jit = None


def _prep(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def mode_sum(x, z, xi, theta, amp, kappa, zorder=0, use_numba=None):
    """Evaluate a damped cosine mode sum with x-gradient and x-Hessian.

    ``x`` has shape (N, d), ``z`` shape (N,), ``xi`` shape (M, d) and
    ``theta``, ``amp``, ``kappa`` shape (M,).  ``zorder`` is the number of
    z-derivatives applied to the exponential envelope (sgn 0 = 0).
    """
    x, z, xi, theta, amp, kappa = _prep(x, z, xi, theta, amp, kappa)
    if x.ndim != 2 or xi.ndim != 2 or x.shape[1] != xi.shape[1]:
        raise ValueError("x and xi must be 2-D with matching trailing dimension")
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    if use:
        return _mode_sum_jit(x, z, xi, theta, amp, kappa, int(zorder))
    return _mode_sum_numpy(x, z, xi, theta, amp, kappa, int(zorder))


def ewald_sum(x, z, src, mult, images, recip, area, alpha, use_numba=None):
    """Ewald-summed potential of a 2D-periodic set of charges and its gradient."""
    x, z, src, mult, images, recip = _prep(x, z, src, mult, images, recip)
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    if use:
        return _ewald_jit(x, z, src, mult, images, recip, float(area), float(alpha))
    return _ewald_numpy(x, z, src, mult, images, recip, float(area), float(alpha))
