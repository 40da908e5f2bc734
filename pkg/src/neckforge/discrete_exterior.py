"""Finite-difference exterior calculus on box and periodic chart grids.

Forms are stored as dictionaries from strictly increasing multi-indices to
coefficient arrays.  A form may live on a ``ChartGrid`` (needed for
derivatives) or be a bare pointwise sample with ``grid=None``; the algebraic
operations (wedge, Hodge star, traces, volume ratios) work in both cases and
broadcast over the coefficient array shape.

Conventions
-----------
* ``J dx_i = sum_j J[i, j] dx_j``; on C^k with real coordinates
  ``(x_1, y_1, ..., x_k, y_k)`` the standard structure has ``J dx = dy``.
* ``d^c = J o d``, so ``dd^c = 2 sqrt(-1) d dbar`` and on C,
  ``dd^c f = (f_xx + f_yy) dx^dy``.
* ``Delta = d delta + delta d`` is the non-negative Hodge Laplacian; on flat
  charts it equals ``-sum d^2/dx_i^2`` on each component.
* Orientation is the axis order.
"""

from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


class FormError(ValueError):
    """Raised for ill-posed form operations."""


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChartGrid:
    """Tensor-product grid on a box; periodic axes omit the right endpoint."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    spacing: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        m = len(self.lower)
        if not (len(self.upper) == len(self.spacing) == len(self.periodic) == m):
            raise FormError("grid axis descriptors have inconsistent lengths")
        if m == 0:
            raise FormError("grid must have at least one axis")
        for a in range(m):
            h = self.spacing[a]
            if not h > 0:
                raise FormError(f"spacing must be positive on axis {a}")
            span = self.upper[a] - self.lower[a]
            if span < 0:
                raise FormError(f"upper < lower on axis {a}")
            if self.periodic[a]:
                ratio = span / h
                if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                    raise FormError(
                        f"periodic axis {a}: extent {span} is not an integer multiple of spacing {h}"
                    )

    @classmethod
    def uniform(cls, lower, upper, counts, periodic=None) -> "ChartGrid":
        """Grid with a prescribed number of nodes per axis."""
        lower = tuple(float(v) for v in lower)
        upper = tuple(float(v) for v in upper)
        m = len(lower)
        periodic = tuple(bool(p) for p in (periodic or (False,) * m))
        spacing = []
        for a in range(m):
            n = int(counts[a])
            span = upper[a] - lower[a]
            if periodic[a]:
                spacing.append(span / n)
            else:
                if n < 2:
                    raise FormError("non-periodic axes need at least two nodes")
                spacing.append(span / (n - 1))
        return cls(lower, upper, tuple(spacing), periodic)

    @classmethod
    def centered_box(cls, center, h, half_width: int = 2) -> "ChartGrid":
        """Small non-periodic box of (2*half_width+1)^m nodes around a point."""
        c = np.asarray(center, dtype=float)
        lo = tuple(c - half_width * h)
        hi = tuple(c + half_width * h)
        m = c.size
        return cls(lo, hi, (float(h),) * m, (False,) * m)

    @property
    def dims(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> tuple[int, ...]:
        out = []
        for a in range(self.dims):
            ratio = (self.upper[a] - self.lower[a]) / self.spacing[a]
            n = int(round(ratio))
            out.append(n if self.periodic[a] else n + 1)
        return tuple(out)

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [self.lower[a] + self.spacing[a] * np.arange(n) for a, n in enumerate(self.shape)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an (N, m) array in row-major order."""
        return np.stack([g.ravel() for g in self.mesh()], axis=1)

    def center_index(self) -> tuple[int, ...]:
        return tuple(n // 2 for n in self.shape)

    def header(self) -> dict:
        return {
            "dims": self.dims,
            "extents": [[lo, hi] for lo, hi in zip(self.lower, self.upper)],
            "spacing": list(self.spacing),
            "periodic": list(self.periodic),
            "shape": list(self.shape),
        }


# ---------------------------------------------------------------------------
# multi-index helpers
# ---------------------------------------------------------------------------


def _perm_sign(seq: Sequence[int]) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def normalize_index(idx: Sequence[int]) -> tuple[int, MultiIndex]:
    """Return (sign, sorted index); sign 0 if an index repeats."""
    idx = tuple(int(i) for i in idx)
    if len(set(idx)) != len(idx):
        return 0, idx
    return _perm_sign(idx), tuple(sorted(idx))


def basis_indices(m: int, q: int) -> list[MultiIndex]:
    return list(itertools.combinations(range(m), q))


def complement(idx: MultiIndex, m: int) -> MultiIndex:
    s = set(idx)
    return tuple(i for i in range(m) if i not in s)


# ---------------------------------------------------------------------------
# forms
# ---------------------------------------------------------------------------


@dataclass
class FormField:
    """A differential q-form sampled on a grid or at a batch of points."""

    dims: int
    degree: int
    coeffs: dict = dc_field(default_factory=dict)
    grid: ChartGrid | None = None

    def __post_init__(self):
        if not 0 <= self.degree <= self.dims:
            raise FormError(f"degree {self.degree} outside [0, {self.dims}]")
        clean: dict[MultiIndex, np.ndarray] = {}
        shape = None
        for idx, arr in self.coeffs.items():
            idx = tuple(int(i) for i in idx)
            if len(idx) != self.degree:
                raise FormError(f"multi-index {idx} has wrong length for degree {self.degree}")
            if any(idx[i] >= idx[i + 1] for i in range(len(idx) - 1)):
                raise FormError(f"multi-index {idx} is not strictly increasing")
            if any(i < 0 or i >= self.dims for i in idx):
                raise FormError(f"multi-index {idx} out of range")
            arr = np.asarray(arr)
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise FormError("coefficient arrays must share one shape")
            clean[idx] = arr
        if self.grid is not None:
            if self.grid.dims != self.dims:
                raise FormError("grid dimension does not match form dimension")
            if shape is not None and shape != self.grid.shape:
                raise FormError(
                    f"coefficient shape {shape} does not match grid shape {self.grid.shape}"
                )
        self.coeffs = clean

    # construction ---------------------------------------------------------

    @classmethod
    def from_terms(cls, dims: int, degree: int, terms: Mapping, grid=None) -> "FormField":
        """Build from possibly unsorted multi-indices, applying permutation signs."""
        acc: dict[MultiIndex, np.ndarray] = {}
        for idx, arr in terms.items():
            sign, key = normalize_index(idx)
            if sign == 0:
                continue
            val = sign * np.asarray(arr)
            acc[key] = acc[key] + val if key in acc else val
        return cls(dims, degree, acc, grid)

    @classmethod
    def scalar(cls, dims: int, values, grid=None) -> "FormField":
        return cls(dims, 0, {(): np.asarray(values)}, grid)

    @classmethod
    def basis(cls, dims: int, idx: Sequence[int], shape=(), grid=None, dtype=float) -> "FormField":
        sign, key = normalize_index(idx)
        if grid is not None:
            shape = grid.shape
        return cls(dims, len(key), {key: sign * np.ones(shape, dtype=dtype)}, grid)

    @classmethod
    def zeros(cls, dims: int, degree: int, shape=(), grid=None, dtype=float) -> "FormField":
        if grid is not None:
            shape = grid.shape
        return cls(dims, degree, {idx: np.zeros(shape, dtype=dtype) for idx in basis_indices(dims, degree)}, grid)

    @classmethod
    def from_matrix(cls, mat, grid=None) -> "FormField":
        """2-form from an antisymmetric coefficient matrix (..., m, m)."""
        mat = np.asarray(mat)
        m = mat.shape[-1]
        return cls(m, 2, {(i, j): mat[..., i, j] for i, j in basis_indices(m, 2)}, grid)

    # access ---------------------------------------------------------------

    @property
    def sample_shape(self) -> tuple[int, ...]:
        if self.coeffs:
            return next(iter(self.coeffs.values())).shape
        return self.grid.shape if self.grid is not None else ()

    def component(self, idx: Sequence[int]):
        sign, key = normalize_index(idx)
        if sign == 0 or key not in self.coeffs:
            return np.zeros(self.sample_shape)
        return sign * self.coeffs[key]

    def dense(self) -> "FormField":
        """Copy with every basis component present."""
        shape = self.sample_shape
        dtype = np.result_type(*[a.dtype for a in self.coeffs.values()]) if self.coeffs else float
        out = {}
        for idx in basis_indices(self.dims, self.degree):
            out[idx] = np.array(self.coeffs[idx], dtype=dtype) if idx in self.coeffs else np.zeros(shape, dtype=dtype)
        return FormField(self.dims, self.degree, out, self.grid)

    def as_matrix(self) -> np.ndarray:
        """Antisymmetric (..., m, m) matrix of a 2-form."""
        if self.degree != 2:
            raise FormError("as_matrix needs a 2-form")
        shape = self.sample_shape
        dtype = np.result_type(*[a.dtype for a in self.coeffs.values()]) if self.coeffs else float
        mat = np.zeros(shape + (self.dims, self.dims), dtype=dtype)
        for (i, j), arr in self.coeffs.items():
            mat[..., i, j] = arr
            mat[..., j, i] = -arr
        return mat

    def top(self):
        """Coefficient of dx_0^...^dx_{m-1} for a top-degree form."""
        if self.degree != self.dims:
            raise FormError("top() needs a top-degree form")
        return self.component(tuple(range(self.dims)))

    def value(self):
        if self.degree != 0:
            raise FormError("value() needs a 0-form")
        return self.component(())

    def at(self, index) -> "FormField":
        """Pointwise sample at a grid index."""
        return FormField(self.dims, self.degree, {k: np.asarray(v[index]) for k, v in self.coeffs.items()})

    # arithmetic -----------------------------------------------------------

    def _check_compatible(self, other: "FormField"):
        if self.dims != other.dims or self.degree != other.degree:
            raise FormError("forms must share dimension and degree")
        if self.grid is not None and other.grid is not None and self.grid != other.grid:
            raise FormError("grid mismatch")

    def __add__(self, other: "FormField") -> "FormField":
        self._check_compatible(other)
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out[k] + v if k in out else v
        return FormField(self.dims, self.degree, out, self.grid or other.grid)

    def __neg__(self) -> "FormField":
        return FormField(self.dims, self.degree, {k: -v for k, v in self.coeffs.items()}, self.grid)

    def __sub__(self, other: "FormField") -> "FormField":
        return self + (-other)

    def __mul__(self, s) -> "FormField":
        s = np.asarray(s) if not np.isscalar(s) else s
        return FormField(self.dims, self.degree, {k: v * s for k, v in self.coeffs.items()}, self.grid)

    __rmul__ = __mul__

    def conj(self) -> "FormField":
        return FormField(self.dims, self.degree, {k: np.conj(v) for k, v in self.coeffs.items()}, self.grid)

    @property
    def real(self) -> "FormField":
        return FormField(self.dims, self.degree, {k: np.real(v) for k, v in self.coeffs.items()}, self.grid)

    @property
    def imag(self) -> "FormField":
        return FormField(self.dims, self.degree, {k: np.imag(v) for k, v in self.coeffs.items()}, self.grid)

    def max_abs(self, mask=None) -> float:
        best = 0.0
        for v in self.coeffs.values():
            a = np.abs(v)
            if mask is not None:
                a = a[mask]
            if a.size:
                best = max(best, float(np.max(a)))
        return best

    def with_grid(self, grid: ChartGrid) -> "FormField":
        return FormField(self.dims, self.degree, self.coeffs, grid)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricSample:
    """Symmetric positive definite matrix per node, optional complex structure."""

    grid: ChartGrid | None
    matrices: np.ndarray
    complex_structure: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.matrices, dtype=float)
        if g.ndim < 2 or g.shape[-1] != g.shape[-2]:
            raise FormError("metric matrices must have shape (..., m, m)")
        if not np.allclose(g, np.swapaxes(g, -1, -2), atol=1e-12, rtol=1e-10):
            raise FormError("metric matrices must be symmetric")
        ev = np.linalg.eigvalsh(g)
        bad = np.argwhere(ev[..., 0] <= 0)
        if bad.size:
            raise FormError(f"metric not positive definite at node {tuple(int(i) for i in bad[0])}")
        self.matrices = g

    @classmethod
    def flat(cls, grid: ChartGrid | None, m: int | None = None, shape=()) -> "MetricSample":
        if grid is not None:
            m, shape = grid.dims, grid.shape
        eye = np.broadcast_to(np.eye(m), tuple(shape) + (m, m)).copy()
        return cls(grid, eye)

    @property
    def dims(self) -> int:
        return self.matrices.shape[-1]


def standard_complex_structure(m: int) -> np.ndarray:
    """J on covectors for coordinates (x_1, y_1, ..., x_k, y_k): J dx = dy."""
    if m % 2:
        raise FormError("complex structure needs even real dimension")
    J = np.zeros((m, m))
    for a in range(0, m, 2):
        J[a, a + 1] = 1.0
        J[a + 1, a] = -1.0
    return J


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


def partial(arr: np.ndarray, axis: int, grid: ChartGrid, side: str = "central") -> np.ndarray:
    """Difference along one axis.

    ``side="central"`` is the second-order centered difference (one-sided
    second order at box edges).  ``"forward"`` and ``"backward"`` are the
    staggered one-sided differences; composing one with the other gives the
    compact three-point second difference.
    """
    h = grid.spacing[axis]
    if side != "central":
        return _staggered(arr, axis, h, grid.periodic[axis], side)
    if grid.periodic[axis]:
        return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2.0 * h)
    if arr.shape[axis] < 3:
        raise FormError(f"axis {axis} needs at least three nodes for differencing")
    return np.gradient(arr, h, axis=axis, edge_order=2)


def _staggered(arr, axis, h, periodic, side):
    if periodic:
        if side == "forward":
            return (np.roll(arr, -1, axis=axis) - arr) / h
        return (arr - np.roll(arr, 1, axis=axis)) / h
    if arr.shape[axis] < 2:
        raise FormError(f"axis {axis} needs at least two nodes for differencing")
    d = np.diff(arr, axis=axis) / h
    # the missing end sample repeats its neighbour
    if side == "forward":
        return np.concatenate([d, np.take(d, [-1], axis=axis)], axis=axis)
    if side == "backward":
        return np.concatenate([np.take(d, [0], axis=axis), d], axis=axis)
    raise FormError(f"unknown difference side {side!r}")


def fd_d(field: FormField, side: str = "central") -> FormField:
    """Discrete exterior derivative (``side`` as in :func:`partial`)."""
    if field.degree >= field.dims:
        raise FormError("top-degree form has no exterior derivative")
    grid = field.grid
    if grid is None:
        raise FormError("fd_d needs a grid")
    terms: dict[MultiIndex, np.ndarray] = {}
    for idx, arr in field.coeffs.items():
        for j in range(field.dims):
            if j in idx:
                continue
            sign, key = normalize_index((j,) + idx)
            val = sign * partial(arr, j, grid, side)
            terms[key] = terms[key] + val if key in terms else val
    return FormField(field.dims, field.degree + 1, terms, grid)


def apply_complex_structure(one_form: FormField, J) -> FormField:
    """Apply J to a 1-form with J dx_i = sum_j J[i, j] dx_j."""
    if one_form.degree != 1:
        raise FormError("complex structure acts on 1-forms here")
    m = one_form.dims
    J = np.asarray(J)
    shape = one_form.sample_shape
    out = {}
    for j in range(m):
        acc = np.zeros(shape, dtype=np.result_type(J.dtype, *[v.dtype for v in one_form.coeffs.values()]))
        for (i,), arr in one_form.coeffs.items():
            acc = acc + arr * J[..., i, j]
        out[(j,)] = acc
    return FormField(m, 1, out, one_form.grid)


def fd_dc(scalar: FormField, J) -> FormField:
    if scalar.degree != 0:
        raise FormError("d^c is applied to functions")
    return apply_complex_structure(fd_d(scalar), J)


def fd_ddc(scalar: FormField, complex_structure=None) -> FormField:
    """dd^c of a function; equals 2 sqrt(-1) d dbar for integrable J."""
    if scalar.dims % 2:
        raise FormError("dd^c needs even real dimension")
    if scalar.degree != 0:
        raise FormError("dd^c is applied to functions")
    J = standard_complex_structure(scalar.dims) if complex_structure is None else complex_structure
    return fd_d(fd_dc(scalar, J))


# ---------------------------------------------------------------------------
# Hodge theory
# ---------------------------------------------------------------------------


def hodge_star(field: FormField, metric: MetricSample) -> FormField:
    """Riemannian Hodge star with orientation given by the axis order."""
    m = field.dims
    if metric.dims != m:
        raise FormError("metric dimension mismatch")
    q = field.degree
    g = metric.matrices
    ginv = np.linalg.inv(g)
    vol = np.sqrt(np.linalg.det(g))
    shape = np.broadcast_shapes(field.sample_shape, g.shape[:-2])
    out: dict[MultiIndex, np.ndarray] = {}
    for J in basis_indices(m, q):
        raised = 0.0
        for I, a in field.coeffs.items():
            if q == 0:
                minor = 1.0
            else:
                minor = np.linalg.det(ginv[..., list(J), :][..., :, list(I)])
            raised = raised + minor * a
        K = complement(J, m)
        sign = _perm_sign(J + K)
        out[K] = np.broadcast_to(sign * vol * raised, shape).copy()
    return FormField(m, m - q, out, field.grid)


def codifferential(field: FormField, metric: MetricSample, side: str = "central") -> FormField:
    m, q = field.dims, field.degree
    if q == 0:
        return FormField.zeros(m, 0, grid=field.grid) if field.grid else FormField.scalar(m, 0.0)
    sign = (-1) ** (m * (q + 1) + 1)
    return sign * hodge_star(fd_d(hodge_star(field, metric), side), metric)


def _constant_metric(metric: MetricSample) -> bool:
    g = np.asarray(metric.matrices)
    if g.ndim == 2:
        return True
    flat = g.reshape(-1, g.shape[-2], g.shape[-1])
    return bool(np.all(flat == flat[0]))


def hodge_laplacian(field: FormField, metric: MetricSample, stencil: str = "auto") -> FormField:
    """Non-negative Hodge Laplacian d delta + delta d by composed differences.

    With a constant metric (``stencil="auto"`` or ``"compact"``) d is a
    forward difference and the d inside delta a backward one, which gives the
    compact second difference.  Otherwise both are centered differences.
    """
    m, q = field.dims, field.degree
    if stencil == "auto":
        stencil = "compact" if _constant_metric(metric) else "central"
    if stencil == "compact":
        outer, inner = "forward", "backward"
    elif stencil == "central":
        outer = inner = "central"
    else:
        raise FormError(f"unknown stencil {stencil!r}")
    total = None
    if q < m:
        total = codifferential(fd_d(field, outer), metric, inner)
    if q > 0:
        part = fd_d(codifferential(field, metric, inner), outer)
        total = part if total is None else total + part
    return total


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------


def wedge(a: FormField, b: FormField) -> FormField:
    if a.dims != b.dims:
        raise FormError("wedge of forms on different spaces")
    if a.grid is not None and b.grid is not None and a.grid != b.grid:
        raise FormError("grid mismatch")
    if a.degree + b.degree > a.dims:
        raise FormError("degree of wedge exceeds dimension")
    terms: dict[MultiIndex, np.ndarray] = {}
    for I, x in a.coeffs.items():
        for J, y in b.coeffs.items():
            sign, key = normalize_index(I + J)
            if sign == 0:
                continue
            val = sign * (x * y)
            terms[key] = terms[key] + val if key in terms else val
    return FormField(a.dims, a.degree + b.degree, terms, a.grid or b.grid)


def wedge_power(a: FormField, k: int) -> FormField:
    if k < 0:
        raise FormError("negative wedge power")
    out = FormField.scalar(a.dims, np.ones(a.sample_shape), a.grid)
    for _ in range(k):
        out = wedge(out, a)
    return out


def _check_nonzero(arr, tol, what):
    small = np.abs(arr) <= tol
    if np.any(small):
        node = tuple(int(i) for i in np.argwhere(small)[0]) if np.ndim(arr) else ()
        raise FormError(f"{what} vanishes at node {node}")


def trace_against(eta: FormField, ref_kahler: FormField, tol: float = 1e-14) -> FormField:
    """Tr_ref(eta) defined by Tr * ref^k/k! = eta ^ ref^(k-1)/(k-1)!, k = dims/2."""
    if eta.degree != 2 or ref_kahler.degree != 2:
        raise FormError("trace_against takes 2-forms")
    m = eta.dims
    if m % 2:
        raise FormError("trace needs even dimension")
    k = m // 2
    den = wedge_power(ref_kahler, k).top() / math.factorial(k)
    _check_nonzero(den, tol, "reference Kahler form")
    if k == 1:
        num = eta.top()
    else:
        num = wedge(eta, wedge_power(ref_kahler, k - 1)).top() / math.factorial(k - 1)
    return FormField.scalar(m, num / den, eta.grid)


def monge_ampere_ratio(omega: FormField, Omega: FormField, n: int, tol: float = 1e-300) -> FormField:
    """((sqrt(-1))^{n^2} 2^{-n} Omega ^ conj(Omega)) / (omega^n / n!)."""
    if omega.dims != 2 * n or Omega.dims != 2 * n:
        raise FormError("forms must live in real dimension 2n")
    if omega.degree != 2 or Omega.degree != n:
        raise FormError("expected a 2-form and an n-form")
    den = wedge_power(omega, n).top() / math.factorial(n)
    _check_nonzero(den, tol, "omega^n")
    num = (1j ** (n * n)) * 2.0 ** (-n) * wedge(Omega, Omega.conj()).top()
    return FormField.scalar(2 * n, np.real(num) / den, omega.grid)


def interior(field: FormField, vector) -> FormField:
    """Contraction of a vector (..., m) into the first slot."""
    if field.degree == 0:
        raise FormError("cannot contract a 0-form")
    v = np.asarray(vector)
    terms: dict[MultiIndex, np.ndarray] = {}
    for I, arr in field.coeffs.items():
        for pos, i in enumerate(I):
            rest = I[:pos] + I[pos + 1:]
            val = ((-1) ** pos) * arr * v[..., i]
            terms[rest] = terms[rest] + val if rest in terms else val
    return FormField(field.dims, field.degree - 1, terms, field.grid)


def evaluate_on(field: FormField, vectors: Sequence) -> np.ndarray:
    """Evaluate a q-form on q vectors (each of shape (..., m))."""
    out = field
    for v in vectors:
        out = interior(out, v)
    return out.value()


def pullback(field: FormField, jacobian) -> FormField:
    """Pull back by a map with Jacobian ``jac[..., i, a] = d y_i / d x_a``."""
    jac = np.asarray(jacobian)
    m_src = jac.shape[-1]
    q = field.degree
    terms: dict[MultiIndex, np.ndarray] = {}
    for A in basis_indices(m_src, q):
        acc = 0.0
        for I, arr in field.coeffs.items():
            if q == 0:
                minor = 1.0
            else:
                minor = np.linalg.det(jac[..., list(I), :][..., :, list(A)])
            acc = acc + arr * minor
        terms[A] = acc
    return FormField(m_src, q, terms)


def one_form(coeffs) -> FormField:
    """1-form from a coefficient array of shape (..., m)."""
    c = np.asarray(coeffs)
    m = c.shape[-1]
    return FormField(m, 1, {(i,): c[..., i] for i in range(m)})


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"NFF1"


def field_header(field: FormField) -> dict:
    if field.grid is None:
        raise FormError("only grid-backed fields are serialized")
    idx = sorted(field.coeffs)
    is_complex = any(np.iscomplexobj(v) for v in field.coeffs.values())
    head = field.grid.header()
    head.update(
        {
            "format": "neckforge-field",
            "degree": field.degree,
            "multi_indices": [list(i) for i in idx],
            "complex": bool(is_complex),
            "dtype": "<f8",
            "order": "C",
        }
    )
    return head


def save_field(field: FormField, path) -> tuple[Path, Path]:
    """Write the binary field file and its JSON sidecar (``path + '.json'``)."""
    path = Path(path)
    head = field_header(field)
    idx = [tuple(i) for i in head["multi_indices"]]
    m = field.dims
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", m, field.degree, len(idx), int(head["complex"])))
        fh.write(struct.pack(f"<{m}d", *g.lower))
        fh.write(struct.pack(f"<{m}d", *g.upper))
        fh.write(struct.pack(f"<{m}d", *g.spacing))
        fh.write(struct.pack(f"<{m}B", *[int(p) for p in g.periodic]))
        for i in idx:
            if i:
                fh.write(struct.pack(f"<{len(i)}i", *i))
        for i in idx:
            arr = np.ascontiguousarray(field.coeffs[i])
            fh.write(np.ascontiguousarray(arr.real, dtype="<f8").tobytes())
            if head["complex"]:
                fh.write(np.ascontiguousarray(arr.imag, dtype="<f8").tobytes())
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps(head, indent=2, sort_keys=True))
    return path, side


def load_field(path) -> FormField:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise FormError("not a neckforge field file")
    off = 4
    m, q, ncomp, cplx = struct.unpack_from("<IIII", raw, off)
    off += 16
    lower = struct.unpack_from(f"<{m}d", raw, off); off += 8 * m
    upper = struct.unpack_from(f"<{m}d", raw, off); off += 8 * m
    spacing = struct.unpack_from(f"<{m}d", raw, off); off += 8 * m
    periodic = struct.unpack_from(f"<{m}B", raw, off); off += m
    grid = ChartGrid(tuple(lower), tuple(upper), tuple(spacing), tuple(bool(p) for p in periodic))
    idx = []
    for _ in range(ncomp):
        if q:
            idx.append(tuple(struct.unpack_from(f"<{q}i", raw, off)))
            off += 4 * q
        else:
            idx.append(())
    n = grid.node_count
    coeffs = {}
    for i in idx:
        re = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(grid.shape)
        off += 8 * n
        if cplx:
            im = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(grid.shape)
            off += 8 * n
            coeffs[i] = re + 1j * im
        else:
            coeffs[i] = re.copy()
    return FormField(m, q, coeffs, grid)
