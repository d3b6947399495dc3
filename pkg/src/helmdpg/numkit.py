"""Precision-parametric numerical kernels.

Every routine in this module runs in one of two arithmetics:

* ``Precision.double()`` -- IEEE double via numpy ``float64``/``complex128``;
* ``Precision.extended(digits)`` -- mpmath ``mpf``/``mpc`` scalars stored in
  object-dtype numpy arrays (default 30 significant digits).

Matrices are plain ``numpy.ndarray`` objects in either representation, so a
single dtype-generic code path (slicing, ``@``, ``conj``) serves both.  All
functions are pure: identical inputs give bit-identical outputs.

The factorization used throughout is an LDL^H decomposition without pivoting,
appropriate for the Hermitian positive (semi)definite matrices this package
produces.  ``hermitian_solve`` reports the exact 1-norm condition number of
the factorized matrix (matrices here are at most ~80x80, so the "estimate"
is computed exactly from explicit inverse columns) and emits an
:class:`~helmdpg.errors.IllConditioned` warning above 1e12 in double
precision.
"""

from __future__ import annotations

import math
import warnings
from contextlib import nullcontext
from dataclasses import dataclass
from functools import lru_cache

import mpmath as mp
import numpy as np

from .errors import (
    DimensionMismatch,
    IllConditioned,
    NotHermitian,
    NotPositiveDefinite,
)

#: Relative tolerance for the Hermitian symmetry check.
HERMITIAN_RTOL = 1e-12

#: Relative pivot tolerance: pivots below this times the largest diagonal
#: entry count as a positive-definiteness failure.
PIVOT_RTOL = 1e-14

#: Double-precision condition threshold that triggers the IllConditioned
#: warning (and precision escalation in callers that opt into it).
ILL_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class Precision:
    """Arithmetic selector: ``double`` or ``extended`` with a digit count."""

    kind: str
    digits: int = 0

    @staticmethod
    def double() -> "Precision":
        return Precision("double")

    @staticmethod
    def extended(digits: int = 30) -> "Precision":
        if digits < 30:
            raise ValueError("extended precision floor is 30 significant digits")
        return Precision("extended", digits)

    @property
    def is_extended(self) -> bool:
        return self.kind == "extended"

    def real(self, x) -> object:
        """Convert a real number to this precision's real scalar type."""
        if self.is_extended:
            with mp.workdps(self.digits):
                return mp.mpf(x)
        return float(x)

    def cplx(self, re, im=0) -> object:
        """Build a complex scalar in this precision."""
        if self.is_extended:
            with mp.workdps(self.digits):
                return mp.mpc(re, im)
        return complex(re, im)

    def pi(self) -> object:
        if self.is_extended:
            with mp.workdps(self.digits):
                return +mp.pi
        return math.pi

    def zeros(self, *shape) -> np.ndarray:
        if self.is_extended:
            z = np.empty(shape, dtype=object)
            z[...] = mp.mpf(0)
            return z
        return np.zeros(shape, dtype=complex)


DOUBLE = Precision.double()


def working_context(precision: Precision):
    """Context manager pinning mpmath's working precision.

    mpmath evaluates every operation at the *global* decimal precision, so
    all object-array arithmetic must run inside this context; in double
    precision it is a no-op.
    """
    if precision.is_extended:
        return mp.workdps(precision.digits)
    return nullcontext()


def as_complex128(a: np.ndarray) -> np.ndarray:
    """Downcast a matrix from either representation to complex128."""
    arr = np.asarray(a)
    if arr.dtype == object:
        out = np.empty(arr.shape, dtype=complex)
        flat_in, flat_out = arr.ravel(), out.ravel()
        for i, v in enumerate(flat_in):
            flat_out[i] = complex(v)
        return out
    return arr.astype(complex)


def _sqrt(x, precision: Precision):
    if precision.is_extended:
        return mp.sqrt(x)
    return math.sqrt(x)


def _real_part(x):
    # works for float, complex, mpf, mpc
    return x.real if hasattr(x, "real") else x


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on the unit square [0,1]^2.

    ``points`` has shape (nq, 2) and ``weights`` shape (nq,); weights sum
    to one.  ``nodes_1d``/``weights_1d`` expose the underlying 1D rule on
    [0,1] for edge integrals.
    """

    n: int
    points: np.ndarray
    weights: np.ndarray
    nodes_1d: np.ndarray
    weights_1d: np.ndarray
    precision: Precision


def gauss_legendre_1d(n: int, precision: Precision = DOUBLE):
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1].

    Computed by Newton iteration on the three-term Legendre recurrence from
    Chebyshev initial guesses, in the requested arithmetic; exact for
    polynomials of degree 2n-1.  Returns ``(nodes, weights)`` as numpy
    arrays (float64 or object/mpf).
    """
    if n < 1:
        raise DimensionMismatch(f"quadrature order must be >= 1, got {n}")
    nodes, weights = _gl_cached(n, precision.kind, precision.digits)
    return nodes.copy(), weights.copy()


@lru_cache(maxsize=None)
def _gl_cached(n: int, kind: str, digits: int):
    precision = Precision(kind, digits)
    if precision.is_extended:
        with mp.workdps(precision.digits + 10):
            xs, ws = _gl_newton(n, mp.mpf, mp.pi, precision)
            half = mp.mpf(1) / 2
            nodes = np.array([+(half * (x + 1)) for x in xs], dtype=object)
            weights = np.array([+(w / 2) for w in ws], dtype=object)
    else:
        xs, ws = _gl_newton(n, float, math.pi, precision)
        nodes = 0.5 * (np.array(xs) + 1.0)
        weights = 0.5 * np.array(ws)
    return nodes, weights


def _gl_newton(n, real, pi_val, precision):
    """Roots of P_n on [-1, 1] plus weights, by Newton from Chebyshev guesses."""
    xs, ws = [], []
    for k in range(n):
        x = real(math.cos(math.pi * (k + 0.75) / (n + 0.5)))
        for _ in range(100):
            p0, p1 = real(1), x
            for m in range(2, n + 1):
                p0, p1 = p1, ((2 * m - 1) * x * p1 - (m - 1) * p0) / m
            if n == 1:
                p1, dp = x, real(1)
            else:
                dp = n * (x * p1 - p0) / (x * x - 1)
            step = p1 / dp
            x = x - step
            if abs(step) <= abs(x) * real(10) ** (-(precision.digits or 17) - 2):
                break
        p0, p1 = real(1), x
        for m in range(2, n + 1):
            p0, p1 = p1, ((2 * m - 1) * x * p1 - (m - 1) * p0) / m
        dp = real(1) if n == 1 else n * (x * p1 - p0) / (x * x - 1)
        xs.append(x)
        ws.append(2 / ((1 - x * x) * dp * dp))
    order = sorted(range(n), key=lambda i: float(xs[i]))
    return [xs[i] for i in order], [ws[i] for i in order]


def tensor_rule(n: int, precision: Precision = DOUBLE) -> QuadratureRule:
    """n x n tensor Gauss-Legendre rule on the unit square."""
    x, w = gauss_legendre_1d(n, precision)
    pts = precision.zeros(n * n, 2).astype(object) if precision.is_extended else np.zeros((n * n, 2))
    wts = np.empty(n * n, dtype=object if precision.is_extended else float)
    q = 0
    for j in range(n):
        for i in range(n):
            pts[q, 0] = x[i]
            pts[q, 1] = x[j]
            wts[q] = w[i] * w[j]
            q += 1
    return QuadratureRule(n, pts, wts, x, w, precision)


# ---------------------------------------------------------------------------
# Hermitian linear algebra
# ---------------------------------------------------------------------------


def hermitian_error(a: np.ndarray) -> float:
    """max |A - A^H| entry over max |A| entry (0 for the zero matrix)."""
    a = np.asarray(a)
    diff = a - a.conj().T
    scale = max((float(abs(v)) for v in a.ravel()), default=0.0)
    err = max((float(abs(v)) for v in diff.ravel()), default=0.0)
    return err / scale if scale > 0 else err


def require_hermitian(a: np.ndarray, rtol: float = HERMITIAN_RTOL) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    err = hermitian_error(a)
    if err > rtol:
        raise NotHermitian(f"relative conjugate-symmetry defect {err:.3e} exceeds {rtol:.1e}")


def ldlh_factor(a: np.ndarray, precision: Precision = DOUBLE):
    """LDL^H factorization of a Hermitian positive-definite matrix.

    Returns ``(L, d)`` with unit-lower-triangular L and real positive pivots
    d.  Raises :class:`NotPositiveDefinite` when a pivot falls below
    ``PIVOT_RTOL`` times the largest diagonal entry.
    """
    n = a.shape[0]
    with working_context(precision):
        L = a.astype(object).copy() if a.dtype == object else a.astype(complex).copy()
        d = np.empty(n, dtype=object if a.dtype == object else float)
        maxdiag = max((float(abs(_real_part(a[i, i]))) for i in range(n)), default=0.0)
        tol = PIVOT_RTOL * maxdiag
        for j in range(n):
            if j > 0:
                s = (L[j, :j] * L[j, :j].conj() * d[:j]).sum()
            else:
                s = 0
            piv = _real_part(L[j, j] - s)
            if not float(piv) > tol:
                raise NotPositiveDefinite(
                    f"pivot {float(piv):.3e} at index {j} below tolerance {tol:.3e}"
                )
            d[j] = piv
            if j + 1 < n:
                if j > 0:
                    upd = L[j + 1 :, :j] @ (L[j, :j].conj() * d[:j])
                    L[j + 1 :, j] = (L[j + 1 :, j] - upd) / piv
                else:
                    L[j + 1 :, j] = L[j + 1 :, j] / piv
        for j in range(n):
            L[j, j] = d[j] * 0 + 1
            L[j, j + 1 :] = d[j] * 0
    return L, d


def ldlh_solve(L: np.ndarray, d: np.ndarray, b: np.ndarray, precision: Precision = DOUBLE) -> np.ndarray:
    """Solve A x = b given the LDL^H factors of A; b may have many columns."""
    one_col = b.ndim == 1
    with working_context(precision):
        y = (b[:, None] if one_col else b).copy()
        n = L.shape[0]
        for j in range(n - 1):
            y[j + 1 :, :] = y[j + 1 :, :] - L[j + 1 :, j : j + 1] * y[j : j + 1, :]
        for j in range(n):
            y[j, :] = y[j, :] / d[j]
        for j in range(n - 2, -1, -1):
            y[j, :] = y[j, :] - L[j + 1 :, j].conj() @ y[j + 1 :, :]
    return y[:, 0] if one_col else y


def _one_norm(a: np.ndarray) -> float:
    return max(
        (sum(float(abs(v)) for v in a[:, j]) for j in range(a.shape[1])),
        default=0.0,
    )


def hermitian_solve(
    a: np.ndarray,
    b: np.ndarray,
    precision: Precision = DOUBLE,
    warn_limit: float = ILL_CONDITION_LIMIT,
):
    """Solve the Hermitian positive-definite system A X = B.

    Returns ``(X, cond)`` where ``cond`` is the exact 1-norm condition
    number of A computed from the factorization.  Raises
    :class:`NotHermitian` / :class:`NotPositiveDefinite`; warns
    :class:`IllConditioned` when ``cond > warn_limit`` in double precision.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    require_hermitian(a)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"rhs rows {b.shape[0]} != matrix size {a.shape[0]}")
    L, d = ldlh_factor(a, precision)
    x = ldlh_solve(L, d, b, precision)
    eye = precision.zeros(a.shape[0], a.shape[0])
    for i in range(a.shape[0]):
        eye[i, i] = precision.real(1)
    inv = ldlh_solve(L, d, eye, precision)
    cond = _one_norm(a) * _one_norm(inv)
    if not precision.is_extended and cond > warn_limit:
        warnings.warn(
            f"1-norm condition estimate {cond:.3e} exceeds {warn_limit:.1e}",
            IllConditioned,
            stacklevel=2,
        )
    return x, cond


def det_small(f: np.ndarray):
    """Determinant by cofactor expansion; matrices up to 3x3 only."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[0] != f.shape[1] or f.shape[0] > 3 or f.shape[0] < 1:
        raise DimensionMismatch(f"det_small handles square matrices up to 3x3, got {f.shape}")
    n = f.shape[0]
    if n == 1:
        return f[0, 0]
    if n == 2:
        return f[0, 0] * f[1, 1] - f[0, 1] * f[1, 0]
    return (
        f[0, 0] * (f[1, 1] * f[2, 2] - f[1, 2] * f[2, 1])
        - f[0, 1] * (f[1, 0] * f[2, 2] - f[1, 2] * f[2, 0])
        + f[0, 2] * (f[1, 0] * f[2, 1] - f[1, 1] * f[2, 0])
    )


def adjugate_small(f: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix) for matrices up to 3x3.

    Satisfies adj(F) @ F = det(F) * I; used for the analytic derivative of
    det F via Jacobi's formula d(det F) = tr(adj(F) dF).
    """
    f = np.asarray(f)
    n = f.shape[0]
    if n == 1:
        out = f.copy()
        out[0, 0] = f[0, 0] * 0 + 1
        return out
    if n == 2:
        out = f.copy()
        out[0, 0], out[1, 1] = f[1, 1], f[0, 0]
        out[0, 1], out[1, 0] = -f[0, 1], -f[1, 0]
        return out
    if n == 3:
        out = f.copy()
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = f[r[0], c[0]] * f[r[1], c[1]] - f[r[0], c[1]] * f[r[1], c[0]]
                out[i, j] = minor if (i + j) % 2 == 0 else -minor
        return out
    raise DimensionMismatch(f"adjugate_small handles up to 3x3, got {f.shape}")


def min_eigenvalue_bound(h: np.ndarray, precision: Precision = DOUBLE) -> float:
    """Certified lower bound on the minimum eigenvalue of a Hermitian matrix.

    Bisection on the shift sigma: H - sigma*I admitting an all-positive-pivot
    LDL^H factorization certifies min eig > sigma.  The returned float is the
    largest certified shift; for PSD matrices it is within ~1e-12*scale of 0
    from below.
    """
    h = np.asarray(h)
    require_hermitian(h)
    n = h.shape[0]
    rowsums = []
    for i in range(n):
        off = sum(float(abs(h[i, j])) for j in range(n) if j != i)
        rowsums.append((float(_real_part(h[i, i])), off))
    lo = min(c - o for c, o in rowsums)
    hi = max(c + o for c, o in rowsums)
    scale = max(abs(lo), abs(hi), 1.0)
    if _is_pd_shifted(h, hi, precision):
        return hi
    lo = lo - scale * 1e-6  # strict lower start
    if not _is_pd_shifted(h, lo, precision):
        lo = lo - scale  # pathological roundoff margin
        if not _is_pd_shifted(h, lo, precision):
            return lo
    target = 1e-13 * scale
    while hi - lo > target:
        mid = 0.5 * (lo + hi)
        if _is_pd_shifted(h, mid, precision):
            lo = mid
        else:
            hi = mid
    return lo


def _is_pd_shifted(h: np.ndarray, sigma: float, precision: Precision) -> bool:
    with working_context(precision):
        shifted = h.copy()
        s = precision.real(sigma) if h.dtype == object else sigma
        for i in range(h.shape[0]):
            shifted[i, i] = h[i, i] - s
        # strict positivity of every pivot, no relative tolerance: this is the
        # certificate, not a solver
        n = h.shape[0]
        L = shifted.astype(object).copy() if h.dtype == object else shifted.astype(complex).copy()
        d = np.empty(n, dtype=object)
        for j in range(n):
            s0 = (L[j, :j] * L[j, :j].conj() * d[:j]).sum() if j > 0 else 0
            piv = _real_part(L[j, j] - s0)
            if not float(piv) > 0:
                return False
            d[j] = piv
            if j + 1 < n:
                upd = L[j + 1 :, :j] @ (L[j, :j].conj() * d[:j]) if j > 0 else 0
                L[j + 1 :, j] = (L[j + 1 :, j] - upd) / piv
    return True
