"""Element matrices on the reference square, in normalized variables.

Everything here is computed once on [0,1]^2 with the normalized frequency
``omega_n = omega*h`` and test-norm weight ``eps_n = eps*h``; the physical
element matrix on a square of side h is ``h^2`` times the normalized one
(see :func:`scale_to_physical`), which is what makes uniform-mesh assembly
and interface stencils cheap.

The graph-norm test inner product is

    <w, v>_V = (A w, A v) + eps_n^2 (w, v),       A(v, eta) = (i w v + grad eta,
                                                               i w eta + div v)

with the complex conjugate on the second slot.  The trial-to-test solve
``G X = Bb`` produces the optimal test functions column by column, and the
element matrix ``B = Bb^H X = Bb^H G^{-1} Bb`` is Hermitian positive
semidefinite by construction.

Precision policy: with ``params.precision = None`` the element is computed
in double and recomputed in 30-digit extended arithmetic when
``eps_n < 1e-3`` up front or when the Gram condition estimate exceeds 1e12.
``eps_n = 0`` is supported only in extended precision; the factorization's
pivot check is the required positive-definiteness guard.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import refelem
from .errors import DimensionMismatch, InteriorBlockSingular, NotPositiveDefinite
from .numkit import (
    DOUBLE,
    ILL_CONDITION_LIMIT,
    Precision,
    as_complex128,
    hermitian_solve,
    ldlh_factor,
    ldlh_solve,
    working_context,
)
from .refelem import EDGE_SIGNS, TRACE_EDGES, TRIAL_DIM

#: eps_n below which the element is assembled in extended precision
EXTENDED_EPS_THRESHOLD = 1e-3


@dataclass(frozen=True)
class NormalizedParams:
    """Normalized element parameters (omega_n = omega*h, eps_n = eps*h).

    ``precision=None`` selects the automatic policy described in the module
    docstring; an explicit :class:`~helmdpg.numkit.Precision` pins the
    arithmetic (``eps_n = 0`` demands extended).
    """

    omega_n: float
    eps_n: float
    r: int
    precision: Precision | None = None

    def __post_init__(self):
        if not self.omega_n > 0:
            raise ValueError(f"omega_n must be positive, got {self.omega_n}")
        if self.eps_n < 0:
            raise ValueError(f"eps_n must be nonnegative, got {self.eps_n}")
        if self.eps_n == 0 and self.precision is not None and not self.precision.is_extended:
            raise ValueError("eps_n = 0 requires extended precision")
        refelem.build_test_basis(self.r)  # validates r >= 2

    def resolve_precision(self) -> Precision:
        if self.precision is not None:
            return self.precision
        if self.eps_n < EXTENDED_EPS_THRESHOLD:
            return Precision.extended(30)
        return DOUBLE


@dataclass(frozen=True)
class DpgElementMatrices:
    """Normalized DPG element data.

    ``G`` is the (dim x dim) test Gram matrix, ``Bb[k,i] = b(e_i, v_k)``
    the (dim x 11) trial-test couplings, ``X`` the trial-to-test solution of
    ``G X = Bb`` (optimal test function coefficients per trial function),
    ``B = Bb^H X`` the Hermitian PSD 11x11 element matrix.  Arrays are in
    ``precision_used`` (complex128 or mpmath objects); ``cond`` is the
    1-norm condition number of G reported by the solve.
    """

    params: NormalizedParams
    precision_used: Precision
    G: np.ndarray
    Bb: np.ndarray
    X: np.ndarray
    B: np.ndarray
    cond: float


def _assemble_dpg(params: NormalizedParams, precision: Precision):
    with working_context(precision):
        basis = refelem.build_test_basis(params.r)
        rule = refelem.default_rule(params.r, precision)
        tab = refelem.tabulate_test_basis(basis, rule)
        hats = refelem.tabulate_trial_edges(rule)
        w = rule.weights
        w1 = rule.weights_1d
        iw = precision.cplx(0, precision.real(params.omega_n))
        eps = precision.real(params.eps_n)

        a1 = iw * tab.vx + tab.eta_x
        a2 = iw * tab.vy + tab.eta_y
        a3 = iw * tab.eta + tab.div

        dim = basis.dim
        G = None
        for ac in (a1, a2, a3):
            term = (ac.conj() * w[None, :]) @ ac.T
            G = term if G is None else G + term
        for vc in (tab.vx, tab.vy, tab.eta):
            G = G + (eps * eps) * ((vc * w[None, :]) @ vc.T)

        Bb = precision.zeros(dim, TRIAL_DIM)
        Bb[:, 0] = -(a1.conj() @ w)
        Bb[:, 1] = -(a2.conj() @ w)
        Bb[:, 2] = -(a3.conj() @ w)
        for a in range(4):
            col = None
            for e in range(4):
                contrib = tab.edge_vn[e] @ (w1 * hats.hat[a][e])
                col = contrib if col is None else col + contrib
            Bb[:, 3 + a] = col
        for t, e in enumerate(TRACE_EDGES):
            Bb[:, 7 + t] = precision.real(EDGE_SIGNS[e]) * (tab.edge_eta[e] @ w1)

    return G, Bb, rule, tab


def dpg_element(params: NormalizedParams) -> DpgElementMatrices:
    """Assemble G, Bb and solve for X and B under the precision policy."""
    precision = params.resolve_precision()
    G, Bb, _, _ = _assemble_dpg(params, precision)
    x, cond = hermitian_solve(
        G, Bb, precision,
        warn_limit=np.inf if params.precision is None else ILL_CONDITION_LIMIT,
    )
    if params.precision is None and not precision.is_extended and cond > ILL_CONDITION_LIMIT:
        precision = Precision.extended(30)
        G, Bb, _, _ = _assemble_dpg(params, precision)
        x, cond = hermitian_solve(G, Bb, precision)
    with working_context(precision):
        B = Bb.conj().T @ x
    return DpgElementMatrices(params, precision, G, Bb, x, B, float(cond))


def scale_to_physical(b_ref: np.ndarray, h: float) -> np.ndarray:
    """Physical element matrix on a square of side h: h^2 times normalized."""
    if not h > 0:
        raise ValueError(f"element size must be positive, got {h}")
    return (h * h) * b_ref


@dataclass(frozen=True)
class CondensedElement:
    """Interface (trace) element after eliminating the three field constants.

    Trace ordering is frozen: 4 vertex values counterclockwise from the
    origin corner, then bottom/top horizontal-edge fluxes, then left/right
    vertical-edge fluxes.  ``S`` is the 8x8 Schur complement
    ``B_TT - B_TI B_II^{-1} B_IT``; interior recovery is
    ``x_I = recovery @ x_T + interior_inv @ l_I`` for an interior load
    ``l_I`` in the same normalization as S.  Stored in complex128 (the
    Schur elimination itself runs in the precision of the input matrix);
    when the input was extended, ``S_exact`` additionally keeps the Schur
    complement at full digit count for consumers whose sensitivity exceeds
    double precision (the dispersion roots of weakly dissipative elements).
    """

    S: np.ndarray
    recovery: np.ndarray
    interior_inv: np.ndarray
    S_exact: np.ndarray | None = None


def condense(b: np.ndarray, precision: Precision | None = None) -> CondensedElement:
    """Static condensation of an 11x11 element matrix onto its 8 trace DOFs.

    ``precision`` defaults to 30-digit extended for object-dtype input and
    double otherwise; pass the element's own precision to preserve a higher
    digit count.
    """
    b = np.asarray(b)
    if b.shape != (TRIAL_DIM, TRIAL_DIM):
        raise DimensionMismatch(f"expected an 11x11 element matrix, got {b.shape}")
    if precision is None:
        precision = Precision.extended(30) if b.dtype == object else DOUBLE
    with working_context(precision):
        b_ii = b[:3, :3]
        b_it = b[:3, 3:]
        b_ti = b[3:, :3]
        b_tt = b[3:, 3:]
        try:
            L, d = ldlh_factor(b_ii, precision)
        except NotPositiveDefinite as exc:
            raise InteriorBlockSingular(f"interior 3x3 block not invertible: {exc}") from exc
        eye = precision.zeros(3, 3)
        for i in range(3):
            eye[i, i] = precision.real(1)
        interior_inv = ldlh_solve(L, d, eye, precision)
        recovery = -(interior_inv @ b_it)
        s = b_tt + b_ti @ recovery
    s_exact = np.asarray(s, dtype=object) if b.dtype == object else None
    return CondensedElement(
        as_complex128(s), as_complex128(recovery), as_complex128(interior_inv), s_exact
    )


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def conforming_a_images(tab: refelem.ConformingTabulation, omega_n: float, precision: Precision = DOUBLE):
    """A-operator images (a1, a2, a3) of the 8 conforming basis functions."""
    iw = precision.cplx(0, precision.real(omega_n))
    a1 = iw * tab.vx + tab.eta_x
    a2 = iw * tab.vy + tab.eta_y
    a3 = iw * tab.eta + tab.div
    return a1, a2, a3


@dataclass(frozen=True)
class FoslsElement:
    """Least-squares element: M[i,j] = (A e_j, A e_i) over the unit square.

    ``a1, a2, a3`` are the A-images of the basis (8 x nq) used for load
    functionals; ``tab`` carries the conforming value tables for field
    evaluation.  The physical element matrix equals the normalized one at
    omega_n = omega*h (the 1/h^2 from A meets the h^2 from the area), and
    physical loads pick up a single factor h.
    """

    omega_n: float
    M: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    tab: refelem.ConformingTabulation


def fosls_element(omega_n: float, n_quad: int = 4) -> FoslsElement:
    """First-order-system least-squares element matrix on the unit square."""
    if not omega_n > 0:
        raise ValueError(f"omega_n must be positive, got {omega_n}")
    from .numkit import tensor_rule

    rule = tensor_rule(n_quad, DOUBLE)
    tab = refelem.tabulate_conforming_basis(rule)
    a1, a2, a3 = conforming_a_images(tab, omega_n)
    w = rule.weights
    m = np.zeros((8, 8), dtype=complex)
    for ac in (a1, a2, a3):
        m += (ac.conj() * w[None, :]) @ ac.T
    return FoslsElement(omega_n, m, a1, a2, a3, tab)


def fem_element(omega_n: float, n_quad: int = 3):
    """Bilinear FEM element S - omega_n^2 M on the unit square (4x4 complex).

    Vertex order is counterclockwise from the origin corner, matching the
    first four condensed trace DOFs.
    """
    from .numkit import tensor_rule

    rule = tensor_rule(n_quad, DOUBLE)
    tab = refelem.tabulate_conforming_basis(rule)
    w = rule.weights
    gx, gy, q = tab.eta_x[:4], tab.eta_y[:4], tab.eta[:4]
    stiff = (gx * w[None, :]) @ gx.T + (gy * w[None, :]) @ gy.T
    mass = (q * w[None, :]) @ q.T
    return (stiff - omega_n**2 * mass).astype(complex)


# ---------------------------------------------------------------------------
# cached element kit for assembly and stencils
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ElementKit:
    """Downcast, reusable per-parameter element data for meshes and stencils.

    All arrays are complex128/float64 regardless of the assembly precision;
    the accuracy of ``S`` is inherited from the (possibly extended)
    element computation.  ``xh = X^H`` maps moment vectors of f against the
    test basis to the 11 trial load entries.  ``S_exact`` carries the
    full-precision Schur complement when the element was assembled in
    extended arithmetic, and is None otherwise.
    """

    params: NormalizedParams
    precision_used: Precision
    cond: float
    B: np.ndarray
    S: np.ndarray
    recovery: np.ndarray
    interior_inv: np.ndarray
    xh: np.ndarray
    test_vx: np.ndarray
    test_vy: np.ndarray
    test_eta: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    S_exact: np.ndarray | None = None


@lru_cache(maxsize=64)
def element_kit(params: NormalizedParams) -> ElementKit:
    """Cached DPG element + condensation, downcast for double-precision use."""
    elem = dpg_element(params)
    cond_elem = condense(elem.B, elem.precision_used)
    basis = refelem.build_test_basis(params.r)
    rule = refelem.default_rule(params.r, DOUBLE)
    tab = refelem.tabulate_test_basis(basis, rule)
    return ElementKit(
        params=params,
        precision_used=elem.precision_used,
        cond=elem.cond,
        B=as_complex128(elem.B),
        S=cond_elem.S,
        recovery=cond_elem.recovery,
        interior_inv=cond_elem.interior_inv,
        xh=as_complex128(elem.X).conj().T,
        test_vx=tab.vx,
        test_vy=tab.vy,
        test_eta=tab.eta,
        quad_points=rule.points,
        quad_weights=rule.weights,
        S_exact=cond_elem.S_exact,
    )
