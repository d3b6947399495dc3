"""Bases and tabulation on the reference square [0,1]^2.

Three families live here:

* the enriched test space ``V^r = RT_r x Q_{r,r}`` with
  ``RT_r = Q_{r,r-1} x Q_{r-1,r}``, spanned by shifted tensor Legendre
  polynomials (well conditioned up to the orders used here, r <= 5);
* the 11-function lowest-order trial basis: three field constants
  (u1, u2, phi), four bilinear vertex trace functions, four edge-constant
  flux indicators;
* the 8-function conforming lowest-order pair (4 edge fluxes spanning the
  lowest Raviart-Thomas space, 4 bilinear vertex functions) used by the
  least-squares and bilinear-FEM baselines.

Edge conventions are global and fixed: horizontal edges carry the normal
(0,1), vertical edges (1,0).  Relative to the outward normal of the element
this gives sign +1 on top/right edges and -1 on bottom/left edges.

Tabulations are plain numpy arrays in the precision of the quadrature rule
supplied (float64 or mpmath objects); every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import REnrichmentTooSmall
from .numkit import DOUBLE, Precision, QuadratureRule

# edge ids, in the order used for condensed degrees of freedom
BOTTOM, TOP, LEFT, RIGHT = 0, 1, 2, 3
EDGE_NAMES = ("bottom", "top", "left", "right")

#: sign of the global edge normal relative to the element outward normal
EDGE_SIGNS = {BOTTOM: -1.0, TOP: 1.0, LEFT: -1.0, RIGHT: 1.0}

#: True for edges whose global normal is (0,1) (horizontal edges)
EDGE_IS_HORIZONTAL = {BOTTOM: True, TOP: True, LEFT: False, RIGHT: False}

#: reference vertices counterclockwise from the origin corner
VERTICES_CCW = ((0, 0), (1, 0), (1, 1), (0, 1))


def shifted_legendre_table(max_deg: int, x: np.ndarray):
    """Values and x-derivatives of shifted Legendre polynomials on [0,1].

    Returns ``(vals, ders)`` of shape (max_deg+1, len(x)) with
    ``vals[k] = P_k(2x-1)`` and ``ders[k] = d/dx P_k(2x-1)``.
    """
    x = np.asarray(x)
    npts = x.shape[0]
    t = 2 * x - 1
    obj = x.dtype == object
    vals = np.empty((max_deg + 1, npts), dtype=object if obj else float)
    ders = np.empty_like(vals)
    one = t * 0 + 1
    vals[0], ders[0] = one, one * 0
    if max_deg >= 1:
        vals[1], ders[1] = t, one * 2
    for m in range(2, max_deg + 1):
        vals[m] = ((2 * m - 1) * t * vals[m - 1] - (m - 1) * vals[m - 2]) / m
        # dP_m/dt = dP_{m-2}/dt + (2m-1) P_{m-1}; extra factor 2 from t = 2x-1
        ders[m] = ders[m - 2] + 2 * (2 * m - 1) * vals[m - 1]
    return vals, ders


@dataclass(frozen=True)
class TestSpaceBasis:
    """Index structure of V^r: members are (component, i, j) triples.

    Components: ``"vx"`` for Q_{r,r-1} x {0}, ``"vy"`` for {0} x Q_{r-1,r},
    ``"sc"`` for the scalar part Q_{r,r}.  dim = 2 r (r+1) + (r+1)^2.
    """

    r: int
    members: tuple

    @property
    def dim(self) -> int:
        return len(self.members)


def build_test_basis(r: int) -> TestSpaceBasis:
    """Enriched test-space basis; raises below the injectivity threshold r=2."""
    if r < 2:
        raise REnrichmentTooSmall(
            f"test-space order r={r} < 2: the trial-to-test map loses injectivity"
        )
    members = []
    for j in range(r):
        for i in range(r + 1):
            members.append(("vx", i, j))
    for j in range(r + 1):
        for i in range(r):
            members.append(("vy", i, j))
    for j in range(r + 1):
        for i in range(r + 1):
            members.append(("sc", i, j))
    return TestSpaceBasis(r, tuple(members))


@dataclass(frozen=True)
class TestTabulation:
    """Volume and edge tables for a test basis.

    Volume arrays have shape (dim, nq): ``vx, vy, eta`` are component values,
    ``eta_x, eta_y`` the scalar gradient, ``div`` the vector divergence.
    Edge arrays have shape (4, dim, ne): ``edge_eta`` the scalar trace and
    ``edge_vn`` the trace of v . n with n the *outward* element normal.
    """

    basis: TestSpaceBasis
    rule: QuadratureRule
    vx: np.ndarray
    vy: np.ndarray
    eta: np.ndarray
    eta_x: np.ndarray
    eta_y: np.ndarray
    div: np.ndarray
    edge_eta: np.ndarray
    edge_vn: np.ndarray


def _volume_tables(basis: TestSpaceBasis, pts: np.ndarray):
    r = basis.r
    px, dpx = shifted_legendre_table(r, pts[:, 0])
    py, dpy = shifted_legendre_table(r, pts[:, 1])
    dim, nq = basis.dim, pts.shape[0]
    obj = pts.dtype == object
    out = {
        name: np.zeros((dim, nq)) if not obj else _zeros_obj(dim, nq, pts)
        for name in ("vx", "vy", "eta", "eta_x", "eta_y", "div")
    }
    for k, (comp, i, j) in enumerate(basis.members):
        if comp == "vx":
            out["vx"][k] = px[i] * py[j]
            out["div"][k] = dpx[i] * py[j]
        elif comp == "vy":
            out["vy"][k] = px[i] * py[j]
            out["div"][k] = px[i] * dpy[j]
        else:
            out["eta"][k] = px[i] * py[j]
            out["eta_x"][k] = dpx[i] * py[j]
            out["eta_y"][k] = px[i] * dpy[j]
    return out


def _zeros_obj(m, n, like):
    z = np.empty((m, n), dtype=object)
    z[...] = like[0, 0] * 0
    return z


def edge_points(edge: int, t: np.ndarray) -> np.ndarray:
    """Map 1D parameter values t in [0,1] to points on a reference edge."""
    zero, one = t * 0, t * 0 + 1
    if edge == BOTTOM:
        cols = (t, zero)
    elif edge == TOP:
        cols = (t, one)
    elif edge == LEFT:
        cols = (zero, t)
    else:
        cols = (one, t)
    return np.stack(cols, axis=1)


def tabulate_test_basis(basis: TestSpaceBasis, rule: QuadratureRule) -> TestTabulation:
    """Tabulate a test basis at a rule's volume points and edge nodes."""
    vol = _volume_tables(basis, rule.points)
    t = rule.nodes_1d
    dim, ne = basis.dim, len(t)
    obj = rule.precision.is_extended
    edge_eta = np.zeros((4, dim, ne)) if not obj else _zeros_obj(4 * dim, ne, rule.points).reshape(4, dim, ne)
    edge_vn = edge_eta.copy()
    for e in (BOTTOM, TOP, LEFT, RIGHT):
        pts = edge_points(e, t)
        tab = _volume_tables(basis, pts)
        edge_eta[e] = tab["eta"]
        # outward normals: bottom (0,-1), top (0,1), left (-1,0), right (1,0)
        if e == BOTTOM:
            edge_vn[e] = -tab["vy"]
        elif e == TOP:
            edge_vn[e] = tab["vy"]
        elif e == LEFT:
            edge_vn[e] = -tab["vx"]
        else:
            edge_vn[e] = tab["vx"]
    return TestTabulation(basis, rule, vol["vx"], vol["vy"], vol["eta"],
                          vol["eta_x"], vol["eta_y"], vol["div"], edge_eta, edge_vn)


def tabulate_test_at(basis: TestSpaceBasis, points: np.ndarray) -> dict:
    """Volume-type tables at arbitrary points (for derivative checks)."""
    return _volume_tables(basis, np.asarray(points))


# ---------------------------------------------------------------------------
# lowest-order trial basis (3 field constants + 8 interface functions)
# ---------------------------------------------------------------------------

#: index layout of the 11-function trial basis
FIELD_SLICE = slice(0, 3)          # u1, u2, phi element constants
VERTEX_SLICE = slice(3, 7)         # vertex trace functions, CCW from origin
HEDGE_SLICE = slice(7, 9)          # bottom, top horizontal-edge fluxes
VEDGE_SLICE = slice(9, 11)         # left, right vertical-edge fluxes
TRIAL_DIM = 11

#: condensed-element edge order: trace index -> reference edge id
TRACE_EDGES = (BOTTOM, TOP, LEFT, RIGHT)


def vertex_hat(a: int, b: int, x: np.ndarray, y: np.ndarray):
    """Bilinear function that is 1 at vertex (a,b) and 0 at the others."""
    fx = x if a == 1 else 1 - x
    fy = y if b == 1 else 1 - y
    return fx * fy


def vertex_hat_gradient(a: int, b: int, x: np.ndarray, y: np.ndarray):
    fx = x if a == 1 else 1 - x
    fy = y if b == 1 else 1 - y
    sx = 1 if a == 1 else -1
    sy = 1 if b == 1 else -1
    return sx * fy, sy * fx


@dataclass(frozen=True)
class TrialEdgeTables:
    """Vertex-hat traces on each reference edge at the rule's edge nodes.

    ``hat[a][e]`` is the (ne,) array of values of vertex function a
    (CCW order) along edge e.  Flux indicators need no table: they are 1 on
    their own edge and enter forms through :data:`EDGE_SIGNS` only.
    """

    hat: tuple


def tabulate_trial_edges(rule: QuadratureRule) -> TrialEdgeTables:
    t = rule.nodes_1d
    rows = []
    for (a, b) in VERTICES_CCW:
        per_edge = []
        for e in (BOTTOM, TOP, LEFT, RIGHT):
            pts = edge_points(e, t)
            per_edge.append(vertex_hat(a, b, pts[:, 0], pts[:, 1]))
        rows.append(tuple(per_edge))
    return TrialEdgeTables(tuple(rows))


# ---------------------------------------------------------------------------
# conforming lowest-order pair (baselines)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConformingTabulation:
    """Tables for the 8-function lowest-order conforming basis.

    Order matches the condensed trace layout: 4 vertex scalars (CCW), then
    bottom/top horizontal-edge fluxes, then left/right vertical-edge fluxes.
    Arrays have shape (8, nq); scalar rows have zero vector entries and
    vice versa.
    """

    rule: QuadratureRule
    vx: np.ndarray
    vy: np.ndarray
    eta: np.ndarray
    eta_x: np.ndarray
    eta_y: np.ndarray
    div: np.ndarray


def tabulate_conforming_basis(rule: QuadratureRule) -> ConformingTabulation:
    """Tabulate the RT-lowest x bilinear pair at volume points.

    Edge-flux functions are normalized against the *global* edge normals:
    the bottom flux is (0, 1-y) so its (0,1)-component is 1 on the bottom
    edge and 0 on the top, and similarly for the others.  This makes the
    shared-edge coefficient single-valued across elements.
    """
    pts = rule.points
    x, y = pts[:, 0], pts[:, 1]
    obj = rule.precision.is_extended
    shape = (8, pts.shape[0])
    z = _zeros_obj(*shape, like=pts) if obj else np.zeros(shape)
    vx, vy, eta = z.copy(), z.copy(), z.copy()
    eta_x, eta_y, div = z.copy(), z.copy(), z.copy()
    for a, (va, vb) in enumerate(VERTICES_CCW):
        eta[a] = vertex_hat(va, vb, x, y)
        gx, gy = vertex_hat_gradient(va, vb, x, y)
        eta_x[a], eta_y[a] = gx, gy
    one = x * 0 + 1
    vy[4], div[4] = 1 - y, -one          # bottom
    vy[5], div[5] = y, one               # top
    vx[6], div[6] = 1 - x, -one          # left
    vx[7], div[7] = x, one               # right
    return ConformingTabulation(rule, vx, vy, eta, eta_x, eta_y, div)


def conforming_dim() -> int:
    return 8


def default_rule(r: int, precision: Precision = DOUBLE) -> QuadratureRule:
    """The (r+2)-point-per-direction tensor rule used for element forms."""
    from .numkit import tensor_rule

    return tensor_rule(r + 2, precision)
