"""Interface stencils on a uniform square lattice.

On a uniform mesh every element contributes the same condensed matrix, so
the assembled interface operator acts by convolution on three interleaved
lattices of unknowns: scalar values at vertices, normal fluxes at
horizontal-edge midpoints, and normal fluxes at vertical-edge midpoints.
This module extracts the convolution weights by assembling a small patch
of elements (large enough that the center rows are complete) and reading
those rows off, tagged by neighbour type and lattice offset.

Offsets are stored as integer pairs ``(two_lx, two_ly)`` equal to twice the
displacement in units of the mesh size, since edge midpoints sit at
half-integer positions relative to vertices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import mpmath as mp
import numpy as np

from . import localforms
from .errors import CenterRowDegenerate, MissingValue
from .localforms import NormalizedParams
from .numkit import Precision, working_context

VERTEX = 1
HEDGE = 2
VEDGE = 3

TYPE_NAMES = {VERTEX: "vertex", HEDGE: "hedge", VEDGE: "vedge"}

DEGENERATE_RTOL = 1e-10

_PATCH = 3  # elements per side; center rows are complete for any 8-dof trace element


@dataclass(frozen=True)
class StencilSet:
    """Convolution weights for one discretization at one parameter point.

    ``weights[(t, s)]`` maps lattice offsets ``(two_lx, two_ly)`` to the
    coupling weight from a type ``s`` unknown into the type ``t`` center
    equation.  ``types`` lists the unknown types present (all three for the
    interface methods, vertices only for the bilinear FEM).  When the
    element was assembled in extended precision, ``exact`` mirrors
    ``weights`` with mpmath values at full digit count; root finders use it
    to escape the double-precision floor near nearly double roots, where
    the root position is more sensitive than the weights themselves.
    """

    method: str
    omega_n: float
    eps_n: float | None
    r: int | None
    types: tuple[int, ...]
    weights: Mapping[tuple[int, int], Mapping[tuple[int, int], complex]]
    exact: Mapping[tuple[int, int], Mapping[tuple[int, int], object]] | None = None

    def weight(self, t: int, s: int, two_l: tuple[int, int]) -> complex:
        row = self.weights.get((t, s))
        if row is None or two_l not in row:
            raise MissingValue(
                f"no weight for center type {t}, neighbour type {s}, offset {two_l}"
            )
        return row[two_l]

    def support_size(self, t: int) -> int:
        return sum(len(self.weights[(t, s)]) for s in self.types if (t, s) in self.weights)

    def max_abs(self, t: int) -> float:
        vals = [
            abs(v)
            for s in self.types
            if (t, s) in self.weights
            for v in self.weights[(t, s)].values()
        ]
        return max(vals) if vals else 0.0


def _patch_dofs(n: int):
    """DOF ids, types and doubled positions for an n x n element patch.

    Vertices come first, then horizontal-edge midpoints, then vertical-edge
    midpoints; positions are doubled so they stay integers.
    """
    nv = (n + 1) * (n + 1)
    nhe = n * (n + 1)

    def vid(i, j):
        return j * (n + 1) + i

    def hid(i, j):
        return nv + j * n + i

    def wid(i, j):
        return nv + nhe + j * (n + 1) + i

    ndof = nv + nhe + (n + 1) * n
    dof_type = np.empty(ndof, dtype=int)
    pos2 = np.empty((ndof, 2), dtype=int)
    for j in range(n + 1):
        for i in range(n + 1):
            dof_type[vid(i, j)] = VERTEX
            pos2[vid(i, j)] = (2 * i, 2 * j)
    for j in range(n + 1):
        for i in range(n):
            dof_type[hid(i, j)] = HEDGE
            pos2[hid(i, j)] = (2 * i + 1, 2 * j)
    for j in range(n):
        for i in range(n + 1):
            dof_type[wid(i, j)] = VEDGE
            pos2[wid(i, j)] = (2 * i, 2 * j + 1)
    return ndof, dof_type, pos2, vid, hid, wid


def element_trace_dofs(vid, hid, wid, ex: int, ey: int) -> list[int]:
    """Global DOF ids of one element's traces in the condensed ordering."""
    return [
        vid(ex, ey),
        vid(ex + 1, ey),
        vid(ex + 1, ey + 1),
        vid(ex, ey + 1),
        hid(ex, ey),
        hid(ex, ey + 1),
        wid(ex, ey),
        wid(ex + 1, ey),
    ]


def assemble_patch(element: np.ndarray, n: int = _PATCH):
    """Assemble identical trace elements over an n x n patch, no constraints.

    Returns the dense patch matrix, a boolean mask of structurally assembled
    entries, the DOF type array, doubled positions, and the center DOF ids
    keyed by type.  Works for the 8-dof interface element and, by restricting
    to a 4x4 element, for the vertex-only FEM element.
    """
    ndof, dof_type, pos2, vid, hid, wid = _patch_dofs(n)
    vertex_only = element.shape[0] == 4
    dtype = object if element.dtype == object else complex
    a = np.zeros((ndof, ndof), dtype=dtype)
    touched = np.zeros((ndof, ndof), dtype=bool)
    for ey in range(n):
        for ex in range(n):
            gd = element_trace_dofs(vid, hid, wid, ex, ey)
            if vertex_only:
                gd = gd[:4]
            idx = np.asarray(gd)
            a[np.ix_(idx, idx)] += element
            touched[np.ix_(idx, idx)] = True
    c = n // 2
    centers = {VERTEX: vid(c, c)}
    if not vertex_only:
        centers[HEDGE] = hid(c, c)
        centers[VEDGE] = wid(c, c)
    return a, touched, dof_type, pos2, centers


def _element_matrix(method, omega_n, eps_n, r, precision):
    """Trace element for ``method`` plus its extended copy when one exists."""
    if method == "dpg":
        if eps_n is None or r is None:
            raise ValueError("dpg stencils need eps_n and r")
        kit = localforms.element_kit(NormalizedParams(omega_n, eps_n, r, precision))
        return kit.S, kit.S_exact, kit.precision_used
    if method == "fosls":
        return localforms.fosls_element(omega_n).M, None, None
    if method == "fem":
        return localforms.fem_element(omega_n), None, None
    raise ValueError(f"unknown method {method!r}; expected dpg, fosls or fem")


def extract_stencils(
    method: str,
    omega_n: float,
    eps_n: float | None = None,
    r: int | None = None,
    precision: Precision | None = None,
    normalize: bool = True,
) -> StencilSet:
    """Extract lattice stencils for ``method`` at normalized frequency omega_n.

    Each center row is the complete assembled equation for the middle unknown
    of its type.  With ``normalize`` the row is divided by its self weight so
    the diagonal entry at offset zero equals one; a vanishing self weight
    (a resonance of the center equation) raises CenterRowDegenerate.  When
    the element carries an extended-precision copy, the same rows are read
    off a second patch assembled at full digit count and kept alongside.
    """
    element, element_exact, prec_used = _element_matrix(
        method, omega_n, eps_n, r, precision
    )
    a, touched, dof_type, pos2, centers = assemble_patch(element)
    types = tuple(sorted(centers))
    weights: dict[tuple[int, int], dict[tuple[int, int], complex]] = {}
    for t, c in centers.items():
        row = _center_row(a, touched, dof_type, pos2, c, complex)
        if normalize:
            self_w = row[t][(0, 0)]
            row_max = max(abs(v) for d in row.values() for v in d.values())
            if abs(self_w) <= DEGENERATE_RTOL * row_max:
                raise CenterRowDegenerate(
                    f"{method} center row for {TYPE_NAMES[t]} has self weight "
                    f"{abs(self_w):.3e} against row maximum {row_max:.3e} "
                    f"at omega_n={omega_n!r}"
                )
            for s in row:
                row[s] = {k: v / self_w for k, v in row[s].items()}
        for s, d in row.items():
            weights[(t, s)] = d
    exact = None
    if element_exact is not None:
        exact = {}
        with working_context(prec_used):
            ae, *_ = assemble_patch(element_exact)
            for t, c in centers.items():
                row = _center_row(ae, touched, dof_type, pos2, c, mp.mpc)
                if normalize:
                    self_w = row[t][(0, 0)]
                    for s in row:
                        row[s] = {k: v / self_w for k, v in row[s].items()}
                for s, d in row.items():
                    exact[(t, s)] = d
    return StencilSet(method, omega_n, eps_n, r, types, weights, exact)


def _center_row(a, touched, dof_type, pos2, c, convert):
    """Read one assembled center row into {neighbour type: {offset: value}}."""
    row: dict[int, dict[tuple[int, int], object]] = {}
    for q in np.flatnonzero(touched[c]):
        s = int(dof_type[q])
        off = (int(pos2[q, 0] - pos2[c, 0]), int(pos2[q, 1] - pos2[c, 1]))
        row.setdefault(s, {})[off] = convert(a[c, q])
    return row


def apply_stencil(
    stencils: StencilSet, t: int, values: Callable[[int, float, float], complex]
) -> complex:
    """Evaluate the type ``t`` center equation against a lattice function.

    ``values(s, dx, dy)`` must return the type ``s`` unknown at displacement
    ``(dx, dy)`` from the center, in units of the mesh size.
    """
    total = 0.0 + 0.0j
    for s in stencils.types:
        row = stencils.weights.get((t, s))
        if not row:
            continue
        for (two_lx, two_ly), coef in row.items():
            total += coef * values(s, two_lx / 2.0, two_ly / 2.0)
    return total
