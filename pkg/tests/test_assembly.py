"""Mesh, global solve, and experiment-driver tests.

Oracles: frozen DOF ids from the numbering formulas, a closed-form
best-approximation distance for a linear field, an independent quadrature
reimplementation, and exactness of boundary traces on imposed vertices.
"""

import numpy as np
import pytest

from helmdpg import assembly, localforms
from helmdpg.errors import BCInconsistent, MeshTooSmall
from helmdpg.numkit import DOUBLE, tensor_rule


# ---------------------------------------------------------------------------
# mesh numbering
# ---------------------------------------------------------------------------


def test_mesh_counts():
    m = assembly.build_mesh(2)
    assert (m.n_vertices, m.n_hedges, m.n_vedges) == (9, 6, 6)
    m = assembly.build_mesh(16)
    assert (m.n_vertices, m.n_hedges, m.n_vedges) == (289, 272, 272)
    assert m.n_dofs == 289 + 272 + 272


def test_mesh_too_small():
    with pytest.raises(MeshTooSmall):
        assembly.build_mesh(1)


def test_element_trace_dofs_frozen():
    # hand-computed from the numbering formulas for n = 2, element (0, 0):
    # vertices CCW, then bottom/top horizontal edges, then left/right
    # vertical edges
    m = assembly.build_mesh(2)
    assert m.element_trace_dofs(0, 0) == [0, 1, 4, 3, 9, 11, 15, 16]
    assert m.element_trace_dofs(1, 1) == [4, 5, 8, 7, 12, 14, 19, 20]


def test_boundary_vertices():
    m = assembly.build_mesh(2)
    ids = m.boundary_vertex_ids()
    assert len(ids) == 8
    assert 4 not in ids  # the center vertex is interior
    xy = m.vertex_coords()
    on_edge = (xy[:, 0] == 0) | (xy[:, 0] == 1) | (xy[:, 1] == 0) | (xy[:, 1] == 1)
    np.testing.assert_array_equal(np.sort(np.where(on_edge)[0]), ids)


def test_vertex_coords():
    m = assembly.build_mesh(4)
    xy = m.vertex_coords()
    np.testing.assert_allclose(xy[m.vertex_id(1, 3)], [0.25, 0.75])


# ---------------------------------------------------------------------------
# exact-solution closures
# ---------------------------------------------------------------------------


def test_manufactured_data_consistency():
    """f must equal the operator applied to (u, phi); check by finite
    differences at interior points."""
    ex = assembly.manufactured_solution(2.0)
    rng = np.random.default_rng(3)
    x, y = rng.uniform(0.2, 0.8, 20), rng.uniform(0.2, 0.8, 20)
    d = 1e-6
    phi_x = (ex.phi(x + d, y) - ex.phi(x - d, y)) / (2 * d)
    phi_y = (ex.phi(x, y + d) - ex.phi(x, y - d)) / (2 * d)
    du1 = (ex.u1(x + d, y) - ex.u1(x - d, y)) / (2 * d)
    du2 = (ex.u2(x, y + d) - ex.u2(x, y - d)) / (2 * d)
    w = ex.omega
    np.testing.assert_allclose(ex.f1(x, y), 1j * w * ex.u1(x, y) + phi_x, atol=1e-8)
    np.testing.assert_allclose(ex.f2(x, y), 1j * w * ex.u2(x, y) + phi_y, atol=1e-8)
    np.testing.assert_allclose(ex.f3(x, y), 1j * w * ex.phi(x, y) + du1 + du2, atol=1e-8)


def test_manufactured_default_sign_kills_vector_data():
    ex = assembly.manufactured_solution(3.0)
    x = np.linspace(0.1, 0.9, 7)
    assert np.max(np.abs(ex.f1(x, x))) < 1e-14
    assert np.max(np.abs(ex.f2(x, x))) < 1e-14
    ex_flip = assembly.manufactured_solution(3.0, sign=-1)
    assert np.max(np.abs(ex_flip.f1(x, x))) > 0.1


def test_plane_wave_data_vanishes():
    ex = assembly.plane_wave(6 * np.pi, np.pi / 8)
    rng = np.random.default_rng(11)
    x, y = rng.random(40), rng.random(40)
    for f in (ex.f1, ex.f2, ex.f3):
        assert np.max(np.abs(f(x, y))) <= 1e-12
    # the fields themselves solve nothing trivial: |phi| = |u| = 1
    np.testing.assert_allclose(np.abs(ex.phi(x, y)), 1.0)
    np.testing.assert_allclose(
        np.abs(ex.u1(x, y)) ** 2 + np.abs(ex.u2(x, y)) ** 2, 1.0
    )


def test_dirichlet_values_trace_exact():
    m = assembly.build_mesh(4)
    ex = assembly.plane_wave(2.0, 0.3)
    g = assembly.dirichlet_values(m, ex)
    ids = m.boundary_vertex_ids()
    xy = m.vertex_coords()[ids]
    np.testing.assert_allclose(g, np.exp(1j * 2.0 * (np.cos(0.3) * xy[:, 0] + np.sin(0.3) * xy[:, 1])))


# ---------------------------------------------------------------------------
# best-approximation distance
# ---------------------------------------------------------------------------


def test_best_approx_constant_fields_zero():
    m = assembly.build_mesh(3)
    const = assembly.ExactSolution(
        "const", 1.0,
        phi=lambda x, y: np.full_like(np.asarray(x, dtype=complex), 2 - 1j),
        u1=lambda x, y: np.full_like(np.asarray(x, dtype=complex), 0.5),
        u2=lambda x, y: np.full_like(np.asarray(x, dtype=complex), -3.0),
        f1=lambda x, y: np.zeros_like(np.asarray(x, dtype=complex)),
        f2=lambda x, y: np.zeros_like(np.asarray(x, dtype=complex)),
        f3=lambda x, y: np.zeros_like(np.asarray(x, dtype=complex)),
    )
    assert assembly.best_approx_error(m, const) <= 1e-14


def test_best_approx_linear_closed_form():
    """For phi = x the per-element distance to constants is h^2/sqrt(12),
    so the total over n^2 elements is h/sqrt(12)."""
    zero = lambda x, y: np.zeros_like(np.asarray(x, dtype=complex))
    lin = assembly.ExactSolution(
        "linear", 1.0,
        phi=lambda x, y: np.asarray(x, dtype=complex),
        u1=zero, u2=zero,
        f1=lambda x, y: np.ones_like(np.asarray(x, dtype=complex)),
        f2=zero,
        f3=lambda x, y: 1j * np.asarray(x, dtype=complex),
    )
    for n in (2, 5, 8):
        m = assembly.build_mesh(n)
        np.testing.assert_allclose(
            assembly.best_approx_error(m, lin), m.h / np.sqrt(12.0), rtol=1e-13
        )


def test_best_approx_independent_quadrature():
    """Recompute the manufactured-solution distance from scratch with a
    finer rule and element means computed by this test."""
    m = assembly.build_mesh(5)
    ex = assembly.manufactured_solution(2.5)
    rule = tensor_rule(10, DOUBLE)
    w = rule.points, rule.weights
    total = 0.0
    for ey in range(m.n):
        for exx in range(m.n):
            xs = (exx + rule.points[:, 0]) * m.h
            ys = (ey + rule.points[:, 1]) * m.h
            for comp in (ex.u1(xs, ys), ex.u2(xs, ys), ex.phi(xs, ys)):
                mean = comp @ rule.weights
                total += np.sum(rule.weights * np.abs(comp - mean) ** 2)
    oracle = np.sqrt(total * m.h**2)
    np.testing.assert_allclose(assembly.best_approx_error(m, ex), oracle, rtol=1e-12)


# ---------------------------------------------------------------------------
# global solves
# ---------------------------------------------------------------------------


def test_global_matrix_hermitian_positive_definite():
    """Every condensed element is Hermitian PD, so the assembled matrix is
    too, before any boundary condition."""
    m = assembly.build_mesh(3)
    kit = localforms.element_kit(localforms.NormalizedParams(2.0 * m.h, 1e-2 * m.h, 2))
    a = assembly._assemble_global(m, m.h**2 * kit.S).toarray()
    herm = np.max(np.abs(a - a.conj().T))
    assert herm <= 1e-10 * np.max(np.abs(a))
    eigs = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
    assert eigs[0] > 0


def test_zero_data_zero_solution():
    m = assembly.build_mesh(4)
    rep = assembly.solve_dpg(m, 2.0, 1e-2, 2, assembly.zero_solution(2.0))
    assert rep.e_r == 0.0
    assert np.max(np.abs(rep.trace)) == 0.0
    assert np.max(np.abs(rep.fields)) == 0.0


def test_manufactured_near_optimal():
    m = assembly.build_mesh(16)
    rep = assembly.solve_dpg(m, 2.0, 1e-2, 3, assembly.manufactured_solution(2.0))
    assert rep.residual_rel <= 1e-10
    assert rep.ratio >= 1.0 - 1e-9
    assert rep.ratio <= 1.5
    assert rep.e_r < 0.01


def test_ratio_lower_bound_random_eps():
    """The recovered piecewise-constant fields can never beat the
    L2-optimal constants."""
    m = assembly.build_mesh(8)
    for eps in (1.0, 1e-3):
        rep = assembly.solve_dpg(m, 3.0, eps, 2, assembly.manufactured_solution(3.0))
        assert rep.ratio >= 1.0 - 1e-9


def test_fosls_solve_contract():
    m = assembly.build_mesh(16)
    rep = assembly.solve_fosls(m, 2.0, assembly.manufactured_solution(2.0))
    assert rep.residual_rel <= 1e-10
    assert rep.e_r < 0.01
    assert rep.method == "fosls"


def test_plane_wave_boundary_trace_imposed():
    """Boundary vertices carry the exact data, and the vertex grid is
    indexed [i, j] with i along x."""
    m = assembly.build_mesh(4)
    ex = assembly.plane_wave(2.0, np.pi / 8)
    rep = assembly.solve_dpg(m, 2.0, 1e-2, 2, ex)
    grid = rep.vertex_grid(m)
    h = m.h
    for i in range(5):
        np.testing.assert_allclose(grid[i, 0], complex(ex.phi(i * h, 0.0)), rtol=1e-12)
        np.testing.assert_allclose(grid[0, i], complex(ex.phi(0.0, i * h)), rtol=1e-12)
        np.testing.assert_allclose(grid[i, 4], complex(ex.phi(i * h, 1.0)), rtol=1e-12)


def test_bc_inconsistent():
    m = assembly.build_mesh(4)
    ex = assembly.manufactured_solution(2.0)
    with pytest.raises(BCInconsistent):
        assembly.solve_dpg(m, 2.0, 1e-2, 2, ex, bc=np.zeros(3, dtype=complex))
    bad = np.zeros(len(m.boundary_vertex_ids()), dtype=complex)
    bad[0] = np.nan
    with pytest.raises(BCInconsistent):
        assembly.solve_dpg(m, 2.0, 1e-2, 2, ex, bc=bad)


def test_solve_method_dispatch():
    m = assembly.build_mesh(4)
    ex = assembly.manufactured_solution(2.0)
    rep = assembly.solve_method("dpg", m, 2.0, ex, eps=1e-2, r=2)
    assert rep.method == "dpg"
    with pytest.raises(ValueError):
        assembly.solve_method("dpg", m, 2.0, ex)
    with pytest.raises(ValueError):
        assembly.solve_method("spectral", m, 2.0, ex)


# ---------------------------------------------------------------------------
# convergence and drivers
# ---------------------------------------------------------------------------


def test_h_convergence_rates():
    hc = assembly.h_convergence("dpg", ns=(8, 16, 32))
    assert abs(hc.rate - 1.0) <= 0.2
    hcf = assembly.h_convergence("fosls", ns=(8, 16, 32))
    assert abs(hcf.rate - 1.0) <= 0.3


def test_resonance_grid_skips_resonance():
    grid = assembly.default_resonance_grid()
    assert grid[0] == 3.0 and grid[-1] == 6.0
    assert np.min(np.abs(grid - assembly.RESONANCE_OMEGA)) >= 1e-3
    fine = assembly.default_resonance_grid(step=np.pi * np.sqrt(2.0) / 4443)
    assert np.min(np.abs(fine - assembly.RESONANCE_OMEGA)) >= 1e-3


def test_resonance_sweep_rows():
    rows = assembly.resonance_sweep(omegas=[4.4], eps_values=(1.0, 1e-4), n=16, r=3)
    assert len(rows) == 2
    assert all(row.error is None for row in rows)
    assert all(np.isfinite(row.ratio) for row in rows)
    by_eps = {row.eps: row.ratio for row in rows}
    # the classical test norm degrades near the resonance, the scaled one
    # much less
    assert by_eps[1.0] > 3.0
    assert by_eps[1e-4] < 2.0


def test_amplitude_metric_synthetic():
    flat = np.ones((17, 17))
    assert assembly.amplitude_metric(flat, np.pi / 8) == 1.0
    decay = np.outer(np.linspace(1, 0.2, 17), np.ones(17))
    # propagation along +x: far blocks live at large i where the envelope
    # is smallest
    got = assembly.amplitude_metric(decay, 0.0)
    assert got < 0.45
    with pytest.raises(ValueError):
        assembly.amplitude_metric(np.ones((2, 2)), 0.0)


def test_plane_wave_demo_small():
    rep = assembly.plane_wave_demo(
        method="dpg", theta=np.pi / 8, n=16, omega=2 * np.pi, eps=1e-6, r=3
    )
    assert rep.metric > 0.95
    assert rep.phi_grid.shape == (17, 17)
    repf = assembly.plane_wave_demo(
        method="fosls", theta=np.pi / 8, n=16, omega=2 * np.pi
    )
    assert repf.metric < rep.metric
