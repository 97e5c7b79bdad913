import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
import sympy
from scipy.integrate import tplquad

from stbddc.fem import (MANUFACTURED, AssemblyError, ExactSolution, ProblemSpec, assemble,
                        assemble_dense, coercivity_probe, element_load, element_matrix,
                        error_norm_h, l2_error, make_dof_map, manufactured_problem,
                        manufactured_rhs, manufactured_solution, norm_h_matrix)
from stbddc.mesh import Tag, generate_structured, simplex_geometry

REF_TET = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
x, y, t = sympy.symbols("x y t")
LAMBDA = [1 - x - y - t, x, y, t]


def _integrate_ref_tet(expr):
    return sympy.integrate(expr, (t, 0, 1 - x - y), (y, 0, 1 - x), (x, 0, 1))


def _symbolic_element_matrix(theta, h):
    A = sympy.zeros(4, 4)
    for i, li in enumerate(LAMBDA):
        for j, lj in enumerate(LAMBDA):
            integrand = (sympy.diff(lj, t) * li
                         + theta * h * sympy.diff(lj, t) * sympy.diff(li, t)
                         + sympy.diff(lj, x) * sympy.diff(li, x)
                         + sympy.diff(lj, y) * sympy.diff(li, y))
            A[i, j] = _integrate_ref_tet(integrand)
    return np.array(A.evalf(), dtype=float)


@pytest.fixture(scope="module")
def ref_matrix():
    return _symbolic_element_matrix(sympy.Rational(1, 2), sympy.sqrt(2))


def test_element_matrix_matches_symbolic(ref_matrix):
    A = element_matrix(simplex_geometry(REF_TET), 0.5)
    np.testing.assert_allclose(A, ref_matrix, atol=1e-14)


def test_element_matrix_entries(ref_matrix):
    geom = simplex_geometry(REF_TET)
    A = element_matrix(geom, 0.5)
    # entry (1,1) has no time derivative in phi_1: pure spatial Laplacian part
    assert A[1, 1] == pytest.approx(1 / 6)
    # entry (3,3): convection 1/24 plus stabilization 0.5*sqrt(2)/6
    assert A[3, 3] == pytest.approx(1 / 24 + 0.5 * math.sqrt(2) / 6)
    # (0,3): convection 1/24, stabilization -0.5*sqrt(2)/6, Laplacian 0
    assert A[0, 3] - (-0.5 * math.sqrt(2) / 6) == pytest.approx(1 / 24)


def test_element_matrix_unsymmetric(ref_matrix):
    assert not np.allclose(ref_matrix, ref_matrix.T)


def test_element_load_zero_rhs():
    geom = simplex_geometry(REF_TET)
    b = element_load(geom, 0.5, lambda p: np.zeros(p.shape[:-1]))
    assert np.all(b == 0)


def test_element_load_constant_rhs_without_stabilization():
    geom = simplex_geometry(REF_TET)
    # theta -> 0 removes the time-upwind part of the test function
    b = element_load(geom, 1e-300, lambda p: np.ones(p.shape[:-1]))
    np.testing.assert_allclose(b, geom.volume / 4, rtol=1e-14)


@pytest.fixture(scope="module")
def ref_load_oracle():
    geom = simplex_geometry(REF_TET)
    lam = [lambda a, b, c: 1 - a - b - c, lambda a, b, c: a,
           lambda a, b, c: b, lambda a, b, c: c]
    out = []
    for i in range(4):
        def integrand(tt, yy, xx, i=i):
            return (manufactured_rhs(np.array([xx, yy, tt]))
                    * (lam[i](xx, yy, tt) + 0.5 * geom.h * geom.grads[i, 2]))
        val, _ = tplquad(integrand, 0, 1, 0, lambda a: 1 - a, 0, lambda a, b: 1 - a - b,
                         epsabs=1e-12, epsrel=1e-12)
        out.append(val)
    return np.array(out)


def test_element_load_matches_adaptive_oracle(ref_load_oracle):
    b = element_load(simplex_geometry(REF_TET), 0.5, manufactured_rhs, quad_degree=6)
    np.testing.assert_allclose(b, ref_load_oracle, atol=1e-4)


def test_element_load_unsupported_degree():
    with pytest.raises(ValueError):
        element_load(simplex_geometry(REF_TET), 0.5, manufactured_rhs, quad_degree=9)


def test_manufactured_values():
    assert manufactured_solution([0.5, 0.5, 0.5]) == pytest.approx(1.0)
    assert manufactured_rhs([0.5, 0.5, 0.5]) == pytest.approx(2 * math.pi**2)
    assert 2 * math.pi**2 == pytest.approx(19.7392, abs=1e-4)
    pts = np.random.default_rng(0).random((20, 3))
    pts[:, 2] = 0
    assert np.all(manufactured_solution(pts) == 0)


def test_manufactured_rhs_is_heat_operator():
    X, Y, T = sympy.symbols("X Y T")
    u = sympy.sin(sympy.pi * X) * sympy.sin(sympy.pi * Y) * sympy.sin(sympy.pi * T)
    f = sympy.lambdify((X, Y, T), sympy.diff(u, T) - sympy.diff(u, X, 2) - sympy.diff(u, Y, 2))
    pts = np.random.default_rng(1).random((50, 3))
    np.testing.assert_allclose(manufactured_rhs(pts), f(*pts.T), rtol=1e-12, atol=1e-12)
    u1 = sympy.sin(sympy.pi * X) * sympy.sin(sympy.pi * T)
    f1 = sympy.lambdify((X, T), sympy.diff(u1, T) - sympy.diff(u1, X, 2))
    np.testing.assert_allclose(manufactured_rhs(pts[:, :2]), f1(*pts[:, :2].T), atol=1e-12)


def test_manufactured_derivatives():
    X, Y, T = sympy.symbols("X Y T")
    u = sympy.sin(sympy.pi * X) * sympy.sin(sympy.pi * Y) * sympy.sin(sympy.pi * T)
    pts = np.random.default_rng(2).random((30, 3))
    gx = [sympy.lambdify((X, Y, T), sympy.diff(u, s)) for s in (X, Y)]
    ut = sympy.lambdify((X, Y, T), sympy.diff(u, T))
    np.testing.assert_allclose(MANUFACTURED.grad_x(pts), np.column_stack([g(*pts.T) for g in gx]),
                               atol=1e-12)
    np.testing.assert_allclose(MANUFACTURED.dt(pts), ut(*pts.T), atol=1e-12)


def test_system_size_n16_mesh():
    mesh = generate_structured(16, 2)
    K, f, dof_map = assemble(mesh, manufactured_problem(0.5))
    assert dof_map.n_total == 4913
    assert K.shape == (4913 - int(mesh.dirichlet_mask().sum()),) * 2
    assert K.shape[0] == 15 * 15 * 16


def test_csr_invariants():
    K, _, _ = assemble(generate_structured(3, 2), manufactured_problem(0.5))
    assert K.has_sorted_indices
    assert np.all(K.data != 0)


@pytest.mark.parametrize("n,dim_x,theta", [(2, 1, 0.5), (2, 2, 0.5), (3, 2, 2.5), (3, 1, 0.5)])
def test_sparse_matches_dense_assembly(n, dim_x, theta):
    mesh = generate_structured(n, dim_x)
    K, _, dm = assemble(mesh, manufactured_problem(theta))
    A = assemble_dense(mesh, theta)[np.ix_(dm.free_vertices, dm.free_vertices)]
    np.testing.assert_allclose(K.toarray(), A, atol=1e-12, rtol=0)


def test_row_sums_against_dense():
    mesh = generate_structured(2, 2)
    K, _, dm = assemble(mesh, manufactured_problem(0.5))
    A = assemble_dense(mesh, 0.5)
    one_free = np.zeros(mesh.n_vertices)
    one_free[dm.free_vertices] = 1.0
    np.testing.assert_allclose(K @ np.ones(dm.n_free),
                               (A @ one_free)[dm.free_vertices], atol=1e-14)


def test_zero_rhs_gives_zero_load():
    spec = ProblemSpec(0.5, lambda p: np.zeros(p.shape[:-1]))
    _, f, _ = assemble(generate_structured(3, 2), spec)
    assert np.all(f == 0)


def test_assembly_deterministic():
    mesh = generate_structured(4, 2)
    K1, f1, _ = assemble(mesh, manufactured_problem(0.5))
    K2, f2, _ = assemble(mesh, manufactured_problem(0.5))
    assert np.array_equal(K1.data, K2.data) and np.array_equal(f1, f2)


def test_no_free_dofs():
    mesh = generate_structured(1, 1)  # every vertex is on the Dirichlet set or t=1 wall
    assert mesh.dirichlet_mask().all()
    with pytest.raises(AssemblyError):
        assemble(mesh, manufactured_problem(0.5))


def test_theta_must_be_positive():
    with pytest.raises(ValueError):
        ProblemSpec(0.0, manufactured_rhs)


LINEAR_T = ExactSolution(lambda p: p[..., -1],
                         lambda p: np.zeros(p.shape[:-1] + (p.shape[-1] - 1,)),
                         lambda p: np.ones(p.shape[:-1]))


@pytest.mark.parametrize("dim_x", [1, 2])
def test_linear_field_reproduced(dim_x):
    mesh = generate_structured(3, dim_x)
    spec = ProblemSpec(0.5, manufactured_rhs, LINEAR_T)
    u_h = mesh.vertices[:, -1].copy()
    assert error_norm_h(mesh, u_h, spec) < 1e-12
    assert l2_error(mesh, u_h, spec) < 1e-12


@pytest.mark.parametrize("n,dim_x,theta", [(4, 2, 0.5), (8, 2, 2.5), (16, 1, 0.5)])
def test_norm_of_exact_solution_closed_form(n, dim_x, theta):
    """||u||_h for u_h = 0 against the analytic integrals.

    Kuhn simplices all have the cube diagonal as longest edge, so h_K is
    constant; u vanishes at t = 1 so the top term drops out.
    """
    mesh = generate_structured(n, dim_x)
    spec = manufactured_problem(theta)
    d = dim_x + 1
    h = math.sqrt(d) / n
    grad_sq = dim_x * math.pi**2 / 2**d
    dt_sq = math.pi**2 / 2**d
    expected = math.sqrt(grad_sq + theta * h * dt_sq)
    assert error_norm_h(mesh, np.zeros(mesh.n_vertices), spec) == pytest.approx(expected, rel=1e-3)
    assert l2_error(mesh, np.zeros(mesh.n_vertices), spec) == pytest.approx(
        math.sqrt(0.5**d), rel=1e-3)


def test_norm_matches_monte_carlo():
    """Independent sampling estimate of ||u||_h^2 on the unit cube."""
    mesh = generate_structured(4, 2)
    spec = manufactured_problem(0.5)
    pts = np.random.default_rng(7).random((400_000, 3))
    h = math.sqrt(3) / 4
    mc = np.mean(np.sum(MANUFACTURED.grad_x(pts) ** 2, axis=1) + 0.5 * h * MANUFACTURED.dt(pts) ** 2)
    assert error_norm_h(mesh, np.zeros(mesh.n_vertices), spec) ** 2 == pytest.approx(mc, rel=1e-2)


def test_norm_quadrature_matches_gram_matrix():
    """Quadrature route and sparse Gram-matrix route of ||v||_h agree for a
    discrete field; a field living on t = 1 exercises the top surface term."""
    mesh = generate_structured(3, 2)
    zero = ExactSolution(lambda p: np.zeros(p.shape[:-1]),
                         lambda p: np.zeros(p.shape[:-1] + (2,)),
                         lambda p: np.zeros(p.shape[:-1]))
    dm = make_dof_map(mesh)
    N = norm_h_matrix(mesh, 0.5, dm)
    rng = np.random.default_rng(3)
    for u_h in ((mesh.boundary_tag == Tag.TOP).astype(float),
                dm.expand(rng.standard_normal(dm.n_free))):
        v = u_h[dm.free_vertices]
        assert error_norm_h(mesh, u_h, ProblemSpec(0.5, manufactured_rhs, zero)) ** 2 == \
            pytest.approx(v @ (N @ v), rel=1e-12)


def test_error_norm_requires_exact():
    mesh = generate_structured(2, 2)
    with pytest.raises(ValueError, match="exact"):
        error_norm_h(mesh, np.zeros(mesh.n_vertices), ProblemSpec(0.5, manufactured_rhs))
    with pytest.raises(ValueError, match="exact"):
        l2_error(mesh, np.zeros(mesh.n_vertices), ProblemSpec(0.5, manufactured_rhs))


def test_coercivity_quotient_is_one():
    """For P1 fields vanishing at t = 0, int u_t u = ||u||^2_{Sigma_T} / 2,
    so v^T K v equals ||v||_h^2 exactly."""
    mesh = generate_structured(4, 2)
    spec = manufactured_problem(0.5)
    K, _, dm = assemble(mesh, spec)
    q = [coercivity_probe(K, dm, mesh, spec, trials=100, seed=s) for s in (0, 1, 2)]
    assert min(q) > 0
    np.testing.assert_allclose(q, 1.0, rtol=1e-10)
    assert max(q) / min(q) < 1.2


def test_galerkin_consistency_residual():
    mesh = generate_structured(6, 2)
    spec = manufactured_problem(0.5)
    K, f, _ = assemble(mesh, spec)
    u = spla.spsolve(K.tocsc(), f)
    assert np.linalg.norm(f - K @ u) / np.linalg.norm(f) <= 1e-9


def test_error_decreases_with_refinement():
    spec = manufactured_problem(0.5)
    errs = []
    for n in (4, 8):
        mesh = generate_structured(n, 2)
        K, f, dm = assemble(mesh, spec)
        errs.append(error_norm_h(mesh, dm.expand(spla.spsolve(K.tocsc(), f)), spec))
    assert errs[1] < errs[0]
