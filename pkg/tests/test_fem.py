import numpy as np
import pytest

from lcfem.fem import (
    FeSpace,
    Geometry,
    NonNestedMeshError,
    build_constraints,
    h1_error,
    interpolate,
    quadrature,
    shape_eval,
    transfer,
    transfer_values,
)
from lcfem.mesh import build_uniform_grid, refine, refine_uniform
from lcfem.physics import DirectorState, energy, ProblemConfig

from conftest import helix_exact


def test_q1_nodal_value():
    v, _ = shape_eval("Q1", np.array([[0.0, 0.0]]))
    assert v[0].tolist() == [1.0, 0.0, 0.0, 0.0]


def test_q2_centre_node():
    v, _ = shape_eval("Q2", np.array([[0.5, 0.5]]))
    expected = np.zeros(9)
    expected[4] = 1.0
    assert np.allclose(v[0], expected, atol=1e-15)


def test_partition_of_unity_point():
    v, g = shape_eval("Q2", np.array([[0.25, 0.75]]))
    assert abs(v.sum() - 1) < 1e-14
    assert np.all(np.abs(g.sum(axis=1)) < 1e-13)


@pytest.mark.parametrize("kind,nodes", [
    ("Q1", [[0, 0], [1, 0], [1, 1], [0, 1]]),
    ("Q2", [[i / 2, j / 2] for j in range(3) for i in range(3)]),
])
def test_nodal_delta_and_unity_random(kind, nodes):
    v, _ = shape_eval(kind, np.array(nodes, dtype=float))
    assert np.allclose(v, np.eye(len(nodes)), atol=1e-14)
    pts = np.random.default_rng(1).random((100, 2))
    v, g = shape_eval(kind, pts)
    assert np.allclose(v.sum(axis=1), 1, atol=1e-14)
    assert np.allclose(g.sum(axis=1), 0, atol=1e-13)


def test_shape_eval_rejects_outside_points():
    with pytest.raises(ValueError):
        shape_eval("Q2", np.array([[1.2, 0.5]]))


def test_quadrature_rules():
    p, w = quadrature(1)
    assert p.tolist() == [[0.5, 0.5]] and w.tolist() == [1.0]
    p, w = quadrature(3)
    assert len(w) == 9 and w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.sum(w * p[:, 0] ** 4 * p[:, 1] ** 4) == pytest.approx(1 / 25, rel=1e-14)
    # 3-point Gauss error for sin(pi x) is bounded by pi^6 (3!)^4 / (7 (6!)^3)
    err3 = abs(np.sum(w * np.sin(np.pi * p[:, 0])) - 2 / np.pi)
    assert err3 <= np.pi ** 6 * 6 ** 4 / (7 * 720.0 ** 3)
    p, w = quadrature(4)
    assert abs(np.sum(w * np.sin(np.pi * p[:, 0])) - 2 / np.pi) < 1e-4
    with pytest.raises(ValueError):
        quadrature(7)


def test_second_derivatives_on_distorted_cell():
    m = build_uniform_grid(2, 2)
    m.vertices[4] += [0.1, 0.07]
    geo = Geometry(m)
    # Q2 function on cell 0: compare Hessian to a finite difference of gradients
    space = FeSpace(m)
    rng = np.random.default_rng(0)
    coef = rng.standard_normal(9)
    cell = 0
    corners = m.vertices[m.cells[cell]]
    ref = geo.ref[4]

    def grad_at(x_ref):
        _, g = shape_eval("Q2", x_ref[None])
        _, g1 = shape_eval("Q1", x_ref[None])
        J = np.einsum("aj,ai->ij", g1[0], corners)
        return np.linalg.solve(J.T, g[0].T @ coef), J

    g0, J = grad_at(ref)
    h = 1e-6
    H = np.zeros((2, 2))
    for j in range(2):
        step = np.linalg.solve(J, np.eye(2)[j]) * h  # reference step for a physical unit step
        H[:, j] = (grad_at(ref + step)[0] - grad_at(ref - step)[0]) / (2 * h)
    got = np.einsum("aij,a->ij", geo.d2phi[cell, 4], coef)
    assert np.allclose(got, H, atol=1e-6)
    assert space.n_q2 == 25


def test_dirichlet_constraints_constant():
    space = FeSpace(build_uniform_grid(2, 2))
    C = build_constraints(space, lambda p: np.tile([0.0, 0.0, 1.0], (len(p), 1)))
    assert len(C.hanging) == 0
    b = space.boundary_q2_nodes()
    for comp, val in enumerate([0.0, 0.0, 1.0]):
        for node in b:
            assert C.dirichlet[comp * space.n_q2 + node] == val
    # every dof is exactly one of free / Dirichlet / hanging
    kinds = np.zeros(space.n_dofs, int)
    kinds[C.free] += 1
    kinds[list(C.dirichlet)] += 1
    kinds[list(C.hanging)] += 1
    assert np.all(kinds == 1)


def test_hanging_q1_weights(hanging_mesh):
    space = FeSpace(hanging_mesh, multiplier=True)
    C = build_constraints(space, None)
    m, a, b = hanging_mesh.hanging[0]
    rule = C.hanging[space.n_director + m]
    assert sorted(rule) == sorted([(space.n_director + a, 0.5), (space.n_director + b, 0.5)])
    assert C.offset[space.n_director + m] == 0.0


def test_hanging_q2_reproduces_quadratic(hanging_mesh):
    space = FeSpace(hanging_mesh)
    C = build_constraints(space, None)
    # boundary data zero would clash with x^2, so apply only the hanging part
    u = interpolate(space, lambda p: np.column_stack([p[:, 0] ** 2, p[:, 1] ** 2, p[:, 0] * p[:, 1]]))
    free_all = np.ones(space.n_dofs, bool)
    free_all[list(C.hanging)] = False
    v = u.copy()
    v[list(C.hanging)] = 0.0
    for d, rule in C.hanging.items():
        v[d] = sum(w * u[k] for k, w in rule)
    assert np.max(np.abs(v - u)) < 1e-13


def test_constraint_idempotent(hanging_mesh):
    space = FeSpace(hanging_mesh, multiplier=True)
    C = build_constraints(space, lambda p: helix_exact(2.0)(p)[0])
    u = np.random.default_rng(3).standard_normal(space.n_dofs)
    once = C.apply(u)
    assert np.array_equal(C.apply(once), once)


def test_transfer_constant_and_quadratic():
    coarse = FeSpace(build_uniform_grid(3, 3))
    fine_mesh = refine(coarse.mesh, np.arange(9) % 2 == 0)
    fine = FeSpace(fine_mesh)
    quad = lambda p: np.column_stack([p[:, 0] ** 2, p[:, 0] * p[:, 1] - p[:, 1], np.ones(len(p))])
    u = interpolate(coarse, quad)
    out = transfer(DirectorState(coarse, u), fine)
    expected = interpolate(fine, quad)
    assert np.max(np.abs(out.u - expected)) < 1e-13


def test_transfer_requires_nesting():
    a = FeSpace(build_uniform_grid(2, 2))
    b = FeSpace(build_uniform_grid(2, 2))
    with pytest.raises(NonNestedMeshError):
        transfer_values(a, np.zeros(a.n_dofs), b)


def test_transfer_energy_change_within_interpolation_error():
    cfg = ProblemConfig(K1=1, K2=1, K3=1, t0=2.0)
    coarse_mesh = build_uniform_grid(4, 4)
    coarse = FeSpace(coarse_mesh)
    fine = FeSpace(refine_uniform(coarse_mesh))
    n_ex = lambda p: helix_exact(2.0)(p)[0]
    st_c = DirectorState(coarse, interpolate(coarse, n_ex))
    moved = transfer(st_c, fine)
    st_f = DirectorState(fine, interpolate(fine, n_ex))
    dG = abs(energy(moved, cfg).G - energy(st_c, cfg).G)
    # refinement study: the coarse interpolant's energy error bounds the change
    bound = abs(energy(st_c, cfg).G - energy(st_f, cfg).G) + abs(energy(st_c, cfg).G + 4.0)
    assert dG <= bound
    assert dG < 1e-12  # the transferred function is the same polynomial


def test_h1_error_of_interpolant_converges():
    errs = []
    for n in (4, 8, 16):
        space = FeSpace(build_uniform_grid(n, n))
        u = interpolate(space, lambda p: helix_exact(2.0)(p)[0])
        errs.append(h1_error(space, u, helix_exact(2.0)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5
