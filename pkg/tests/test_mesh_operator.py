import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logic.errors import InvalidInputError
from logic.mesh_operator import Mesh1D, apply_divergence, apply_gradient, assemble_operator, solve_shifted

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False, allow_infinity=False)


def layered(x):
    return np.where(x < 0.5, 1.0, 1.5)


def test_uniform_mesh_spacing():
    for n in (1, 3, 99, 200):
        mesh = Mesh1D.uniform(n)
        assert abs(mesh.h * (n + 1) - 1.0) < 1e-12
        assert mesh.node_coords.shape == (n,)
        assert mesh.midpoints.shape == (n + 1,)


def test_mesh_rejects_empty():
    with pytest.raises(InvalidInputError):
        Mesh1D.uniform(0)


def test_three_point_stencil():
    op = assemble_operator(Mesh1D.uniform(3), 1.0)
    assert np.all(op.diagonal == 32.0)
    assert np.all(op.off_diagonal == -16.0)
    dense = op.stiffness.toarray()
    assert np.array_equal(dense, dense.T)


def test_apply_matches_stiffness():
    mesh = Mesh1D.uniform(30)
    op = assemble_operator(mesh, layered)
    u = np.random.default_rng(1).standard_normal(30)
    assert np.allclose(op.apply(u), op.stiffness @ u, rtol=0, atol=1e-9)


def test_smallest_eigenvalue_close_to_pi_squared():
    op = assemble_operator(Mesh1D.uniform(199), 1.0)
    mu = np.linalg.eigvalsh(op.stiffness.toarray())
    assert abs(mu[0] - np.pi ** 2) <= 0.01 * np.pi ** 2


def test_ellipticity_violation_rejected():
    mesh = Mesh1D.uniform(10)
    with pytest.raises(InvalidInputError):
        assemble_operator(mesh, lambda x: x - 0.5)
    with pytest.raises(InvalidInputError, match="outside"):
        assemble_operator(mesh, 0.5, lambda_ell=1.0, Lambda_ell=2.0)
    with pytest.raises(InvalidInputError):
        assemble_operator(mesh, lambda x: np.full_like(x, np.nan))


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=12, max_size=12))
def test_discrete_ellipticity(values):
    mesh = Mesh1D.uniform(12)
    op = assemble_operator(mesh, layered, 1.0, 1.5)
    u = np.array(values)
    grad_sq = mesh.h * float(np.sum(apply_gradient(mesh, u) ** 2))
    energy = op.energy(u)
    assert energy >= op.lambda_ell * grad_sq - 1e-9 * (1.0 + grad_sq)
    assert energy <= op.Lambda_ell * grad_sq + 1e-9 * (1.0 + grad_sq)


def test_gradient_of_zero_and_linear():
    mesh = Mesh1D.uniform(9)
    assert np.all(apply_gradient(mesh, np.zeros(9)) == 0.0)
    grad = apply_gradient(mesh, mesh.node_coords.copy())
    assert np.allclose(grad[1:-1], 1.0, atol=1e-12)
    # Dirichlet padding
    assert grad[0] == pytest.approx(1.0)
    assert grad[-1] == pytest.approx(-mesh.node_coords[-1] / mesh.h)


def test_length_mismatch_rejected():
    mesh = Mesh1D.uniform(9)
    with pytest.raises(InvalidInputError):
        apply_gradient(mesh, np.zeros(8))
    with pytest.raises(InvalidInputError):
        apply_divergence(mesh, np.zeros(9))


def test_divergence_of_constant_flux_is_zero():
    mesh = Mesh1D.uniform(9)
    assert np.all(apply_divergence(mesh, np.zeros(10)) == 0.0)
    assert np.allclose(apply_divergence(mesh, np.full(10, 3.0)), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=15, max_size=15), st.lists(finite, min_size=16, max_size=16))
def test_gradient_divergence_adjoint(u_values, q_values):
    mesh = Mesh1D.uniform(15)
    u, q = np.array(u_values), np.array(q_values)
    lhs = mesh.h * float(np.dot(apply_gradient(mesh, u), q))
    rhs = -mesh.h * float(np.dot(u, apply_divergence(mesh, q)))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) / mesh.h


def test_solve_shifted_identity_at_zero_dt():
    op = assemble_operator(Mesh1D.uniform(20), 1.0)
    rhs = np.random.default_rng(2).standard_normal(20)
    out = solve_shifted(op, 0.0, rhs)
    assert np.array_equal(out, rhs)
    assert out is not rhs


def test_solve_shifted_round_trip():
    op = assemble_operator(Mesh1D.uniform(50), layered)
    v = np.random.default_rng(3).standard_normal(50)
    rhs = v + 0.01 * op.apply(v)
    assert np.allclose(solve_shifted(op, 0.01, rhs), v, rtol=0, atol=1e-10)


def test_solve_shifted_on_first_eigenvector():
    op = assemble_operator(Mesh1D.uniform(60), 1.0)
    mu, vectors = np.linalg.eigh(op.stiffness.toarray())
    phi = vectors[:, 0]
    out = solve_shifted(op, 0.01, phi)
    assert np.allclose(out, phi / (1.0 + 0.01 * mu[0]), atol=1e-12)


def test_solve_shifted_rejects_bad_input():
    op = assemble_operator(Mesh1D.uniform(5), 1.0)
    rhs = np.ones(5)
    rhs[3] = np.inf
    with pytest.raises(InvalidInputError, match="node 3"):
        solve_shifted(op, 0.1, rhs)
    with pytest.raises(InvalidInputError):
        solve_shifted(op, -0.1, np.ones(5))


def test_shifted_factor_is_cached():
    op = assemble_operator(Mesh1D.uniform(5), 1.0)
    assert op.shifted_factor(0.1) is op.shifted_factor(0.1)


LAYERED_OP = assemble_operator(Mesh1D.uniform(30), layered)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=30, max_size=30),
       st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=30, max_size=30),
       st.sampled_from([1e-4, 1e-3, 1e-2, 1e-1]))
def test_shifted_solve_preserves_order(rhs, lift, dt):
    lower = np.array(rhs)
    upper = lower + np.array(lift)
    u_lower = solve_shifted(LAYERED_OP, dt, lower)
    u_upper = solve_shifted(LAYERED_OP, dt, upper)
    assert np.all(u_lower <= u_upper + 1e-12)
