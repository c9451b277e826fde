import numpy as np
import pytest

from logic.coefficients import get_preset
from logic.mesh_operator import Mesh1D, assemble_operator
from logic.noise import build_sine_spectrum
from logic.obstacle_solver import ObstacleProblem
from logic.penalized_stepper import Obstacle, SolverConfig


@pytest.fixture
def mesh():
    return Mesh1D.uniform(100)


@pytest.fixture
def unit_op(mesh):
    return assemble_operator(mesh, 1.0)


@pytest.fixture
def sine_obstacle():
    return Obstacle(S=lambda t, x: 0.25 * np.sin(np.pi * x), name="scaled_sine")


@pytest.fixture
def inactive_obstacle():
    return Obstacle(S=lambda t, x: np.full_like(x, -1.0), name="inactive")


@pytest.fixture
def xi(mesh):
    return mesh.sample(lambda x: np.sin(np.pi * x))


@pytest.fixture
def standard_cfg():
    # standard deterministic test: dt = 1e-3 up to T = 0.5
    return SolverConfig(dt=1e-3, T=0.5, n_penalty=1e4)


@pytest.fixture
def standard_problem(xi, sine_obstacle):
    return ObstacleProblem(xi=xi, coeffs=get_preset("zero"), obstacle=sine_obstacle, name="standard")


@pytest.fixture
def small_mesh():
    return Mesh1D.uniform(40)


@pytest.fixture
def small_op(small_mesh):
    return assemble_operator(small_mesh, 1.0)


@pytest.fixture
def small_noise(small_mesh):
    return build_sine_spectrum(small_mesh, 10, "geometric", 0.5)
