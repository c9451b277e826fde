import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from logic.coefficients import CoefficientSet, SourceModel
from logic.errors import InvalidInputError, SchemeError
from logic.mesh_operator import EllipticOperator, Mesh1D, apply_divergence, solve_shifted
from logic.noise import NoiseIncrement, NoiseModel, brownian_increments, noise_forcing

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """
    Time stepping parameters for one path.

    n_penalty = 0 disables the obstacle (plain SPDE step).
    """
    dt: float
    T: float
    n_penalty: float = 0.0
    seed: int = 0
    path_id: int = 0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if not self.T > 0.0:
            raise InvalidInputError(f"T must be positive, got {self.T}")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise InvalidInputError(f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.n_penalty < 0.0:
            raise InvalidInputError(f"n_penalty must be non-negative, got {self.n_penalty}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def with_penalty(self, n_penalty: float) -> "SolverConfig":
        return SolverConfig(dt=self.dt, T=self.T, n_penalty=n_penalty, seed=self.seed, path_id=self.path_id)

    def with_path(self, path_id: int) -> "SolverConfig":
        return SolverConfig(dt=self.dt, T=self.T, n_penalty=self.n_penalty, seed=self.seed, path_id=path_id)

    def refined(self, factor: int = 2) -> "SolverConfig":
        return SolverConfig(dt=self.dt / factor, T=self.T, n_penalty=self.n_penalty,
                            seed=self.seed, path_id=self.path_id)


@dataclass(frozen=True)
class Obstacle:
    """Barrier S(t, x), vectorised in x."""
    S: Callable[[float, np.ndarray], np.ndarray]
    name: str = "custom"

    def values(self, t: float, mesh: Mesh1D) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.S(t, mesh.node_coords), dtype=float),
                               mesh.node_coords.shape).astype(float)

    def grid(self, times: np.ndarray, mesh: Mesh1D) -> np.ndarray:
        return np.stack([self.values(float(t), mesh) for t in times])

    def check_compatible(self, xi: np.ndarray, mesh: Mesh1D) -> None:
        """S(0, .) <= xi on every node."""
        excess = self.values(0.0, mesh) - xi
        if np.any(excess > 0.0):
            node = int(np.argmax(excess))
            raise InvalidInputError(
                f"obstacle '{self.name}' lies above the initial data at node {node} "
                f"(S - xi = {excess[node]:.3g})"
            )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    times: (K+1,), fields: (K+1, N), penalty_increments: (K, N).
    increments holds the channel increments the path was driven by (K, J), if any.
    """
    times: np.ndarray
    fields: np.ndarray
    penalty_increments: np.ndarray
    increments: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.fields)):
            raise InvalidInputError("trajectory contains non-finite values")
        if np.any(self.penalty_increments < 0.0):
            raise InvalidInputError("penalty increments must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(self.penalty_increments.shape[0])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]


@dataclass(frozen=True, eq=False)
class ReflectionMeasure:
    """Nodal masses per step, units density * h * dt."""
    masses: np.ndarray

    def __post_init__(self):
        if np.any(self.masses < 0.0):
            raise InvalidInputError("reflection masses must be non-negative")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def cumulative(self) -> np.ndarray:
        """Mass received by each node up to the end of each step, shape (K, N)."""
        return np.cumsum(self.masses, axis=0)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, mesh: Mesh1D) -> "ReflectionMeasure":
        return cls(masses=traj.penalty_increments * mesh.h)

    @classmethod
    def empty(cls, n_steps: int, mesh: Mesh1D) -> "ReflectionMeasure":
        return cls(masses=np.zeros((n_steps, mesh.n_interior)))


def _require_finite(u: np.ndarray, step_index: int, phase: str) -> None:
    if not np.all(np.isfinite(u)):
        node = int(np.flatnonzero(~np.isfinite(u))[0])
        raise SchemeError(f"non-finite state after {phase}", step=step_index, node=node)


def penalty_substep(u: np.ndarray, S: np.ndarray, n_penalty: float, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact flow of u' = n (u - S)^- over dt, node by node.

    Returns:
        (u_plus, increment) with increment = u_plus - u >= 0
    """
    if n_penalty == 0.0:
        return u, np.zeros_like(u)
    gap = np.minimum(u - S, 0.0)
    increment = -gap * -np.expm1(-n_penalty * dt)
    return u + increment, increment


def step(u: np.ndarray, t: float, cfg: SolverConfig, op: EllipticOperator, coeffs: SourceModel,
         obs: Obstacle, noise: Optional[NoiseModel], inc: Optional[NoiseIncrement],
         step_index: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    One Lie-splitting step: explicit sources, implicit diffusion, exact penalty.
    """
    if inc is not None and abs(inc.dt - cfg.dt) > 1e-15:
        raise InvalidInputError(f"increment dt={inc.dt} does not match solver dt={cfg.dt}")
    mesh = op.mesh
    dt = cfg.dt

    # (a) explicit sources at the Ito point
    sources = coeffs.evaluate(step_index, t, mesh, u)
    u_star = u + dt * sources.f + dt * apply_divergence(mesh, sources.g)
    u_star = u_star + noise_forcing(noise, sources.h_tilde, None if inc is None else inc.dB)
    _require_finite(u_star, step_index, "source substep")

    # (b) implicit diffusion
    u_diff = solve_shifted(op, dt, u_star)
    _require_finite(u_diff, step_index, "diffusion substep")

    # (c) penalty against the end-of-step obstacle
    u_next, penalty = penalty_substep(u_diff, obs.values(t + dt, mesh), cfg.n_penalty, dt)
    _require_finite(u_next, step_index, "penalty substep")
    return u_next, penalty


def simulate_path(cfg: SolverConfig, op: EllipticOperator, coeffs: SourceModel, obs: Obstacle,
                  noise: Optional[NoiseModel], xi: np.ndarray,
                  increments: Optional[np.ndarray] = None) -> Tuple[Trajectory, ReflectionMeasure]:
    """
    Penalized SPDE path u^n started from xi.

    increments (K, J) may be supplied to drive several runs with one Brownian
    path; otherwise they are drawn from the (seed, path_id) stream.
    """
    mesh = op.mesh
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (mesh.n_interior,) or not np.all(np.isfinite(xi)):
        raise InvalidInputError("initial data must be a finite field on the mesh")
    obs.check_compatible(xi, mesh)

    n_steps = cfg.n_steps
    if noise is not None and increments is None:
        increments = brownian_increments(noise, cfg.dt, n_steps, cfg.seed, cfg.path_id)
    if increments is not None and increments.shape[0] != n_steps:
        raise InvalidInputError(f"{increments.shape[0]} increments supplied for {n_steps} steps")

    times = cfg.times
    fields = np.empty((n_steps + 1, mesh.n_interior))
    penalties = np.empty((n_steps, mesh.n_interior))
    fields[0] = xi
    u = xi
    for k in range(n_steps):
        inc = None if increments is None else NoiseIncrement(dB=increments[k], dt=cfg.dt)
        u, penalties[k] = step(u, float(times[k]), cfg, op, coeffs, obs, noise, inc, step_index=k)
        fields[k + 1] = u

    traj = Trajectory(times=times, fields=fields, penalty_increments=penalties, increments=increments)
    nu = ReflectionMeasure.from_trajectory(traj, mesh)
    logger.debug("path %d (n=%g): %d steps, total mass %.6g", cfg.path_id, cfg.n_penalty, n_steps, nu.total_mass)
    return traj, nu


def deterministic_penalized(cfg: SolverConfig, op: EllipticOperator, obs: Obstacle,
                            u0: np.ndarray) -> Trajectory:
    """
    Penalized heat equation dv/dt = -Av + n (v - S)^- (no sources, no noise).
    """
    traj, _ = simulate_path(cfg, op, CoefficientSet(name="zero"), obs, None, u0)
    return traj
