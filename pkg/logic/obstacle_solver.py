import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from logic.coefficients import CoefficientSet, SourceModel, SourceTerms, check_contraction, effective_beta
from logic.errors import InvalidInputError
from logic.mesh_operator import EllipticOperator, Mesh1D, apply_gradient
from logic.noise import NoiseModel, brownian_increments
from logic.penalized_stepper import Obstacle, ReflectionMeasure, SolverConfig, Trajectory, simulate_path

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_SCHEDULE = (10.0, 100.0, 1000.0, 10000.0)
MONOTONICITY_FAULT = 1e-6


def map_paths(fn: Callable[[int], T], path_ids: Sequence[int], workers: int = 1) -> List[T]:
    """Run fn over path ids, results in path order regardless of scheduling."""
    if workers <= 1 or len(path_ids) <= 1:
        return [fn(p) for p in path_ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, path_ids))


@dataclass(frozen=True)
class PenaltySchedule:
    n_values: Tuple[float, ...] = DEFAULT_SCHEDULE

    def __post_init__(self):
        values = tuple(float(n) for n in self.n_values)
        if not values:
            raise InvalidInputError("penalty schedule is empty")
        if any(n <= 0.0 for n in values):
            raise InvalidInputError(f"penalty values must be positive, got {values}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise InvalidInputError(f"penalty values must be strictly increasing, got {values}")
        object.__setattr__(self, "n_values", values)

    @property
    def finest(self) -> float:
        return self.n_values[-1]


@dataclass(frozen=True, eq=False)
class ObstacleProblem:
    """Data (xi, f/g/h_tilde, S) of one obstacle problem on a fixed operator."""
    xi: np.ndarray
    coeffs: CoefficientSet
    obstacle: Obstacle
    name: str = "problem"


@dataclass
class ObstacleSolution:
    """
    Finest-n pair (u, nu) plus per-n diagnostics and the individual runs.
    """
    u: Trajectory
    nu: ReflectionMeasure
    diagnostics: pd.DataFrame
    runs: Dict[float, Tuple[Trajectory, ReflectionMeasure]] = field(default_factory=dict)
    scheme_fault: bool = False


@dataclass(frozen=True)
class PicardConstants:
    epsilon: float
    gamma: float
    delta: float
    rho: float
    degenerate: bool = False

    def to_dict(self) -> Dict[str, float]:
        return {"epsilon": self.epsilon, "gamma": self.gamma, "delta": self.delta,
                "rho": self.rho, "degenerate": self.degenerate}


@dataclass
class PicardState:
    iteration: int
    difference: float
    ratio: Optional[float]
    gamma: float
    delta: float
    epsilon: float
    trajectories: Optional[List[Trajectory]] = None


@dataclass
class PicardHistory:
    states: List[PicardState]
    constants: PicardConstants
    converged: bool
    margin: float

    @property
    def iterations(self) -> int:
        return len(self.states)

    @property
    def differences(self) -> List[float]:
        return [s.difference for s in self.states]

    @property
    def ratios(self) -> List[Optional[float]]:
        return [s.ratio for s in self.states]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"iteration": s.iteration, "difference": s.difference, "ratio": s.ratio}
            for s in self.states
        ])


class FrozenCoefficients:
    """
    Coefficients evaluated once along a previous iterate; the stepper then sees
    state-independent sources (linear obstacle problem).
    """

    def __init__(self, coeffs: CoefficientSet, traj: Trajectory, mesh: Mesh1D):
        self.name = f"{coeffs.name}@frozen"
        self._terms = [
            coeffs.evaluate(k, float(traj.times[k]), mesh, traj.fields[k])
            for k in range(traj.n_steps)
        ]

    def evaluate(self, step: int, t: float, mesh: Mesh1D, u: np.ndarray) -> SourceTerms:
        return self._terms[step]


def negative_part_sq(traj: Trajectory, obs: Obstacle, mesh: Mesh1D) -> np.ndarray:
    """||(u_k - S_k)^-||^2 for k = 1..K (post-step states)."""
    S = obs.grid(traj.times[1:], mesh)
    gap = np.minimum(traj.fields[1:] - S, 0.0)
    return mesh.h * np.sum(gap ** 2, axis=1)


def violation_sq(traj: Trajectory, obs: Obstacle, mesh: Mesh1D) -> float:
    """sum_k ||(u_k - S_k)^-||^2 dt"""
    return float(negative_part_sq(traj, obs, mesh).sum() * traj.dt)


def skorokhod_pairing(u: Trajectory, obs: Obstacle, nu: ReflectionMeasure,
                      mesh: Optional[Mesh1D] = None) -> float:
    """
    sum_{k,i} (u_{k+1,i} - S(t_{k+1}, x_i)) * masses[k][i]

    Each step's mass is paired with the state and obstacle time at which the
    penalty acted.
    """
    if nu.masses.shape != u.penalty_increments.shape:
        raise InvalidInputError(f"measure shape {nu.masses.shape} does not match trajectory "
                                f"{u.penalty_increments.shape}")
    if mesh is None:
        mesh = Mesh1D.uniform(u.fields.shape[1])
    S = obs.grid(u.times[1:], mesh)
    return float(np.sum((u.fields[1:] - S) * nu.masses))


def solve_linear_obstacle(schedule: PenaltySchedule, cfg: SolverConfig, op: EllipticOperator,
                          coeffs: SourceModel, obs: Obstacle, noise: Optional[NoiseModel],
                          xi: np.ndarray, increments: Optional[np.ndarray] = None) -> ObstacleSolution:
    """
    Run the penalized scheme for every n of the schedule on one shared noise path.
    """
    mesh = op.mesh
    if noise is not None and increments is None:
        increments = brownian_increments(noise, cfg.dt, cfg.n_steps, cfg.seed, cfg.path_id)

    rows = []
    runs: Dict[float, Tuple[Trajectory, ReflectionMeasure]] = {}
    previous: Optional[Trajectory] = None
    scheme_fault = False
    for n in schedule.n_values:
        traj, nu = simulate_path(cfg.with_penalty(n), op, coeffs, obs, noise, xi, increments)
        runs[n] = (traj, nu)
        v_sq = violation_sq(traj, obs, mesh)
        gap = 0.0 if previous is None else float(np.max(previous.fields - traj.fields, initial=0.0))
        if gap > MONOTONICITY_FAULT:
            scheme_fault = True
            logger.warning("monotonicity in n violated by %.3g at n=%g (path %d)", gap, n, cfg.path_id)
        if rows and v_sq > rows[-1]["violation_sq"] + 1e-10:
            logger.warning("violation norm increased at n=%g (path %d)", n, cfg.path_id)
        rows.append({
            "n": n,
            "violation_sq": v_sq,
            "violation_norm": float(np.sqrt(v_sq)),
            "skorokhod": skorokhod_pairing(traj, obs, nu, mesh),
            "total_mass": nu.total_mass,
            "monotonicity_gap": gap,
        })
        previous = traj

    finest_traj, finest_nu = runs[schedule.finest]
    return ObstacleSolution(
        u=finest_traj,
        nu=finest_nu,
        diagnostics=pd.DataFrame(rows),
        runs=runs,
        scheme_fault=scheme_fault,
    )


def choose_gamma_delta(C: float, alpha: float, beta: float, lambda_ell: float,
                       max_halvings: int = 60) -> PicardConstants:
    """
    重み付きノルム ||.||_{gamma,delta} の定数を選ぶ。

    epsilon is halved from 1 until C*eps + alpha + beta^2 (1+eps) < 2*lambda - alpha,
    then halved once more; gamma and delta follow, rho is the contraction factor.
    """
    ok, margin = check_contraction(alpha, beta, lambda_ell)
    if not ok:
        raise InvalidInputError(f"contraction property fails: 2*alpha + beta^2 >= 2*lambda (margin {margin:.6g})")
    denominator = 2.0 * lambda_ell - alpha

    def numerator(eps: float) -> float:
        return C * eps + alpha + beta ** 2 * (1.0 + eps)

    epsilon = 1.0
    for _ in range(max_halvings):
        if numerator(epsilon) < denominator:
            break
        epsilon *= 0.5
    else:
        raise InvalidInputError("no epsilon satisfies the contraction inequality")
    epsilon *= 0.5

    rho = numerator(epsilon) / denominator
    degenerate = False
    if C == 0.0 or numerator(epsilon) == 0.0:
        delta = 0.0
    else:
        delta = C * (1.0 + epsilon + 2.0 / epsilon) / numerator(epsilon)
    gamma = 1.0 / epsilon + denominator * delta
    if delta <= 0.0:
        degenerate = True
        logger.warning("degenerate Picard constants (C=%g, alpha=%g, beta=%g): delta clamped to 1e-12",
                       C, alpha, beta)
        delta = 1e-12
    return PicardConstants(epsilon=epsilon, gamma=gamma, delta=delta, rho=rho, degenerate=degenerate)


def _weighted_integral(fields: np.ndarray, times: np.ndarray, gamma: float, delta: float, mesh: Mesh1D) -> float:
    dt = float(times[1] - times[0])
    total = 0.0
    for k in range(len(times) - 1):
        u = fields[k]
        grad = apply_gradient(mesh, u)
        total += np.exp(-gamma * times[k]) * (delta * mesh.norm_sq(u) + mesh.h * float(np.dot(grad, grad)))
    return float(total * dt)


def weighted_norm(traj: Trajectory, gamma: float, delta: float, op: EllipticOperator,
                  mesh: Optional[Mesh1D] = None) -> float:
    """
    Left-endpoint quadrature of int_0^T e^{-gamma s} (delta ||u_s||^2 + ||grad u_s||^2) ds
    for one path; the expectation is a sample mean taken by the caller.
    """
    if gamma < 0.0 or delta < 0.0:
        raise InvalidInputError(f"gamma and delta must be non-negative, got {gamma}, {delta}")
    return _weighted_integral(traj.fields, traj.times, gamma, delta, mesh or op.mesh)


def _difference_norm(a: Trajectory, b: Trajectory, constants: PicardConstants, op: EllipticOperator) -> float:
    return _weighted_integral(a.fields - b.fields, a.times, constants.gamma, constants.delta, op.mesh)


def _constant_trajectory(xi: np.ndarray, cfg: SolverConfig, increments: Optional[np.ndarray]) -> Trajectory:
    fields = np.tile(xi, (cfg.n_steps + 1, 1))
    return Trajectory(times=cfg.times, fields=fields,
                      penalty_increments=np.zeros((cfg.n_steps, xi.shape[0])), increments=increments)


def _frozen_solve(cfg: SolverConfig, op: EllipticOperator, frozen: FrozenCoefficients, obs: Obstacle,
                  noise: Optional[NoiseModel], xi: np.ndarray, increments: Optional[np.ndarray]) -> ObstacleSolution:
    if cfg.n_penalty > 0.0:
        return solve_linear_obstacle(PenaltySchedule((cfg.n_penalty,)), cfg, op, frozen, obs, noise, xi, increments)
    traj, nu = simulate_path(cfg, op, frozen, obs, noise, xi, increments)
    diagnostics = pd.DataFrame([{"n": 0.0, "violation_sq": violation_sq(traj, obs, op.mesh),
                                 "skorokhod": 0.0, "total_mass": 0.0}])
    return ObstacleSolution(u=traj, nu=nu, diagnostics=diagnostics, runs={0.0: (traj, nu)})


def picard_solve(cfg: SolverConfig, op: EllipticOperator, coeffs: CoefficientSet, obs: Obstacle,
                 noise: Optional[NoiseModel], xi: np.ndarray, tol: float, max_iter: int,
                 paths: int = 1, workers: int = 1) -> Tuple[List[ObstacleSolution], PicardHistory]:
    """
    Picard iteration: freeze f, g, h_tilde along u^m and solve the linear obstacle
    problem for u^{m+1}, every iterate driven by the same noise paths.

    Returns:
        (solutions per path of the last iterate, history)
    """
    if tol <= 0.0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise InvalidInputError(f"max_iter must be >= 1, got {max_iter}")
    beta_h = effective_beta(coeffs.beta, noise.weighted_trace) if noise is not None else 0.0
    ok, margin = check_contraction(coeffs.alpha, beta_h, op.lambda_ell)
    if not ok:
        raise InvalidInputError(f"contraction property fails for preset '{coeffs.name}' (margin {margin:.6g})")
    constants = choose_gamma_delta(coeffs.C_lip, coeffs.alpha, beta_h, op.lambda_ell)
    mesh = op.mesh

    path_cfgs = [cfg.with_path(cfg.path_id + p) for p in range(paths)]
    path_increments = [
        None if noise is None else brownian_increments(noise, c.dt, c.n_steps, c.seed, c.path_id)
        for c in path_cfgs
    ]
    current = [_constant_trajectory(xi, c, inc) for c, inc in zip(path_cfgs, path_increments)]
    solutions: List[ObstacleSolution] = []
    states: List[PicardState] = []
    converged = False

    for m in range(max_iter):
        def iterate(p: int) -> ObstacleSolution:
            frozen = FrozenCoefficients(coeffs, current[p], mesh)
            return _frozen_solve(path_cfgs[p], op, frozen, obs, noise, xi, path_increments[p])

        solutions = map_paths(iterate, list(range(paths)), workers)
        following = [s.u for s in solutions]
        difference = float(np.mean([
            _difference_norm(new, old, constants, op) for new, old in zip(following, current)
        ]))
        previous_difference = states[-1].difference if states else None
        ratio = difference / previous_difference if previous_difference else None
        if states:
            states[-1].trajectories = None
        states.append(PicardState(iteration=m, difference=difference, ratio=ratio,
                                  gamma=constants.gamma, delta=constants.delta,
                                  epsilon=constants.epsilon, trajectories=following))
        logger.info("Picard iteration %d: difference %.3e, ratio %s", m + 1, difference,
                    "-" if ratio is None else f"{ratio:.4f}")
        current = following
        if difference <= tol:
            converged = True
            break

    if not converged:
        logger.warning("Picard iteration did not reach tol=%g within %d iterations", tol, max_iter)
    history = PicardHistory(states=states, constants=constants, converged=converged, margin=margin)
    return solutions, history
