import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from logic.coefficients import SourceModel
from logic.errors import HypothesisError, InvalidInputError
from logic.mesh_operator import EllipticOperator, Mesh1D, apply_gradient, solve_shifted
from logic.noise import NoiseModel, brownian_increments
from logic.obstacle_solver import ObstacleProblem, ObstacleSolution, map_paths, negative_part_sq
from logic.penalized_stepper import Obstacle, ReflectionMeasure, SolverConfig, Trajectory, simulate_path

logger = logging.getLogger(__name__)

COMPARISON_TOLERANCE = 1e-8
APRIORI_GROWTH_LIMIT = 2.0
DICTIONARY_LEVELS = 3


@dataclass
class EnergyReport:
    """Discrete Ito identity for Phi(y) = y^2; residual = lhs - sum(terms)."""
    lhs: float
    terms: Dict[str, float]
    residual: float

    def to_dict(self) -> Dict[str, object]:
        return {"lhs": self.lhs, "terms": dict(self.terms), "residual": self.residual}


@dataclass
class ComparisonReport:
    max_violation: float
    measure_gap: Optional[float] = None
    positive_part_energy: float = 0.0
    paths: int = 1
    gaps: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_violation": self.max_violation,
            "measure_gap": self.measure_gap,
            "positive_part_energy": self.positive_part_energy,
            "paths": self.paths,
            "gaps": list(self.gaps),
        }


def projected_reference(cfg: SolverConfig, op: EllipticOperator, obs: Obstacle, u0: np.ndarray) -> Trajectory:
    """
    Implicit Euler heat step followed by the nodewise projection u <- max(u, S(t+dt)).
    """
    mesh = op.mesh
    times = cfg.times
    fields = np.empty((cfg.n_steps + 1, mesh.n_interior))
    jumps = np.empty((cfg.n_steps, mesh.n_interior))
    fields[0] = u0
    u = np.asarray(u0, dtype=float)
    for k in range(cfg.n_steps):
        diffused = solve_shifted(op, cfg.dt, u)
        u = np.maximum(diffused, obs.values(float(times[k + 1]), mesh))
        jumps[k] = u - diffused
        fields[k + 1] = u
    return Trajectory(times=times, fields=fields, penalty_increments=jumps)


def _source_sums(traj: Trajectory, op: EllipticOperator, coeffs: SourceModel,
                 noise: Optional[NoiseModel]) -> Dict[str, float]:
    """Left-endpoint sums of every right-hand side term except the measure."""
    mesh = op.mesh
    dt = traj.dt
    f_sum = g_sum = h_sum = stochastic_sum = energy_sum = 0.0
    variance = None if noise is None else noise.variance_density()
    for k in range(traj.n_steps):
        u = traj.fields[k]
        t = float(traj.times[k])
        sources = coeffs.evaluate(k, t, mesh, u)
        energy_sum += op.energy(u)
        f_sum += mesh.inner(u, sources.f)
        g_sum += mesh.h * float(np.dot(apply_gradient(mesh, u), sources.g))
        if noise is not None and traj.increments is not None:
            h_sum += mesh.h * float(np.dot(sources.h_tilde ** 2, variance))
            stochastic_sum += mesh.inner(u, sources.h_tilde * noise.field_increment(traj.increments[k]))
    return {
        "energy": 2.0 * energy_sum * dt,
        "f_pairing": 2.0 * f_sum * dt,
        "g_pairing": -2.0 * g_sum * dt,
        "h_quadratic": h_sum * dt,
        "stochastic_integral": 2.0 * stochastic_sum,
    }


def energy_identity(traj: Trajectory, nu: ReflectionMeasure, op: EllipticOperator, coeffs: SourceModel,
                    noise: Optional[NoiseModel] = None) -> EnergyReport:
    """
    ||u_T||^2 + 2 sum E(u_k) dt against the initial energy and the f, g, h, dB
    and measure terms, with the increments the path was driven by.
    """
    mesh = op.mesh
    sums = _source_sums(traj, op, coeffs, noise)
    lhs = mesh.norm_sq(traj.final) + sums.pop("energy")
    terms = {"initial": mesh.norm_sq(traj.fields[0])}
    terms.update(sums)
    terms["measure_pairing"] = 2.0 * float(np.sum(traj.fields[1:] * nu.masses))
    residual = lhs - sum(terms.values())
    return EnergyReport(lhs=lhs, terms=terms, residual=residual)


def difference_energy_identity(first: Tuple[Trajectory, ReflectionMeasure],
                               second: Tuple[Trajectory, ReflectionMeasure],
                               op: EllipticOperator, coeffs_first: SourceModel, coeffs_second: SourceModel,
                               noise: Optional[NoiseModel] = None) -> EnergyReport:
    """
    Phi(y) = y^2 identity for the difference of two runs on the same noise path,
    including the cross measure term 2 sum (u - y) d(nu - nu_bar).
    """
    (traj_a, nu_a), (traj_b, nu_b) = first, second
    if traj_a.fields.shape != traj_b.fields.shape:
        raise InvalidInputError("trajectories have different shapes")
    mesh = op.mesh
    dt = traj_a.dt
    variance = None if noise is None else noise.variance_density()
    energy = f_sum = g_sum = h_sum = stochastic_sum = 0.0
    for k in range(traj_a.n_steps):
        t = float(traj_a.times[k])
        d = traj_a.fields[k] - traj_b.fields[k]
        sa = coeffs_first.evaluate(k, t, mesh, traj_a.fields[k])
        sb = coeffs_second.evaluate(k, t, mesh, traj_b.fields[k])
        energy += op.energy(d)
        f_sum += mesh.inner(d, sa.f - sb.f)
        g_sum += mesh.h * float(np.dot(apply_gradient(mesh, d), sa.g - sb.g))
        if noise is not None and traj_a.increments is not None:
            dh = sa.h_tilde - sb.h_tilde
            h_sum += mesh.h * float(np.dot(dh ** 2, variance))
            stochastic_sum += mesh.inner(d, dh * noise.field_increment(traj_a.increments[k]))
    final = traj_a.final - traj_b.final
    lhs = mesh.norm_sq(final) + 2.0 * energy * dt
    terms = {
        "initial": mesh.norm_sq(traj_a.fields[0] - traj_b.fields[0]),
        "f_pairing": 2.0 * f_sum * dt,
        "g_pairing": -2.0 * g_sum * dt,
        "h_quadratic": h_sum * dt,
        "stochastic_integral": 2.0 * stochastic_sum,
        "measure_pairing": 2.0 * float(np.sum((traj_a.fields[1:] - traj_b.fields[1:]) * (nu_a.masses - nu_b.masses))),
    }
    return EnergyReport(lhs=lhs, terms=terms, residual=lhs - sum(terms.values()))


def _sample_states(states: int = 9, state_range: float = 2.0) -> Tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(-state_range, state_range, states)
    y, z = np.meshgrid(grid, grid, indexing="ij")
    return y.ravel(), z.ravel()


def _check_coefficient_order(p1: ObstacleProblem, p2: ObstacleProblem, times: np.ndarray, mesh: Mesh1D,
                             kind: str) -> None:
    y, z = _sample_states()
    for t in times:
        for node, x in enumerate(mesh.node_coords):
            xs = np.full_like(y, x)
            if kind == "f":
                excess = p1.coeffs.f(float(t), xs, y, z) - p2.coeffs.f(float(t), xs, y, z)
                if np.any(excess > 0.0):
                    raise HypothesisError(f"f > f' (by {float(np.max(excess)):.3g}) at t={t:.6g}", node=node)
            else:
                for label in ("g", "h_tilde"):
                    a = getattr(p1.coeffs, label)(float(t), xs, y, z)
                    b = getattr(p2.coeffs, label)(float(t), xs, y, z)
                    if not np.array_equal(np.broadcast_to(a, y.shape), np.broadcast_to(b, y.shape)):
                        raise HypothesisError(f"{label} differs between the two problems at t={t:.6g}", node=node)


def check_hypotheses(p1: ObstacleProblem, p2: ObstacleProblem, cfg: SolverConfig, mesh: Mesh1D,
                     same_obstacle: bool = False) -> None:
    """
    Grid check of xi <= xi', f <= f', shared g and h_tilde, and S <= S' (S = S' when
    same_obstacle is set).
    """
    excess = p1.xi - p2.xi
    if np.any(excess > 0.0):
        raise HypothesisError("xi > xi'", node=int(np.argmax(excess)))
    times = cfg.times
    S1 = p1.obstacle.grid(times, mesh)
    S2 = p2.obstacle.grid(times, mesh)
    if same_obstacle:
        differs = np.argwhere(S1 != S2)
        if differs.size:
            k, i = (int(v) for v in differs[0])
            raise HypothesisError("obstacles differ", node=i, step=k)
    else:
        above = np.argwhere(S1 > S2)
        if above.size:
            k, i = (int(v) for v in above[0])
            raise HypothesisError("S > S'", node=i, step=k)
    sample_times = times[:: max(1, cfg.n_steps // 10)]
    _check_coefficient_order(p1, p2, sample_times, mesh, "f")
    _check_coefficient_order(p1, p2, sample_times, mesh, "shared")


def _paired_runs(p1: ObstacleProblem, p2: ObstacleProblem, cfg: SolverConfig, op: EllipticOperator,
                 noise: Optional[NoiseModel], path_id: int):
    path_cfg = cfg.with_path(path_id)
    increments = None
    if noise is not None:
        increments = brownian_increments(noise, path_cfg.dt, path_cfg.n_steps, path_cfg.seed, path_cfg.path_id)
    run1 = simulate_path(path_cfg, op, p1.coeffs, p1.obstacle, noise, p1.xi, increments)
    run2 = simulate_path(path_cfg, op, p2.coeffs, p2.obstacle, noise, p2.xi, increments)
    return run1, run2


def compare_solutions(p1: ObstacleProblem, p2: ObstacleProblem, cfg: SolverConfig, op: EllipticOperator,
                      noise: Optional[NoiseModel], paths: int = 1, workers: int = 1) -> ComparisonReport:
    """
    Pathwise order u <= u' for ordered data on shared noise (comparison of solutions).
    """
    mesh = op.mesh
    check_hypotheses(p1, p2, cfg, mesh)

    def one(path: int) -> Tuple[float, float]:
        (u1, _), (u2, _) = _paired_runs(p1, p2, cfg, op, noise, cfg.path_id + path)
        positive = np.maximum(u1.fields - u2.fields, 0.0)
        return float(positive.max()), float(mesh.h * np.max(np.sum(positive ** 2, axis=1)))

    results = map_paths(one, list(range(paths)), workers)
    report = ComparisonReport(
        max_violation=max(r[0] for r in results),
        positive_part_energy=max(r[1] for r in results),
        paths=paths,
    )
    logger.info("comparison over %d paths: max violation %.3e", paths, report.max_violation)
    return report


def dyadic_blocks(n_steps: int, n_nodes: int, levels: int = DICTIONARY_LEVELS) -> List[Tuple[slice, slice]]:
    """Indicator blocks over dyadic space-time rectangles, coarsest (phi = 1) first."""
    blocks = []
    for level in range(levels):
        parts = 2 ** level
        t_edges = np.linspace(0, n_steps, parts + 1).round().astype(int)
        x_edges = np.linspace(0, n_nodes, parts + 1).round().astype(int)
        for a in range(parts):
            for b in range(parts):
                if t_edges[a] < t_edges[a + 1] and x_edges[b] < x_edges[b + 1]:
                    blocks.append((slice(t_edges[a], t_edges[a + 1]), slice(x_edges[b], x_edges[b + 1])))
    return blocks


def measure_gaps(nu: ReflectionMeasure, nu_prime: ReflectionMeasure, levels: int = DICTIONARY_LEVELS) -> List[float]:
    """int phi d(nu - nu') for every dictionary test function."""
    n_steps, n_nodes = nu.masses.shape
    diff = nu.masses - nu_prime.masses
    return [float(diff[ts, xs].sum()) for ts, xs in dyadic_blocks(n_steps, n_nodes, levels)]


def compare_measures(p1: ObstacleProblem, p2: ObstacleProblem, cfg: SolverConfig, op: EllipticOperator,
                     noise: Optional[NoiseModel], paths: int = 1, workers: int = 1) -> ComparisonReport:
    """
    Same obstacle, xi <= xi', f <= f': nu >= nu' tested on dyadic indicator blocks.
    """
    mesh = op.mesh
    check_hypotheses(p1, p2, cfg, mesh, same_obstacle=True)

    def one(path: int) -> Tuple[float, List[float]]:
        (u1, nu1), (u2, nu2) = _paired_runs(p1, p2, cfg, op, noise, cfg.path_id + path)
        return float(np.max(u1.fields - u2.fields, initial=0.0)), measure_gaps(nu1, nu2)

    results = map_paths(one, list(range(paths)), workers)
    per_function = np.min(np.array([r[1] for r in results]), axis=0)
    report = ComparisonReport(
        max_violation=max(r[0] for r in results),
        measure_gap=float(per_function.min()),
        paths=paths,
        gaps=[float(g) for g in per_function],
    )
    logger.info("measure comparison over %d paths: min gap %.3e", paths, report.measure_gap)
    return report


def apriori_bounds(solutions: Sequence[ObstacleSolution], obs: Obstacle,
                   op: EllipticOperator) -> Tuple[pd.DataFrame, bool]:
    """
    Per n: sup_t ||u^n_t||^2, sum E(u^n) dt and n sum ||(u^n - S)^-||^2 dt, averaged
    over paths. The flag is raised when a column grows by more than a factor 2
    from the first to the last n.
    """
    if not solutions:
        raise InvalidInputError("no runs supplied")
    mesh = op.mesh
    rows = []
    for n in solutions[0].runs:
        sup_l2, dirichlet, penalty = [], [], []
        for solution in solutions:
            traj, _ = solution.runs[n]
            sup_l2.append(max(mesh.norm_sq(u) for u in traj.fields))
            dirichlet.append(sum(op.energy(u) for u in traj.fields[:-1]) * traj.dt)
            penalty.append(n * float(negative_part_sq(traj, obs, mesh).sum()) * traj.dt)
        rows.append({
            "n": n,
            "sup_l2": float(np.mean(sup_l2)),
            "dirichlet": float(np.mean(dirichlet)),
            "penalty_energy": float(np.mean(penalty)),
        })
    table = pd.DataFrame(rows)
    flagged = False
    for column in ("sup_l2", "dirichlet", "penalty_energy"):
        first, last = table[column].iloc[0], table[column].iloc[-1]
        if last > APRIORI_GROWTH_LIMIT * first and last > 1e-14:
            flagged = True
            logger.warning("a-priori column '%s' grew from %.3g to %.3g across the schedule", column, first, last)
    return table, flagged
