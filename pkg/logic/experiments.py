import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from io import StringIO
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from logic import __version__
from logic.coefficients import COEFFICIENT_PRESETS, check_contraction, effective_beta, empirical_lipschitz, get_preset
from logic.errors import ConfigError, InvalidInputError
from logic.mesh_operator import EllipticOperator, Mesh1D, assemble_operator
from logic.noise import SPECTRUM_RULES, NoiseModel, brownian_increments, build_sine_spectrum
from logic.obstacle_solver import (ObstacleProblem, PenaltySchedule, choose_gamma_delta, map_paths,
                                   picard_solve, solve_linear_obstacle)
from logic.penalized_stepper import Obstacle, ReflectionMeasure, SolverConfig, Trajectory, simulate_path
from logic.verification import (COMPARISON_TOLERANCE, apriori_bounds, compare_measures, compare_solutions,
                                energy_identity)
from ui.plots import write_gnuplot_script

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "OBSTACLE_SPDE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "output"
HASH_ALGORITHM = "sha256"

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INVALID = 2

DIFFUSION_PRESETS: Dict[str, Tuple[Callable[[np.ndarray], np.ndarray], float, float]] = {
    "unit": (lambda x: np.ones_like(x), 1.0, 1.0),
    "layered": (lambda x: np.where(x < 0.5, 1.0, 1.5), 1.0, 1.5),
}

INITIAL_PRESETS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sine": lambda x: np.sin(np.pi * x),
    "hat": lambda x: 1.0 - np.abs(2.0 * x - 1.0),
    "zero": lambda x: np.zeros_like(x),
}

OBSTACLE_PRESETS = ("scaled_sine", "inactive", "flat", "receding")

# keys that must agree between the two configs of a comparison
LIPSCHITZ_SAMPLES = 4096

SHARED_GRID_KEYS = ("mesh_size", "dt", "horizon", "diffusion", "spectrum", "spectrum_parameter",
                    "channels", "stochastic", "seed", "path_offset", "penalty")


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_schedule(value: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in value.split(",") if part.strip())


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    text = str(value)
    if any(ch in text for ch in " #'\"") or text == "":
        return '"' + text.replace('"', '\\"') + '"'
    return text


@dataclass(frozen=True)
class ExperimentConfig:
    """
    実験設定 (KEY=VALUE 形式、未知のキーはエラー)。

    mesh_size        interior node count N (>= 3)
    dt, horizon      time step and final time T (T an integer multiple of dt)
    spectrum         'geometric' or 'polynomial'; spectrum_parameter is r or p
    channels         noise channel count J
    stochastic       drive the runs with noise (false: deterministic runs)
    coefficients     coefficient preset name; f_shift is added to f
    diffusion        'unit' (a = 1) or 'layered' (a = 1 | 1.5)
    initial          'sine', 'hat' or 'zero'; xi_shift is added to xi
    obstacle         'scaled_sine', 'inactive', 'flat' or 'receding'
    obstacle_scale   amplitude s of the sine obstacles; obstacle_level the 'flat' height
    penalty          n used by simulate / compare / verify and inside Picard
    schedule         comma separated increasing n values used by converge
    paths            path count; seed the master seed; path_offset the first path id
    picard           run the Picard solver in simulate; picard_tol, picard_max_iter
    workers          concurrent path workers
    output_dir       output directory (empty: $OBSTACLE_SPDE_OUTPUT_DIR or ./output)
    emit_plots       write a gnuplot script next to each CSV
    """
    mesh_size: int = 200
    dt: float = 1e-3
    horizon: float = 0.5
    spectrum: str = "geometric"
    spectrum_parameter: float = 0.5
    channels: int = 10
    stochastic: bool = False
    coefficients: str = "zero"
    f_shift: float = 0.0
    diffusion: str = "unit"
    initial: str = "sine"
    xi_shift: float = 0.0
    obstacle: str = "scaled_sine"
    obstacle_scale: float = 0.25
    obstacle_level: float = 0.0
    penalty: float = 10000.0
    schedule: Tuple[float, ...] = (10.0, 100.0, 1000.0, 10000.0)
    paths: int = 1
    seed: int = 0
    path_offset: int = 0
    picard: bool = False
    picard_tol: float = 1e-6
    picard_max_iter: int = 15
    workers: int = 1
    output_dir: str = ""
    emit_plots: bool = False

    def __post_init__(self):
        checks = [
            ("mesh_size", self.mesh_size >= 3, "must be >= 3"),
            ("dt", self.dt > 0.0, "must be positive"),
            ("horizon", self.horizon > 0.0, "must be positive"),
            ("spectrum", self.spectrum in SPECTRUM_RULES, f"must be one of {SPECTRUM_RULES}"),
            ("channels", self.channels >= 1, "must be >= 1"),
            ("coefficients", self.coefficients in COEFFICIENT_PRESETS,
             f"must be one of {sorted(COEFFICIENT_PRESETS)}"),
            ("diffusion", self.diffusion in DIFFUSION_PRESETS, f"must be one of {sorted(DIFFUSION_PRESETS)}"),
            ("initial", self.initial in INITIAL_PRESETS, f"must be one of {sorted(INITIAL_PRESETS)}"),
            ("obstacle", self.obstacle in OBSTACLE_PRESETS, f"must be one of {OBSTACLE_PRESETS}"),
            ("penalty", self.penalty >= 0.0, "must be non-negative"),
            ("paths", self.paths >= 1, "must be >= 1"),
            ("seed", self.seed >= 0, "must be non-negative"),
            ("path_offset", self.path_offset >= 0, "must be non-negative"),
            ("picard_tol", self.picard_tol > 0.0, "must be positive"),
            ("picard_max_iter", self.picard_max_iter >= 1, "must be >= 1"),
            ("workers", self.workers >= 1, "must be >= 1"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigError(name, f"{getattr(self, name)!r} {message}")
        if self.spectrum == "geometric" and not 0.0 < self.spectrum_parameter < 1.0:
            raise ConfigError("spectrum_parameter", "geometric ratio must lie in (0,1)")
        if self.spectrum == "polynomial" and self.spectrum_parameter <= 1.0:
            raise ConfigError("spectrum_parameter", "polynomial exponent must exceed 1")
        steps = round(self.horizon / self.dt)
        if steps < 1 or abs(steps * self.dt - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ConfigError("horizon", f"{self.horizon} is not an integer multiple of dt={self.dt}")
        try:
            PenaltySchedule(self.schedule)
        except InvalidInputError as e:
            raise ConfigError("schedule", str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in data.items():
            if key not in known:
                raise ConfigError(key, "unknown key")
            values[key] = _coerce(key, known[key].type, raw)
        return cls(**values)

    def serialize(self) -> str:
        return "".join(f"{key}={_format_value(value)}\n" for key, value in sorted(self.to_dict().items()))

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict({k: v for k, v in dotenv_values(stream=StringIO(text)).items()})

    def save(self, filename: str):
        Path(filename).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def load(cls, filename: str) -> "ExperimentConfig":
        if not os.path.exists(filename):
            raise ConfigError("config", f"file not found: {filename}")
        return cls.from_dict(dict(dotenv_values(filename)))

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        unknown = [k for k in overrides if k not in {f.name for f in fields(self)}]
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.getenv(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)


CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))


def _coerce(key: str, annotation: Any, raw: Any) -> Any:
    if raw is None:
        raise ConfigError(key, "missing value")
    if not isinstance(raw, str):
        return tuple(raw) if annotation in ("Tuple[float, ...]", Tuple[float, ...]) else raw
    kind = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw)
        if "tuple" in str(kind).lower():
            return _parse_schedule(raw)
        return raw
    except ValueError as e:
        raise ConfigError(key, f"cannot parse {raw!r}: {e}") from e


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    version: str = __version__
    derived: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0
    files: List[Dict[str, str]] = field(default_factory=list)
    hash_algorithm: str = HASH_ALGORITHM

    def add_file(self, path: Path):
        self.files.append({"name": path.name, HASH_ALGORITHM: file_digest(path)})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "derived": self.derived,
            "wall_clock": self.wall_clock,
            "hash_algorithm": self.hash_algorithm,
            "files": self.files,
        }

    def save(self, filename: Path):
        with open(filename, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=4, ensure_ascii=False)

    def verify(self, directory: Path) -> bool:
        """Every listed file still hashes to its recorded digest."""
        return all(file_digest(directory / entry["name"]) == entry[HASH_ALGORITHM] for entry in self.files)


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class ExperimentSetup:
    config: ExperimentConfig
    mesh: Mesh1D
    op: EllipticOperator
    noise: Optional[NoiseModel]
    problem: ObstacleProblem
    solver: SolverConfig

    @property
    def path_ids(self) -> List[int]:
        return [self.config.path_offset + p for p in range(self.config.paths)]


@dataclass
class CommandResult:
    exit_code: int
    output_dir: Path
    manifest: RunManifest
    summary: Dict[str, Any]


def build_obstacle(config: ExperimentConfig) -> Obstacle:
    scale, level = config.obstacle_scale, config.obstacle_level
    if config.obstacle == "scaled_sine":
        return Obstacle(S=lambda t, x: scale * np.sin(np.pi * x), name="scaled_sine")
    if config.obstacle == "inactive":
        return Obstacle(S=lambda t, x: np.full_like(x, -1.0), name="inactive")
    if config.obstacle == "flat":
        return Obstacle(S=lambda t, x: np.full_like(x, level), name="flat")
    return Obstacle(S=lambda t, x: scale * np.sin(np.pi * x) * (1.0 - t), name="receding")


def build_setup(config: ExperimentConfig) -> ExperimentSetup:
    mesh = Mesh1D.uniform(config.mesh_size)
    a, lam, Lam = DIFFUSION_PRESETS[config.diffusion]
    op = assemble_operator(mesh, a, lam, Lam)
    noise = None
    if config.stochastic:
        noise = build_sine_spectrum(mesh, config.channels, config.spectrum, config.spectrum_parameter)
    xi = mesh.sample(INITIAL_PRESETS[config.initial]) + config.xi_shift
    problem = ObstacleProblem(
        xi=xi,
        coeffs=get_preset(config.coefficients, config.f_shift),
        obstacle=build_obstacle(config),
        name=config.coefficients,
    )
    solver = SolverConfig(dt=config.dt, T=config.horizon, n_penalty=config.penalty,
                          seed=config.seed, path_id=config.path_offset)
    return ExperimentSetup(config=config, mesh=mesh, op=op, noise=noise, problem=problem, solver=solver)


def derived_quantities(setup: ExperimentSetup) -> Dict[str, Any]:
    """Contraction margin, Picard constants and the sampled Lipschitz check for the configured preset."""
    coeffs = setup.problem.coeffs
    beta_h = effective_beta(coeffs.beta, setup.noise.weighted_trace) if setup.noise is not None else 0.0
    ok, margin = check_contraction(coeffs.alpha, beta_h, setup.op.lambda_ell)
    derived: Dict[str, Any] = {"contraction_ok": ok, "contraction_margin": margin, "effective_beta": beta_h}
    if ok:
        derived.update(choose_gamma_delta(coeffs.C_lip, coeffs.alpha, beta_h, setup.op.lambda_ell).to_dict())
    weighted_trace = setup.noise.weighted_trace if setup.noise is not None else 0.0
    report = empirical_lipschitz(coeffs, LIPSCHITZ_SAMPLES, np.random.default_rng(setup.config.seed),
                                 setup.op.lambda_ell, weighted_trace)
    derived["assumptions"] = report.to_dict()
    if setup.noise is not None:
        derived["noise"] = setup.noise.summary()
    return derived


def _prepare_output(config: ExperimentConfig) -> Path:
    out = config.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(frame: pd.DataFrame, path: Path, manifest: RunManifest, plot: Optional[Tuple[str, List[str]]] = None):
    frame.to_csv(path, index=False)
    manifest.add_file(path)
    if manifest.config.get("emit_plots") and plot is not None:
        script = write_gnuplot_script(path, plot[0], plot[1], title=path.stem)
        manifest.add_file(script)


def _write_json(payload: Dict[str, Any], path: Path, manifest: RunManifest):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=4, ensure_ascii=False)
    manifest.add_file(path)


def _finish(manifest: RunManifest, out: Path, started: float) -> None:
    manifest.wall_clock = time.perf_counter() - started
    manifest.save(out / "manifest.json")
    logger.info("wrote %d files to %s", len(manifest.files), out)


def trajectory_frame(path_id: int, traj: Trajectory, nu: ReflectionMeasure, mesh: Mesh1D) -> pd.DataFrame:
    n_times, n_nodes = traj.fields.shape
    cumulative = np.vstack([np.zeros((1, n_nodes)), nu.cumulative()])
    return pd.DataFrame({
        "path": np.full(n_times * n_nodes, path_id),
        "time": np.repeat(traj.times, n_nodes),
        "node": np.tile(np.arange(n_nodes), n_times),
        "x": np.tile(mesh.node_coords, n_times),
        "u": traj.fields.ravel(),
        "cumulative_mass": cumulative.ravel(),
    })


def measure_frame(path_id: int, traj: Trajectory, nu: ReflectionMeasure, mesh: Mesh1D) -> pd.DataFrame:
    steps, nodes = np.nonzero(nu.masses > 0.0)
    return pd.DataFrame({
        "path": np.full(steps.shape[0], path_id),
        "step": steps,
        "time": traj.times[steps],
        "node": nodes,
        "x": mesh.node_coords[nodes],
        "mass": nu.masses[steps, nodes],
    })


def cmd_simulate(config: ExperimentConfig) -> CommandResult:
    """One path range of the penalized (or Picard) solver; trajectory and measure CSVs."""
    started = time.perf_counter()
    setup = build_setup(config)
    out = _prepare_output(config)
    manifest = RunManifest(command="simulate", config=config.to_dict())
    manifest.derived.update(derived_quantities(setup))
    problem = setup.problem

    if config.picard:
        solutions, history = picard_solve(setup.solver, setup.op, problem.coeffs, problem.obstacle, setup.noise,
                                          problem.xi, config.picard_tol, config.picard_max_iter,
                                          paths=config.paths, workers=config.workers)
        runs = [(s.u, s.nu) for s in solutions]
        manifest.derived["picard"] = {
            "iterations": history.iterations,
            "converged": history.converged,
            "differences": history.differences,
            "ratios": history.ratios,
        }
        _write_csv(history.to_frame(), out / "picard.csv", manifest, ("iteration", ["difference"]))
    else:
        def one(path_id: int):
            return simulate_path(setup.solver.with_path(path_id), setup.op, problem.coeffs, problem.obstacle,
                                 setup.noise, problem.xi)

        runs = map_paths(one, setup.path_ids, config.workers)

    trajectories = pd.concat([trajectory_frame(p, t, nu, setup.mesh) for p, (t, nu) in zip(setup.path_ids, runs)],
                             ignore_index=True)
    measures = pd.concat([measure_frame(p, t, nu, setup.mesh) for p, (t, nu) in zip(setup.path_ids, runs)],
                         ignore_index=True)
    _write_csv(trajectories, out / "trajectory.csv", manifest, ("x", ["u"]))
    _write_csv(measures, out / "measure.csv", manifest, ("time", ["mass"]))

    total_mass = [nu.total_mass for _, nu in runs]
    manifest.derived["total_mass"] = total_mass
    summary = {
        "paths": config.paths,
        "mean_total_mass": float(np.mean(total_mass)),
        "final_sup": float(max(np.abs(t.final).max() for t, _ in runs)),
    }
    if config.picard:
        summary["picard_iterations"] = manifest.derived["picard"]["iterations"]
    _finish(manifest, out, started)
    return CommandResult(EXIT_OK, out, manifest, summary)


def log_log_slope(n_values: np.ndarray, values: np.ndarray) -> Optional[float]:
    """Least-squares slope of log(values) against log(n); None when undefined."""
    if len(n_values) < 2 or np.any(values <= 0.0):
        return None
    return float(np.polyfit(np.log(n_values), np.log(values), 1)[0])


def cmd_converge(config: ExperimentConfig) -> CommandResult:
    """Per-n diagnostics over the penalty schedule, shared noise for all n."""
    started = time.perf_counter()
    if len(config.schedule) < 2:
        raise ConfigError("schedule", "converge needs at least two penalty values")
    setup = build_setup(config)
    out = _prepare_output(config)
    manifest = RunManifest(command="converge", config=config.to_dict())
    manifest.derived.update(derived_quantities(setup))
    problem = setup.problem
    schedule = PenaltySchedule(config.schedule)

    def one(path_id: int):
        return solve_linear_obstacle(schedule, setup.solver.with_path(path_id), setup.op, problem.coeffs,
                                     problem.obstacle, setup.noise, problem.xi)

    solutions = map_paths(one, setup.path_ids, config.workers)
    table = pd.concat([s.diagnostics for s in solutions]).groupby("n", sort=True).mean().reset_index()
    bounds, flagged = apriori_bounds(solutions, problem.obstacle, setup.op)
    table = table.merge(bounds, on="n")
    slope = log_log_slope(table["n"].to_numpy(), table["violation_sq"].to_numpy())
    # blank when undefined
    table["violation_slope"] = np.nan if slope is None else slope
    _write_csv(table, out / "converge.csv", manifest, ("n", ["violation_norm", "skorokhod"]))

    scheme_fault = any(s.scheme_fault for s in solutions)
    manifest.derived.update({
        "violation_slope": slope if slope is not None else "undefined",
        "apriori_flag": flagged,
        "scheme_fault": scheme_fault,
    })
    logger.info("violation slope: %s", "undefined" if slope is None else f"{slope:.3f}")
    summary = {
        "schedule": list(schedule.n_values),
        "violation_slope": slope,
        "apriori_flag": flagged,
        "scheme_fault": scheme_fault,
        "finest_skorokhod": float(table["skorokhod"].iloc[-1]),
    }
    _finish(manifest, out, started)
    code = EXIT_VIOLATION if (scheme_fault or flagged) else EXIT_OK
    return CommandResult(code, out, manifest, summary)


def check_compatible_pair(first: ExperimentConfig, second: ExperimentConfig) -> None:
    for key in SHARED_GRID_KEYS:
        if getattr(first, key) != getattr(second, key):
            raise ConfigError(key, f"differs between the two configs ({getattr(first, key)!r} vs "
                                   f"{getattr(second, key)!r})")


def cmd_compare(config: ExperimentConfig, config_prime: ExperimentConfig) -> CommandResult:
    """Comparison of solutions (and of measures when the obstacle is shared) on shared noise."""
    started = time.perf_counter()
    check_compatible_pair(config, config_prime)
    setup = build_setup(config)
    setup_prime = build_setup(config_prime)
    out = _prepare_output(config)
    manifest = RunManifest(command="compare", config=config.to_dict())
    manifest.derived["config_prime"] = config_prime.to_dict()

    report = compare_solutions(setup.problem, setup_prime.problem, setup.solver, setup.op, setup.noise,
                               paths=config.paths, workers=config.workers)
    payload: Dict[str, Any] = {"solutions": report.to_dict(), "tolerance": COMPARISON_TOLERANCE}
    failed = report.max_violation > COMPARISON_TOLERANCE
    shared_obstacle = (config.obstacle, config.obstacle_scale, config.obstacle_level) == \
        (config_prime.obstacle, config_prime.obstacle_scale, config_prime.obstacle_level)
    if shared_obstacle:
        measures = compare_measures(setup.problem, setup_prime.problem, setup.solver, setup.op, setup.noise,
                                    paths=config.paths, workers=config.workers)
        payload["measures"] = measures.to_dict()
        if measures.measure_gap < -COMPARISON_TOLERANCE:
            logger.warning("measure gap %.3e below -%g (reported only)", measures.measure_gap,
                           COMPARISON_TOLERANCE)
    _write_json(payload, out / "compare.json", manifest)
    _finish(manifest, out, started)
    summary = {"max_violation": report.max_violation,
               "measure_gap": payload.get("measures", {}).get("measure_gap")}
    return CommandResult(EXIT_VIOLATION if failed else EXIT_OK, out, manifest, summary)


def _rms(values: List[float]) -> float:
    return float(np.sqrt(np.mean(np.square(values))))


def cmd_verify(config: ExperimentConfig) -> CommandResult:
    """Energy identity residuals at dt and dt/2 on matched noise."""
    started = time.perf_counter()
    setup = build_setup(config)
    out = _prepare_output(config)
    manifest = RunManifest(command="verify", config=config.to_dict())
    problem = setup.problem
    coarse_cfg = setup.solver
    fine_cfg = coarse_cfg.refined(2)

    def one(path_id: int) -> Dict[str, Any]:
        coarse_inc = fine_inc = None
        if setup.noise is not None:
            fine_inc = brownian_increments(setup.noise, fine_cfg.dt, fine_cfg.n_steps, config.seed, path_id)
            coarse_inc = brownian_increments(setup.noise, coarse_cfg.dt, coarse_cfg.n_steps, config.seed,
                                             path_id, refinement=2)
        coarse = simulate_path(coarse_cfg.with_path(path_id), setup.op, problem.coeffs, problem.obstacle,
                               setup.noise, problem.xi, coarse_inc)
        fine = simulate_path(fine_cfg.with_path(path_id), setup.op, problem.coeffs, problem.obstacle,
                             setup.noise, problem.xi, fine_inc)
        return {
            "path": path_id,
            "coarse": energy_identity(*coarse, setup.op, problem.coeffs, setup.noise).to_dict(),
            "fine": energy_identity(*fine, setup.op, problem.coeffs, setup.noise).to_dict(),
        }

    reports = map_paths(one, setup.path_ids, config.workers)
    rms_coarse = _rms([r["coarse"]["residual"] for r in reports])
    rms_fine = _rms([r["fine"]["residual"] for r in reports])
    ratio = rms_fine / rms_coarse if rms_coarse > 0.0 else None
    aggregate = {"rms_coarse": rms_coarse, "rms_fine": rms_fine, "ratio": ratio,
                 "dt": coarse_cfg.dt, "dt_fine": fine_cfg.dt}
    _write_json({"paths": reports, "aggregate": aggregate}, out / "verify.json", manifest)
    manifest.derived["energy"] = aggregate
    _finish(manifest, out, started)
    failed = rms_coarse > 0.0 and not rms_fine < rms_coarse
    return CommandResult(EXIT_VIOLATION if failed else EXIT_OK, out, manifest, aggregate)
