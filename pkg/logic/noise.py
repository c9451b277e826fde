import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import zeta

from logic.errors import InvalidInputError
from logic.mesh_operator import Mesh1D

logger = logging.getLogger(__name__)

SPECTRUM_RULES = ("geometric", "polynomial")


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """
    Truncated eigen-expansion W(dt,x) = sum_i sqrt(lambda_i) e_i(x) dB^i_t.

    eigenfunctions has shape (J, n_interior): row i holds e_i sampled on the nodes.
    """
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    sup_norms: np.ndarray
    rule: str
    parameter: float
    tail_mass: float

    @property
    def J(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def partial_trace(self) -> float:
        return float(self.eigenvalues.sum())

    @property
    def weighted_trace(self) -> float:
        """sum_i lambda_i ||e_i||_inf^2"""
        return float(np.dot(self.eigenvalues, self.sup_norms ** 2))

    @property
    def scaled_modes(self) -> np.ndarray:
        """Rows sqrt(lambda_i) e_i, shape (J, n_interior)."""
        return np.sqrt(self.eigenvalues)[:, None] * self.eigenfunctions

    def kernel(self) -> np.ndarray:
        """k(x_a, x_b) = sum_i lambda_i e_i(x_a) e_i(x_b) on the nodes."""
        modes = self.scaled_modes
        return modes.T @ modes

    def variance_density(self) -> np.ndarray:
        """k(x, x) per node, i.e. sum_i lambda_i e_i(x)^2."""
        return np.einsum("ij,ij->j", self.scaled_modes, self.scaled_modes)

    def field_increment(self, dB: np.ndarray) -> np.ndarray:
        """W increment on the nodes for channel increments dB."""
        return self.scaled_modes.T @ dB

    def summary(self) -> dict:
        return {
            "rule": self.rule,
            "parameter": self.parameter,
            "channels": self.J,
            "partial_trace": self.partial_trace,
            "weighted_trace": self.weighted_trace,
            "tail_mass": self.tail_mass,
        }


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    dB: np.ndarray
    dt: float


def _tail_mass(rule: str, parameter: float, J: int) -> float:
    if rule == "geometric":
        return parameter ** (J + 1) / (1.0 - parameter)
    return float(zeta(parameter, J + 1))


def build_sine_spectrum(mesh: Mesh1D, J: int, rule: str = "geometric",
                        parameter: float = 0.5) -> NoiseModel:
    """
    Sine basis e_i(x) = sqrt(2) sin(i pi x) with a summable spectrum.

    Args:
        J: number of retained channels (>= 1)
        rule: 'geometric' (lambda_i = r^i, 0<r<1) or 'polynomial' (lambda_i = i^-p, p>1)
        parameter: r or p
    """
    if int(J) != J or J < 1:
        raise InvalidInputError(f"channel count must be a positive integer, got {J}")
    J = int(J)
    if rule not in SPECTRUM_RULES:
        raise InvalidInputError(f"unknown spectrum rule '{rule}' (expected one of {SPECTRUM_RULES})")
    index = np.arange(1, J + 1, dtype=float)
    if rule == "geometric":
        if not 0.0 < parameter < 1.0:
            raise InvalidInputError(f"geometric ratio must lie in (0,1), got {parameter}")
        eigenvalues = parameter ** index
    else:
        if parameter <= 1.0:
            raise InvalidInputError(f"polynomial exponent must exceed 1, got {parameter}")
        eigenvalues = index ** (-parameter)

    eigenfunctions = np.sqrt(2.0) * np.sin(np.pi * np.outer(index, mesh.node_coords))
    sup_norms = np.abs(eigenfunctions).max(axis=1)
    model = NoiseModel(
        eigenvalues=eigenvalues,
        eigenfunctions=eigenfunctions,
        sup_norms=sup_norms,
        rule=rule,
        parameter=float(parameter),
        tail_mass=_tail_mass(rule, float(parameter), J),
    )
    logger.debug("noise spectrum %s(%g), J=%d, trace=%.6g, tail=%.3g",
                 rule, parameter, J, model.partial_trace, model.tail_mass)
    return model


@lru_cache(maxsize=1024)
def _path_key(seed: int, path_id: int) -> np.ndarray:
    key = np.random.SeedSequence([seed, path_id]).generate_state(2, dtype=np.uint64)
    key.setflags(write=False)
    return key


def step_generator(seed: int, path_id: int, step: int) -> np.random.Generator:
    """
    Counter-based generator for one (seed, path, step) cell.

    The Philox key is derived from (seed, path_id); the step index sits in the
    third counter word so every step owns a disjoint block of the stream.
    """
    key = _path_key(int(seed), int(path_id))
    counter = np.array([0, 0, int(step), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def sample_increment(model: NoiseModel, dt: float, rng: np.random.Generator) -> NoiseIncrement:
    if dt <= 0.0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    dB = rng.standard_normal(model.J) * np.sqrt(dt)
    return NoiseIncrement(dB=dB, dt=float(dt))


def sample_increments(model: NoiseModel, dt: float, rng: np.random.Generator, count: int) -> np.ndarray:
    """count independent increments from one generator, shape (count, J)."""
    if dt <= 0.0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    return rng.standard_normal((int(count), model.J)) * np.sqrt(dt)


def brownian_increments(model: NoiseModel, dt: float, n_steps: int, seed: int,
                        path_id: int, refinement: int = 1) -> np.ndarray:
    """
    Channel increments of one path, shape (n_steps, J).

    With refinement=r the path is drawn at step dt/r and consecutive blocks of r
    fine increments are summed, so runs at dt and dt/r share the same Brownian path.
    """
    if refinement < 1:
        raise InvalidInputError(f"refinement must be >= 1, got {refinement}")
    fine_dt = dt / refinement
    fine = np.empty((n_steps * refinement, model.J))
    for k in range(n_steps * refinement):
        fine[k] = sample_increment(model, fine_dt, step_generator(seed, path_id, k)).dB
    return coarsen_increments(fine, refinement)


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return increments
    n_fine, J = increments.shape
    if n_fine % factor:
        raise InvalidInputError(f"{n_fine} fine increments cannot be grouped by {factor}")
    return increments.reshape(n_fine // factor, factor, J).sum(axis=1)


def channel_coefficients(model: NoiseModel, h_tilde_value: float, node: int) -> np.ndarray:
    """h_i = sqrt(lambda_i) * h_tilde * e_i(x_node), i = 1..J."""
    if not 0 <= node < model.eigenfunctions.shape[1]:
        raise InvalidInputError(f"node {node} out of range")
    return np.sqrt(model.eigenvalues) * h_tilde_value * model.eigenfunctions[:, node]


def noise_forcing(model: Optional[NoiseModel], h_tilde: np.ndarray, dB: Optional[np.ndarray]) -> np.ndarray:
    """sum_j h_j dB^j on every node for a nodal h_tilde field."""
    if model is None or dB is None:
        return np.zeros_like(h_tilde)
    return h_tilde * model.field_increment(dB)
