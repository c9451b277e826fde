import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Protocol, Tuple

import numpy as np

from logic.errors import InvalidInputError
from logic.mesh_operator import Mesh1D, apply_gradient

logger = logging.getLogger(__name__)

# (t, x, y, z) -> value, vectorised over x, y, z arrays of equal shape
CoefficientFn = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _zero(t, x, y, z):
    return np.zeros(np.broadcast(x, y, z).shape)


@dataclass(frozen=True)
class SourceTerms:
    """Coefficient values for one step: f and h_tilde on nodes, g on edges."""
    f: np.ndarray
    g: np.ndarray
    h_tilde: np.ndarray


class SourceModel(Protocol):
    """Anything the stepper can ask for one step's source terms."""

    def evaluate(self, step: int, t: float, mesh: Mesh1D, u: np.ndarray) -> SourceTerms:
        ...


def node_state(mesh: Mesh1D, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(y, z) on the nodes; z averages the two adjacent edge gradients."""
    grad = apply_gradient(mesh, u)
    return u, 0.5 * (grad[:-1] + grad[1:])


def edge_state(mesh: Mesh1D, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(y, z) on the edges; y averages the adjacent nodes (boundary value 0)."""
    padded = np.concatenate(([0.0], u, [0.0]))
    return 0.5 * (padded[:-1] + padded[1:]), np.diff(padded) / mesh.h


@dataclass(frozen=True)
class CoefficientSet:
    """
    Random coefficients f, g, h_tilde with declared Lipschitz structure.

    C_lip bounds f in (y, z) and the y-argument of g and h_tilde,
    alpha the z-argument of g, beta the z-argument of h_tilde.
    """
    f: CoefficientFn = _zero
    g: CoefficientFn = _zero
    h_tilde: CoefficientFn = _zero
    C_lip: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    name: str = "custom"
    note: str = ""

    def __post_init__(self):
        for label in ("C_lip", "alpha", "beta"):
            if getattr(self, label) < 0.0:
                raise InvalidInputError(f"{label} must be non-negative, got {getattr(self, label)}")

    def f0(self, t: float, x: np.ndarray) -> np.ndarray:
        zeros = np.zeros_like(x)
        return self.f(t, x, zeros, zeros)

    def g0(self, t: float, x: np.ndarray) -> np.ndarray:
        zeros = np.zeros_like(x)
        return self.g(t, x, zeros, zeros)

    def h0(self, t: float, x: np.ndarray) -> np.ndarray:
        zeros = np.zeros_like(x)
        return self.h_tilde(t, x, zeros, zeros)

    def evaluate(self, step: int, t: float, mesh: Mesh1D, u: np.ndarray) -> SourceTerms:
        y, z = node_state(mesh, u)
        y_edge, z_edge = edge_state(mesh, u)
        x = mesh.node_coords
        return SourceTerms(
            f=np.broadcast_to(self.f(t, x, y, z), x.shape).astype(float),
            g=np.broadcast_to(self.g(t, mesh.midpoints, y_edge, z_edge), y_edge.shape).astype(float),
            h_tilde=np.broadcast_to(self.h_tilde(t, x, y, z), x.shape).astype(float),
        )

    def shifted(self, f_shift: float) -> "CoefficientSet":
        """Same coefficients with f replaced by f + f_shift."""
        if f_shift == 0.0:
            return self
        base = self.f

        def f(t, x, y, z):
            return base(t, x, y, z) + f_shift

        return replace(self, f=f, name=f"{self.name}{f_shift:+g}")


@dataclass
class AssumptionReport:
    contraction_ok: bool
    contraction_margin: float
    empirical_C: float
    empirical_alpha: float
    empirical_beta: float
    integrability_ok: bool
    lipschitz_ok: bool
    effective_beta: float
    violations: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "contraction_ok": self.contraction_ok,
            "contraction_margin": self.contraction_margin,
            "empirical_C": self.empirical_C,
            "empirical_alpha": self.empirical_alpha,
            "empirical_beta": self.empirical_beta,
            "integrability_ok": self.integrability_ok,
            "lipschitz_ok": self.lipschitz_ok,
            "effective_beta": self.effective_beta,
            "violations": dict(self.violations),
        }


def check_contraction(alpha: float, beta: float, lambda_ell: float) -> Tuple[bool, float]:
    """
    Contraction property 2*alpha + beta^2 < 2*lambda (strict).

    Returns:
        (ok, margin) with margin = 2*lambda - 2*alpha - beta^2
    """
    if alpha < 0.0 or beta < 0.0:
        raise InvalidInputError(f"alpha and beta must be non-negative, got {alpha}, {beta}")
    if lambda_ell <= 0.0:
        raise InvalidInputError(f"lambda must be positive, got {lambda_ell}")
    margin = 2.0 * lambda_ell - 2.0 * alpha - beta ** 2
    return margin > 0.0, margin


def effective_beta(beta: float, weighted_trace: float) -> float:
    """Lipschitz constant of the expanded h = (sqrt(lambda_i) h_tilde e_i)_i in l2."""
    return beta * float(np.sqrt(weighted_trace))


def _quotients(fn: CoefficientFn, t, x, y, z, y2, z2) -> np.ndarray:
    with np.errstate(all="ignore"):
        diff = np.abs(fn(t, x, y, z) - fn(t, x, y2, z2))
        step = np.abs(y - y2) + np.abs(z - z2)
        return np.where(step > 0.0, diff / np.where(step > 0.0, step, 1.0), 0.0)


def empirical_lipschitz(coeffs: CoefficientSet, sample_count: int, rng: np.random.Generator,
                        lambda_ell: float = 1.0, weighted_trace: float = 1.0,
                        state_range: float = 2.0) -> AssumptionReport:
    """
    サンプリングによる Lipschitz 定数の推定 (係数の Lipschitz 条件と可積分性の確認)。

    Pairs differ in y only (C-part) or in z only (alpha / beta part), at random
    (t, x); the joint conditions follow from the split ones by the triangle inequality.
    """
    if sample_count < 2:
        raise InvalidInputError(f"sample_count must be >= 2, got {sample_count}")
    t = float(rng.uniform(0.0, 1.0))
    x = rng.uniform(0.0, 1.0, sample_count)
    y = rng.uniform(-state_range, state_range, sample_count)
    z = rng.uniform(-state_range, state_range, sample_count)
    # perturbation sizes spread over four decades so local slopes are seen
    d = rng.choice([-1.0, 1.0], sample_count) * 10.0 ** rng.uniform(-4.0, 0.0, sample_count)

    integrability_ok = True
    for fn in (coeffs.f0, coeffs.g0, coeffs.h0):
        if not np.all(np.isfinite(fn(t, x))):
            integrability_ok = False
    evaluations = [fn(t, x, y, z) for fn in (coeffs.f, coeffs.g, coeffs.h_tilde)]
    if not all(np.all(np.isfinite(values)) for values in evaluations):
        integrability_ok = False

    c_parts = [
        _quotients(coeffs.f, t, x, y, z, y + d, z),
        _quotients(coeffs.f, t, x, y, z, y, z + d),
        _quotients(coeffs.g, t, x, y, z, y + d, z),
        _quotients(coeffs.h_tilde, t, x, y, z, y + d, z),
    ]
    empirical_C = float(max(np.nanmax(q) for q in c_parts))
    empirical_alpha = float(np.nanmax(_quotients(coeffs.g, t, x, y, z, y, z + d)))
    empirical_beta = float(np.nanmax(_quotients(coeffs.h_tilde, t, x, y, z, y, z + d)))

    violations = {}
    for label, observed, declared in (("C_lip", empirical_C, coeffs.C_lip),
                                      ("alpha", empirical_alpha, coeffs.alpha),
                                      ("beta", empirical_beta, coeffs.beta)):
        if not np.isfinite(observed) or observed > declared + 1e-9:
            violations[label] = observed
    if violations:
        logger.warning("coefficient preset '%s' exceeds declared constants: %s", coeffs.name, violations)

    beta_h = effective_beta(coeffs.beta, weighted_trace)
    ok, margin = check_contraction(coeffs.alpha, beta_h, lambda_ell)
    return AssumptionReport(
        contraction_ok=ok,
        contraction_margin=margin,
        empirical_C=empirical_C,
        empirical_alpha=empirical_alpha,
        empirical_beta=empirical_beta,
        integrability_ok=integrability_ok,
        lipschitz_ok=not violations,
        effective_beta=beta_h,
        violations=violations,
    )


def _linear_preset() -> CoefficientSet:
    return CoefficientSet(
        f=lambda t, x, y, z: 0.3 * y,
        g=_zero,
        h_tilde=lambda t, x, y, z: np.full(np.broadcast(x, y, z).shape, 0.5),
        C_lip=0.3, alpha=0.0, beta=0.0,
        name="linear",
        note="f = 0.3 y, additive noise h_tilde = 0.5; g-constant split irrelevant (g = 0)",
    )


def _saturating_preset() -> CoefficientSet:
    return CoefficientSet(
        f=lambda t, x, y, z: 0.5 + 0.1 * np.sin(y) + 0.1 * np.sin(z),
        g=lambda t, x, y, z: 0.1 * np.tanh(y) + 0.1 * np.sin(z),
        h_tilde=lambda t, x, y, z: 0.1 * np.tanh(y) + 0.2 * np.sin(z),
        C_lip=0.1, alpha=0.1, beta=0.2,
        name="saturating",
        note="g split as C=0.1 on y, alpha=0.1 on z",
    )


def _forcing_preset() -> CoefficientSet:
    return CoefficientSet(
        f=lambda t, x, y, z: np.sin(np.pi * x) + 0.0 * y,
        g=_zero,
        h_tilde=lambda t, x, y, z: np.full(np.broadcast(x, y, z).shape, 0.3),
        name="forcing",
        note="state independent sources",
    )


def _zero_preset() -> CoefficientSet:
    return CoefficientSet(name="zero", note="no sources, no noise")


COEFFICIENT_PRESETS: Dict[str, Callable[[], CoefficientSet]] = {
    "zero": _zero_preset,
    "linear": _linear_preset,
    "saturating": _saturating_preset,
    "forcing": _forcing_preset,
}


def get_preset(name: str, f_shift: float = 0.0) -> CoefficientSet:
    factory: Optional[Callable[[], CoefficientSet]] = COEFFICIENT_PRESETS.get(name)
    if factory is None:
        raise InvalidInputError(
            f"unknown coefficient preset '{name}' (expected one of {sorted(COEFFICIENT_PRESETS)})"
        )
    return factory().shifted(f_shift)
