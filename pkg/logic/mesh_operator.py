import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded

from logic.errors import InvalidInputError

logger = logging.getLogger(__name__)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """
    単位区間 (0,1) 上の一様格子 (内点のみ、境界値は 0)。

    node_coords[i] = (i+1)*h, i = 0..n_interior-1.
    """
    n_interior: int
    h: float
    node_coords: np.ndarray

    @classmethod
    def uniform(cls, n_interior: int) -> "Mesh1D":
        if int(n_interior) != n_interior or n_interior < 1:
            raise InvalidInputError(f"n_interior must be a positive integer, got {n_interior}")
        n_interior = int(n_interior)
        h = 1.0 / (n_interior + 1)
        nodes = np.arange(1, n_interior + 1, dtype=float) * h
        return cls(n_interior=n_interior, h=h, node_coords=nodes)

    @property
    def midpoints(self) -> np.ndarray:
        """Cell midpoints x_{i+1/2}, one per edge (n_interior+1 of them)."""
        return (np.arange(self.n_interior + 1, dtype=float) + 0.5) * self.h

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(self.h * np.dot(u, v))

    def norm_sq(self, u: np.ndarray) -> float:
        return self.inner(u, u)

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        values = np.asarray(func(self.node_coords), dtype=float)
        return np.broadcast_to(values, self.node_coords.shape).copy()


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """
    Divergence-form operator A = -d/dx(a d/dx) with zero Dirichlet data,
    stored by its tridiagonal stencil.
    """
    mesh: Mesh1D
    diagonal: np.ndarray
    off_diagonal: np.ndarray
    a_values: np.ndarray
    lambda_ell: float
    Lambda_ell: float
    _factors: Dict[float, np.ndarray] = field(default_factory=dict, compare=False, repr=False)

    @property
    def stiffness(self) -> sp.csr_matrix:
        return sp.diags(
            [self.off_diagonal, self.diagonal, self.off_diagonal],
            offsets=[-1, 0, 1],
            format="csr",
        )

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = self.diagonal * u
        out[:-1] += self.off_diagonal * u[1:]
        out[1:] += self.off_diagonal * u[:-1]
        return out

    def energy(self, u: np.ndarray) -> float:
        """Dirichlet form E(u) = (u, Au) with the h-weighted inner product."""
        return self.mesh.inner(u, self.apply(u))

    def shifted_factor(self, dt: float) -> np.ndarray:
        # Cholesky factor of I + dt*A in upper banded storage, cached per dt.
        factor = self._factors.get(dt)
        if factor is None:
            n = self.mesh.n_interior
            banded = np.zeros((2, n))
            banded[0, 1:] = dt * self.off_diagonal
            banded[1, :] = 1.0 + dt * self.diagonal
            factor = cholesky_banded(banded, lower=False)
            self._factors[dt] = factor
        return factor


def _sample_coefficient(a: Coefficient, x: np.ndarray) -> np.ndarray:
    if callable(a):
        values = np.asarray(a(x), dtype=float)
    else:
        values = np.asarray(a, dtype=float)
    return np.broadcast_to(values, x.shape).astype(float)


def assemble_operator(mesh: Mesh1D, a: Coefficient,
                      lambda_ell: Optional[float] = None,
                      Lambda_ell: Optional[float] = None) -> EllipticOperator:
    """
    Assemble the 3-point conservative stencil for A.

    Args:
        mesh: interior grid
        a: diffusion coefficient (callable of x or a constant), sampled at cell midpoints
        lambda_ell, Lambda_ell: ellipticity bounds; default to the sampled min / max

    Returns:
        EllipticOperator with diag (a_{i-1/2}+a_{i+1/2})/h^2 and off-diagonal -a_{i+1/2}/h^2
    """
    a_mid = _sample_coefficient(a, mesh.midpoints)
    if not np.all(np.isfinite(a_mid)):
        raise InvalidInputError("diffusion coefficient is not finite at every midpoint")
    if lambda_ell is None:
        lambda_ell = float(a_mid.min())
    if Lambda_ell is None:
        Lambda_ell = float(a_mid.max())
    if lambda_ell <= 0.0:
        raise InvalidInputError(f"lower ellipticity bound must be positive, got {lambda_ell}")
    if Lambda_ell < lambda_ell:
        raise InvalidInputError(f"upper bound {Lambda_ell} below lower bound {lambda_ell}")
    below = np.flatnonzero(a_mid < lambda_ell)
    above = np.flatnonzero(a_mid > Lambda_ell)
    if below.size or above.size:
        bad = int(below[0]) if below.size else int(above[0])
        raise InvalidInputError(
            f"a(x)={a_mid[bad]:.6g} at x={mesh.midpoints[bad]:.6g} outside "
            f"[{lambda_ell}, {Lambda_ell}]"
        )

    inv_h2 = 1.0 / mesh.h ** 2
    diagonal = (a_mid[:-1] + a_mid[1:]) * inv_h2
    off_diagonal = -a_mid[1:-1] * inv_h2
    logger.debug("assembled operator: n=%d, lambda=%g, Lambda=%g", mesh.n_interior, lambda_ell, Lambda_ell)
    return EllipticOperator(
        mesh=mesh,
        diagonal=diagonal,
        off_diagonal=off_diagonal,
        a_values=a_mid,
        lambda_ell=float(lambda_ell),
        Lambda_ell=float(Lambda_ell),
    )


def apply_gradient(mesh: Mesh1D, u: np.ndarray) -> np.ndarray:
    """Forward differences on edges, u padded with the Dirichlet zeros."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_interior,):
        raise InvalidInputError(f"field length {u.shape} does not match mesh ({mesh.n_interior},)")
    padded = np.concatenate(([0.0], u, [0.0]))
    return np.diff(padded) / mesh.h


def apply_divergence(mesh: Mesh1D, q: np.ndarray) -> np.ndarray:
    """
    Negative adjoint of apply_gradient: (grad u, q)_h = -(u, div q)_h.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (mesh.n_interior + 1,):
        raise InvalidInputError(
            f"edge field length {q.shape} does not match mesh ({mesh.n_interior + 1},)"
        )
    return np.diff(q) / mesh.h


def solve_shifted(op: EllipticOperator, dt: float, rhs: np.ndarray) -> np.ndarray:
    """Solve (I + dt*A) u = rhs (direct banded solve)."""
    if dt < 0.0:
        raise InvalidInputError(f"dt must be non-negative, got {dt}")
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        bad = int(np.flatnonzero(~np.isfinite(rhs))[0])
        raise InvalidInputError(f"non-finite right-hand side at node {bad}")
    if dt == 0.0:
        return rhs.copy()
    return cho_solve_banded((op.shifted_factor(dt), False), rhs, check_finite=False)
