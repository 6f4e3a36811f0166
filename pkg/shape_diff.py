"""
Adjoint gradient of a field loss with respect to shape parameters.

Chain for one frequency, with p = P(s) x + c(s) the domain pressures and
A(s) x = b(s) the boundary system:

    g        = P^H cot                      (pullback_potential)
    A^H lam  = g                            (one adjoint solve)
    dL/ds_j  = Re <lam, db_j - dA_j x>  +  Re <cot, dP_j x + dc_j>

The directional derivatives dA_j, db_j, dP_j, dc_j come from a single
forward-mode (dual number) assembly along the P vertex motions dV/ds_j;
the N x N x 3V tensor dA/dV is never formed and the iterative solver is
never differentiated.

For a rectangular (CHIEF) system solved in least squares,
(A^H A) lam = g and the implicit term becomes
Re <A lam, db_j - dA_j x> + Re <dA_j lam, b - A x>.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from bem_core import OperatorMatrix, WaveConfig, assemble, potential_matrix
from errors import NonFiniteObjectiveError
from loss import FieldLoss
from mesh import Mesh, PairClassification, ShapeParams, classify_pairs, vertex_tangents
from solver import SolveConfig, adjoint_solve

logger = logging.getLogger(__name__)


def loss_cotangent(fields, loss: FieldLoss) -> np.ndarray:
    """dL/dRe(p) + i dL/dIm(p) for fields of shape (F, M)."""
    return loss.value_and_cotangent(fields)[1]


@dataclass
class GradientResult:
    grad: np.ndarray
    implicit: np.ndarray
    explicit: np.ndarray
    adjoint_residual: float = 0.0
    adjoint_iterations: int = 0
    norm_grad_A: float = 0.0  # ||lam x^H||
    norm_grad_b: float = 0.0  # ||lam||

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise NonFiniteObjectiveError("gradient has non-finite entries")

    def __add__(self, other: "GradientResult") -> "GradientResult":
        return GradientResult(
            self.grad + other.grad,
            self.implicit + other.implicit,
            self.explicit + other.explicit,
            max(self.adjoint_residual, other.adjoint_residual),
            self.adjoint_iterations + other.adjoint_iterations,
            float(np.hypot(self.norm_grad_A, other.norm_grad_A)),
            float(np.hypot(self.norm_grad_b, other.norm_grad_b)),
        )


@dataclass
class PotentialPullback:
    g: np.ndarray  # dL/dx in the conjugate-cotangent convention, (N,)
    explicit: np.ndarray  # dL/ds_j with x held fixed, (P,)


def pullback_potential(mesh: Mesh, cfg: WaveConfig, x, points, cot, vertex_tangents=None,
                       threads: int = 1, potential=None) -> PotentialPullback:
    """
    g = P^H cot, plus Re <cot, dP_j x + dc_j> when vertex tangents are
    given. A precomputed `potential` (from `potential_matrix` with the same
    tangents) skips the re-evaluation.
    """
    x = np.asarray(getattr(x, "x", x), dtype=complex)
    cot = np.asarray(cot, dtype=complex)
    pm = potential if potential is not None else potential_matrix(mesh, cfg, points, vertex_tangents, threads)
    g = pm.double_layer.conj().T @ cot
    if pm.d_double_layer is None:
        return PotentialPullback(g, np.zeros(0))
    explicit = np.real(pm.directional(x) @ cot.conj())
    return PotentialPullback(g, explicit)


def backward(x, A: OperatorMatrix, g, mesh: Mesh, cfg: WaveConfig, base: Mesh, params: ShapeParams,
             classes: Optional[PairClassification] = None, explicit=None,
             solve_cfg: SolveConfig = SolveConfig(), include_explicit: bool = True,
             threads: int = 1) -> GradientResult:
    """
    dL/ds for one solved system. `A` must be the operator `x` solves; when
    it carries no tangents they are assembled here along dV/ds.
    """
    x = np.asarray(getattr(x, "x", x), dtype=complex)
    g = np.asarray(g, dtype=complex)
    P = params.size
    if P == 0:
        empty = np.zeros(0)
        return GradientResult(empty, empty, empty)

    if A.d_entries is None:
        if classes is None:
            classes = classify_pairs(mesh, symmetry=cfg.symmetry)
        tangents = vertex_tangents(base, params)
        A = assemble(mesh, cfg, classes, vertex_tangents=tangents, threads=threads)

    adjoint = adjoint_solve(A, g, solve_cfg.with_warm_start(None))
    lam = adjoint.x
    directional = A.d_rhs - A.d_entries @ x  # (P, rows)
    if A.least_squares:
        mu = A.entries @ lam
        residual = A.rhs - A.entries @ x
        implicit = np.real(directional @ mu.conj()) + np.real((A.d_entries @ lam).conj() @ residual)
    else:
        mu = lam
        implicit = np.real(directional @ lam.conj())

    explicit = np.zeros(P) if explicit is None or np.size(explicit) == 0 else np.asarray(explicit, dtype=float)
    grad = implicit + explicit if include_explicit else implicit.copy()
    lam_norm = float(np.linalg.norm(mu))
    logger.debug(f"Adjoint solve: {adjoint.iterations} iterations, residual {adjoint.residual_norm:.2e}")
    return GradientResult(
        grad=grad,
        implicit=implicit,
        explicit=explicit,
        adjoint_residual=adjoint.residual_norm,
        adjoint_iterations=adjoint.iterations,
        norm_grad_A=lam_norm * float(np.linalg.norm(x)),
        norm_grad_b=lam_norm,
    )


def fd_gradient(objective: Callable[[np.ndarray], float], params, h: float) -> np.ndarray:
    """Central differences (f(s + h e_j) - f(s - h e_j)) / 2h."""
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    s = np.asarray(getattr(params, "values", params), dtype=float)
    grad = np.zeros(s.size)
    for j in range(s.size):
        step = np.zeros(s.size)
        step[j] = h
        upper, lower = objective(s + step), objective(s - step)
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteObjectiveError(f"objective is not finite around component {j}")
        grad[j] = (upper - lower) / (2.0 * h)
    return grad
