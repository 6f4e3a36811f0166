"""
Restarted GMRES for the primal system A x = b and the adjoint system
A^H lam = g.

Arnoldi uses modified Gram-Schmidt with one reorthogonalisation pass and
complex Givens rotations on the Hessenberg matrix. Convergence is decided
on the true residual ||b - A x|| / ||b|| at the end of each cycle, so a
returned solution always meets `tol` and a failure always raises
`ConvergenceError` with the best iterate attached.

Rectangular (CHIEF) systems are solved in least squares through the
normal-equation operator v -> A^H (A v); A^H A is never formed.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from bem_core import BoundarySolution, OperatorMatrix
from errors import ConvergenceError

logger = logging.getLogger(__name__)

BREAKDOWN = 1e-14


@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-8
    restart: int = 80
    max_iters: int = 2000
    warm_start: Optional[np.ndarray] = None
    precondition: bool = False

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tol must be in (0, 1), got {self.tol}")
        if self.restart < 1:
            raise ValueError(f"restart must be >= 1, got {self.restart}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")

    def with_warm_start(self, x) -> "SolveConfig":
        return replace(self, warm_start=None if x is None else np.asarray(x))


def _entries(A):
    return A.entries if isinstance(A, OperatorMatrix) else np.asarray(A)


def gmres(matvec: Callable, b, cfg: SolveConfig, diagonal=None) -> BoundarySolution:
    b = np.asarray(b, dtype=complex)
    n = len(b)
    x = np.zeros(n, dtype=complex) if cfg.warm_start is None else np.array(cfg.warm_start, dtype=complex)
    if x.shape != b.shape:
        raise ValueError(f"warm start has shape {x.shape}, expected {b.shape}")
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return BoundarySolution(np.zeros(n, dtype=complex), 0.0, 0, [0.0])

    if diagonal is not None:
        inverse = 1.0 / np.asarray(diagonal, dtype=complex)

        def apply(v):
            return inverse * matvec(v)

        rhs = inverse * b
    else:
        apply, rhs = matvec, b
    rhs_norm = np.linalg.norm(rhs)

    residual = np.linalg.norm(b - matvec(x)) / b_norm
    history = [residual]
    best, best_residual = x.copy(), residual
    iterations, inner_scale = 0, 1.0
    m = min(cfg.restart, n)

    while residual > cfg.tol and iterations < cfg.max_iters:
        r = rhs - apply(x)
        beta = np.linalg.norm(r)
        V = np.zeros((n, m + 1), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        V[:, 0] = r / beta
        g[0] = beta
        target = cfg.tol * rhs_norm * inner_scale

        steps = 0
        for j in range(m):
            w = apply(V[:, j])
            w_norm = np.linalg.norm(w)
            iterations += 1
            for _ in range(2):
                for i in range(j + 1):
                    h = np.vdot(V[:, i], w)
                    H[i, j] += h
                    w = w - h * V[:, i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = abs(H[j + 1, j]) <= BREAKDOWN * w_norm
            if not breakdown:
                V[:, j + 1] = w / H[j + 1, j]

            for i in range(j):
                top = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = top
            a, c = H[j, j], H[j + 1, j]
            rho = np.hypot(abs(a), abs(c))
            if abs(a) == 0.0:
                cs[j], sn[j] = 0.0, 1.0
            else:
                cs[j] = abs(a) / rho
                sn[j] = (a / abs(a)) * np.conj(c) / rho
            H[j, j] = cs[j] * a + sn[j] * c
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            steps = j + 1
            if abs(g[j + 1]) <= target or breakdown or iterations >= cfg.max_iters:
                break

        y = solve_triangular(H[:steps, :steps], g[:steps])
        x = x + V[:, :steps] @ y
        previous = residual
        residual = np.linalg.norm(b - matvec(x)) / b_norm
        history.append(residual)
        logger.debug(f"GMRES cycle {len(history) - 1}: {steps} steps, residual {residual:.3e}")
        if residual < best_residual:
            best, best_residual = x.copy(), residual
        if residual > cfg.tol and abs(g[steps]) <= target:
            # the preconditioned estimate converged ahead of the true residual
            inner_scale *= 0.1
        if residual > cfg.tol and previous - residual <= 1e-15 * previous and abs(g[steps]) > target:
            break

    if residual > cfg.tol:
        raise ConvergenceError("GMRES did not reach the requested tolerance", best, best_residual, iterations)
    return BoundarySolution(x, float(residual), iterations, history)


def _normal_operator(A):
    def matvec(v):
        return A.conj().T @ (A @ v)

    return matvec


def gmres_solve(A, b, cfg: SolveConfig = SolveConfig()) -> BoundarySolution:
    """
    Solve A x = b. For a rectangular A the normal equations
    A^H A x = A^H b are solved instead and `residual_norm` refers to them.
    """
    entries = _entries(A)
    b = np.asarray(b, dtype=complex)
    if entries.shape[0] != len(b):
        raise ValueError(f"operator has {entries.shape[0]} rows, right-hand side {len(b)}")
    if entries.shape[0] == entries.shape[1]:
        diagonal = np.diag(entries) if cfg.precondition else None
        return gmres(lambda v: entries @ v, b, cfg, diagonal)
    diagonal = np.sum(np.abs(entries) ** 2, axis=0) if cfg.precondition else None
    return gmres(_normal_operator(entries), entries.conj().T @ b, cfg, diagonal)


def adjoint_solve(A, g, cfg: SolveConfig = SolveConfig()) -> BoundarySolution:
    """
    Solve A^H lam = g (or (A^H A) lam = g for a rectangular A) by applying
    the conjugate transpose as (v^* A)^*. The solution vector is `.x`.
    """
    entries = _entries(A)
    g = np.asarray(g, dtype=complex)
    if entries.shape[1] != len(g):
        raise ValueError(f"operator has {entries.shape[1]} columns, adjoint source {len(g)}")
    if entries.shape[0] == entries.shape[1]:
        diagonal = np.diag(entries).conj() if cfg.precondition else None
        return gmres(lambda v: (v.conj() @ entries).conj(), g, cfg, diagonal)
    diagonal = np.sum(np.abs(entries) ** 2, axis=0) if cfg.precondition else None
    return gmres(_normal_operator(entries), g, cfg, diagonal)
