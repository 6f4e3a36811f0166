"""
Limited-memory BFGS with a strong-Wolfe line search and box clamps.

`lbfgs_step` advances a `LbfgsState` by one accepted iteration. The search
direction comes from the two-loop recursion over the last `memory`
curvature pairs; the step length from `scipy.optimize.line_search`
(strong Wolfe, c1 = 1e-4, c2 = 0.9), capped so the iterate never leaves
[lower, upper].
"""

import logging
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import line_search

from errors import LineSearchError, NonFiniteObjectiveError

logger = logging.getLogger(__name__)

C1 = 1e-4
C2 = 0.9


@dataclass
class LbfgsState:
    x: np.ndarray
    f: float
    g: np.ndarray
    memory: int = 10
    s_history: deque = None
    y_history: deque = None
    iteration: int = 0
    evaluations: int = 1
    converged: bool = False
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if not (np.isfinite(self.f) and np.all(np.isfinite(self.g))):
            raise NonFiniteObjectiveError("L-BFGS started from a non-finite loss or gradient")
        if self.s_history is None:
            self.s_history = deque(maxlen=self.memory)
            self.y_history = deque(maxlen=self.memory)


class _CachedObjective:
    """Splits a value-and-gradient closure for scipy, evaluating each x once."""

    def __init__(self, fun: Callable):
        self.fun = fun
        self.cache = {}
        self.calls = 0

    def __call__(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self.cache:
            self.calls += 1
            f, g = self.fun(np.array(x, dtype=float))
            if not np.isfinite(f):
                raise NonFiniteObjectiveError(f"objective is not finite at {x}")
            self.cache[key] = (float(f), np.asarray(g, dtype=float))
        return self.cache[key]

    def value(self, x):
        return self(x)[0]

    def gradient(self, x):
        return self(x)[1]


def two_loop_direction(g, s_history, y_history) -> np.ndarray:
    q = np.array(g, dtype=float)
    if not s_history:
        norm = np.linalg.norm(q)
        return -q / norm if norm > 0 else -q
    alphas = []
    for s, y in zip(reversed(s_history), reversed(y_history)):
        rho = 1.0 / np.dot(y, s)
        alpha = rho * np.dot(s, q)
        q -= alpha * y
        alphas.append((rho, alpha))
    s, y = s_history[-1], y_history[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, alpha) in zip(zip(s_history, y_history), reversed(alphas)):
        beta = rho * np.dot(y, q)
        q += (alpha - beta) * s
    return -q


def _free_direction(state: LbfgsState, direction):
    """Drop components that push an iterate already on a clamp further out."""
    at_lower = (state.x <= state.lower) & (direction < 0)
    at_upper = (state.x >= state.upper) & (direction > 0)
    return np.where(at_lower | at_upper, 0.0, direction)


def _max_step(state: LbfgsState, direction):
    with np.errstate(divide="ignore", invalid="ignore"):
        to_upper = np.where(direction > 0, (state.upper - state.x) / direction, np.inf)
        to_lower = np.where(direction < 0, (state.lower - state.x) / direction, np.inf)
    cap = float(np.min(np.minimum(to_upper, to_lower))) if direction.size else np.inf
    return None if not np.isfinite(cap) else cap


def projected_gradient_norm(state: LbfgsState) -> float:
    return float(np.max(np.abs(_free_direction(state, -state.g)), initial=0.0))


def lbfgs_step(fun: Callable, state: LbfgsState, gtol: float = 1e-8, maxiter: int = 20) -> LbfgsState:
    """
    One accepted iteration. `fun(x)` returns (loss, gradient). Returns the
    state unchanged with `converged` set when the (projected) gradient is
    already below `gtol`.
    """
    if projected_gradient_norm(state) <= gtol:
        state.converged = True
        return state

    direction = two_loop_direction(state.g, state.s_history, state.y_history)
    if np.dot(direction, state.g) >= 0:
        # curvature memory went stale; restart from steepest descent
        state.s_history.clear()
        state.y_history.clear()
        direction = two_loop_direction(state.g, state.s_history, state.y_history)
    direction = _free_direction(state, direction)
    if not np.any(direction):
        state.converged = True
        return state

    objective = _CachedObjective(fun)
    objective.cache[state.x.tobytes()] = (state.f, state.g)
    amax = _max_step(state, direction)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        alpha, *_ = line_search(
            objective.value, objective.gradient, state.x, direction, gfk=state.g, old_fval=state.f,
            c1=C1, c2=C2, amax=amax, maxiter=maxiter,
        )
    if alpha is None:
        raise LineSearchError(
            f"strong-Wolfe line search failed at iteration {state.iteration + 1} "
            f"(loss {state.f:.6e}, |g|inf {np.max(np.abs(state.g)):.3e})"
        )

    x_new = np.clip(state.x + alpha * direction, state.lower, state.upper)
    f_new, g_new = objective(x_new)
    s, y = x_new - state.x, g_new - state.g
    if np.dot(s, y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
        state.s_history.append(s)
        state.y_history.append(y)
    logger.info(f"L-BFGS iteration {state.iteration + 1}: loss {f_new:.6e}, step {alpha:.3e}")
    state.x, state.f, state.g = x_new, f_new, g_new
    state.iteration += 1
    state.evaluations += objective.calls
    state.converged = projected_gradient_norm(state) <= gtol
    return state


def minimize(fun: Callable, x0, max_iters: int = 100, gtol: float = 1e-8, memory: int = 10,
             lower: float = -np.inf, upper: float = np.inf, callback=None) -> LbfgsState:
    f0, g0 = fun(np.asarray(x0, dtype=float))
    state = LbfgsState(x0, f0, g0, memory=memory, lower=lower, upper=upper)
    for _ in range(max_iters):
        before = state.iteration
        state = lbfgs_step(fun, state, gtol)
        if callback is not None and state.iteration > before:
            callback(state)
        if state.converged:
            break
    return state
