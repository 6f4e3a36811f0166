"""
Geometry optimisation loop: deform, classify, solve every frequency,
evaluate the loss, pull the gradient back to the shape parameters and let
L-BFGS pick the next shape.
"""

import asyncio
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel

from bem_core import BoundarySolution, OperatorMatrix, PotentialMatrix, WaveConfig, assemble, potential_matrix
from errors import BemError
from lbfgs import LbfgsState, lbfgs_step
from logger import StepLogger
from loss import FieldLoss
from mesh import DEFAULT_NEAR_FACTOR, Mesh, ShapeParams, classify_pairs, deform, vertex_tangents, write_obj
from shape_diff import GradientResult, backward, pullback_potential
from solver import SolveConfig, gmres_solve

logger = logging.getLogger(__name__)

CACHED_EVALUATIONS = 2  # last accepted point and the current trial


class IterationRecord(BaseModel):
    iteration: int
    loss: float
    grad_norm: float
    params: List[float]
    solver_iterations: List[int]
    cold_iterations: Optional[List[int]] = None
    adjoint_iterations: int
    wall_time: float


@dataclass
class FrequencySolve:
    cfg: WaveConfig
    operator: OperatorMatrix
    solution: BoundarySolution
    potential: PotentialMatrix
    cold_iterations: Optional[int] = None

    def without_tangents(self) -> "FrequencySolve":
        """Copy with the operator and potential tangents dropped."""
        return replace(
            self,
            operator=replace(self.operator, d_entries=None, d_rhs=None),
            potential=replace(self.potential, d_double_layer=None, d_offset=None),
        )


@dataclass
class Evaluation:
    values: np.ndarray
    loss: float
    fields: np.ndarray  # (F, M)
    solves: List[FrequencySolve]
    gradient: Optional[GradientResult] = None

    @property
    def grad(self) -> np.ndarray:
        return self.gradient.grad

    @property
    def solver_iterations(self) -> List[int]:
        return [s.solution.iterations for s in self.solves]


def wavenumber(frequency: float, c: float) -> float:
    return 2.0 * math.pi * frequency / c


class ShapeObjective:
    """
    Loss and adjoint gradient as a function of the shape parameter values.
    The most recent evaluations are cached per parameter vector, without
    their shape tangents; the last boundary solution of each frequency
    warm-starts the next solve.
    """

    def __init__(self, base: Mesh, params: ShapeParams, wave: WaveConfig, loss: FieldLoss,
                 solve_cfg: SolveConfig = SolveConfig(), near_factor: float = DEFAULT_NEAR_FACTOR,
                 threads: int = 1, warm_start: bool = True, audit_cold_start: bool = False,
                 include_explicit: bool = True):
        self.base = base
        self.params = params
        self.wave = wave
        self.loss = loss
        self.solve_cfg = solve_cfg
        self.near_factor = near_factor
        self.threads = threads
        self.warm_start = warm_start
        self.audit_cold_start = audit_cold_start
        self.include_explicit = include_explicit
        self.wavenumbers = [wavenumber(f, wave.medium.c) for f in loss.frequencies]
        self._warm = {}
        self._cache = OrderedDict()
        self.evaluations = 0

    def _solve_frequency(self, mesh, classes, tangents, k) -> FrequencySolve:
        cfg = self.wave.at(k)
        op = assemble(mesh, cfg, classes, vertex_tangents=tangents, threads=self.threads)
        warm = self._warm.get(k) if self.warm_start else None
        solution = gmres_solve(op, op.rhs, self.solve_cfg.with_warm_start(warm))
        cold = None
        if self.audit_cold_start and warm is not None:
            cold = gmres_solve(op, op.rhs, self.solve_cfg.with_warm_start(None)).iterations
        pm = potential_matrix(mesh, cfg, self.loss.points, tangents, self.threads)
        return FrequencySolve(cfg, op, solution, pm, cold)

    @staticmethod
    async def _gather(jobs):
        return await asyncio.gather(*(asyncio.to_thread(job) for job in jobs))

    def evaluate(self, values, gradient: bool = True) -> Evaluation:
        values = self.params.clip(np.asarray(values, dtype=float))
        key = (values.tobytes(), gradient)
        for cached in (key, (key[0], True)):
            if cached in self._cache:
                self._cache.move_to_end(cached)
                return self._cache[cached]

        params = self.params.with_values(values)
        mesh = deform(self.base, params)
        classes = classify_pairs(mesh, self.near_factor, self.wave.symmetry)
        tangents = vertex_tangents(self.base, params) if gradient and params.size else None

        solves = asyncio.run(
            self._gather([lambda k=k: self._solve_frequency(mesh, classes, tangents, k) for k in self.wavenumbers])
        )
        for k, fs in zip(self.wavenumbers, solves):
            self._warm[k] = fs.solution.x
        fields = np.stack([fs.potential.apply(fs.solution.x) for fs in solves])
        value, cot = self.loss.value_and_cotangent(fields)
        self.evaluations += 1

        result = Evaluation(values, float(value), fields, [fs.without_tangents() for fs in solves])
        if gradient:
            result.gradient = self._gradient(mesh, params, solves, cot)
        self._cache[key] = result
        while len(self._cache) > CACHED_EVALUATIONS:
            self._cache.popitem(last=False)
        return result

    def _gradient(self, mesh, params, solves, cot) -> GradientResult:
        if params.size == 0:
            empty = np.zeros(0)
            return GradientResult(empty, empty, empty)

        def job(fs, c):
            pull = pullback_potential(mesh, fs.cfg, fs.solution, self.loss.points, c, potential=fs.potential)
            return backward(
                fs.solution, fs.operator, pull.g, mesh, fs.cfg, self.base, params,
                explicit=pull.explicit, solve_cfg=self.solve_cfg, include_explicit=self.include_explicit,
            )

        parts = asyncio.run(self._gather([lambda fs=fs, c=c: job(fs, c) for fs, c in zip(solves, cot)]))
        total = parts[0]
        for part in parts[1:]:
            total = total + part
        return total

    def __call__(self, values):
        ev = self.evaluate(values)
        return ev.loss, ev.grad

    def value(self, values) -> float:
        return self.evaluate(values, gradient=False).loss


@dataclass
class OptimHistory:
    records: List[IterationRecord] = field(default_factory=list)
    initial: Optional[Evaluation] = None
    final: Optional[Evaluation] = None
    final_mesh: Optional[Mesh] = None
    stop_reason: str = ""

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.records]


def _snapshot(run_dir: Optional[Path], mesh: Mesh, iteration: int):
    if run_dir is None:
        return
    write_obj(mesh, run_dir / "snapshots" / f"iter_{iteration:04d}.obj")
    write_obj(mesh, run_dir / "best.obj")


def run_optimization(base: Mesh, params: ShapeParams, wave: WaveConfig, loss: FieldLoss, iterations: int,
                     solve_cfg: SolveConfig = SolveConfig(), run_dir: Optional[Path] = None,
                     step_logger: Optional[StepLogger] = None, gtol: float = 1e-6, memory: int = 10,
                     threads: int = 1, audit_cold_start: bool = False,
                     near_factor: float = DEFAULT_NEAR_FACTOR, objective: Optional[ShapeObjective] = None):
    """
    Returns (final mesh, history). Any numerical failure after the first
    evaluation stops the loop and keeps the best shape reached so far.
    """
    step_logger = step_logger or StepLogger(echo=False)
    run_dir = Path(run_dir) if run_dir is not None else None
    history = OptimHistory()
    if iterations == 0:
        history.final_mesh = deform(base, params)
        history.stop_reason = "no iterations requested"
        return history.final_mesh, history

    objective = objective or ShapeObjective(
        base, params, wave, loss, solve_cfg, near_factor, threads, audit_cold_start=audit_cold_start
    )
    history.initial = objective.evaluate(params.values)
    step_logger.log(f"Initial loss {history.initial.loss:.6e} over {len(objective.wavenumbers)} frequencies")
    _snapshot(run_dir, deform(base, params), 0)
    if params.size == 0:
        history.final, history.final_mesh = history.initial, deform(base, params)
        history.stop_reason = "no shape parameters"
        return history.final_mesh, history

    state = LbfgsState(
        params.values, history.initial.loss, history.initial.grad,
        memory=memory, lower=params.lower, upper=params.upper,
    )
    history.stop_reason = "iteration limit"
    for iteration in range(1, iterations + 1):
        started = time.perf_counter()
        try:
            state = lbfgs_step(objective, state, gtol)
        except BemError as e:
            history.stop_reason = f"{type(e).__name__}: {e}"
            step_logger.log(f"Stopping at iteration {iteration}: {history.stop_reason}")
            break
        if state.iteration < iteration:
            history.stop_reason = "converged"
            break
        ev = objective.evaluate(state.x)
        cold = [fs.cold_iterations for fs in ev.solves]
        record = IterationRecord(
            iteration=iteration,
            loss=ev.loss,
            grad_norm=float(np.max(np.abs(ev.grad))),
            params=[float(v) for v in state.x],
            solver_iterations=ev.solver_iterations,
            cold_iterations=cold if any(c is not None for c in cold) else None,
            adjoint_iterations=ev.gradient.adjoint_iterations,
            wall_time=time.perf_counter() - started,
        )
        history.records.append(record)
        step_logger.record(record)
        step_logger.log(f"Iteration {iteration}: loss {ev.loss:.6e}, |grad|inf {record.grad_norm:.3e}")
        _snapshot(run_dir, deform(base, params.with_values(state.x)), iteration)
        if state.converged:
            history.stop_reason = "converged"
            break

    history.final = objective.evaluate(state.x)
    history.final_mesh = deform(base, params.with_values(state.x))
    step_logger.log(f"Finished ({history.stop_reason}): loss {history.initial.loss:.6e} -> {history.final.loss:.6e}")
    return history.final_mesh, history
