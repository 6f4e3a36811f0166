"""
Batch front end.

    python cli.py <validate-sphere|grad-check|solve|optimize|mie> --config run.toml
                  [--out dir] [--threads n] [--precision f64]

Exit codes: 0 success, 2 acceptance failure, 3 numerical failure,
4 configuration error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from analytic import MieConfig, mie_scattered, mie_scattering_cross_section, series_length
from bem_core import BoundaryCondition, Formulation, WaveConfig, assemble, evaluate_potential, locate_resonance
from config import MAX_GRAD_CHECK_ELEMENTS, RunConfig, load_config
from errors import AcceptanceError, BemError, ConfigError
from field_io import (
    fibonacci_sphere,
    write_directivity_csv,
    write_field_csv,
    write_table,
    write_vtk_structured_points,
)
from logger import StepLogger
from loss import DirectivityLoss
from mesh import Mesh, classify_pairs, make_icosphere, write_obj
from optimize import ShapeObjective, run_optimization, wavenumber
from shape_diff import fd_gradient
from solver import SolveConfig, gmres_solve

logger = logging.getLogger(__name__)


class RunSummary(BaseModel):
    command: str
    status: str = "ok"
    config: dict
    results: dict = {}
    timings: Dict[str, float] = {}


def sphere_scattering_error(mesh: Mesh, wave: WaveConfig, points, solve_cfg: SolveConfig, radius: float = 1.0,
                            threads: int = 1):
    """Mean |p_bem - p_mie| of the scattered field at `points`; returns (error, solution)."""
    classes = classify_pairs(mesh, symmetry=wave.symmetry)
    A = assemble(mesh, wave, classes, threads=threads)
    solution = gmres_solve(A, A.rhs, solve_cfg)
    p = evaluate_potential(mesh, wave, solution, points, threads)
    mie = MieConfig(radius, wave.k, amplitude=wave.incident.amplitude, direction=wave.incident.direction)
    return float(np.mean(np.abs(p - mie_scattered(mie, points)))), solution


def cmd_validate_sphere(cfg: RunConfig, out: Path, threads: int, step_logger: StepLogger) -> dict:
    cfg.require("validate_")
    v = cfg.validate_
    if cfg.wave.bc is not BoundaryCondition.RIGID_SCATTERING:
        raise ConfigError("validate-sphere compares rigid scattering only")
    solve_cfg = cfg.solver.build()
    points = fibonacci_sphere(v.n_points, v.eval_radius)

    def error_at(mesh, k, formulation):
        wave = cfg.wave.build(mesh, k, cfg.seed, formulation)
        return sphere_scattering_error(mesh, wave, points, solve_cfg, v.radius, threads)

    rows, timings = [], []
    errors = {}
    for level in v.subdivisions:
        mesh = make_icosphere(level, v.radius)
        for k in v.k:
            started = time.perf_counter()
            error, solution = error_at(mesh, k, v.formulation)
            elapsed = time.perf_counter() - started
            errors[(level, k)] = error
            rows.append((mesh.n_elements, float(k), error, solution.iterations))
            timings.append((mesh.n_elements, float(k), f"{elapsed:.3f}"))
            step_logger.log(f"N={mesh.n_elements} k={k:g}: mean abs error {error:.3e} ({solution.iterations} iterations)")
    write_table(out / "errors.csv", ("N", "k", "mean_abs_error", "solve_iters"), rows)
    write_table(out / "timings.csv", ("N", "k", "wall_time"), timings)

    failures = []
    for level, limit in zip(v.subdivisions, v.max_error):
        failures += [f"error {errors[(level, k)]:.3e} > {limit:g} at level {level}, k={k:g}"
                     for k in v.k if errors[(level, k)] > limit]
    if v.require_decreasing:
        for k in v.k:
            series = [errors[(level, k)] for level in v.subdivisions]
            if any(b >= a for a, b in zip(series, series[1:])):
                failures.append(f"error does not decrease with refinement at k={k:g}: {series}")

    results = {"errors": [list(r) for r in rows]}
    if v.resonance_k is not None:
        results["resonance"] = _resonance_check(cfg, error_at, out, threads, step_logger, failures)
    if failures:
        raise AcceptanceError("; ".join(failures))
    return results


def _resonance_check(cfg: RunConfig, error_at, out, threads, step_logger, failures) -> dict:
    """
    Locates the discrete interior resonance near resonance_k, then compares
    each formulation's error there against its error at reference_k.
    """
    v = cfg.validate_
    mesh = make_icosphere(max(v.subdivisions), v.radius)
    wave = cfg.wave.build(mesh, v.resonance_k, cfg.seed, Formulation.CONVENTIONAL)
    k_star, sigma = locate_resonance(
        mesh, wave, classify_pairs(mesh, symmetry=wave.symmetry),
        v.resonance_k - v.resonance_bracket, v.resonance_k + v.resonance_bracket, v.resonance_xatol, threads,
    )
    step_logger.log(f"Discrete resonance at k={k_star:.8g} (conventional sigma_min {sigma:.2e})")
    ratios, rows = {"k": k_star, "sigma_min": sigma}, []
    for formulation in (Formulation.BURTON_MILLER, Formulation.CONVENTIONAL):
        reference, _ = error_at(mesh, v.reference_k, formulation)
        at_resonance, _ = error_at(mesh, k_star, formulation)
        ratios[formulation.value] = at_resonance / reference
        rows.append((formulation.value, k_star, reference, at_resonance, at_resonance / reference))
        step_logger.log(f"{formulation.value}: resonance/reference error ratio {at_resonance / reference:.3g}")
    write_table(out / "resonance.csv", ("formulation", "k", "reference_error", "resonance_error", "ratio"), rows)
    if ratios["burton_miller"] > v.burton_miller_max_ratio:
        failures.append(f"Burton-Miller error grows {ratios['burton_miller']:.3g}x at resonance")
    if v.conventional_min_ratio is not None and ratios["conventional"] <= v.conventional_min_ratio:
        failures.append(f"conventional error grows only {ratios['conventional']:.3g}x at resonance")
    return ratios


def _objective(cfg: RunConfig, threads: int, **kwargs):
    cfg.require("mesh", "loss")
    base = cfg.mesh.build()
    params = cfg.shape.build(base, cfg.mesh.quadrant)
    spec = cfg.loss.build()
    wave = cfg.wave.build(base, wavenumber(spec.frequencies[0], cfg.wave.c), cfg.seed)
    objective = ShapeObjective(base, params, wave, DirectivityLoss(spec), cfg.solver.build(), threads=threads, **kwargs)
    return base, params, objective


def cmd_grad_check(cfg: RunConfig, out: Path, threads: int, step_logger: StepLogger) -> dict:
    cfg.require("grad_check")
    check = cfg.grad_check
    base, params, objective = _objective(cfg, threads, warm_start=False)
    if base.n_elements > MAX_GRAD_CHECK_ELEMENTS:
        raise ConfigError(f"grad-check mesh has {base.n_elements} elements; at most {MAX_GRAD_CHECK_ELEMENTS}")
    step_logger.log(f"Gradient check: {base.n_elements} elements, {params.size} parameters, h={check.h:g}")

    rows, worst = [], 0.0
    if params.size:
        adjoint = objective.evaluate(params.values).grad
        fd = fd_gradient(objective.value, params, check.h)
        scale = np.max(np.abs(fd))
        for j, (a, f) in enumerate(zip(adjoint, fd)):
            checked = abs(f) >= check.floor * scale
            rel = abs(a - f) / abs(f) if checked else float("nan")
            if checked:
                worst = max(worst, rel)
            rows.append((j, float(a), float(f), float(rel), "yes" if checked else "no"))
    write_table(out / "grad_check.csv", ("param", "adjoint", "finite_difference", "rel_error", "checked"), rows)
    step_logger.log(f"Worst relative error {worst:.3e} over {len(rows)} components")
    if worst >= check.rel_tol:
        raise AcceptanceError(f"adjoint gradient differs from finite differences by {worst:.3e} (tol {check.rel_tol:g})")
    return {"max_rel_error": worst, "parameters": params.size}


def cmd_solve(cfg: RunConfig, out: Path, threads: int, step_logger: StepLogger) -> dict:
    cfg.require("mesh", "points")
    mesh = cfg.mesh.build()
    wave = cfg.wave.build(mesh, seed=cfg.seed)
    timings = {}

    started = time.perf_counter()
    classes = classify_pairs(mesh, symmetry=wave.symmetry)
    A = assemble(mesh, wave, classes, threads=threads)
    timings["assemble"] = time.perf_counter() - started
    step_logger.log(f"Assembled {A.entries.shape[0]}x{A.n} {wave.formulation.value} system at k={wave.k:g}")

    started = time.perf_counter()
    solution = gmres_solve(A, A.rhs, cfg.solver.build())
    timings["solve"] = time.perf_counter() - started
    step_logger.log(f"GMRES: {solution.iterations} iterations, residual {solution.residual_norm:.2e}")

    started = time.perf_counter()
    points = cfg.points.build()
    field = evaluate_potential(mesh, wave, solution, points, threads)
    timings["evaluate"] = time.perf_counter() - started

    write_field_csv(out / "field.csv", points, field)
    if cfg.points.grid is not None:
        write_vtk_structured_points(out / "field.vtk", cfg.points.grid.build(), field)
    return {
        "k": wave.k,
        "N": mesh.n_elements,
        "residual": solution.residual_norm,
        "iterations": solution.iterations,
        "residual_history": solution.history,
        "timings": timings,
    }


def cmd_optimize(cfg: RunConfig, out: Path, threads: int, step_logger: StepLogger) -> dict:
    opt = cfg.optimize
    base, params, objective = _objective(cfg, threads, audit_cold_start=opt.audit_cold_start)
    loss = objective.loss
    step_logger.log(f"Optimising {params.size} parameters on {base.n_elements} elements, "
                    f"{len(loss.frequencies)} frequencies, K={opt.iterations}")
    final_mesh, history = run_optimization(
        base, params, objective.wave, loss, opt.iterations, run_dir=out, step_logger=step_logger,
        gtol=opt.gtol, memory=opt.memory, objective=objective,
    )
    write_obj(final_mesh, out / "final.obj")

    initial = history.initial or objective.evaluate(params.values, gradient=False)
    planes, angles = loss.layout.planes, loss.layout.angles
    write_directivity_csv(out / "directivity_initial.csv", loss.frequencies, angles, planes,
                          loss.directivity(initial.fields))
    results = {"initial_loss": initial.loss, "stop_reason": history.stop_reason, "iterations": len(history.records)}
    if history.records:
        write_directivity_csv(out / "directivity_final.csv", loss.frequencies, angles, planes,
                              loss.directivity(history.final.fields))
        results.update(final_loss=history.final.loss, losses=history.losses,
                       final_params=[float(v) for v in history.final.values])
    return results


def cmd_mie(cfg: RunConfig, out: Path, threads: int, step_logger: StepLogger) -> dict:
    cfg.require("mie", "points")
    m = cfg.mie
    direction = np.asarray(m.direction, dtype=float)
    mie = MieConfig(m.a, m.k, m.n_terms, m.amplitude, direction / np.linalg.norm(direction))
    points = cfg.points.build()
    field = mie_scattered(mie, points)
    order = series_length(mie, float(np.linalg.norm(points, axis=1).min()))
    step_logger.log(f"Mie series at ka={m.k * m.a:g}: order {order}, {len(points)} points")
    write_field_csv(out / "field.csv", points, field)
    if cfg.points.grid is not None:
        write_vtk_structured_points(out / "field.vtk", cfg.points.grid.build(), field)
    return {"order": order, "cross_section": mie_scattering_cross_section(mie)}


COMMANDS = {
    "validate-sphere": cmd_validate_sphere,
    "grad-check": cmd_grad_check,
    "solve": cmd_solve,
    "optimize": cmd_optimize,
    "mie": cmd_mie,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="Differentiable acoustic BEM runs")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--precision", choices=("f64", "f32"), default="f64")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO)
    args = build_parser().parse_args(argv)
    out = args.out
    summary = None
    try:
        if args.precision != "f64":
            raise ConfigError("only f64 precision is supported; f32 is reserved")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config)
        out = Path(out or cfg.out or Path("runs") / args.command)
        out.mkdir(parents=True, exist_ok=True)
        summary = RunSummary(command=args.command, config=cfg.model_dump(mode="json", by_alias=True))
        step_logger = StepLogger(out / "journal.jsonl" if args.command == "optimize" else None)
        started = time.perf_counter()
        summary.results = COMMANDS[args.command](cfg, out, args.threads, step_logger)
        summary.timings["total"] = time.perf_counter() - started
        return 0
    except BemError as e:
        logger.error(f"{args.command} failed: {e}")
        if summary is not None:
            summary.status = type(e).__name__
            summary.results["error"] = str(e)
        return e.exit_code
    finally:
        if summary is not None:
            (out / "summary.json").write_text(summary.model_dump_json(indent=2) + "\n")


if __name__ == "__main__":
    sys.exit(main())
