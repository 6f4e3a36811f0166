"""
Differentiable BEM - Console Demo Mode

Walks through the whole pipeline on meshes small enough to run in a few
seconds: a rigid-sphere solve checked against the Mie series, an adjoint
gradient checked against finite differences, and a short directivity
optimisation of a conical radiator.
"""

import os
import sys

import numpy as np

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from bem_core import BoundaryCondition, WaveConfig, incident_plane_wave
from cli import sphere_scattering_error
from field_io import fibonacci_sphere
from logger import StepLogger
from loss import DirectivityLoss, LossSpec
from mesh import ShapeParams, make_icosphere, make_radiator
from optimize import ShapeObjective, run_optimization, wavenumber
from shape_diff import fd_gradient
from solver import SolveConfig


class DemoRunner:
    """Console walkthrough; every stage reports through one StepLogger."""

    def __init__(self):
        self.logger = StepLogger()
        self.solve_cfg = SolveConfig(tol=1e-10)

    def banner(self, title):
        self.logger.log("=" * 60)
        self.logger.log(title)
        self.logger.log("=" * 60)

    def sphere(self, k=2.0):
        self.banner(f"Rigid sphere, plane wave, k = {k}")
        points = fibonacci_sphere(50, 2.0)
        for level in (0, 1, 2):
            mesh = make_icosphere(level, 1.0)
            wave = WaveConfig(k, incident=incident_plane_wave([0.0, 0.0, 1.0], 1.0, k))
            error, solution = sphere_scattering_error(mesh, wave, points, self.solve_cfg)
            self.logger.log(f"N = {mesh.n_elements:5d}: mean abs error {error:.3e}, {solution.iterations} GMRES iterations")

    def _radiator_objective(self, frequencies, n_knots=4):
        base = make_radiator(0.3, 0.05, 0.15, 4, 8)
        params = ShapeParams.uniform(base, n_knots, lower=-0.04, upper=0.04)
        velocity = np.where(base.tags == 1, 1.0, 0.0)
        wave = WaveConfig(wavenumber(frequencies[0], 343.0), bc=BoundaryCondition.NEUMANN_RADIATION, velocity=velocity)
        loss = DirectivityLoss(LossSpec(frequencies, step_deg=5.0))
        return base, params, wave, loss

    def gradient(self):
        self.banner("Adjoint gradient vs central finite differences")
        base, params, wave, loss = self._radiator_objective((1500.0,))
        objective = ShapeObjective(base, params, wave, loss, self.solve_cfg, warm_start=False)
        adjoint = objective.evaluate(params.values).grad
        fd = fd_gradient(objective.value, params, 1e-6)
        for j, (a, f) in enumerate(zip(adjoint, fd)):
            self.logger.log(f"ds_{j}: adjoint {a:+.6e}  fd {f:+.6e}  rel {abs(a - f) / max(abs(f), 1e-30):.1e}")

    def optimise(self, iterations=3):
        self.banner(f"Directivity optimisation, {iterations} L-BFGS iterations")
        base, params, wave, loss = self._radiator_objective((1000.0, 2000.0))
        _, history = run_optimization(base, params, wave, loss, iterations, self.solve_cfg, step_logger=self.logger)
        self.logger.log(f"Stopped: {history.stop_reason}")


def main():
    print("Differentiable Acoustic BEM - Demo Mode")
    print("No files are written; see cli.py for batch runs\n")
    demo = DemoRunner()
    demo.sphere()
    demo.gradient()
    demo.optimise()
    print("\nDemo complete.")


if __name__ == "__main__":
    main()
