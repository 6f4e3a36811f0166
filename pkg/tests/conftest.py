import os
import sys

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from bem_core import BoundaryCondition, WaveConfig, incident_plane_wave
from mesh import make_icosphere, make_radiator


@pytest.fixture(scope="session")
def sphere80():
    return make_icosphere(1, 1.0)


@pytest.fixture(scope="session")
def sphere320():
    return make_icosphere(2, 1.0)


@pytest.fixture(scope="session")
def radiator():
    """Closed 80-element cone, front cap (tag 1) driven."""
    return make_radiator(0.3, 0.05, 0.15, 4, 8)


def plane_wave(k, **kwargs):
    return WaveConfig(k, incident=incident_plane_wave([0.0, 0.0, 1.0], 1.0, k), **kwargs)


def piston(mesh, k, **kwargs):
    velocity = np.where(mesh.tags == 1, 1.0, 0.0)
    return WaveConfig(k, bc=BoundaryCondition.NEUMANN_RADIATION, velocity=velocity, **kwargs)
