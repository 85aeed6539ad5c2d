import math

import numpy as np
import pytest

from nlmodal.structure import StructuralModel, build_beam_model, default_rig_config


def make_sdof(omega: float = 2 * math.pi * 10.0, zeta: float = 0.0,
              mass: float = 1.0) -> StructuralModel:
    """Single-DOF oscillator as a degenerate structural model."""
    m = np.array([[mass]])
    k = np.array([[mass * omega**2]])
    c = np.array([[2.0 * zeta * omega * mass]])
    return StructuralModel(
        mass=m, stiffness=k, viscous_damping=c, friction_elements=(),
        sensor_dofs=(0,), drive_dof=0, translational_dofs=(0,), node_x=(1.0,))


def make_2dof(zetas=(0.01, 0.02)) -> StructuralModel:
    import scipy.linalg as sla
    m = np.diag([1.0, 2.0])
    k = np.array([[300.0, -100.0], [-100.0, 200.0]])
    lam, V = sla.eigh(k, m)
    om = np.sqrt(lam)
    c = m @ V @ np.diag(2.0 * np.asarray(zetas) * om) @ V.T @ m
    return StructuralModel(
        mass=m, stiffness=k, viscous_damping=c, friction_elements=(),
        sensor_dofs=(0, 1), drive_dof=1, translational_dofs=(0, 1),
        node_x=(0.5, 1.0))


@pytest.fixture(scope="session")
def default_model():
    return build_beam_model(default_rig_config())


@pytest.fixture(scope="session")
def stuck_model():
    return build_beam_model(default_rig_config(stuck_linear=True))
