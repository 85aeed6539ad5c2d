"""Virtual nonlinear modal testing of a friction-damped cantilever beam.

The package simulates a phase-locked-loop force-appropriation experiment
on an FE beam with a dry-friction contact, identifies amplitude-dependent
modal properties (frequency, damping ratio, deflection shape) from the
recorded periodic motions, cross-checks them against a direct
harmonic-balance computation of the damped nonlinear mode, and predicts
forced frequency responses from the identified backbone.
"""

from .structure import (
    ContactConfig,
    JenkinsElement,
    LinearModeSet,
    ModelError,
    RigConfig,
    StructuralModel,
    build_beam_model,
    default_rig_config,
    jenkins_update,
    linear_modes,
    load_rig_config,
)

__version__ = "0.1.0"

__all__ = [
    "ContactConfig",
    "JenkinsElement",
    "LinearModeSet",
    "ModelError",
    "RigConfig",
    "StructuralModel",
    "build_beam_model",
    "default_rig_config",
    "jenkins_update",
    "linear_modes",
    "load_rig_config",
    "__version__",
]
