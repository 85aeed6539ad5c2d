"""Virtual test rig: FE cantilever with a dry-friction contact.

Builds the structural matrices of an Euler-Bernoulli cantilever beam
(2 DOFs per node, consistent mass, root clamped), attaches one or more
Jenkins elements (serial spring + Coulomb slider to ground) at chosen
nodes, and provides linear modal analysis for the two linear limit
cases of the contact: fully stuck (slider replaced by its spring) and
free (contact removed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cholesky, eigh


class ModelError(ValueError):
    """Invalid rig configuration or defective structural model."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactConfig:
    """One friction contact: Jenkins element between a beam node and ground."""

    node: int
    tangential_stiffness_n_m: float
    preload_n: float
    friction_coefficient: float

    @property
    def slip_force_n(self) -> float:
        return self.friction_coefficient * self.preload_n


# Tuned default contact: total tangential stiffness placing the stuck
# first bending mode at 111.30 Hz, split over four parallel Jenkins
# elements with slip onsets staggered a factor 5 apart in displacement
# (distributed micro-slip; a single stiff element makes the stick-slip
# knee a near-vertical segment of the backbone).
DEFAULT_CONTACT_STIFFNESS_TOTAL = 8.4947e7
DEFAULT_CONTACT_NODE = 5
DEFAULT_SLIP_ONSETS_M = (4e-8, 2e-7, 1e-6, 5e-6)
DEFAULT_FRICTION_COEFFICIENT = 0.3

DEFAULT_CONTACTS = tuple(
    ContactConfig(
        node=DEFAULT_CONTACT_NODE,
        tangential_stiffness_n_m=DEFAULT_CONTACT_STIFFNESS_TOTAL / 4.0,
        preload_n=(DEFAULT_CONTACT_STIFFNESS_TOTAL / 4.0) * u
        / DEFAULT_FRICTION_COEFFICIENT,
        friction_coefficient=DEFAULT_FRICTION_COEFFICIENT)
    for u in DEFAULT_SLIP_ONSETS_M)


@dataclass(frozen=True)
class RigConfig:
    """Geometry, material and contact parameters of the virtual rig.

    Lengths in m, Young's modulus in Pa, density in kg/m^3.  ``height_m``
    is the cross-section dimension orthogonal to the bending motion,
    ``width_m`` the dimension in the motion direction.  ``sections`` may
    override (height, width) per element for non-uniform beams.
    """

    length_m: float = 0.71
    height_m: float = 0.06
    width_m: float = 0.04
    youngs_modulus_pa: float = 210e9
    density_kg_m3: float = 7850.0
    n_elements: int = 14
    contacts: tuple[ContactConfig, ...] = DEFAULT_CONTACTS
    stuck_linear: bool = False
    modal_damping_ratios: tuple[float, ...] = (0.0012, 0.0041, 0.0046)
    sensor_nodes: tuple[int, ...] = (2, 4, 6, 8, 10, 12, 14)
    drive_node: int = 14
    sections: tuple[tuple[float, float], ...] | None = None

    @staticmethod
    def from_dict(data: dict) -> "RigConfig":
        """Build a config from a JSON-style dict, rejecting unknown keys."""
        allowed = set(RigConfig.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ModelError(f"unknown rig config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "contacts" in kwargs:
            contacts = []
            for c in kwargs["contacts"]:
                bad = set(c) - set(ContactConfig.__dataclass_fields__)
                if bad:
                    raise ModelError(f"unknown contact keys: {sorted(bad)}")
                contacts.append(ContactConfig(**c))
            kwargs["contacts"] = tuple(contacts)
        for key in ("modal_damping_ratios", "sensor_nodes"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("sections") is not None:
            kwargs["sections"] = tuple((float(h), float(w))
                                       for h, w in kwargs["sections"])
        return RigConfig(**kwargs)

    def to_dict(self) -> dict:
        d = {
            "length_m": self.length_m,
            "height_m": self.height_m,
            "width_m": self.width_m,
            "youngs_modulus_pa": self.youngs_modulus_pa,
            "density_kg_m3": self.density_kg_m3,
            "n_elements": self.n_elements,
            "contacts": [
                {"node": c.node,
                 "tangential_stiffness_n_m": c.tangential_stiffness_n_m,
                 "preload_n": c.preload_n,
                 "friction_coefficient": c.friction_coefficient}
                for c in self.contacts
            ],
            "stuck_linear": self.stuck_linear,
            "modal_damping_ratios": list(self.modal_damping_ratios),
            "sensor_nodes": list(self.sensor_nodes),
            "drive_node": self.drive_node,
        }
        if self.sections is not None:
            d["sections"] = [list(s) for s in self.sections]
        return d


def load_rig_config(path) -> RigConfig:
    with open(path) as fh:
        return RigConfig.from_dict(json.load(fh))


def default_rig_config(**overrides) -> RigConfig:
    """The tuned default rig (stuck first bending mode at 111.3 Hz)."""
    return replace(RigConfig(), **overrides)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JenkinsElement:
    """Elastic dry-friction element: spring kt in series with a slider.

    The elastic force is ``kt * (u - w)`` with slider position ``w``;
    its magnitude is capped at the slip limit ``fc``.  Instances are
    immutable; :func:`jenkins_update` returns an updated copy.
    """

    dof: int
    kt: float
    fc: float
    w: float = 0.0

    def __post_init__(self):
        if self.kt <= 0.0:
            raise ModelError("Jenkins element needs kt > 0")
        if not self.fc > 0.0:
            raise ModelError("Jenkins element needs fc > 0")


@dataclass(frozen=True)
class StructuralModel:
    """Assembled matrices plus friction elements and instrumentation map.

    ``sensor_dofs`` are indices into the clamped DOF vector (translations
    only), ``drive_dof`` the translational DOF where the shaker force
    acts.  ``node_x`` gives the axial coordinate of each beam node
    (clamped root excluded), aligned with ``translational_dofs``.
    """

    mass: np.ndarray
    stiffness: np.ndarray
    viscous_damping: np.ndarray
    friction_elements: tuple[JenkinsElement, ...]
    sensor_dofs: tuple[int, ...]
    drive_dof: int
    translational_dofs: tuple[int, ...]
    node_x: tuple[float, ...]

    @property
    def n_dof(self) -> int:
        return self.mass.shape[0]

    def __post_init__(self):
        n = self.mass.shape[0]
        for name in ("mass", "stiffness", "viscous_damping"):
            m = getattr(self, name)
            if m.shape != (n, n):
                raise ModelError(f"{name} matrix must be {n}x{n}")
            if not np.allclose(m, m.T, rtol=0, atol=1e-8 * max(1.0, abs(m).max())):
                raise ModelError(f"{name} matrix must be symmetric")
        try:
            cholesky(self.mass)
        except np.linalg.LinAlgError as exc:
            raise ModelError("mass matrix is not positive definite") from exc
        for d in (*self.sensor_dofs, self.drive_dof):
            if d not in self.translational_dofs:
                raise ModelError(f"dof {d} is not a translational DOF")
        for el in self.friction_elements:
            if not 0 <= el.dof < n:
                raise ModelError("friction element dof out of range")

    def stuck_stiffness(self) -> np.ndarray:
        """Stiffness with every Jenkins element replaced by its spring."""
        K = self.stiffness.copy()
        for el in self.friction_elements:
            K[el.dof, el.dof] += el.kt
        return K

    def fresh_friction_states(self) -> np.ndarray:
        return np.array([el.w for el in self.friction_elements], dtype=float)


@dataclass(frozen=True)
class LinearModeSet:
    """Mass-normalized modes of one linear contact limit.

    ``shapes`` is restricted to the sensor DOFs (n_sensors x n_modes);
    ``shapes_full`` covers all DOFs.  Frequencies in rad/s, strictly
    increasing.
    """

    frequencies: np.ndarray
    damping_ratios: np.ndarray
    shapes: np.ndarray
    shapes_full: np.ndarray
    contact_condition: str

    def __post_init__(self):
        if np.any(np.diff(self.frequencies) <= 0):
            raise ModelError("mode frequencies must be strictly increasing")

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    def to_csv(self, path) -> None:
        """One row per sensor DOF, one column per mode, frequencies (Hz) as header."""
        header = "sensor_dof," + ",".join(
            repr(float(f) / (2.0 * math.pi)) for f in self.frequencies)
        lines = [header]
        for i in range(self.shapes.shape[0]):
            lines.append(",".join([str(i)] + [repr(float(v)) for v in self.shapes[i]]))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# beam assembly
# ---------------------------------------------------------------------------

def _element_matrices(E, rho, le, height, width):
    I = height * width**3 / 12.0
    A = height * width
    ke = (E * I / le**3) * np.array([
        [12.0, 6.0 * le, -12.0, 6.0 * le],
        [6.0 * le, 4.0 * le**2, -6.0 * le, 2.0 * le**2],
        [-12.0, -6.0 * le, 12.0, -6.0 * le],
        [6.0 * le, 2.0 * le**2, -6.0 * le, 4.0 * le**2]])
    me = (rho * A * le / 420.0) * np.array([
        [156.0, 22.0 * le, 54.0, -13.0 * le],
        [22.0 * le, 4.0 * le**2, 13.0 * le, -3.0 * le**2],
        [54.0, 13.0 * le, 156.0, -22.0 * le],
        [-13.0 * le, -3.0 * le**2, -22.0 * le, 4.0 * le**2]])
    return ke, me


def build_beam_model(config: RigConfig) -> StructuralModel:
    """Assemble the clamped FE beam with friction contacts attached.

    The beam is discretized with 2-node Euler-Bernoulli elements
    (translation + rotation per node, consistent mass); the root node is
    clamped.  Jenkins elements couple the configured contact nodes'
    translations to ground.  The viscous damping matrix is constructed
    so the stuck-contact linear system has the prescribed modal damping
    ratios (zero for modes beyond the list).

    Raises
    ------
    ModelError
        For non-positive geometry/material values, a contact or sensor
        node outside the beam, or sensors closer than 2 elements.
    """
    if config.n_elements < 8:
        raise ModelError("need at least 8 beam elements")
    for name in ("length_m", "height_m", "width_m",
                 "youngs_modulus_pa", "density_kg_m3"):
        if getattr(config, name) <= 0.0:
            raise ModelError(f"{name} must be positive")
    n_el = config.n_elements
    if config.sections is not None:
        if len(config.sections) != n_el:
            raise ModelError("sections must list one (height, width) per element")
        if any(h <= 0 or w <= 0 for h, w in config.sections):
            raise ModelError("section dimensions must be positive")
        sections = config.sections
    else:
        sections = ((config.height_m, config.width_m),) * n_el

    le = config.length_m / n_el
    n_dof = 2 * n_el  # root node clamped away
    K = np.zeros((2 * (n_el + 1), 2 * (n_el + 1)))
    M = np.zeros_like(K)
    for e, (h, w) in enumerate(sections):
        ke, me = _element_matrices(config.youngs_modulus_pa,
                                   config.density_kg_m3, le, h, w)
        i = 2 * e
        K[i:i + 4, i:i + 4] += ke
        M[i:i + 4, i:i + 4] += me
    K = K[2:, 2:]
    M = M[2:, 2:]

    def trans_dof(node: int) -> int:
        if not 1 <= node <= n_el:
            raise ModelError(f"node {node} outside the beam (1..{n_el})")
        return 2 * (node - 1)

    sensor_nodes = sorted(config.sensor_nodes)
    if any(b - a < 2 for a, b in zip(sensor_nodes, sensor_nodes[1:])):
        raise ModelError("sensors must be at least 2 elements apart")
    sensor_dofs = tuple(trans_dof(n) for n in sensor_nodes)
    drive_dof = trans_dof(config.drive_node)

    elements = []
    for c in config.contacts:
        if c.tangential_stiffness_n_m <= 0:
            raise ModelError("contact tangential stiffness must be positive")
        if c.preload_n <= 0 or c.friction_coefficient <= 0:
            raise ModelError("contact preload and friction coefficient must be positive")
        fc = math.inf if config.stuck_linear else c.slip_force_n
        elements.append(JenkinsElement(dof=trans_dof(c.node),
                                       kt=c.tangential_stiffness_n_m, fc=fc))

    # damping from prescribed stuck-contact modal ratios
    K_stuck = K.copy()
    for el in elements:
        K_stuck[el.dof, el.dof] += el.kt
    lam, V = eigh(K_stuck, M)
    ratios = np.asarray(config.modal_damping_ratios, dtype=float)
    omegas = np.sqrt(np.maximum(lam[:len(ratios)], 0.0))
    C = np.zeros_like(M)
    if len(ratios):
        Phi = V[:, :len(ratios)]
        C = M @ Phi @ np.diag(2.0 * ratios * omegas) @ Phi.T @ M

    node_x = tuple(le * n for n in range(1, n_el + 1))
    return StructuralModel(
        mass=M, stiffness=K, viscous_damping=C,
        friction_elements=tuple(elements),
        sensor_dofs=sensor_dofs, drive_dof=drive_dof,
        translational_dofs=tuple(range(0, n_dof, 2)),
        node_x=node_x)


def analytic_cantilever_frequency_hz(config: RigConfig, mode: int = 1) -> float:
    """Closed-form uniform Euler-Bernoulli cantilever bending frequency."""
    beta_l = (1.8751040687119611, 4.694091132974175, 7.854757438237613)[mode - 1]
    I = config.height_m * config.width_m**3 / 12.0
    A = config.height_m * config.width_m
    return (beta_l**2 / config.length_m**2) * math.sqrt(
        config.youngs_modulus_pa * I / (config.density_kg_m3 * A)) / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# linear modal analysis
# ---------------------------------------------------------------------------

def linear_modes(model: StructuralModel, contact: str = "stuck",
                 n_modes: int = 3) -> LinearModeSet:
    """Solve the generalized eigenproblem of one linear contact limit.

    ``contact='stuck'`` replaces every Jenkins element by its spring,
    ``'free'`` removes the contacts.  Shapes are mass-normalized
    (``Phi^T M Phi = I``) and sign-normalized so the largest-magnitude
    sensor entry is positive.
    """
    if contact == "stuck":
        K = model.stuck_stiffness()
    elif contact == "free":
        K = model.stiffness
    else:
        raise ValueError("contact must be 'stuck' or 'free'")
    try:
        lam, V = eigh(K, model.mass)
    except np.linalg.LinAlgError as exc:
        raise ModelError("eigen-solve failed; model matrices defective") from exc
    lam = lam[:n_modes]
    if np.any(lam <= 0):
        raise ModelError("non-positive eigenvalue; clamped model should be PD")
    shapes_full = V[:, :n_modes].copy()
    sens = list(model.sensor_dofs)
    for j in range(shapes_full.shape[1]):
        col = shapes_full[sens, j]
        if col[np.argmax(np.abs(col))] < 0:
            shapes_full[:, j] = -shapes_full[:, j]
    # damping ratios of this limit: modal projection of the viscous matrix
    zetas = np.array([
        shapes_full[:, j] @ model.viscous_damping @ shapes_full[:, j]
        / (2.0 * math.sqrt(lam[j])) for j in range(n_modes)])
    return LinearModeSet(
        frequencies=np.sqrt(lam),
        damping_ratios=zetas,
        shapes=shapes_full[sens, :].copy(),
        shapes_full=shapes_full,
        contact_condition=contact)


# ---------------------------------------------------------------------------
# friction element
# ---------------------------------------------------------------------------

def jenkins_update(elem: JenkinsElement, u_new: float) -> tuple[float, JenkinsElement]:
    """Advance the Jenkins element to displacement ``u_new``.

    Elastic predictor / slip corrector: the trial force ``kt*(u - w)``
    is returned unchanged while inside the slip limit; otherwise the
    force saturates at ``fc*sign`` and the slider moves so the elastic
    branch ends exactly on the limit.
    """
    f_tr = elem.kt * (u_new - elem.w)
    if abs(f_tr) <= elem.fc:
        return f_tr, elem
    f = math.copysign(elem.fc, f_tr)
    return f, replace(elem, w=u_new - f / elem.kt)


def hysteresis_forces(elem: JenkinsElement, u_history: np.ndarray) -> np.ndarray:
    """March the element through a displacement history, returning forces."""
    f = np.empty_like(u_history)
    e = elem
    for i, u in enumerate(u_history):
        f[i], e = jenkins_update(e, float(u))
    return f


def jenkins_cycle_energy(elem: JenkinsElement, amplitude: float,
                         n_samples: int = 4096, n_cycles: int = 3) -> float:
    """Energy dissipated over one steady harmonic cycle (trapezoid of f du).

    The element is cycled until the loop closes; the last cycle is
    integrated.  For amplitude X above the slip displacement fc/kt the
    closed-form loop area is ``4*fc*(X - fc/kt)``.
    """
    theta = 2.0 * math.pi * np.arange(n_samples * n_cycles + 1) / n_samples
    u = amplitude * np.cos(theta)
    f = hysteresis_forces(elem, u)
    u_last, f_last = u[-n_samples - 1:], f[-n_samples - 1:]
    return float(np.sum(0.5 * (f_last[1:] + f_last[:-1]) * np.diff(u_last)))
