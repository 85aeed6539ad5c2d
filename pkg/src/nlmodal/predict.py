"""Forced frequency responses synthesized from an identified backbone.

A single nonlinear-modal oscillator with amplitude-dependent frequency,
damping ratio and mass-normalized shape carries the resonant dynamics:

    [-W^2 + 2 i W w(a) z(a) + w(a)^2] a exp(i theta_m) = phi1(a)^H f1

For each amplitude covered by the backbone the magnitude balance is a
quadratic in W^2 solved in closed form; the modal phase lag theta_m
follows from the complex balance and equals pi/2 at phase resonance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator


class PredictError(ValueError):
    """Backbone data unusable for interpolation, or evaluation out of range."""


@dataclass(frozen=True)
class ModalFunctions:
    """Monotone piecewise-cubic interpolants of the modal properties
    versus modal amplitude (internally over log amplitude)."""

    knots: np.ndarray
    _omega: PchipInterpolator
    _zeta: PchipInterpolator
    _phi_re: PchipInterpolator
    _phi_im: PchipInterpolator

    @property
    def a_min(self) -> float:
        return float(self.knots[0])

    @property
    def a_max(self) -> float:
        return float(self.knots[-1])

    def _check(self, a):
        a = np.asarray(a, dtype=float)
        if np.any(a < self.a_min * (1 - 1e-12)) or np.any(a > self.a_max * (1 + 1e-12)):
            raise PredictError(
                f"amplitude outside the identified range "
                f"[{self.a_min:.3e}, {self.a_max:.3e}]; no extrapolation")
        return np.clip(np.log(a), math.log(self.a_min), math.log(self.a_max))

    def omega(self, a):
        return self._omega(self._check(a))

    def zeta(self, a):
        return self._zeta(self._check(a))

    def phi1(self, a):
        la = self._check(a)
        return self._phi_re(la) + 1j * self._phi_im(la)


def fit_backbone_functions(backbone) -> ModalFunctions:
    """Interpolate (omega, zeta, phi1) versus amplitude from backbone points.

    ``backbone`` is a :class:`~nlmodal.pll.Backbone`, or any iterable of
    points with ``a``, ``omega``, ``zeta`` and ``phi1`` attributes
    (identified points and harmonic-balance solutions both qualify).
    Duplicate amplitudes are collapsed by averaging.  At least 4 valid
    points are required; extrapolation beyond the covered amplitudes is
    refused at evaluation time.
    """
    points = getattr(backbone, "valid_points", backbone)
    points = [p for p in points if p is not None]
    if len(points) < 4:
        raise PredictError("need at least 4 valid backbone points")
    a = np.array([p.a for p in points], dtype=float)
    om = np.array([p.omega for p in points], dtype=float)
    ze = np.array([p.zeta for p in points], dtype=float)
    phi = np.stack([np.asarray(p.phi1, dtype=complex) for p in points])
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(om))
            and np.all(np.isfinite(ze)) and np.all(np.isfinite(phi))):
        raise PredictError("backbone contains non-finite values")
    if np.any(a <= 0):
        raise PredictError("amplitudes must be positive")

    order = np.argsort(a)
    a, om, ze, phi = a[order], om[order], ze[order], phi[order]
    # collapse duplicates (within float identity of the amplitude)
    uniq_a, inverse = np.unique(a, return_inverse=True)
    if len(uniq_a) != len(a):
        om = np.array([om[inverse == i].mean() for i in range(len(uniq_a))])
        ze = np.array([ze[inverse == i].mean() for i in range(len(uniq_a))])
        phi = np.stack([phi[inverse == i].mean(axis=0) for i in range(len(uniq_a))])
        a = uniq_a
    if len(a) < 4:
        raise PredictError("need at least 4 distinct amplitudes")
    la = np.log(a)
    return ModalFunctions(
        knots=a,
        _omega=PchipInterpolator(la, om),
        _zeta=PchipInterpolator(la, ze),
        _phi_re=PchipInterpolator(la, phi.real, axis=0),
        _phi_im=PchipInterpolator(la, phi.imag, axis=0))


@dataclass(frozen=True)
class FrfPoint:
    """One steady-state forced-response point of the modal oscillator."""

    Omega: float
    a: float
    theta_m: float
    sensor_amps: np.ndarray
    branch: str


@dataclass
class FrfCurve:
    """Synthesized forced response at one excitation level."""

    points: list[FrfPoint]
    f1_exc: np.ndarray
    omega_ref: float

    def branch(self, name: str) -> list[FrfPoint]:
        return [p for p in self.points if p.branch == name]

    def peak(self, sensor: int) -> tuple[float, float]:
        """(Omega, amplitude) of the maximum response at a sensor."""
        amps = [p.sensor_amps[sensor] for p in self.points]
        i = int(np.argmax(amps))
        return self.points[i].Omega, float(amps[i])

    def to_csv(self, path) -> None:
        n_sens = len(self.points[0].sensor_amps) if self.points else 0
        cols = ["a", "Omega_rad_s", "Omega_norm", "theta_m_rad", "branch"]
        cols += [f"sens{i}_amp_m" for i in range(n_sens)]
        lines = [",".join(cols)]
        for p in self.points:
            row = [repr(float(p.a)), repr(float(p.Omega)),
                   repr(float(p.Omega / self.omega_ref)),
                   repr(float(p.theta_m)), p.branch]
            row += [repr(float(v)) for v in p.sensor_amps]
            lines.append(",".join(row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def synthesize_frf(mf: ModalFunctions, f1_exc: np.ndarray,
                   drive_sensor: int, grid_per_knot: int = 10,
                   omega_ref: float | None = None) -> FrfCurve:
    """Solve the modal oscillator for the forced response at one level.

    ``f1_exc`` is the complex fundamental force vector over the sensors,
    nonzero only at ``drive_sensor`` (single-point forcing).  For each
    amplitude on a dense grid the magnitude balance is solved explicitly
    for ``W^2``; amplitudes without a real positive root are unreachable
    at this level and are skipped.  Points are ordered into a continuous
    sweep: the low-frequency branch with rising amplitude, then the
    high-frequency branch with falling amplitude.
    """
    f1_exc = np.asarray(f1_exc, dtype=complex)
    mask = np.abs(f1_exc) > 0
    if not mask[drive_sensor] or np.any(mask & (np.arange(len(f1_exc)) != drive_sensor)):
        raise PredictError("force vector must be nonzero exactly at the drive sensor")

    n_grid = max(4, grid_per_knot * len(mf.knots))
    grid = np.geomspace(mf.a_min, mf.a_max, n_grid)
    low: list[FrfPoint] = []
    high: list[FrfPoint] = []
    for a in grid:
        p = complex(np.vdot(mf.phi1(a), f1_exc))  # phi1^H f
        R = abs(p) / a
        om = float(mf.omega(a))
        ze = float(mf.zeta(a))
        om2 = om * om
        disc = om2 * om2 * ((1 - 2 * ze * ze) ** 2 - 1) + R * R
        if disc < 0:
            continue
        root = math.sqrt(disc)
        base = om2 * (1 - 2 * ze * ze)
        for sign, name in ((-1.0, "low"), (1.0, "high")):
            u = base + sign * root
            if u <= 0:
                continue
            Om = math.sqrt(u)
            theta_m = math.atan2(2 * ze * om * Om, om2 - u)
            amps = a * np.abs(mf.phi1(a))
            pt = FrfPoint(Omega=Om, a=float(a), theta_m=theta_m,
                          sensor_amps=amps, branch=name)
            (low if name == "low" else high).append(pt)
        if disc == 0.0:
            high.pop()  # fold point: both roots coincide, keep one
    if not low and not high:
        raise PredictError("no reachable amplitude at this excitation level")
    points = sorted(low, key=lambda q: q.a) + sorted(high, key=lambda q: -q.a)
    return FrfCurve(points=points, f1_exc=f1_exc,
                    omega_ref=omega_ref or float(mf.omega(mf.a_min)))
