"""Modal property identification from recorded periodic motions.

Extracts complex Fourier coefficients from steady-state records, and
from them the amplitude-dependent modal properties: modal amplitude via
the pseudoinverse mass-metric built from low-level linear mode shapes,
modal damping ratio from the balance of active excitation power and
dissipated power, deflection-shape projections onto the linear modes,
and total harmonic distortion.

Fourier convention: ``x(t) = Re sum_n x_n exp(i n W t)`` with complex
peak amplitudes ``x_n`` for n >= 1 and real mean ``x_0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .structure import LinearModeSet


class IdentifyError(ValueError):
    """Identification precondition violated or result undefined."""


# ---------------------------------------------------------------------------
# harmonic decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HarmonicSet:
    """Complex Fourier coefficients per channel at a known fundamental.

    ``coeffs[c, n]`` is the coefficient of harmonic ``n`` (0..H) of
    channel ``channel_names[c]``; the n=0 entry is the (real) mean.
    """

    omega: float
    channel_names: tuple[str, ...]
    coeffs: np.ndarray
    n_periods_used: int

    def __post_init__(self):
        if np.any(np.abs(self.coeffs[:, 0].imag) > 0):
            raise IdentifyError("mean coefficient must be real")

    @property
    def n_harmonics(self) -> int:
        return self.coeffs.shape[1] - 1

    def coeff(self, channel: str) -> np.ndarray:
        return self.coeffs[self.channel_names.index(channel)]

    def reconstruct(self, channel: str, t: np.ndarray) -> np.ndarray:
        c = self.coeff(channel)
        x = np.full_like(np.asarray(t, dtype=float), float(c[0].real))
        for n in range(1, len(c)):
            x += (c[n] * np.exp(1j * n * self.omega * t)).real
        return x

    def to_csv(self, path) -> None:
        cols = ["harmonic"]
        for name in self.channel_names:
            cols += [f"re_{name}", f"im_{name}"]
        lines = [",".join(cols)]
        for n in range(self.coeffs.shape[1]):
            row = [str(n)]
            for c in range(len(self.channel_names)):
                row += [repr(float(self.coeffs[c, n].real)),
                        repr(float(self.coeffs[c, n].imag))]
            lines.append(",".join(row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def fourier_of_samples(x: np.ndarray, t: np.ndarray, omega: float, H: int) -> np.ndarray:
    """Trapezoid projection of uniformly sampled ``x(t)`` onto harmonics 0..H.

    The window must span an integer number of periods ``2*pi/omega``
    within one sample.  Phase is referenced to the first sample time.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    n = t.size
    if n < 3:
        raise IdentifyError("window too short")
    dt = (t[-1] - t[0]) / (n - 1)
    T = 2.0 * math.pi / omega
    span = t[-1] - t[0]
    k = round(span / T)
    if k < 1 or abs(span - k * T) > dt * (1 + 1e-9):
        raise IdentifyError(
            f"window spans {span / T:.6g} periods; trim to an integer count")
    if H * omega > math.pi / dt * (1 + 1e-12):
        raise IdentifyError("harmonic content above Nyquist frequency")
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    tau = t - t[0]
    out = np.empty((x.shape[0], H + 1), dtype=complex)
    out[:, 0] = (x @ w) / span
    for h in range(1, H + 1):
        basis = np.exp(-1j * h * omega * tau) * w
        out[:, h] = 2.0 * (x @ basis) / span
    return out


def harmonic_fit(samples: np.ndarray, alpha: np.ndarray, H: int) -> np.ndarray:
    """Least-squares harmonic coefficients of samples at known phases.

    Fits ``c0 + sum_n a_n cos(n alpha) + b_n sin(n alpha)`` and returns
    the complex coefficients ``x_n = a_n - i b_n`` (n = 0..H).  Unlike
    the trapezoid projection this is free of windowing leakage, which
    makes it the right tool for purity checks of signals constructed
    from the reference phase itself.
    """
    alpha = np.asarray(alpha, dtype=float)
    A = np.empty((alpha.size, 2 * H + 1))
    A[:, 0] = 1.0
    for n in range(1, H + 1):
        A[:, 2 * n - 1] = np.cos(n * alpha)
        A[:, 2 * n] = np.sin(n * alpha)
    sol, _, rank, _ = np.linalg.lstsq(A, np.asarray(samples, dtype=float),
                                      rcond=None)
    if rank < A.shape[1]:
        raise IdentifyError("phase samples do not resolve the requested harmonics")
    out = np.empty(H + 1, dtype=complex)
    out[0] = sol[0]
    for n in range(1, H + 1):
        out[n] = sol[2 * n - 1] - 1j * sol[2 * n]
    return out


def fourier_coefficients(record, omega: float, H: int,
                         channels: list[str] | None = None) -> HarmonicSet:
    """Harmonic decomposition of a steady-state record.

    ``record`` is a :class:`~nlmodal.timesim.TimeSeriesRecord`; by
    default all force/motion channels are analyzed (the time, frequency
    and controller channels are skipped).
    """
    if channels is None:
        skip = {"t_s", "omega_rad_s", "alpha_r_rad", "theta_hat_rad"}
        channels = [c for c in record.channel_names if c not in skip]
    t = record["t_s"]
    x = np.stack([record[c] for c in channels])
    coeffs = fourier_of_samples(x, t, omega, H)
    coeffs[:, 0] = coeffs[:, 0].real
    T = 2.0 * math.pi / omega
    return HarmonicSet(omega=float(omega), channel_names=tuple(channels),
                       coeffs=coeffs,
                       n_periods_used=round(float((t[-1] - t[0]) / T)))


# ---------------------------------------------------------------------------
# modal quantities
# ---------------------------------------------------------------------------

def active_power(F1: complex, v1: complex) -> float:
    """Cycle-averaged power of force and velocity fundamentals (peak amplitudes)."""
    return 0.5 * float((F1 * np.conj(v1)).real)


def _shape_matrix(modes) -> np.ndarray:
    if isinstance(modes, LinearModeSet):
        return modes.shapes
    return np.asarray(modes, dtype=float)


def _lstsq_modal(Phi: np.ndarray, x1: np.ndarray) -> np.ndarray:
    y, _, rank, _ = np.linalg.lstsq(Phi, np.asarray(x1, dtype=complex), rcond=1e-10)
    if rank < Phi.shape[1]:
        raise IdentifyError(
            "mode-shape matrix is rank deficient (fewer independent sensors than modes)")
    return y


def modal_amplitude(x1: np.ndarray, modes) -> float:
    """Modal amplitude of a first-harmonic deflection shape.

    Computes ``a^2 = x1^H (Phi^T)^+ (Phi)^+ x1`` with the sensor-restricted
    mass-normalized linear mode shapes Phi, i.e. the Euclidean norm of the
    least-squares modal coordinates of ``x1``.
    """
    Phi = _shape_matrix(modes)
    y = _lstsq_modal(Phi, x1)
    return float(np.linalg.norm(y))


def modal_damping(P1: float, omega: float, a: float) -> float:
    """Damping ratio from the power balance: ``zeta = P1 / (omega^3 a^2)``."""
    if omega <= 0:
        raise IdentifyError("omega must be positive")
    if a <= 0:
        raise IdentifyError("modal damping undefined at zero modal amplitude")
    return float(P1 / (omega**3 * a**2))


def mode_projection(phi1: np.ndarray, modes) -> tuple[np.ndarray, np.ndarray]:
    """Project a deflection shape onto linear modes (least squares).

    Returns the complex modal amplitudes ``Gamma = Phi^+ phi1`` and the
    normalized magnitudes ``|Gamma| / sum |Gamma|`` (entries sum to 1).
    """
    gamma = _lstsq_modal(_shape_matrix(modes), phi1)
    mag = np.abs(gamma)
    s = mag.sum()
    if s == 0:
        raise IdentifyError("zero deflection shape cannot be projected")
    return gamma, mag / s


def thd(harmonics: HarmonicSet, channel: str) -> float:
    """Total harmonic distortion w.r.t. the RMS of harmonics >= 1 (DC excluded)."""
    c = harmonics.coeff(channel)
    if len(c) < 3:
        raise IdentifyError("need harmonics up to at least order 2 for THD")
    total = float(np.sum(np.abs(c[1:])**2))
    if total == 0.0:
        raise IdentifyError("THD undefined for an all-zero harmonic set")
    higher = float(np.sum(np.abs(c[2:])**2))
    return math.sqrt(higher / total)


def _trapezoid_mean(x: np.ndarray) -> float:
    # consistent with the integration rule: end samples carry half weight
    return float((x.sum() - 0.5 * (x[0] + x[-1])) / (len(x) - 1))


def integrate_acceleration(acc: np.ndarray, dt: float) -> np.ndarray:
    """Twice trapezoid-integrate an acceleration signal to displacement.

    Assumes zero-mean acceleration, velocity and displacement over the
    (integer-period) window: the trapezoid mean is removed before each
    integration and from the result.
    """
    acc = np.asarray(acc, dtype=float)
    vel = cumulative_trapezoid(acc - _trapezoid_mean(acc), dx=dt, initial=0.0)
    disp = cumulative_trapezoid(vel - _trapezoid_mean(vel), dx=dt, initial=0.0)
    return disp - _trapezoid_mean(disp)


# ---------------------------------------------------------------------------
# backbone point extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackbonePoint:
    """One identified point of the nonlinear mode."""

    omega: float
    zeta: float
    a: float
    phi1: np.ndarray
    harmonics: HarmonicSet
    F1: float
    P1: float
    thd_response: float
    gamma_stuck: np.ndarray
    gamma_stuck_norm: np.ndarray
    gamma_free: np.ndarray
    gamma_free_norm: np.ndarray
    warnings: tuple[str, ...] = ()

    @property
    def sensor_amplitudes(self) -> np.ndarray:
        return self.a * np.abs(self.phi1)


def extract_backbone_point(record, modes_stuck: LinearModeSet,
                           modes_free: LinearModeSet, H: int = 7,
                           response_channel: str = "drive_acc_m_s2",
                           from_measured_acceleration: bool = False) -> BackbonePoint:
    """Identify modal properties from one locked steady-state record.

    The modal frequency is the mean of the recorded instantaneous
    excitation frequency.  Harmonic coefficients are phase-referenced
    to the excitation force (the force fundamental is rotated to be
    real positive).  With ``from_measured_acceleration`` the sensor
    displacements and the drive-point velocity are reconstructed from
    the acceleration channels by trapezoid integration instead of using
    the simulated states directly.
    """
    omega = float(np.mean(record["omega_rad_s"]))
    n_sens = sum(1 for c in record.channel_names if c.startswith("sens")
                 and c.endswith("_disp_m"))
    disp_channels = [f"sens{i}_disp_m" for i in range(n_sens)]
    acc_channels = [f"sens{i}_acc_m_s2" for i in range(n_sens)]

    if from_measured_acceleration:
        work = record.copy()
        dt = record.dt
        for dc, ac in zip(disp_channels, acc_channels):
            work.channels[dc] = integrate_acceleration(record[ac], dt)
        acc_d = record["drive_acc_m_s2"]
        vel = cumulative_trapezoid(acc_d - _trapezoid_mean(acc_d), dx=dt,
                                   initial=0.0)
        work.channels["drive_vel_m_s"] = vel - _trapezoid_mean(vel)
        record = work

    hs = fourier_coefficients(record, omega, H)
    F1_raw = hs.coeff("force_n")[1]
    if abs(F1_raw) == 0:
        raise IdentifyError("zero excitation force fundamental")
    psi = np.angle(F1_raw)
    rot = np.exp(-1j * psi * np.arange(hs.coeffs.shape[1]))
    coeffs = hs.coeffs * rot
    coeffs[:, 0] = coeffs[:, 0].real
    hs = HarmonicSet(omega=hs.omega, channel_names=hs.channel_names,
                     coeffs=coeffs, n_periods_used=hs.n_periods_used)

    x1 = np.array([hs.coeff(c)[1] for c in disp_channels])
    if not np.any(np.abs(x1) > 0):
        raise IdentifyError("zero response: no deflection content at sensors")
    a = modal_amplitude(x1, modes_stuck)
    if a == 0.0:
        raise IdentifyError("zero modal amplitude in the linear-mode span")
    phi1 = x1 / a
    F1 = abs(F1_raw)
    P1 = active_power(F1, hs.coeff("drive_vel_m_s")[1])
    zeta = modal_damping(P1, omega, a)
    warnings = ()
    if zeta < 0:
        warnings = ("negative damping ratio: active power flows out at the "
                    "drive point (mode isolation suspect)",)
    g_st, g_st_n = mode_projection(phi1, modes_stuck)
    g_fr, g_fr_n = mode_projection(phi1, modes_free)
    return BackbonePoint(
        omega=omega, zeta=zeta, a=a, phi1=phi1, harmonics=hs, F1=F1, P1=P1,
        thd_response=thd(hs, response_channel),
        gamma_stuck=g_st, gamma_stuck_norm=g_st_n,
        gamma_free=g_fr, gamma_free_norm=g_fr_n,
        warnings=warnings)
