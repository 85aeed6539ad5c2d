"""Phase-locked-loop force appropriation on the virtual rig.

Synchronous (lock-in) phase detection of the fundamental phase lag
between a measured response and the excitation force, PI control of the
excitation frequency toward a phase setpoint, stepped amplitude
schedules for backbone tracking, and a stepped-sine protocol with an
outer force-amplitude control loop.

Phase convention: the setpoint and all reported lags are the
response-minus-force fundamental phase with drive-point *acceleration*
as the response; phase resonance is ``+pi/2``.  Velocity or displacement
detection converts the setpoint internally (each integration shifts the
phase by ``-pi/2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as kn
from .identify import BackbonePoint, IdentifyError, extract_backbone_point, fourier_coefficients
from .structure import LinearModeSet, StructuralModel, linear_modes
from .timesim import (
    ModelArrays,
    SteadyConfig,
    StepFailure,
    SteadyStateTimeout,
    TimeSeriesRecord,
    _PeriodTracker,
    channel_names,
    default_dt,
)


class LockError(RuntimeError):
    """Phase lock not achieved; carries the per-period convergence trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class BackboneError(RuntimeError):
    """Too many levels of an amplitude schedule failed to lock."""


# ---------------------------------------------------------------------------
# configuration and controller state
# ---------------------------------------------------------------------------

PAPER_GAIN_REFERENCE_OMEGA = 230.0 * math.pi  # center frequency the default gains were quoted at


@dataclass(frozen=True)
class PllConfig:
    """Controller settings.

    ``theta_setpoint`` is in the acceleration convention regardless of
    ``signal_pair``.  Gains: ``y = kp*e + ki*int(e)`` drives the
    frequency offset from ``omega_m``.  Lock runs settle on the
    per-period tolerance ``steady_rel_tol`` plus a windowed net-drift
    test (``steady_window`` periods, ``steady_window_rel_tol``): the
    windowed test certifies that slow resonant build-up has decayed to
    the level a 0.1% per-period criterion alone cannot resolve.
    """

    omega_m: float
    kp: float = 15.0
    ki: float = 3.0 * math.pi
    lp_time_constant: float = 2.0 / math.pi
    theta_setpoint: float = math.pi / 2.0
    lock_tolerance: float = 0.03
    signal_pair: str = "acceleration"
    y_clamp: float = 0.0
    mag_floor: float = 1e-12
    omega_settle_rtol: float = 1e-7
    steady_rel_tol: float = 1e-3
    steady_window: int = 100
    steady_window_rel_tol: float = 3e-4

    def __post_init__(self):
        if self.omega_m <= 0:
            raise ValueError("omega_m must be positive")
        if self.kp < 0 or self.ki < 0:
            raise ValueError("gains must be non-negative")
        if self.lp_time_constant <= 0:
            raise ValueError("lp_time_constant must be positive")
        if self.signal_pair not in ("acceleration", "velocity", "displacement"):
            raise ValueError("signal_pair must be acceleration|velocity|displacement")

    @staticmethod
    def from_dict(data: dict) -> "PllConfig":
        unknown = set(data) - set(PllConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown pll config keys: {sorted(unknown)}")
        return PllConfig(**data)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in PllConfig.__dataclass_fields__}


def default_pll_config(model_or_omega, **overrides) -> PllConfig:
    """Gains for a given center frequency, scaled from the values tuned
    for a ~115 Hz mode (proportional with frequency, integral with its
    square, filter time constant inversely)."""
    if isinstance(model_or_omega, StructuralModel):
        omega_m = float(linear_modes(model_or_omega, "stuck",
                                     n_modes=1).frequencies[0])
    else:
        omega_m = float(model_or_omega)
    r = omega_m / PAPER_GAIN_REFERENCE_OMEGA
    cfg = dict(omega_m=omega_m, kp=15.0 * r, ki=3.0 * math.pi * r * r,
               lp_time_constant=(2.0 / math.pi) / r)
    cfg.update(overrides)
    return PllConfig(**cfg)


def setpoint_for_signal(theta_acceleration: float, signal_pair: str) -> float:
    """Convert an acceleration-convention setpoint to the detector signal's
    own convention (one -pi/2 shift per time integration)."""
    shift = {"acceleration": 0.0, "velocity": -math.pi / 2.0,
             "displacement": -math.pi}[signal_pair]
    return _wrap(theta_acceleration + shift)


def _wrap(a: float) -> float:
    return float(np.angle(np.exp(1j * a)))


RESP_KIND = {"acceleration": kn.RESP_ACC, "velocity": kn.RESP_VEL,
             "displacement": kn.RESP_DISP}


@dataclass
class PllState:
    """Controller state (reference phase, filter states, integrators)."""

    integrator: float = 0.0
    alpha_r: float = 0.0
    lp_states: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    theta_hat: float = math.nan
    y: float = 0.0
    fcmd: float = 0.0
    amp_integrator: float = 0.0

    def to_vector(self) -> np.ndarray:
        vec = np.zeros(kn.N_PLL_STATE)
        vec[kn.P_INTEG] = self.integrator
        vec[kn.P_ALPHA] = self.alpha_r
        vec[kn.P_ZFI], vec[kn.P_ZFQ], vec[kn.P_ZRI], vec[kn.P_ZRQ] = self.lp_states
        vec[kn.P_THETA] = self.theta_hat
        vec[kn.P_Y] = self.y
        vec[kn.P_FCMD] = self.fcmd
        vec[kn.P_AINTEG] = self.amp_integrator
        return vec

    @staticmethod
    def from_vector(vec: np.ndarray) -> "PllState":
        return PllState(
            integrator=float(vec[kn.P_INTEG]), alpha_r=float(vec[kn.P_ALPHA]),
            lp_states=(float(vec[kn.P_ZFI]), float(vec[kn.P_ZFQ]),
                       float(vec[kn.P_ZRI]), float(vec[kn.P_ZRQ])),
            theta_hat=float(vec[kn.P_THETA]), y=float(vec[kn.P_Y]),
            fcmd=float(vec[kn.P_FCMD]), amp_integrator=float(vec[kn.P_AINTEG]))


@dataclass
class WarmStart:
    """Everything carried between amplitude levels: structural state,
    friction sliders, controller state and the running force scale."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    jw: np.ndarray
    pll_vec: np.ndarray
    t: float


# ---------------------------------------------------------------------------
# synchronous detection and PI control (reference implementations)
# ---------------------------------------------------------------------------

class SynchronousDetector:
    """Lock-in phase detector: demodulate force and response by the
    reference cosine/sine, low-pass the I/Q products (exact first-order
    discretization), difference the per-signal phases."""

    def __init__(self, lp_time_constant: float, mag_floor: float = 1e-12):
        self.tau = float(lp_time_constant)
        self.mag_floor = float(mag_floor)
        self.zf = np.zeros(2)
        self.zr = np.zeros(2)
        self.theta_hat = math.nan
        self.valid = False

    def step(self, force_sample: float, response_sample: float,
             alpha_r: float, dt: float) -> float:
        """Ingest one sample pair; returns the phase-lag estimate (response
        minus force, wrapped to (-pi, pi]).  While either demodulated
        magnitude is below the noise floor the estimate is held and
        ``valid`` is False."""
        d = math.exp(-dt / self.tau)
        c, s = math.cos(alpha_r), math.sin(alpha_r)
        self.zf = d * self.zf + (1 - d) * np.array([force_sample * c,
                                                    force_sample * s])
        self.zr = d * self.zr + (1 - d) * np.array([response_sample * c,
                                                    response_sample * s])
        if np.hypot(*self.zf) > self.mag_floor and np.hypot(*self.zr) > self.mag_floor:
            ph_f = math.atan2(-self.zf[1], self.zf[0])
            ph_r = math.atan2(-self.zr[1], self.zr[0])
            self.theta_hat = _wrap(ph_r - ph_f)
            self.valid = True
        else:
            self.valid = False
        return self.theta_hat


def synchronous_detect_step(detector: SynchronousDetector, force_sample: float,
                            response_sample: float, alpha_r: float,
                            dt: float) -> float:
    return detector.step(force_sample, response_sample, alpha_r, dt)


class PiController:
    """PI law ``y = kp*e + ki*int(e)`` with optional symmetric output clamp;
    integration holds while the output is clamped (anti-windup)."""

    def __init__(self, kp: float, ki: float, clamp: float | None = None):
        self.kp = float(kp)
        self.ki = float(ki)
        self.clamp = clamp
        self.integrator = 0.0

    def step(self, error: float, dt: float) -> float:
        cand = self.integrator + self.ki * error * dt
        y = self.kp * error + cand
        if self.clamp is not None and abs(y) > self.clamp:
            y = self.kp * error + self.integrator
            y = max(-self.clamp, min(self.clamp, y))
        else:
            self.integrator = cand
        return y


def pi_controller_step(ctrl: PiController, error: float, dt: float) -> float:
    return ctrl.step(error, dt)


# ---------------------------------------------------------------------------
# lock loop
# ---------------------------------------------------------------------------

@dataclass
class LockResult:
    record: TimeSeriesRecord
    warm: WarmStart
    omega: float
    theta_err_max: float
    n_settle_periods: int


def _kernel_pass(arrays, model, cfg, mode, n_steps, rec, warm,
                 F_amp, F_target, amp_gains, F_max, theta_signal):
    kpa, kia = amp_gains
    t = kn.run_chunk(arrays.M, arrays.C, arrays.K, arrays.Sinv_stack,
                     arrays.jdof, arrays.jkt, arrays.jfc, warm.jw,
                     arrays.sensor_dofs, model.drive_dof,
                     warm.x, warm.v, warm.a, warm.t,
                     arrays.dt, n_steps,
                     mode, RESP_KIND[cfg.signal_pair],
                     F_amp, 0.0,
                     cfg.omega_m, cfg.kp, cfg.ki, cfg.y_clamp,
                     math.exp(-arrays.dt / cfg.lp_time_constant),
                     cfg.mag_floor, theta_signal,
                     F_target, kpa, kia, F_max,
                     warm.pll_vec, rec, 1e-10, 0.0, 30)
    if math.isnan(t):
        raise StepFailure("Newton failed at the finest substep level")
    warm.t = t


def _lock_loop(model: StructuralModel, cfg: PllConfig, mode: int,
               F_amp: float, warm: WarmStart | None,
               steady: SteadyConfig | None, dt: float | None,
               F_target: float = 0.0, amp_gains=(0.0, 0.0),
               F_max: float = math.inf,
               amp_rel_tol: float = 5e-3) -> LockResult:
    dt = default_dt(model) if dt is None else float(dt)
    arrays = ModelArrays(model, dt)
    steady = steady or SteadyConfig(rel_tol=cfg.steady_rel_tol, max_periods=30000,
                                    window=cfg.steady_window,
                                    window_rel_tol=cfg.steady_window_rel_tol)
    theta_signal = setpoint_for_signal(cfg.theta_setpoint, cfg.signal_pair)

    if warm is None:
        x, v, a, jw = arrays.fresh_states()
        vec = np.zeros(kn.N_PLL_STATE)
        vec[kn.P_THETA] = math.nan
        vec[kn.P_FCMD] = F_amp if mode == kn.FORCE_PLL else F_target
        vec[kn.P_AINTEG] = F_target
        warm = WarmStart(x=x, v=v, a=a, jw=jw, pll_vec=vec, t=0.0)
    else:
        warm = WarmStart(x=warm.x.copy(), v=warm.v.copy(), a=warm.a.copy(),
                         jw=warm.jw.copy(), pll_vec=warm.pll_vec.copy(),
                         t=warm.t)
        warm.pll_vec[kn.P_FROZEN] = 0.0
        if mode == kn.FORCE_PLL:
            warm.pll_vec[kn.P_FCMD] = F_amp

    tracker = _PeriodTracker(theta_set=theta_signal)
    n_ch = len(channel_names(len(arrays.sensor_dofs)))
    T_nom = 2.0 * math.pi / cfg.omega_m
    chunk = max(32, int(round(1.25 * T_nom / dt)))
    rec = np.empty((n_ch, chunk))
    need = steady.consecutive

    while True:
        _kernel_pass(arrays, model, cfg, mode, chunk, rec, warm,
                     F_amp, F_target, amp_gains, F_max, theta_signal)
        tracker.feed(rec)
        s = tracker.stats
        if len(s) >= 20 and warm.pll_vec[kn.P_VALID] == 0.0:
            raise LockError("phase undefined: detector magnitudes below the "
                            "noise floor (zero force or response?)", trace=s)
        if tracker.settled(steady) and _locked(s, cfg, steady, theta_signal):
            if mode != kn.FORCE_PLL_AMP or _amp_ok(s, F_target, amp_rel_tol,
                                                   steady.consecutive):
                break
        if len(s) > steady.max_periods:
            raise LockError(
                f"no phase lock within {steady.max_periods} periods "
                f"(last phase error "
                f"{s[-1].theta_err_mean if s else math.nan:.2e} rad)",
                trace=s)

    if mode == kn.FORCE_PLL_AMP and warm.pll_vec[kn.P_FCMD] >= F_max * (1 - 1e-12):
        raise LockError("force amplitude loop saturated at the actuator limit",
                        trace=tracker.stats)

    # freeze both controllers at the per-period mean frequency and record
    # an integer number of periods
    omega_locked = tracker.stats[-1].omega_mean
    warm.pll_vec[kn.P_Y] = omega_locked - cfg.omega_m
    warm.pll_vec[kn.P_FROZEN] = 1.0
    n_rec = int(round(steady.n_record * (2.0 * math.pi / omega_locked) / dt)) + 1
    rec_out = np.empty((n_ch, n_rec))
    _kernel_pass(arrays, model, cfg, mode, n_rec, rec_out, warm,
                 F_amp, F_target, amp_gains, F_max, theta_signal)
    warm.pll_vec[kn.P_FROZEN] = 0.0

    channels = {name: rec_out[i].copy()
                for i, name in enumerate(channel_names(len(arrays.sensor_dofs)))}
    record = TimeSeriesRecord(dt, channels)
    err = np.angle(np.exp(1j * (record["theta_hat_rad"] - theta_signal)))
    theta_err_max = float(np.abs(err).max())
    # verify the lock over the whole window on the ripple-averaged error;
    # theta_err_max additionally reports the instantaneous detector ripple
    if abs(float(err.mean())) >= cfg.lock_tolerance:
        raise LockError(
            f"mean phase error {float(err.mean()):.2e} rad exceeded the lock "
            "tolerance over the recorded window", trace=tracker.stats)
    return LockResult(record=record, warm=warm,
                      omega=float(np.mean(record["omega_rad_s"])),
                      theta_err_max=theta_err_max,
                      n_settle_periods=len(tracker.stats))


def _locked(stats, cfg, steady, theta_signal) -> bool:
    need = steady.consecutive
    if len(stats) < need + 1:
        return False
    tail = stats[-(need + 1):]
    for st in tail:
        if not (abs(st.theta_err_mean) < cfg.lock_tolerance):
            return False
    for prev, cur in zip(tail, tail[1:]):
        if not (abs(cur.omega_mean - prev.omega_mean)
                <= cfg.omega_settle_rtol * abs(cur.omega_mean)):
            return False
    return True


def _amp_ok(stats, F_target, rel_tol, consecutive) -> bool:
    tail = stats[-consecutive:]
    return all(abs(st.amp_f - F_target) <= rel_tol * F_target for st in tail)


def lock_phase_point(model: StructuralModel, cfg: PllConfig,
                     force_amplitude: float, warm_start: WarmStart | None = None,
                     steady: SteadyConfig | None = None,
                     dt: float | None = None) -> LockResult:
    """Drive the rig with ``F*cos(alpha_R)`` under closed-loop phase control
    until the phase lag settles on the setpoint, then record.

    During the recorded window both controllers are frozen, so the
    excitation frequency is exactly constant and the record is periodic;
    the phase error is re-verified over the whole window.  Returns the
    record plus the warm-start state for the next amplitude level.
    """
    if force_amplitude <= 0:
        raise ValueError("force_amplitude must be positive")
    return _lock_loop(model, cfg, kn.FORCE_PLL, force_amplitude, warm_start,
                      steady, dt)


# ---------------------------------------------------------------------------
# backbone tracking
# ---------------------------------------------------------------------------

@dataclass
class Backbone:
    """Phase-resonant points tracked over an amplitude schedule."""

    levels: np.ndarray
    points: list[BackbonePoint | None]
    records: list[TimeSeriesRecord | None]
    direction: str
    omega_ref: float
    source: str = "pll"
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return np.array([p is not None for p in self.points])

    @property
    def valid_points(self) -> list[BackbonePoint]:
        return [p for p in self.points if p is not None]

    def amplitudes_strictly_monotone(self) -> bool:
        a = np.array([p.a for p in self.valid_points])
        if len(a) < 2:
            return True
        d = np.diff(a)
        return bool(np.all(d > 0) or np.all(d < 0))

    def to_csv(self, path, H: int | None = None) -> None:
        pts = self.valid_points
        if pts:
            n_sens = len(pts[0].phi1)
            H_data = pts[0].harmonics.n_harmonics
        else:
            n_sens, H_data = 0, 0
        H = H_data if H is None else min(H, H_data)
        cols = ["level_index", "F1_N", "omega_rad_s", "omega_norm", "zeta",
                "modal_amplitude", "thd_response", "valid_flag"]
        for i in range(n_sens):
            for h in range(H + 1):
                cols.append(f"sens{i}_h{h}_m")
        cols.append("source")
        lines = [",".join(cols)]
        for idx, (lvl, p) in enumerate(zip(self.levels, self.points)):
            if p is None:
                row = [str(idx), repr(float(lvl))] + ["nan"] * 5 + ["0"]
                row += ["nan"] * (n_sens * (H + 1))
            else:
                row = [str(idx), repr(float(p.F1)), repr(float(p.omega)),
                       repr(float(p.omega / self.omega_ref)),
                       repr(float(p.zeta)), repr(float(p.a)),
                       repr(float(p.thd_response)), "1"]
                for i in range(n_sens):
                    disp = p.harmonics.coeff(f"sens{i}_disp_m")
                    row += [repr(float(abs(disp[h]))) for h in range(H + 1)]
            row.append(self.source)
            lines.append(",".join(row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def track_backbone(model: StructuralModel, cfg: PllConfig, schedule,
                   H: int = 7, n_modes: int = 3,
                   steady: SteadyConfig | None = None,
                   dt: float | None = None,
                   keep_records: bool = True) -> Backbone:
    """Track phase-resonant points over a monotone force-amplitude schedule.

    Each level is locked with :func:`lock_phase_point` (warm-started from
    the previous level) and identified with
    :func:`~nlmodal.identify.extract_backbone_point`.  Failed levels are
    recorded and skipped; more than half failing aborts the run.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.size == 0 or np.any(schedule <= 0):
        raise ValueError("schedule must be non-empty and positive")
    d = np.diff(schedule)
    if schedule.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("schedule must be strictly monotone")
    direction = "decreasing" if (schedule.size > 1 and d[0] < 0) else "increasing"
    modes_stuck = linear_modes(model, "stuck", n_modes=n_modes)
    modes_free = linear_modes(model, "free", n_modes=n_modes)

    points: list[BackbonePoint | None] = []
    records: list[TimeSeriesRecord | None] = []
    failures: dict[int, str] = {}
    warm = None
    for i, F in enumerate(schedule):
        try:
            result = lock_phase_point(model, cfg, float(F), warm_start=warm,
                                      steady=steady, dt=dt)
            warm = result.warm
            point = extract_backbone_point(result.record, modes_stuck,
                                           modes_free, H=H)
            points.append(point)
            records.append(result.record if keep_records else None)
        except (LockError, SteadyStateTimeout, StepFailure, IdentifyError) as exc:
            failures[i] = str(exc)
            points.append(None)
            records.append(None)
    if len(failures) * 2 > len(schedule):
        raise BackboneError(
            f"{len(failures)} of {len(schedule)} levels failed: {failures}")
    return Backbone(levels=schedule, points=points, records=records,
                    direction=direction,
                    omega_ref=float(modes_stuck.frequencies[0]),
                    failures=failures)


# ---------------------------------------------------------------------------
# stepped-sine reference protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SteppedSinePoint:
    theta_setpoint: float
    omega: float
    F1: float
    x1_sensors: np.ndarray
    theta_hat: float
    valid: bool


@dataclass
class SteppedSineFrf:
    """Forced-response points at controlled phase lags and force amplitude."""

    F_target: float
    points: list[SteppedSinePoint]
    records: list[TimeSeriesRecord | None]
    failures: dict[int, str]

    @property
    def valid_points(self) -> list[SteppedSinePoint]:
        return [p for p in self.points if p.valid]

    def peak(self, sensor: int) -> tuple[float, float]:
        """(omega, amplitude) of the maximum-response valid point."""
        pts = self.valid_points
        if not pts:
            raise ValueError("no valid stepped-sine points")
        amps = [abs(p.x1_sensors[sensor]) for p in pts]
        i = int(np.argmax(amps))
        return pts[i].omega, amps[i]

    def to_csv(self, path) -> None:
        if self.points:
            n_sens = len(self.points[0].x1_sensors)
        else:
            n_sens = 0
        cols = ["theta_setpoint_deg", "omega_rad_s", "F1_N"]
        for i in range(n_sens):
            cols += [f"sens{i}_amp_m", f"sens{i}_phase_rad"]
        cols.append("valid_flag")
        lines = [",".join(cols)]
        for p in self.points:
            row = [repr(math.degrees(p.theta_setpoint)), repr(float(p.omega)),
                   repr(float(p.F1))]
            for i in range(n_sens):
                row += [repr(float(abs(p.x1_sensors[i]))),
                        repr(float(np.angle(p.x1_sensors[i])))]
            row.append("1" if p.valid else "0")
            lines.append(",".join(row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def run_stepped_sine_frf(model: StructuralModel, cfg: PllConfig,
                         F_target: float, phase_setpoints,
                         amp_gains: tuple[float, float] = (0.5, 1.0),
                         F_max: float | None = None,
                         H: int = 7,
                         steady: SteadyConfig | None = None,
                         dt: float | None = None,
                         keep_records: bool = False) -> SteppedSineFrf:
    """Stepped-sine frequency response at a controlled force amplitude.

    For each phase setpoint (acceleration convention, radians) the inner
    PLL locks the phase while an outer PI loop trims the commanded force
    amplitude until the measured force fundamental matches ``F_target``
    within 0.5%.  Points that saturate the actuator limit ``F_max`` are
    marked invalid.
    """
    if F_target <= 0:
        raise ValueError("F_target must be positive")
    setpoints = [float(s) for s in phase_setpoints]
    if not setpoints or not all(0.0 < s < math.pi for s in setpoints):
        raise ValueError("phase setpoints must lie in (0, pi), acceleration convention")
    F_max = 20.0 * F_target if F_max is None else float(F_max)
    modes_stuck = linear_modes(model, "stuck")
    points: list[SteppedSinePoint] = []
    records: list[TimeSeriesRecord | None] = []
    failures: dict[int, str] = {}
    warm = None
    for i, theta in enumerate(setpoints):
        level_cfg = replace(cfg, theta_setpoint=theta)
        try:
            result = _lock_loop(model, level_cfg, kn.FORCE_PLL_AMP, 0.0,
                                warm, steady, dt, F_target=F_target,
                                amp_gains=amp_gains, F_max=F_max)
            warm = result.warm
            rec = result.record
            n_sens = len(model.sensor_dofs)
            hs = fourier_coefficients(rec, result.omega, H)
            F1c = hs.coeff("force_n")[1]
            rot = np.exp(-1j * np.angle(F1c))
            x1 = np.array([hs.coeff(f"sens{j}_disp_m")[1] for j in range(n_sens)]) * rot
            points.append(SteppedSinePoint(
                theta_setpoint=theta, omega=result.omega, F1=abs(F1c),
                x1_sensors=x1,
                theta_hat=float(np.mean(rec["theta_hat_rad"])), valid=True))
            records.append(rec if keep_records else None)
        except LockError as exc:
            failures[i] = str(exc)
            points.append(SteppedSinePoint(
                theta_setpoint=theta, omega=math.nan, F1=math.nan,
                x1_sensors=np.full(len(model.sensor_dofs), np.nan, complex),
                theta_hat=math.nan, valid=False))
            records.append(None)
    return SteppedSineFrf(F_target=F_target, points=points, records=records,
                          failures=failures)
