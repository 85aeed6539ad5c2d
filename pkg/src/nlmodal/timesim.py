"""Time integration of the forced nonlinear rig and steady-state capture.

Implicit average-acceleration Newmark stepping (gamma = 1/2, beta = 1/4)
with Newton iteration over the friction forces; slider states are
committed only on step acceptance.  Steady state is detected from
period-wise statistics of the drive-point velocity, after which an
integer number of fundamental periods is recorded.

Record channel names (fixed CSV contract, in column order)::

    t_s, force_n, drive_disp_m, drive_vel_m_s, drive_acc_m_s2,
    omega_rad_s, alpha_r_rad, theta_hat_rad,
    sens0_disp_m .. sens{N-1}_disp_m, sens0_acc_m_s2 .. sens{N-1}_acc_m_s2
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as kn
from .structure import StructuralModel, jenkins_update


class StepFailure(RuntimeError):
    """Newton iteration did not converge within the allowed iterations."""


class SteadyStateTimeout(RuntimeError):
    """Period budget exhausted before the response settled."""

    def __init__(self, message, trace=None, partial_record=None):
        super().__init__(message)
        self.trace = trace
        self.partial_record = partial_record


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimState:
    """Instantaneous integrator state (displacements, velocities,
    accelerations, friction slider positions)."""

    t: float
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    friction_states: np.ndarray


@dataclass(frozen=True)
class HarmonicForcing:
    """Single-point cosine drive ``F * cos(omega * t + phase)`` at the drive DOF."""

    amplitude: float
    omega: float
    phase: float = 0.0

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega


@dataclass(frozen=True)
class SteadyConfig:
    """Steady-state detector settings.

    Converged when, over ``consecutive`` fundamental periods, both the
    period RMS and the period fundamental amplitude of the drive-point
    velocity change by less than ``rel_tol`` relative; ``n_record``
    further periods are then recorded.

    With ``window > 0`` the net relative change over the last ``window``
    periods must additionally stay below ``window_rel_tol``.  The
    per-period statistics of stick-slip waveforms carry a bounded
    sampling-phase noise of order 1e-5..1e-4 that never settles further,
    while a slow resonant build-up accumulates over many periods; the
    windowed test separates the two where a tighter per-period tolerance
    cannot.
    """

    rel_tol: float = 1e-3
    consecutive: int = 5
    min_periods: int = 10
    max_periods: int = 5000
    n_record: int = 10
    window: int = 0
    window_rel_tol: float = 3e-4


class TimeSeriesRecord:
    """Uniformly sampled multi-channel record.

    ``channels`` maps names to equal-length arrays; the time channel
    ``t_s`` is always present.  ``period_markers`` holds the sample
    indices where the reference phase crosses a multiple of 2*pi.
    """

    def __init__(self, dt: float, channels: dict[str, np.ndarray],
                 period_markers: np.ndarray | None = None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        lengths = {len(v) for v in channels.values()}
        if len(lengths) != 1:
            raise ValueError("all channels must have equal length")
        if "t_s" not in channels:
            raise ValueError("record requires a t_s channel")
        self.dt = float(dt)
        self.channels = {k: np.asarray(v) for k, v in channels.items()}
        if period_markers is None:
            period_markers = _markers_from_phase(self.channels.get("alpha_r_rad"))
        self.period_markers = np.asarray(period_markers, dtype=int)
        if np.any(np.diff(self.period_markers) <= 0):
            raise ValueError("period markers must be strictly increasing")

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(self.channels)

    @property
    def n_samples(self) -> int:
        return len(self.channels["t_s"])

    @property
    def t(self) -> np.ndarray:
        return self.channels["t_s"]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def copy(self) -> "TimeSeriesRecord":
        return TimeSeriesRecord(self.dt,
                                {k: v.copy() for k, v in self.channels.items()},
                                self.period_markers.copy())

    def to_csv(self, path) -> None:
        names = list(self.channels)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(names) + "\n")
            cols = [self.channels[n] for n in names]
            for i in range(self.n_samples):
                fh.write(",".join(repr(float(c[i])) for c in cols) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TimeSeriesRecord":
        with open(path) as fh:
            names = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        channels = {n: data[:, i].copy() for i, n in enumerate(names)}
        t = channels["t_s"]
        dt = float(t[-1] - t[0]) / (len(t) - 1)
        return cls(dt, channels)


def _markers_from_phase(alpha: np.ndarray | None) -> np.ndarray:
    if alpha is None or len(alpha) == 0:
        return np.empty(0, dtype=int)
    k = np.floor((alpha - alpha[0]) / (2.0 * math.pi)).astype(int)
    return np.nonzero(np.diff(k) > 0)[0] + 1


def channel_names(n_sensors: int) -> list[str]:
    names = ["t_s", "force_n", "drive_disp_m", "drive_vel_m_s", "drive_acc_m_s2",
             "omega_rad_s", "alpha_r_rad", "theta_hat_rad"]
    names += [f"sens{i}_disp_m" for i in range(n_sensors)]
    names += [f"sens{i}_acc_m_s2" for i in range(n_sensors)]
    return names


# ---------------------------------------------------------------------------
# model arrays for the compiled kernels
# ---------------------------------------------------------------------------

N_SUBSTEP_LEVELS = 4


class ModelArrays:
    """Dense arrays and factorizations for one (model, dt) pair."""

    def __init__(self, model: StructuralModel, dt: float):
        self.model = model
        self.dt = float(dt)
        self.M = np.ascontiguousarray(model.mass)
        self.C = np.ascontiguousarray(model.viscous_damping)
        self.K = np.ascontiguousarray(model.stiffness)
        els = model.friction_elements
        self.jdof = np.array([e.dof for e in els], dtype=np.int64)
        self.jkt = np.array([e.kt for e in els], dtype=float)
        self.jfc = np.array([e.fc for e in els], dtype=float)
        self.sensor_dofs = np.array(model.sensor_dofs, dtype=np.int64)
        K_eff = self.K.copy()
        for e in els:
            K_eff[e.dof, e.dof] += e.kt
        stack = np.empty((N_SUBSTEP_LEVELS, *self.M.shape))
        for lev in range(N_SUBSTEP_LEVELS):
            h = self.dt / (1 << lev)
            S = 4.0 / h**2 * self.M + 2.0 / h * self.C + K_eff
            stack[lev] = np.linalg.inv(S)
        self.Sinv_stack = stack

    def fresh_states(self, x0=None, v0=None, f0=0.0):
        n = self.M.shape[0]
        x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
        v = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
        jw = self.model.fresh_friction_states()
        f = np.zeros(n)
        f[self.model.drive_dof] = f0
        a = consistent_acceleration(self.model, x, v, f, jw)
        return x, v, a, jw


def consistent_acceleration(model: StructuralModel, x, v, f_ext, jw=None) -> np.ndarray:
    """Acceleration satisfying the equation of motion at the given state."""
    if jw is None:
        jw = model.fresh_friction_states()
    f_nl = np.zeros(model.n_dof)
    for e, el in enumerate(model.friction_elements):
        ftr = el.kt * (x[el.dof] - jw[e])
        f_nl[el.dof] += np.clip(ftr, -el.fc, el.fc)
    rhs = f_ext - model.viscous_damping @ v - model.stiffness @ x - f_nl
    return np.linalg.solve(model.mass, rhs)


def default_dt(model: StructuralModel, steps_per_period: int = 500) -> float:
    """Step size resolving the stuck first mode with ``steps_per_period`` samples."""
    from .structure import linear_modes
    om1 = linear_modes(model, "stuck", n_modes=1).frequencies[0]
    return 2.0 * math.pi / om1 / steps_per_period


# ---------------------------------------------------------------------------
# single step (reference implementation)
# ---------------------------------------------------------------------------

def newmark_step(model: StructuralModel, state: SimState, f_ext: np.ndarray,
                 dt: float, rtol: float = 1e-10, atol: float = 0.0,
                 max_iter: int = 30) -> SimState:
    """One average-acceleration step under the external force at t + dt.

    Friction states are committed only on step acceptance.  Raises
    :class:`StepFailure` when the Newton iteration does not converge;
    the caller may retry with a smaller dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    M, C, K = model.mass, model.viscous_damping, model.stiffness
    els = model.friction_elements
    S = 4.0 / dt**2 * M + 2.0 / dt * C + K
    for el in els:
        S[el.dof, el.dof] += el.kt
    x, v, a = state.x, state.v, state.a
    jw = state.friction_states
    xn = x + dt * v + 0.5 * dt**2 * a
    f_ext = np.asarray(f_ext, dtype=float)
    for _ in range(max_iter):
        an = 4.0 / dt**2 * (xn - x - dt * v) - a
        vn = v + 0.5 * dt * (a + an)
        f_inertia = M @ an
        f_elastic = K @ xn
        res = f_ext - f_inertia - C @ vn - f_elastic
        for e, el in enumerate(els):
            ftr = el.kt * (xn[el.dof] - jw[e])
            res[el.dof] -= np.clip(ftr, -el.fc, el.fc)
        tol = rtol * max(np.abs(f_ext).max(initial=0.0),
                         np.abs(f_inertia).max(initial=0.0),
                         np.abs(f_elastic).max(initial=0.0)) + atol
        if np.linalg.norm(res) <= tol:
            jw_new = jw.copy()
            for e, el in enumerate(els):
                felem, upd = jenkins_update(replace(el, w=jw[e]), float(xn[el.dof]))
                jw_new[e] = upd.w
            return SimState(t=state.t + dt, x=xn, v=vn, a=an,
                            friction_states=jw_new)
        xn = xn + np.linalg.solve(S, res)
    raise StepFailure(f"Newton stalled after {max_iter} iterations at t={state.t}")


def initial_state(model: StructuralModel, x0=None, v0=None,
                  f_ext=None) -> SimState:
    n = model.n_dof
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    v = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
    f = np.zeros(n) if f_ext is None else np.asarray(f_ext, dtype=float)
    jw = model.fresh_friction_states()
    return SimState(t=0.0, x=x, v=v,
                    a=consistent_acceleration(model, x, v, f, jw),
                    friction_states=jw)


# ---------------------------------------------------------------------------
# period-wise statistics for steady-state detection
# ---------------------------------------------------------------------------

class PeriodStats:
    __slots__ = ("rms_v", "amp_v", "amp_f", "omega_mean", "theta_err_mean")

    def __init__(self, rms_v, amp_v, amp_f, omega_mean, theta_err_mean):
        self.rms_v = rms_v
        self.amp_v = amp_v
        self.amp_f = amp_f
        self.omega_mean = omega_mean
        self.theta_err_mean = theta_err_mean


def _interval_integrals(alpha, y, lo, hi):
    """Integrals of ``y`` d(alpha) over [lo, hi) intervals of a monotone
    abscissa, with linear interpolation at the fractional end points."""
    cum = np.concatenate([[0.0],
                          np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(alpha))])

    def at(b):
        j = np.searchsorted(alpha, b, side="right") - 1
        j = np.clip(j, 0, len(alpha) - 2)
        da = alpha[j + 1] - alpha[j]
        g = np.where(da > 0, (b - alpha[j]) / np.where(da > 0, da, 1.0), 0.0)
        yb = y[j] + g * (y[j + 1] - y[j])
        return cum[j] + 0.5 * (y[j] + yb) * (b - alpha[j])

    return at(hi) - at(lo)


class _PeriodTracker:
    """Splits streamed record chunks at reference-phase period boundaries
    and computes per-period statistics of the drive-point velocity.

    Integrals are taken in the reference-phase domain with fractional
    boundary interpolation; sample-quantized windows would leave
    ~1/samples-per-period noise on the per-period statistics, defeating
    tight settling tolerances.
    """

    def __init__(self, theta_set: float | None = None):
        self.theta_set = theta_set
        self._pend = None
        self._alpha_origin = None
        self._next_k = 1
        self.stats: list[PeriodStats] = []

    def feed(self, rec: np.ndarray) -> list[PeriodStats]:
        if self._pend is not None:
            rec = np.concatenate([self._pend, rec], axis=1)
        alpha = rec[kn.CH_ALPHA]
        if self._alpha_origin is None:
            self._alpha_origin = alpha[0]
        two_pi = 2.0 * math.pi
        new: list[PeriodStats] = []
        while alpha[-1] - self._alpha_origin >= (self._next_k + 0.0) * two_pi:
            lo = self._alpha_origin + (self._next_k - 1) * two_pi
            hi = lo + two_pi
            if rec.shape[1] >= 4 and alpha[0] <= lo:
                new.append(self._stats(rec, lo, hi))
            self._next_k += 1
        # keep everything from one sample before the next boundary onward
        lo_next = self._alpha_origin + (self._next_k - 1) * two_pi
        keep = max(0, int(np.searchsorted(alpha, lo_next, side="right")) - 1)
        self._pend = rec[:, keep:].copy()
        self.stats.extend(new)
        return new

    def _stats(self, rec: np.ndarray, lo: float, hi: float) -> PeriodStats:
        alpha = rec[kn.CH_ALPHA]
        v = rec[kn.CH_DR_VEL]
        f = rec[kn.CH_FORCE]
        two_pi = 2.0 * math.pi
        ca, sa = np.cos(alpha), np.sin(alpha)
        ms = _interval_integrals(alpha, v * v, lo, hi) / two_pi
        ci = _interval_integrals(alpha, v * ca, lo, hi)
        si = _interval_integrals(alpha, v * sa, lo, hi)
        amp = math.hypot(float(ci), float(si)) / math.pi
        cf = _interval_integrals(alpha, f * ca, lo, hi)
        sf = _interval_integrals(alpha, f * sa, lo, hi)
        amp_f = math.hypot(float(cf), float(sf)) / math.pi
        t_lo = np.interp(lo, alpha, rec[kn.CH_T])
        t_hi = np.interp(hi, alpha, rec[kn.CH_T])
        omega_mean = two_pi / (t_hi - t_lo) if t_hi > t_lo else math.nan
        terr = math.nan
        if self.theta_set is not None:
            # signed mean: the detector ripple (harmonic demodulation
            # products) averages out over a period, the true offset does not
            err = np.angle(np.exp(1j * (rec[kn.CH_THETA] - self.theta_set)))
            terr = float(_interval_integrals(alpha, err, lo, hi) / two_pi)
        return PeriodStats(rms_v=math.sqrt(max(float(ms), 0.0)),
                           amp_v=amp, amp_f=amp_f,
                           omega_mean=float(omega_mean),
                           theta_err_mean=terr)

    def settled(self, cfg: SteadyConfig) -> bool:
        s = self.stats
        need = cfg.consecutive + 1
        if len(s) < max(need, cfg.min_periods, cfg.window + 1):
            return False
        tail = s[-need:]
        for prev, cur in zip(tail, tail[1:]):
            scale_r = max(abs(cur.rms_v), 1e-300)
            scale_a = max(abs(cur.amp_v), 1e-300)
            if abs(cur.rms_v - prev.rms_v) / scale_r >= cfg.rel_tol:
                return False
            if abs(cur.amp_v - prev.amp_v) / scale_a >= cfg.rel_tol:
                return False
        if cfg.window > 0:
            cur, old = s[-1], s[-1 - cfg.window]
            scale_r = max(abs(cur.rms_v), 1e-300)
            scale_a = max(abs(cur.amp_v), 1e-300)
            if abs(cur.rms_v - old.rms_v) / scale_r >= cfg.window_rel_tol:
                return False
            if abs(cur.amp_v - old.amp_v) / scale_a >= cfg.window_rel_tol:
                return False
        return True


# ---------------------------------------------------------------------------
# steady-state runs
# ---------------------------------------------------------------------------

def _empty_pll_state() -> np.ndarray:
    s = np.zeros(kn.N_PLL_STATE)
    s[kn.P_THETA] = math.nan
    return s


def _build_record(arrays: ModelArrays, rec: np.ndarray) -> TimeSeriesRecord:
    names = channel_names(len(arrays.sensor_dofs))
    channels = {name: rec[i].copy() for i, name in enumerate(names)}
    return TimeSeriesRecord(arrays.dt, channels)


def run_transient(model: StructuralModel, duration: float,
                  x0=None, v0=None, dt: float | None = None,
                  forcing: HarmonicForcing | None = None) -> TimeSeriesRecord:
    """Integrate for a fixed duration (free vibration or harmonic forcing)."""
    dt = default_dt(model) if dt is None else float(dt)
    arrays = ModelArrays(model, dt)
    f0 = 0.0
    if forcing is not None:
        f0 = forcing.amplitude * math.cos(forcing.phase)
    x, v, a, jw = arrays.fresh_states(x0, v0, f0)
    n_steps = int(round(duration / dt))
    rec = np.empty((len(channel_names(len(arrays.sensor_dofs))), n_steps))
    pll = _empty_pll_state()
    mode = kn.FORCE_NONE
    F_amp = 0.0
    omega = 0.0
    if forcing is not None:
        mode = kn.FORCE_HARMONIC
        F_amp = forcing.amplitude
        omega = forcing.omega
        pll[kn.P_ALPHA] = forcing.phase
    t_end = kn.run_chunk(arrays.M, arrays.C, arrays.K, arrays.Sinv_stack,
                         arrays.jdof, arrays.jkt, arrays.jfc, jw,
                         arrays.sensor_dofs, model.drive_dof,
                         x, v, a, 0.0, dt, n_steps,
                         mode, kn.RESP_ACC,
                         F_amp, omega,
                         0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
                         0.0, 0.0, 0.0, 0.0,
                         pll, rec, 1e-10, 0.0, 30)
    if math.isnan(t_end):
        raise StepFailure("Newton failed at the finest substep level")
    return _build_record(arrays, rec)


def run_to_steady_state(model: StructuralModel, forcing,
                        steady: SteadyConfig | None = None,
                        dt: float | None = None,
                        period: float | None = None) -> TimeSeriesRecord:
    """Integrate under periodic forcing until steady, then record.

    ``forcing`` is either a :class:`HarmonicForcing` (fast compiled
    path) or a callable ``f_ext(t) -> force vector`` together with its
    fundamental ``period`` (reference path built on
    :func:`newmark_step`).  The returned record spans exactly
    ``steady.n_record`` fundamental periods within one sample.

    Raises :class:`SteadyStateTimeout` if the period budget is exhausted,
    carrying the per-period convergence trace and a partial record.
    """
    steady = steady or SteadyConfig()
    if isinstance(forcing, HarmonicForcing):
        return _steady_harmonic(model, forcing, steady, dt)
    if not callable(forcing):
        raise TypeError("forcing must be HarmonicForcing or a callable")
    if period is None or period <= 0:
        raise ValueError("callable forcing requires its fundamental period")
    return _steady_callable(model, forcing, period, steady, dt)


def _steady_harmonic(model, forcing, steady, dt):
    dt = default_dt(model) if dt is None else float(dt)
    arrays = ModelArrays(model, dt)
    x, v, a, jw = arrays.fresh_states(f0=forcing.amplitude * math.cos(forcing.phase))
    pll = _empty_pll_state()
    pll[kn.P_ALPHA] = forcing.phase
    n_ch = len(channel_names(len(arrays.sensor_dofs)))
    T = forcing.period
    chunk_len = max(16, int(round(T / dt)))
    tracker = _PeriodTracker()
    rec = np.empty((n_ch, chunk_len))
    t = 0.0
    tail = []
    while True:
        t = kn.run_chunk(arrays.M, arrays.C, arrays.K, arrays.Sinv_stack,
                         arrays.jdof, arrays.jkt, arrays.jfc, jw,
                         arrays.sensor_dofs, model.drive_dof,
                         x, v, a, t, dt, chunk_len,
                         kn.FORCE_HARMONIC, kn.RESP_ACC,
                         forcing.amplitude, forcing.omega,
                         0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
                         0.0, 0.0, 0.0, 0.0,
                         pll, rec, 1e-10, 0.0, 30)
        if math.isnan(t):
            raise StepFailure("Newton failed at the finest substep level")
        tracker.feed(rec)
        tail.append(rec.copy())
        tail = tail[-6:]
        if tracker.settled(steady):
            break
        if len(tracker.stats) > steady.max_periods:
            raise SteadyStateTimeout(
                f"no steady state within {steady.max_periods} periods",
                trace=tracker.stats,
                partial_record=_build_record(arrays, np.concatenate(tail, axis=1)))
    n_rec = int(round(steady.n_record * T / dt))
    rec_out = np.empty((n_ch, n_rec + 1))
    t = kn.run_chunk(arrays.M, arrays.C, arrays.K, arrays.Sinv_stack,
                     arrays.jdof, arrays.jkt, arrays.jfc, jw,
                     arrays.sensor_dofs, model.drive_dof,
                     x, v, a, t, dt, n_rec + 1,
                     kn.FORCE_HARMONIC, kn.RESP_ACC,
                     forcing.amplitude, forcing.omega,
                     0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0,
                     0.0, 0.0, 0.0, 0.0,
                     pll, rec_out, 1e-10, 0.0, 30)
    if math.isnan(t):
        raise StepFailure("Newton failed at the finest substep level")
    return _build_record(arrays, rec_out)


def _steady_callable(model, forcing, period, steady, dt):
    dt = default_dt(model) if dt is None else float(dt)
    n_per = max(4, int(round(period / dt)))
    state = initial_state(model, f_ext=forcing(0.0))
    drive = model.drive_dof
    sens = list(model.sensor_dofs)
    names = channel_names(len(sens))
    rows = {n: [] for n in names}
    stats: list[tuple[float, float]] = []

    def push(st: SimState, f_now: float):
        rows["t_s"].append(st.t)
        rows["force_n"].append(f_now)
        rows["drive_disp_m"].append(st.x[drive])
        rows["drive_vel_m_s"].append(st.v[drive])
        rows["drive_acc_m_s2"].append(st.a[drive])
        rows["omega_rad_s"].append(2.0 * math.pi / period)
        rows["alpha_r_rad"].append(2.0 * math.pi / period * st.t)
        rows["theta_hat_rad"].append(math.nan)
        for i, sd in enumerate(sens):
            rows[f"sens{i}_disp_m"].append(st.x[sd])
            rows[f"sens{i}_acc_m_s2"].append(st.a[sd])

    kchar = np.abs(model.stiffness).sum(axis=1).max()
    mchar = np.abs(model.mass).sum(axis=1).max()
    fscale = 0.0
    n_periods = 0
    settled_at = None
    while True:
        vs = np.empty(n_per)
        ph = np.exp(-2j * math.pi * np.arange(n_per) / n_per)
        for k in range(n_per):
            f = np.asarray(forcing(state.t + dt), dtype=float)
            atol = 1e-10 * fscale
            try:
                state = newmark_step(model, state, f, dt, atol=atol)
            except StepFailure:
                half = dt / 2.0
                state = newmark_step(model, state, forcing(state.t + half), half,
                                     atol=atol)
                state = newmark_step(model, state, f, half, atol=atol)
            fscale = max(fscale, np.abs(f).max(initial=0.0),
                         kchar * np.abs(state.x).max(),
                         mchar * np.abs(state.a).max())
            vs[k] = state.v[drive]
            if settled_at is not None:
                push(state, float(f[drive]))
        n_periods += 1
        stats.append((float(np.sqrt(np.mean(vs**2))), 2.0 * abs(np.mean(vs * ph))))
        if settled_at is not None and n_periods - settled_at >= steady.n_record:
            break
        if settled_at is None and n_periods >= max(steady.min_periods,
                                                   steady.consecutive + 1):
            tail = stats[-(steady.consecutive + 1):]
            ok = all(
                abs(c[0] - p[0]) <= steady.rel_tol * max(abs(c[0]), 1e-300)
                and abs(c[1] - p[1]) <= steady.rel_tol * max(abs(c[1]), 1e-300)
                for p, c in zip(tail, tail[1:]))
            if ok:
                settled_at = n_periods
                push(state, float(np.asarray(forcing(state.t))[drive]))
        if settled_at is None and n_periods > steady.max_periods:
            raise SteadyStateTimeout(
                f"no steady state within {steady.max_periods} periods",
                trace=stats)
    channels = {n: np.asarray(rows[n]) for n in names}
    return TimeSeriesRecord(dt, channels)
