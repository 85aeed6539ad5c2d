"""Direct computation of the damped nonlinear mode by harmonic balance.

The periodic motions of the autonomous system are made possible by a
mass-proportional negative damping term ``-xi * M * xdot`` that balances
the friction and viscous dissipation; the modal damping ratio follows
from ``xi = 2 * zeta * omega``.  The friction force is evaluated by
alternating between frequency and time domains (AFT): displacement
harmonics are synthesized to a sampled cycle, the Jenkins elements are
marched to their steady hysteresis loop, and the forces are transformed
back.

The modal amplitude uses the same sensor-restricted pseudoinverse metric
as the virtual experiment, so both backbones share one amplitude axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kn
from .identify import modal_amplitude
from .structure import LinearModeSet, StructuralModel, linear_modes


class ContinuationError(RuntimeError):
    """Amplitude continuation stalled; carries the partial backbone."""

    def __init__(self, message, solutions=None):
        super().__init__(message)
        self.solutions = solutions or []


@dataclass(frozen=True)
class EpmcSolution:
    """One converged point of the damped nonlinear mode."""

    a: float
    omega: float
    xi: float
    harmonics: np.ndarray          # (n_dof, H+1) complex
    residual_norm: float
    converged: bool
    n_iter: int
    sensor_dofs: tuple[int, ...]
    drive_dof: int
    n_time: int = 4096

    @property
    def zeta(self) -> float:
        return self.xi / (2.0 * self.omega)

    @property
    def x1_sensors(self) -> np.ndarray:
        return self.harmonics[list(self.sensor_dofs), 1]

    @property
    def phi1(self) -> np.ndarray:
        return self.x1_sensors / self.a

    def thd_acceleration(self) -> float:
        """THD of the drive-point acceleration reconstructed from harmonics."""
        H = self.harmonics.shape[1] - 1
        acc = np.array([-(n * self.omega) ** 2 * self.harmonics[self.drive_dof, n]
                        for n in range(H + 1)])
        total = float(np.sum(np.abs(acc[1:]) ** 2))
        return math.sqrt(float(np.sum(np.abs(acc[2:]) ** 2)) / total)


# ---------------------------------------------------------------------------
# AFT evaluation of the friction force
# ---------------------------------------------------------------------------

def _synthesize_cycle(coeffs: np.ndarray, n_time: int) -> np.ndarray:
    """Time samples over one period from complex harmonics (H+1,)."""
    H = coeffs.shape[0] - 1
    spec = np.zeros(n_time // 2 + 1, dtype=complex)
    spec[0] = coeffs[0]
    spec[1:H + 1] = 0.5 * coeffs[1:]
    return np.fft.irfft(spec * n_time, n_time)


def _analyze_cycle(samples: np.ndarray, H: int) -> np.ndarray:
    spec = np.fft.rfft(samples) / samples.shape[0]
    out = np.zeros(H + 1, dtype=complex)
    out[0] = spec[0].real
    out[1:] = 2.0 * spec[1:H + 1]
    return out


def aft_nonlinear_force(harmonics: np.ndarray, omega: float,
                        model: StructuralModel, H: int,
                        n_time: int = 4096,
                        max_cycles: int = 64) -> np.ndarray:
    """Fourier coefficients of the friction forces for given displacement
    harmonics (n_dof, H+1).

    Each Jenkins element is cycled over the sampled period until its
    hysteresis loop repeats (steady loop), then the last cycle is
    transformed.  ``n_time`` must be a power of two with at least
    ``4*H + 4`` samples.
    """
    if n_time < 4 * H + 4:
        raise ValueError("n_time must be at least 4*H + 4")
    if n_time & (n_time - 1):
        raise ValueError("n_time must be a power of two")
    G = np.zeros_like(harmonics)
    for el in model.friction_elements:
        u = _synthesize_cycle(harmonics[el.dof], n_time)
        f, _, cycles = kn.jenkins_march(u, el.kt, el.fc, 0.0, max_cycles,
                                        1e-13 * max(1.0, el.fc / el.kt))
        if cycles < 0:
            raise ContinuationError(
                "hysteresis loop did not repeat within the cycle budget")
        G[el.dof] += _analyze_cycle(f, H)
    return G


# ---------------------------------------------------------------------------
# harmonic-balance residual
# ---------------------------------------------------------------------------

class _Context:
    """Packing, scaling and shared data for the residual of one model."""

    def __init__(self, model: StructuralModel, modes_stuck: LinearModeSet,
                 H: int, n_time: int):
        self.model = model
        self.H = H
        self.n_time = n_time
        self.n = model.n_dof
        self.omega_ref = float(modes_stuck.frequencies[0])
        self.sensor_dofs = list(model.sensor_dofs)
        self.Phi = modes_stuck.shapes
        self.anchor_sensor = self.sensor_dofs.index(model.drive_dof)
        # force scale of the orbit: inertial force of a unit-amplitude mode;
        # a stiffness row-norm would overstate it by orders of magnitude
        # (rotational rows) and let sloppy solutions pass as converged
        mchar = float(np.abs(model.mass).sum(axis=1).max())
        self.block_scale = np.array(
            [mchar * self.omega_ref ** 2 * max(1, n * n) for n in range(H + 1)])

    @property
    def n_unknowns(self) -> int:
        return self.n * (2 * self.H + 1) + 2

    def pack(self, harmonics: np.ndarray, omega: float, xi: float,
             a: float) -> np.ndarray:
        z = np.empty(self.n_unknowns)
        z[:self.n] = harmonics[:, 0].real / a
        off = self.n
        for h in range(1, self.H + 1):
            z[off:off + self.n] = harmonics[:, h].real / a
            z[off + self.n:off + 2 * self.n] = harmonics[:, h].imag / a
            off += 2 * self.n
        z[-2] = omega / self.omega_ref
        z[-1] = xi / self.omega_ref
        return z

    def unpack(self, z: np.ndarray, a: float):
        X = np.zeros((self.n, self.H + 1), dtype=complex)
        X[:, 0] = z[:self.n] * a
        off = self.n
        for h in range(1, self.H + 1):
            X[:, h] = (z[off:off + self.n]
                       + 1j * z[off + self.n:off + 2 * self.n]) * a
            off += 2 * self.n
        return X, z[-2] * self.omega_ref, z[-1] * self.omega_ref


def epmc_residual(z: np.ndarray, a: float, ctx: _Context) -> np.ndarray:
    """Scaled harmonic-balance residual of the self-excited periodic motion.

    Dynamic blocks ``[-(n w)^2 M + i n w (C - xi M) + K] X_n + G_n`` per
    harmonic (scaled by the characteristic dynamic stiffness and the
    amplitude), one amplitude-normalization constraint
    ``modal_amplitude(X_1) = a`` and one phase anchor
    ``Im(X_1[drive sensor]) = 0``.
    """
    model = ctx.model
    X, omega, xi = ctx.unpack(z, a)
    G = aft_nonlinear_force(X, omega, model, ctx.H, ctx.n_time)
    M, C, K = model.mass, model.viscous_damping, model.stiffness
    r = np.empty(ctx.n_unknowns)
    r[:ctx.n] = (K @ X[:, 0].real + G[:, 0].real) / (a * ctx.block_scale[0])
    off = ctx.n
    for h in range(1, ctx.H + 1):
        w = h * omega
        R = (-(w * w) * (M @ X[:, h]) + 1j * w * (C @ X[:, h] - xi * (M @ X[:, h]))
             + K @ X[:, h] + G[:, h])
        s = a * ctx.block_scale[h]
        r[off:off + ctx.n] = R.real / s
        r[off + ctx.n:off + 2 * ctx.n] = R.imag / s
        off += 2 * ctx.n
    x1s = X[ctx.sensor_dofs, 1]
    if np.any(np.abs(x1s) > 0):
        a_est = modal_amplitude(x1s, ctx.Phi)
    else:
        a_est = 0.0
    r[-2] = (a_est - a) / a
    r[-1] = X[ctx.sensor_dofs[ctx.anchor_sensor], 1].imag / a
    return r


def _fd_jacobian(fun, z0, r0, rel_step=1e-7):
    n = z0.size
    J = np.empty((n, r0.size))
    for i in range(n):
        h = rel_step * max(1.0, abs(z0[i]))
        zp = z0.copy()
        zp[i] += h
        J[i] = (fun(zp) - r0) / h
    return J.T


def _newton(fun, z0, tol, max_iter):
    z = z0.copy()
    r = fun(z)
    best = (float(np.linalg.norm(r)), z.copy(), r.copy())
    for it in range(max_iter):
        rnorm = float(np.linalg.norm(r))
        if rnorm < best[0]:
            best = (rnorm, z.copy(), r.copy())
        if rnorm <= tol:
            return z, rnorm, it, True
        J = _fd_jacobian(fun, z, r)
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return best[1], best[0], it, False
        # backtracking on the residual norm
        step = 1.0
        for _ in range(8):
            z_try = z + step * dz
            r_try = fun(z_try)
            if np.linalg.norm(r_try) < rnorm:
                z, r = z_try, r_try
                break
            step *= 0.5
        else:
            return best[1], best[0], it + 1, False
    rnorm = float(np.linalg.norm(r))
    return z, rnorm, max_iter, rnorm <= tol


def solve_epmc_point(model: StructuralModel, a: float,
                     z0: np.ndarray | None = None,
                     modes_stuck: LinearModeSet | None = None,
                     H: int = 7, n_time: int = 4096,
                     tol: float = 1e-8, max_iter: int = 25) -> EpmcSolution:
    """Newton-correct one amplitude point of the damped nonlinear mode."""
    modes_stuck = modes_stuck or linear_modes(model, "stuck")
    ctx = _Context(model, modes_stuck, H, n_time)
    if z0 is None:
        z0 = _linear_seed(ctx, modes_stuck, a)
    z, rnorm, it, ok = _newton(lambda zz: epmc_residual(zz, a, ctx), z0,
                               tol, max_iter)
    X, omega, xi = ctx.unpack(z, a)
    return EpmcSolution(a=a, omega=omega, xi=xi, harmonics=X,
                        residual_norm=rnorm, converged=ok, n_iter=it,
                        sensor_dofs=tuple(model.sensor_dofs),
                        drive_dof=model.drive_dof, n_time=n_time)


def _linear_seed(ctx: _Context, modes_stuck: LinearModeSet, a: float) -> np.ndarray:
    X = np.zeros((ctx.n, ctx.H + 1), dtype=complex)
    X[:, 1] = a * modes_stuck.shapes_full[:, 0]
    om = float(modes_stuck.frequencies[0])
    xi = 2.0 * float(modes_stuck.damping_ratios[0]) * om
    return ctx.pack(X, om, xi, a)


def trace_epmc_backbone(model: StructuralModel, a_range,
                        H: int = 7, n_time: int = 4096,
                        tol: float = 1e-8, max_iter: int = 25,
                        min_rel_step: float = 1e-4) -> list[EpmcSolution]:
    """Continue the damped nonlinear mode over a log-spaced amplitude range.

    Secant prediction from the previous two solutions in log-amplitude;
    on Newton failure the amplitude step toward the next target is halved
    (down to ``min_rel_step`` decades) before declaring a stall.
    Intermediate bisection points that converged are included in the
    returned list.  The first point is seeded from the stuck linear mode.
    """
    a_range = np.sort(np.asarray(a_range, dtype=float))
    if np.any(a_range <= 0):
        raise ValueError("amplitudes must be positive")
    modes_stuck = linear_modes(model, "stuck")
    ctx = _Context(model, modes_stuck, H, n_time)

    solutions: list[EpmcSolution] = []
    history: list[tuple[float, np.ndarray]] = []  # (log a, z), last two

    def predict(la):
        if len(history) >= 2:
            (la1, z1), (la2, z2) = history
            if la2 != la1:
                return z2 + (z2 - z1) * ((la - la2) / (la2 - la1))
        return history[-1][1]

    def accept(la, z, rnorm, it):
        a = math.exp(la)
        X, omega, xi = ctx.unpack(z, a)
        solutions.append(EpmcSolution(
            a=a, omega=omega, xi=xi, harmonics=X, residual_norm=rnorm,
            converged=True, n_iter=it, sensor_dofs=tuple(model.sensor_dofs),
            drive_dof=model.drive_dof, n_time=n_time))
        history.append((la, z))
        del history[:-2]

    la0 = math.log(a_range[0])
    z, rnorm, it, ok = _newton(
        lambda zz: epmc_residual(zz, math.exp(la0), ctx),
        _linear_seed(ctx, modes_stuck, a_range[0]), tol, max_iter)
    if not ok:
        raise ContinuationError(
            f"no convergence at the first amplitude {a_range[0]:.3e} "
            f"(residual {rnorm:.2e})", solutions)
    accept(la0, z, rnorm, it)
    la_done = la0

    for la_target in [math.log(a) for a in a_range[1:]]:
        while la_done < la_target - 1e-15:
            la_try = la_target
            while True:
                a_try = math.exp(la_try)
                z, rnorm, it, ok = _newton(
                    lambda zz: epmc_residual(zz, a_try, ctx),
                    predict(la_try), tol, max_iter)
                if ok:
                    accept(la_try, z, rnorm, it)
                    la_done = la_try
                    break
                if la_try - la_done <= min_rel_step:
                    raise ContinuationError(
                        f"continuation stalled near amplitude "
                        f"{math.exp(la_done):.3e} (residual {rnorm:.2e})",
                        solutions)
                la_try = la_done + 0.5 * (la_try - la_done)
    return solutions


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def power_balance_residual(sol: EpmcSolution, model: StructuralModel,
                           n_time: int | None = None) -> float:
    """Relative mismatch of the cycle power balance: the artificial
    negative damping input ``xi * cycle-mean(v' M v)`` against the viscous
    plus friction dissipation.

    The friction power is evaluated from the retained force harmonics,
    consistent with the truncation the solution satisfies; power carried
    by neglected harmonics belongs to the truncation error, not to the
    balance.
    """
    H = sol.harmonics.shape[1] - 1
    n_time = n_time or sol.n_time
    M, C = model.mass, model.viscous_damping
    p_in = 0.0
    p_visc = 0.0
    for n in range(1, H + 1):
        vn = 1j * n * sol.omega * sol.harmonics[:, n]
        p_in += 0.5 * float((vn.conj() @ M @ vn).real)
        p_visc += 0.5 * float((vn.conj() @ C @ vn).real)
    p_in *= sol.xi
    G = aft_nonlinear_force(sol.harmonics, sol.omega, model, H, n_time)
    p_fric = 0.0
    for d in sorted({el.dof for el in model.friction_elements}):
        for n in range(1, H + 1):
            vn = 1j * n * sol.omega * sol.harmonics[d, n]
            p_fric += 0.5 * float((G[d, n] * np.conj(vn)).real)
    p_out = p_visc + p_fric
    scale = max(abs(p_in), abs(p_out), 1e-300)
    return abs(p_in - p_out) / scale
