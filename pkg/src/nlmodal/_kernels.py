"""Compiled inner loops: implicit Newmark stepping with friction elements,
closed-loop phase detection and PI frequency/amplitude control.

Private module.  All state crosses the boundary as plain float64/int64
arrays; the public wrappers live in :mod:`nlmodal.timesim` and
:mod:`nlmodal.pll`.
"""

import math

import numpy as np
from numba import njit

# forcing modes
FORCE_NONE = 0
FORCE_HARMONIC = 1
FORCE_PLL = 2
FORCE_PLL_AMP = 3

# response signal used by the phase detector
RESP_ACC = 0
RESP_VEL = 1
RESP_DISP = 2

# record channel layout: 8 fixed channels, then sensor displacements
# and sensor accelerations
CH_T = 0
CH_FORCE = 1
CH_DR_DISP = 2
CH_DR_VEL = 3
CH_DR_ACC = 4
CH_OMEGA = 5
CH_ALPHA = 6
CH_THETA = 7
CH_SENS0 = 8

# controller state vector layout
P_INTEG = 0    # PI integrator (rad/s)
P_ALPHA = 1    # reference phase (rad)
P_ZFI = 2      # low-pass I state, force channel
P_ZFQ = 3      # low-pass Q state, force channel
P_ZRI = 4      # low-pass I state, response channel
P_ZRQ = 5      # low-pass Q state, response channel
P_THETA = 6    # current phase-lag estimate (rad)
P_VALID = 7    # 1.0 once both detector magnitudes exceed the floor
P_Y = 8        # last controller output (rad/s)
P_FCMD = 9     # commanded force amplitude (N)
P_AINTEG = 10  # amplitude-loop integrator (N)
P_FROZEN = 11  # 1.0 freezes both controllers (recording window)
P_FSCALE = 12  # running characteristic force scale (N), for Newton tolerances
N_PLL_STATE = 13


@njit(cache=True)
def _wrap(a):
    """Wrap an angle to (-pi, pi]."""
    w = a - 2.0 * math.pi * math.floor((a + math.pi) / (2.0 * math.pi))
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


@njit(cache=True)
def _char_norms(M, K):
    """Row-sum (infinity) norms of the mass and stiffness matrices."""
    n = M.shape[0]
    kchar = 0.0
    mchar = 0.0
    for i in range(n):
        sk = 0.0
        sm = 0.0
        for j in range(n):
            sk += abs(K[i, j])
            sm += abs(M[i, j])
        if sk > kchar:
            kchar = sk
        if sm > mchar:
            mchar = sm
    return kchar, mchar


@njit(cache=True)
def _newmark_solve(M, C, K, Sinv, jdof, jkt, jfc, jw,
                   x, v, acc, xn, vn, an, r,
                   fd, drive, dt, kchar, mchar, fscale,
                   rtol, atol, max_iter):
    """One implicit average-acceleration step from (x, v, acc) to (xn, vn, an).

    Modified Newton with the all-stick effective-stiffness inverse.
    The residual criterion is relative to ``fscale``, a running
    characteristic force of the motion: near simultaneous zero crossings
    of displacement and acceleration the instantaneous force terms
    collapse while the cancellation noise of the acceleration update
    (4/dt^2 times a difference of O(x) numbers) does not, so a purely
    local scale would make the test unsatisfiable.  Friction slider
    states are not committed here.  Returns the iteration count, or -1
    on non-convergence.
    """
    n = x.shape[0]
    ne = jdof.shape[0]
    c0 = 4.0 / (dt * dt)
    for i in range(n):
        xn[i] = x[i] + dt * v[i] + 0.5 * dt * dt * acc[i]
    for it in range(max_iter):
        xmax = 0.0
        amax = 0.0
        for i in range(n):
            an[i] = c0 * (xn[i] - x[i] - dt * v[i]) - acc[i]
            vn[i] = v[i] + 0.5 * dt * (acc[i] + an[i])
            if abs(xn[i]) > xmax:
                xmax = abs(xn[i])
            if abs(an[i]) > amax:
                amax = abs(an[i])
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += M[i, j] * an[j] + C[i, j] * vn[j] + K[i, j] * xn[j]
            r[i] = -s
        r[drive] += fd
        for e in range(ne):
            d = jdof[e]
            ftr = jkt[e] * (xn[d] - jw[e])
            if ftr > jfc[e]:
                ftr = jfc[e]
            elif ftr < -jfc[e]:
                ftr = -jfc[e]
            r[d] -= ftr
        rnorm = 0.0
        for i in range(n):
            rnorm += r[i] * r[i]
        rnorm = math.sqrt(rnorm)
        scale = max(max(abs(fd), fscale), max(kchar * xmax, mchar * amax))
        if rnorm <= rtol * scale + atol:
            return it + 1
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += Sinv[i, j] * r[j]
            xn[i] += s
    return -1


@njit(cache=True)
def jenkins_march(u, kt, fc, w0, max_cycles, tol):
    """Cycle a Jenkins element over one period of samples ``u`` until the
    hysteresis loop repeats; returns (forces over the last cycle, final
    slider position, cycles used).  Returns cycles = -1 if the loop did
    not close within ``max_cycles``."""
    n = u.shape[0]
    f = np.empty(n)
    w = w0
    for cyc in range(max_cycles):
        w_start = w
        for j in range(n):
            ftr = kt * (u[j] - w)
            if ftr > fc:
                ftr = fc
                w = u[j] - fc / kt
            elif ftr < -fc:
                ftr = -fc
                w = u[j] + fc / kt
            f[j] = ftr
        if abs(w - w_start) <= tol:
            return f, w, cyc + 1
    return f, w, -1


@njit(cache=True)
def _commit_friction(jdof, jkt, jfc, jw, xn):
    for e in range(jdof.shape[0]):
        d = jdof[e]
        ftr = jkt[e] * (xn[d] - jw[e])
        if ftr > jfc[e]:
            jw[e] = xn[d] - jfc[e] / jkt[e]
        elif ftr < -jfc[e]:
            jw[e] = xn[d] + jfc[e] / jkt[e]


@njit(cache=True)
def run_chunk(M, C, K, Sinv_stack,
              jdof, jkt, jfc, jw,
              sensor_dofs, drive,
              x, v, acc, t0,
              dt, n_steps,
              mode, resp_kind,
              F_amp, Omega_fix,
              omega_m, Kp, Ki, y_clamp, lp_decay, mag_floor, theta_set,
              F_target, Kpa, Kia, F_max,
              pll, rec,
              rtol, atol, max_iter):
    """Integrate ``n_steps`` of the (possibly closed-loop) forced system.

    Mutates ``x, v, acc, jw, pll`` in place and fills ``rec`` (one column
    per step, channel layout per the CH_* constants).  Returns the end
    time on success or NaN if a step failed at the finest substep level.
    """
    n = x.shape[0]
    ns = sensor_dofs.shape[0]
    xn = np.empty(n)
    vn = np.empty(n)
    an = np.empty(n)
    r = np.empty(n)
    n_levels = Sinv_stack.shape[0]
    kchar, mchar = _char_norms(M, K)
    t = t0
    for k in range(n_steps):
        # excitation frequency and phase for this step
        if mode == FORCE_HARMONIC:
            omega = Omega_fix
        elif mode == FORCE_NONE:
            omega = 0.0
        else:
            omega = omega_m + pll[P_Y]
        alpha = pll[P_ALPHA] + omega * dt
        if mode == FORCE_NONE:
            fd = 0.0
        elif mode == FORCE_HARMONIC:
            fd = F_amp * math.cos(alpha)
        else:
            fd = pll[P_FCMD] * math.cos(alpha)

        # implicit step, substepping on Newton failure
        fscale = pll[P_FSCALE]
        ok = _newmark_solve(M, C, K, Sinv_stack[0], jdof, jkt, jfc, jw,
                            x, v, acc, xn, vn, an, r,
                            fd, drive, dt, kchar, mchar, fscale,
                            rtol, atol, max_iter)
        if ok < 0:
            jw_saved = jw.copy()
            done = False
            for lev in range(1, n_levels):
                nsub = 1 << lev
                dts = dt / nsub
                for e in range(jw.shape[0]):
                    jw[e] = jw_saved[e]
                failed = False
                for i in range(n):
                    xn[i] = x[i]
                    vn[i] = v[i]
                    an[i] = acc[i]
                for s in range(nsub):
                    ok_sub = _newmark_solve(M, C, K, Sinv_stack[lev],
                                            jdof, jkt, jfc, jw,
                                            xn.copy(), vn.copy(), an.copy(),
                                            xn, vn, an, r,
                                            fd, drive, dts, kchar, mchar, fscale,
                                            rtol, atol, max_iter)
                    if ok_sub < 0:
                        failed = True
                        break
                    _commit_friction(jdof, jkt, jfc, jw, xn)
                if not failed:
                    done = True
                    break
            if not done:
                return math.nan
        else:
            _commit_friction(jdof, jkt, jfc, jw, xn)

        xmax = 0.0
        amax = 0.0
        for i in range(n):
            x[i] = xn[i]
            v[i] = vn[i]
            acc[i] = an[i]
            if abs(xn[i]) > xmax:
                xmax = abs(xn[i])
            if abs(an[i]) > amax:
                amax = abs(an[i])
        fnew = max(abs(fd), max(kchar * xmax, mchar * amax))
        if fnew > fscale:
            pll[P_FSCALE] = fnew
        t = t + dt
        pll[P_ALPHA] = alpha

        # synchronous detection and controllers
        theta_hat = pll[P_THETA]
        if mode == FORCE_PLL or mode == FORCE_PLL_AMP:
            if resp_kind == RESP_ACC:
                resp = acc[drive]
            elif resp_kind == RESP_VEL:
                resp = v[drive]
            else:
                resp = x[drive]
            cref = math.cos(alpha)
            sref = math.sin(alpha)
            g = 1.0 - lp_decay
            pll[P_ZFI] = lp_decay * pll[P_ZFI] + g * (fd * cref)
            pll[P_ZFQ] = lp_decay * pll[P_ZFQ] + g * (fd * sref)
            pll[P_ZRI] = lp_decay * pll[P_ZRI] + g * (resp * cref)
            pll[P_ZRQ] = lp_decay * pll[P_ZRQ] + g * (resp * sref)
            mF = math.sqrt(pll[P_ZFI]**2 + pll[P_ZFQ]**2)
            mR = math.sqrt(pll[P_ZRI]**2 + pll[P_ZRQ]**2)
            if mF > mag_floor and mR > mag_floor:
                ph_f = math.atan2(-pll[P_ZFQ], pll[P_ZFI])
                ph_r = math.atan2(-pll[P_ZRQ], pll[P_ZRI])
                theta_hat = _wrap(ph_r - ph_f)
                pll[P_THETA] = theta_hat
                pll[P_VALID] = 1.0
            else:
                pll[P_VALID] = 0.0
            if pll[P_FROZEN] == 0.0 and pll[P_VALID] == 1.0:
                e = _wrap(theta_hat - theta_set)
                integ_new = pll[P_INTEG] + Ki * e * dt
                y = Kp * e + integ_new
                if y_clamp > 0.0 and abs(y) > y_clamp:
                    y = Kp * e + pll[P_INTEG]  # hold integration while clamped
                    if y > y_clamp:
                        y = y_clamp
                    elif y < -y_clamp:
                        y = -y_clamp
                else:
                    pll[P_INTEG] = integ_new
                pll[P_Y] = y
                if mode == FORCE_PLL_AMP:
                    ea = F_target - 2.0 * mF
                    aint_new = pll[P_AINTEG] + Kia * ea * dt
                    fcmd = Kpa * ea + aint_new
                    if fcmd < 0.0:
                        fcmd = 0.0
                        # hold integration while clamped
                    elif fcmd > F_max:
                        fcmd = F_max
                    else:
                        pll[P_AINTEG] = aint_new
                    pll[P_FCMD] = fcmd

        # record
        rec[CH_T, k] = t
        rec[CH_FORCE, k] = fd
        rec[CH_DR_DISP, k] = x[drive]
        rec[CH_DR_VEL, k] = v[drive]
        rec[CH_DR_ACC, k] = acc[drive]
        rec[CH_OMEGA, k] = omega
        rec[CH_ALPHA, k] = alpha
        rec[CH_THETA, k] = theta_hat
        for si in range(ns):
            rec[CH_SENS0 + si, k] = x[sensor_dofs[si]]
            rec[CH_SENS0 + ns + si, k] = acc[sensor_dofs[si]]
    return t
