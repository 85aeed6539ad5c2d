import math

import numpy as np
import pytest
from scipy.optimize import brentq

from nlmodal.identify import fourier_coefficients, harmonic_fit
from nlmodal.pll import (
    Backbone,
    LockError,
    PiController,
    PllConfig,
    SynchronousDetector,
    default_pll_config,
    lock_phase_point,
    pi_controller_step,
    run_stepped_sine_frf,
    setpoint_for_signal,
    synchronous_detect_step,
    track_backbone,
)
from nlmodal.structure import linear_modes


def drive_point_frf(model, contact="stuck"):
    """Analytic drive-point receptance of a linear contact limit."""
    K = model.stuck_stiffness() if contact == "stuck" else model.stiffness
    M, C = model.mass, model.viscous_damping
    d = model.drive_dof
    e = np.zeros(model.n_dof)
    e[d] = 1.0

    def H(om):
        return np.linalg.solve(-om**2 * M + 1j * om * C + K, e)[d]

    return H


class TestSynchronousDetector:
    def test_pure_quadrature_pair(self):
        # the 1e-3 accuracy needs the first-order filter to crush the
        # 2*Omega demodulation ripple: 2*Omega*tau must exceed ~2000
        om = 2 * math.pi * 1000.0
        tau = 0.4
        dt = 1e-5
        det = SynchronousDetector(lp_time_constant=tau)
        t = 0.0
        for _ in range(int(5 * tau / dt)):
            t += dt
            alpha = om * t
            theta = synchronous_detect_step(
                det, math.cos(alpha), math.cos(alpha - math.pi / 2), alpha, dt)
        assert det.valid
        assert theta == pytest.approx(-math.pi / 2, abs=1e-3)

    def test_third_harmonic_rejected(self):
        om = 2 * math.pi * 1000.0
        tau = 0.4
        dt = 1e-5
        results = []
        for extra in (0.0, 0.3):
            det = SynchronousDetector(lp_time_constant=tau)
            t = 0.0
            for _ in range(int(5 * tau / dt)):
                t += dt
                alpha = om * t
                resp = math.cos(alpha - 0.7) + extra * math.cos(3 * alpha + 0.4)
                theta = det.step(math.cos(alpha), resp, alpha, dt)
            results.append(theta)
        assert results[1] == pytest.approx(results[0], abs=1e-3)
        assert results[0] == pytest.approx(-0.7, abs=1e-3)

    def test_zero_response_undefined(self):
        det = SynchronousDetector(lp_time_constant=0.01)
        for k in range(1000):
            theta = det.step(math.cos(0.01 * k), 0.0, 0.01 * k, 1e-4)
        assert not det.valid
        assert math.isnan(theta)


class TestPiController:
    def test_pure_proportional(self):
        ctrl = PiController(kp=2.0, ki=0.0)
        assert pi_controller_step(ctrl, 0.5, 0.01) == pytest.approx(1.0)

    def test_integrator_ramp(self):
        ctrl = PiController(kp=0.0, ki=1.0)
        dt = 1e-4
        y = 0.0
        for _ in range(int(2.0 / dt)):
            y = ctrl.step(1.0, dt)
        assert y == pytest.approx(2.0, abs=2 * dt)

    def test_clamp_freezes_integrator(self):
        ctrl = PiController(kp=1.0, ki=1.0, clamp=1.0)
        for _ in range(100):
            y = ctrl.step(10.0, 0.1)
        assert y == pytest.approx(1.0)
        assert ctrl.integrator == pytest.approx(0.0)


class TestConventions:
    def test_setpoint_conversion(self):
        th = math.pi / 2
        assert setpoint_for_signal(th, "acceleration") == pytest.approx(th)
        assert setpoint_for_signal(th, "velocity") == pytest.approx(0.0)
        assert setpoint_for_signal(th, "displacement") == pytest.approx(-math.pi / 2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PllConfig(omega_m=-1.0)
        with pytest.raises(ValueError):
            PllConfig(omega_m=100.0, kp=-1.0)
        with pytest.raises(ValueError):
            PllConfig(omega_m=100.0, signal_pair="jerk")

    def test_default_gain_scaling(self):
        cfg = default_pll_config(2.0 * 230.0 * math.pi)
        assert cfg.kp == pytest.approx(30.0)
        assert cfg.ki == pytest.approx(12.0 * math.pi)
        assert cfg.lp_time_constant == pytest.approx(1.0 / math.pi)


class TestLockPhasePoint:
    def test_phase_resonance_matches_eigenfrequency(self, stuck_model):
        om1 = linear_modes(stuck_model, "stuck").frequencies[0]
        cfg = default_pll_config(stuck_model)
        res = lock_phase_point(stuck_model, cfg, 1e-3)
        assert res.omega == pytest.approx(om1, rel=1e-3)

    def test_quarter_phase_matches_frf_oracle(self, stuck_model):
        om1 = linear_modes(stuck_model, "stuck").frequencies[0]
        H = drive_point_frf(stuck_model)
        target = math.pi / 4

        def phase_err(om):
            acc_phase = np.angle(-om**2 * H(om))
            return acc_phase - target

        om_ref = brentq(phase_err, om1 * 0.99, om1 * 1.01, xtol=1e-6)
        cfg = default_pll_config(stuck_model, theta_setpoint=target)
        res = lock_phase_point(stuck_model, cfg, 1e-3)
        assert res.omega == pytest.approx(om_ref, rel=2e-3)

    def test_zero_force_fails(self, stuck_model):
        cfg = default_pll_config(stuck_model)
        with pytest.raises(ValueError):
            lock_phase_point(stuck_model, cfg, 0.0)

    def test_unlockable_gains_raise(self, stuck_model):
        from nlmodal.timesim import SteadyConfig
        cfg = default_pll_config(stuck_model, ki=200.0, kp=0.0,
                                 lp_time_constant=0.5)
        with pytest.raises(LockError):
            lock_phase_point(stuck_model, cfg, 1e-3,
                             steady=SteadyConfig(max_periods=300, window=50))

    def test_locked_record_invariants(self, stuck_model):
        cfg = default_pll_config(stuck_model)
        res = lock_phase_point(stuck_model, cfg, 1e-3)
        rec = res.record
        # frequency exactly constant over the recorded window
        om = rec["omega_rad_s"]
        assert np.abs(om - om.mean()).max() / om.mean() < 1e-6
        # excitation force is a pure fundamental of the reference phase
        coeffs = harmonic_fit(rec["force_n"], rec["alpha_r_rad"], 7)
        total = np.linalg.norm(coeffs[1:])
        assert np.linalg.norm(coeffs[2:]) / total < 1e-10
        # reference phase non-decreasing
        assert np.all(np.diff(rec["alpha_r_rad"]) > 0)

    def test_phase_resonance_maximizes_response(self, stuck_model):
        F = 1e-3
        amps = {}
        for theta in (math.radians(75), math.pi / 2, math.radians(105)):
            cfg = default_pll_config(stuck_model, theta_setpoint=theta)
            res = lock_phase_point(stuck_model, cfg, F)
            hs = fourier_coefficients(res.record, res.omega, 3,
                                      channels=["drive_disp_m"])
            amps[theta] = abs(hs.coeff("drive_disp_m")[1])
        assert amps[math.pi / 2] >= max(amps.values()) * (1 - 1e-6)


class TestTrackBackbone:
    def test_single_level(self, stuck_model):
        cfg = default_pll_config(stuck_model)
        bb = track_backbone(stuck_model, cfg, [1e-3])
        assert len(bb.points) == 1
        assert bb.valid.all()
        assert bb.direction == "increasing"

    def test_schedule_validation(self, stuck_model):
        cfg = default_pll_config(stuck_model)
        with pytest.raises(ValueError):
            track_backbone(stuck_model, cfg, [])
        with pytest.raises(ValueError):
            track_backbone(stuck_model, cfg, [1e-3, 5e-3, 2e-3])

    def test_up_down_repeatability(self, default_model):
        cfg = default_pll_config(default_model)
        levels = np.array([0.02, 0.06, 0.18])
        up = track_backbone(default_model, cfg, levels, keep_records=False)
        down = track_backbone(default_model, cfg, levels[::-1], keep_records=False)
        assert down.direction == "decreasing"
        for pu, pd in zip(up.points, down.points[::-1]):
            assert pd.omega == pytest.approx(pu.omega, rel=0.02)
            assert pd.a == pytest.approx(pu.a, rel=0.05)

    def test_csv_schema(self, stuck_model, tmp_path):
        cfg = default_pll_config(stuck_model)
        bb = track_backbone(stuck_model, cfg, [1e-3, 2e-3])
        path = tmp_path / "backbone.csv"
        bb.to_csv(path)
        lines = path.read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:8] == ["level_index", "F1_N", "omega_rad_s", "omega_norm",
                              "zeta", "modal_amplitude", "thd_response",
                              "valid_flag"]
        assert "sens0_h0_m" in header and f"sens6_h7_m" in header
        assert header[-1] == "source"
        assert len(lines) == 3
        assert lines[1].split(",")[-1] == "pll"


class TestSteppedSine:
    def test_linear_regime_points_on_analytic_frf(self, stuck_model):
        Href = drive_point_frf(stuck_model)
        F = 1e-3
        cfg = default_pll_config(stuck_model)
        setpoints = [math.radians(d) for d in (150, 120, 90, 60, 30)]
        frf = run_stepped_sine_frf(stuck_model, cfg, F, setpoints)
        assert not frf.failures
        tip = list(stuck_model.sensor_dofs).index(stuck_model.drive_dof)
        for p in frf.points:
            assert p.F1 == pytest.approx(F, rel=5e-3)
            expected = abs(Href(p.omega)) * F
            assert abs(p.x1_sensors[tip]) == pytest.approx(expected, rel=0.01)

    def test_resonant_setpoint_matches_backbone(self, stuck_model):
        F = 1e-3
        cfg = default_pll_config(stuck_model)
        frf = run_stepped_sine_frf(stuck_model, cfg, F, [math.pi / 2])
        bb = track_backbone(stuck_model, cfg, [F])
        p = frf.points[0]
        bp = bb.points[0]
        assert p.omega == pytest.approx(bp.omega, rel=1e-3)
        tip = list(stuck_model.sensor_dofs).index(stuck_model.drive_dof)
        assert abs(p.x1_sensors[tip]) == pytest.approx(
            bp.a * abs(bp.phi1[tip]), rel=0.01)

    def test_actuator_saturation_marks_invalid(self, stuck_model):
        cfg = default_pll_config(stuck_model)
        frf = run_stepped_sine_frf(stuck_model, cfg, 1e-3, [math.pi / 2],
                                   F_max=1e-4)
        assert not frf.points[0].valid
        assert 0 in frf.failures

    def test_setpoint_validation(self, stuck_model):
        cfg = default_pll_config(stuck_model)
        with pytest.raises(ValueError):
            run_stepped_sine_frf(stuck_model, cfg, 1e-3, [0.0])
        with pytest.raises(ValueError):
            run_stepped_sine_frf(stuck_model, cfg, -1.0, [math.pi / 2])

    def test_csv_schema(self, stuck_model, tmp_path):
        cfg = default_pll_config(stuck_model)
        frf = run_stepped_sine_frf(stuck_model, cfg, 1e-3,
                                   [math.radians(100), math.radians(80)])
        path = tmp_path / "frf.csv"
        frf.to_csv(path)
        lines = path.read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:3] == ["theta_setpoint_deg", "omega_rad_s", "F1_N"]
        assert "sens0_amp_m" in header and "sens6_phase_rad" in header
        assert header[-1] == "valid_flag"
        assert len(lines) == 3
