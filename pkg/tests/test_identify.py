import math

import numpy as np
import pytest

from conftest import make_sdof

from nlmodal.identify import (
    HarmonicSet,
    IdentifyError,
    active_power,
    extract_backbone_point,
    fourier_coefficients,
    fourier_of_samples,
    integrate_acceleration,
    modal_amplitude,
    modal_damping,
    mode_projection,
    thd,
)
from nlmodal.structure import linear_modes
from nlmodal.timesim import HarmonicForcing, SteadyConfig, TimeSeriesRecord, run_to_steady_state


def synth_record(omega, n_periods=10, samples_per_period=500, **signals):
    T = 2 * math.pi / omega
    dt = T / samples_per_period
    n = n_periods * samples_per_period + 1
    t = np.arange(n) * dt
    channels = {"t_s": t}
    for name, fn in signals.items():
        channels[name] = fn(t)
    return TimeSeriesRecord(dt, channels)


class TestFourier:
    def test_pure_cosine(self):
        om = 2 * math.pi * 7.0
        rec = synth_record(om, sig=lambda t: 2.0 * np.cos(om * t))
        hs = fourier_coefficients(rec, om, 5, channels=["sig"])
        c = hs.coeff("sig")
        assert abs(c[1] - 2.0) < 1e-8
        assert np.all(np.abs(np.delete(c, 1)) < 1e-8)

    def test_dc_plus_shifted_third_harmonic(self):
        om = 2 * math.pi * 3.0
        rec = synth_record(om, sig=lambda t: 1.0 + np.cos(3 * om * t - math.pi / 3))
        hs = fourier_coefficients(rec, om, 5, channels=["sig"])
        c = hs.coeff("sig")
        assert abs(c[0] - 1.0) < 1e-8
        assert abs(c[3] - np.exp(-1j * math.pi / 3)) < 1e-8

    def test_half_period_window_rejected(self):
        om = 2 * math.pi * 5.0
        T = 2 * math.pi / om
        dt = T / 500
        n = int(9.5 * 500) + 1
        t = np.arange(n) * dt
        with pytest.raises(IdentifyError):
            fourier_of_samples(np.cos(om * t), t, om, 3)

    def test_nyquist_violation_rejected(self):
        om = 2 * math.pi * 5.0
        rec = synth_record(om, samples_per_period=20, sig=lambda t: np.cos(om * t))
        with pytest.raises(IdentifyError):
            fourier_coefficients(rec, om, 15, channels=["sig"])

    def test_parseval_consistency(self):
        om = 2 * math.pi * 4.0
        rng = np.random.default_rng(7)
        coef = rng.standard_normal(6) + 1j * rng.standard_normal(6)

        def sig(t):
            x = np.full_like(t, 0.3)
            for n in range(1, 6):
                x += (coef[n] * np.exp(1j * n * om * t)).real
            return x

        rec = synth_record(om, sig=sig)
        hs = fourier_coefficients(rec, om, 7, channels=["sig"])
        c = hs.coeff("sig")
        rms_coef = math.sqrt(c[0].real**2 + 0.5 * float(np.sum(np.abs(c[1:])**2)))
        x = rec["sig"][:-1]  # drop duplicated endpoint sample
        rms_sig = math.sqrt(float(np.mean(x**2)))
        assert rms_coef == pytest.approx(rms_sig, rel=1e-6)

    def test_reconstruct(self):
        om = 2 * math.pi * 2.0
        rec = synth_record(om, sig=lambda t: np.cos(om * t) + 0.2 * np.sin(2 * om * t))
        hs = fourier_coefficients(rec, om, 3, channels=["sig"])
        t = rec["t_s"]
        np.testing.assert_allclose(hs.reconstruct("sig", t), rec["sig"], atol=1e-8)

    def test_csv_export(self, tmp_path):
        om = 2 * math.pi * 2.0
        rec = synth_record(om, sig=lambda t: np.cos(om * t))
        hs = fourier_coefficients(rec, om, 3, channels=["sig"])
        path = tmp_path / "h.csv"
        hs.to_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "harmonic,re_sig,im_sig"
        assert len(lines) == 5


class TestActivePower:
    def test_in_phase_unit_pair(self):
        assert active_power(1.0 + 0j, 1.0 + 0j) == pytest.approx(0.5)

    def test_quadrature_pair(self):
        assert active_power(1.0 + 0j, 1j) == pytest.approx(0.0)

    def test_hand_evaluated_and_time_average(self):
        F1 = 2.0 * np.exp(1j * math.pi / 4)
        v1 = 3.0 * np.exp(1j * math.pi / 4)
        assert active_power(F1, v1) == pytest.approx(3.0)
        om = 5.0
        t = np.linspace(0, 2 * math.pi / om, 20001)
        f = (F1 * np.exp(1j * om * t)).real
        v = (v1 * np.exp(1j * om * t)).real
        assert np.trapezoid(f * v, t) / t[-1] == pytest.approx(3.0, rel=1e-6)


class TestModalAmplitude:
    def test_single_mode_content(self, default_model):
        modes = linear_modes(default_model, "stuck")
        x1 = 3.0 * modes.shapes[:, 1].astype(complex)
        assert modal_amplitude(x1, modes) == pytest.approx(3.0, abs=1e-10)

    def test_two_mode_content(self, default_model):
        modes = linear_modes(default_model, "stuck")
        a = 1.7
        x1 = a * (0.6 * modes.shapes[:, 0] + 0.8 * modes.shapes[:, 2]).astype(complex)
        assert modal_amplitude(x1, modes) == pytest.approx(a, abs=1e-10)

    def test_out_of_span_component_ignored(self):
        rng = np.random.default_rng(3)
        Phi = rng.standard_normal((7, 3))
        y0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        r = rng.standard_normal(7) + 1j * rng.standard_normal(7)
        r -= Phi @ np.linalg.lstsq(Phi, r, rcond=None)[0]  # orthogonal remainder
        x1 = Phi @ y0 + r
        a = modal_amplitude(x1, Phi)
        assert a == pytest.approx(np.linalg.norm(y0), rel=1e-10)

    def test_full_sensor_set_recovers_mass_metric(self):
        rng = np.random.default_rng(11)
        A = rng.standard_normal((4, 4))
        M = A @ A.T + 4 * np.eye(4)
        K = rng.standard_normal((4, 4))
        K = K @ K.T + 8 * np.eye(4)
        import scipy.linalg as sla
        lam, Phi = sla.eigh(K, M)
        x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        a2 = modal_amplitude(x, Phi) ** 2
        assert a2 == pytest.approx(float((x.conj() @ M @ x).real), rel=1e-8)

    def test_rank_deficient_rejected(self):
        Phi = np.ones((5, 2))
        with pytest.raises(IdentifyError):
            modal_amplitude(np.ones(5, dtype=complex), Phi)


class TestModalDamping:
    def test_arithmetic(self):
        assert modal_damping(8.0, 2.0, 1.0) == pytest.approx(1.0)

    def test_zero_amplitude_rejected(self):
        with pytest.raises(IdentifyError):
            modal_damping(1.0, 2.0, 0.0)

    def test_sdof_phase_resonance_recovery(self):
        zeta = 0.01
        om = 2 * math.pi * 10.0
        model = make_sdof(omega=om, zeta=zeta)
        rec = run_to_steady_state(model, HarmonicForcing(0.5, om),
                                  steady=SteadyConfig(rel_tol=1e-5),
                                  dt=2 * math.pi / om / 500)
        hs = fourier_coefficients(rec, om, 3,
                                  channels=["force_n", "drive_disp_m", "drive_vel_m_s"])
        P1 = active_power(hs.coeff("force_n")[1], hs.coeff("drive_vel_m_s")[1])
        a = modal_amplitude(np.array([hs.coeff("drive_disp_m")[1]]), np.eye(1))
        assert modal_damping(P1, om, a) == pytest.approx(zeta, abs=1e-3)


class TestModeProjection:
    def test_identity_case(self, default_model):
        modes = linear_modes(default_model, "stuck")
        gamma, norm = mode_projection(modes.shapes[:, 0].astype(complex), modes)
        np.testing.assert_allclose(gamma, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(norm, [1, 0, 0], atol=1e-12)

    def test_square_invertible_mixture(self):
        rng = np.random.default_rng(5)
        Phi = rng.standard_normal((2, 2))
        phi1 = 0.6 * Phi[:, 0] + 0.8 * Phi[:, 1]
        gamma, norm = mode_projection(phi1.astype(complex), Phi)
        np.testing.assert_allclose(gamma, [0.6, 0.8], atol=1e-10)
        assert norm.sum() == pytest.approx(1.0, abs=1e-15)


class TestThd:
    def _hs(self, coeffs):
        c = np.asarray(coeffs, dtype=complex)[None, :]
        return HarmonicSet(omega=1.0, channel_names=("x",), coeffs=c,
                           n_periods_used=1)

    def test_pure_fundamental(self):
        assert thd(self._hs([0, 1, 0, 0]), "x") == 0.0

    def test_equal_first_and_third(self):
        assert thd(self._hs([0, 1, 0, 1]), "x") == pytest.approx(
            1 / math.sqrt(2), abs=1e-9)

    def test_all_zero_rejected(self):
        with pytest.raises(IdentifyError):
            thd(self._hs([0.5, 0, 0]), "x")

    def test_dc_excluded(self):
        assert thd(self._hs([7.0, 1, 0, 0]), "x") == 0.0


class TestIntegrateAcceleration:
    def test_harmonic_roundtrip(self):
        om = 2 * math.pi * 9.0
        A = 2.5e-4
        T = 2 * math.pi / om
        t = np.arange(10 * 500 + 1) * (T / 500)
        acc = -A * om**2 * np.cos(om * t)
        disp = integrate_acceleration(acc, t[1] - t[0])
        np.testing.assert_allclose(disp, A * np.cos(om * t), atol=1e-3 * A)

    def test_dc_offset_removed(self):
        om = 2 * math.pi * 9.0
        T = 2 * math.pi / om
        t = np.arange(10 * 500 + 1) * (T / 500)
        acc = -om**2 * np.cos(om * t)
        d0 = integrate_acceleration(acc, t[1] - t[0])
        d1 = integrate_acceleration(acc + 3.7, t[1] - t[0])
        np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_multi_harmonic_roundtrip_per_harmonic(self):
        om = 2 * math.pi * 5.0
        rng = np.random.default_rng(2)
        c = (rng.standard_normal(8) + 1j * rng.standard_normal(8)) * 1e-4
        T = 2 * math.pi / om
        t = np.arange(20 * 500 + 1) * (T / 500)
        disp = np.zeros_like(t)
        acc = np.zeros_like(t)
        for n in range(1, 8):
            disp += (c[n] * np.exp(1j * n * om * t)).real
            acc += (-(n * om) ** 2 * c[n] * np.exp(1j * n * om * t)).real
        rebuilt = integrate_acceleration(acc, t[1] - t[0])
        got = fourier_of_samples(rebuilt, t, om, 7)[0]
        want = fourier_of_samples(disp, t, om, 7)[0]
        for n in range(1, 8):
            assert abs(got[n] - want[n]) / abs(want[n]) < 5e-3


class TestExtractBackbonePoint:
    def test_stuck_linear_level_recovers_mode_one(self, stuck_model):
        modes_stuck = linear_modes(stuck_model, "stuck")
        modes_free = linear_modes(stuck_model, "free")
        om1 = modes_stuck.frequencies[0]
        rec = run_to_steady_state(stuck_model, HarmonicForcing(1e-3, om1),
                                  steady=SteadyConfig(rel_tol=1e-5))
        bp = extract_backbone_point(rec, modes_stuck, modes_free)
        assert bp.omega == pytest.approx(om1, rel=1e-3)
        assert bp.zeta == pytest.approx(0.0012, rel=0.05)
        assert bp.gamma_stuck_norm[0] > 0.95
        assert bp.F1 == pytest.approx(1e-3, rel=1e-6)
        assert bp.thd_response < 1e-4

    def test_measurement_emulation_mode(self, stuck_model):
        modes_stuck = linear_modes(stuck_model, "stuck")
        modes_free = linear_modes(stuck_model, "free")
        om1 = modes_stuck.frequencies[0]
        rec = run_to_steady_state(stuck_model, HarmonicForcing(1e-3, om1),
                                  steady=SteadyConfig(rel_tol=1e-5))
        direct = extract_backbone_point(rec, modes_stuck, modes_free)
        emu = extract_backbone_point(rec, modes_stuck, modes_free,
                                     from_measured_acceleration=True)
        assert emu.a == pytest.approx(direct.a, rel=5e-3)
        assert emu.zeta == pytest.approx(direct.zeta, rel=5e-2)

    def test_zero_response_rejected(self, stuck_model):
        from nlmodal.timesim import run_transient
        rec = run_transient(stuck_model, duration=0.02)
        rec.channels["omega_rad_s"][:] = 700.0
        rec.channels["alpha_r_rad"][:] = 700.0 * rec["t_s"]
        with pytest.raises(IdentifyError):
            extract_backbone_point(rec, linear_modes(stuck_model, "stuck"),
                                   linear_modes(stuck_model, "free"))
