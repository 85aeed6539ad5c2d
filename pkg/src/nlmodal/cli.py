"""Experiment runner: JSON-configured pipelines over the virtual rig.

Subcommands: ``lma``, ``backbone``, ``stepped-sine``, ``epmc``,
``predict``, ``compare``, ``batch``.  Each reads an experiment
configuration (JSON), executes the protocol end-to-end, writes the CSV
artifacts of the owning modules plus a ``manifest.json`` with the config
echo, artifact checksums, wall time and package versions.

Exit codes: 0 success, 2 configuration error, 3 protocol failure
(partial artifacts are retained).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .epmc import ContinuationError, trace_epmc_backbone
from .identify import extract_backbone_point
from .pll import (
    Backbone,
    BackboneError,
    LockError,
    PllConfig,
    default_pll_config,
    run_stepped_sine_frf,
    track_backbone,
)
from .predict import PredictError, fit_backbone_functions, synthesize_frf
from .structure import ModelError, RigConfig, build_beam_model, linear_modes
from .timesim import SteadyConfig, TimeSeriesRecord, default_dt


class ConfigError(ValueError):
    """Experiment configuration violates the schema."""


PROTOCOLS = ("lma", "backbone", "stepped_sine", "epmc", "predict", "compare")


def _check_keys(d: dict, allowed: set[str], where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class ScheduleConfig:
    levels_n: tuple[float, ...]

    @staticmethod
    def from_dict(d: dict) -> "ScheduleConfig":
        _check_keys(d, {"levels_n", "start_n", "stop_n", "count", "spacing",
                        "direction"}, "schedule")
        if "levels_n" in d:
            levels = np.asarray(d["levels_n"], dtype=float)
        else:
            try:
                start, stop, count = d["start_n"], d["stop_n"], d["count"]
            except KeyError as exc:
                raise ConfigError("schedule needs levels_n or "
                                  "start_n/stop_n/count") from exc
            spacing = d.get("spacing", "log")
            if spacing == "log":
                levels = np.geomspace(start, stop, count)
            elif spacing == "linear":
                levels = np.linspace(start, stop, count)
            else:
                raise ConfigError("schedule spacing must be 'log' or 'linear'")
        if d.get("direction", "increasing") == "decreasing":
            levels = levels[::-1]
        elif d.get("direction", "increasing") != "increasing":
            raise ConfigError("schedule direction must be "
                              "'increasing' or 'decreasing'")
        if levels.size == 0 or np.any(levels <= 0):
            raise ConfigError("schedule levels must be positive")
        return ScheduleConfig(levels_n=tuple(float(x) for x in levels))


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str
    rig: RigConfig
    pll: dict
    schedule: ScheduleConfig | None
    stepped_sine: dict
    epmc: dict
    predict: dict
    compare: dict
    identify: dict
    timesim: dict
    noise: dict
    output_dir: str
    seed: int
    write_records: bool

    @staticmethod
    def from_dict(data: dict, protocol: str | None = None) -> "ExperimentConfig":
        _check_keys(data, {"protocol", "rig", "pll", "schedule", "stepped_sine",
                           "epmc", "predict", "compare", "identify", "timesim",
                           "noise", "output_dir", "seed", "write_records"},
                    "experiment config")
        proto = protocol or data.get("protocol")
        if proto is None:
            raise ConfigError("no protocol given (config key or subcommand)")
        proto = proto.replace("-", "_")
        if proto not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {proto!r}; "
                              f"expected one of {PROTOCOLS}")
        try:
            rig = RigConfig.from_dict(data.get("rig", {}))
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc

        pll = dict(data.get("pll", {}))
        _check_keys(pll, set(PllConfig.__dataclass_fields__), "pll")

        sched = None
        if "schedule" in data:
            sched = ScheduleConfig.from_dict(data["schedule"])

        ss = dict(data.get("stepped_sine", {}))
        _check_keys(ss, {"force_levels_n", "phase_setpoints_deg", "amp_kp",
                         "amp_ki", "force_limit_n"}, "stepped_sine")

        ep = dict(data.get("epmc", {}))
        _check_keys(ep, {"a_min", "a_max", "count", "harmonics", "n_time",
                         "tolerance"}, "epmc")

        pr = dict(data.get("predict", {}))
        _check_keys(pr, {"backbone_csv", "force_levels_n", "grid_per_knot"},
                    "predict")

        cmp_ = dict(data.get("compare", {}))
        _check_keys(cmp_, {"a_csv", "b_csv", "tol_omega_rel", "tol_zeta_rel",
                           "tol_zeta_abs"}, "compare")

        ident = dict(data.get("identify", {}))
        _check_keys(ident, {"harmonics", "n_modes"}, "identify")

        tsim = dict(data.get("timesim", {}))
        _check_keys(tsim, {"dt_s", "steps_per_period", "max_periods",
                           "n_record"}, "timesim")

        noise = dict(data.get("noise", {}))
        _check_keys(noise, {"sensor_rms_rel"}, "noise")

        return ExperimentConfig(
            protocol=proto, rig=rig, pll=pll, schedule=sched,
            stepped_sine=ss, epmc=ep, predict=pr, compare=cmp_,
            identify=ident, timesim=tsim, noise=noise,
            output_dir=str(data.get("output_dir", ".")),
            seed=int(data.get("seed", 0)),
            write_records=bool(data.get("write_records", False)))


def load_experiment_config(path, protocol: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data, protocol=protocol)


# ---------------------------------------------------------------------------
# CSV tables and comparison
# ---------------------------------------------------------------------------

def read_csv_table(path) -> dict[str, np.ndarray]:
    """Load a CSV with a header row into named columns (floats where
    possible, strings otherwise)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols: dict[str, np.ndarray] = {}
    for i, name in enumerate(header):
        vals = [r[i] for r in rows]
        try:
            cols[name] = np.array([float(v) for v in vals])
        except ValueError:
            cols[name] = np.array(vals)
    return cols


@dataclass
class ComparisonReport:
    identical_schema: bool
    column_max_abs: dict[str, float]
    omega_max_rel: float | None
    omega_mean_rel: float | None
    zeta_max_abs: float | None
    zeta_max_rel: float | None
    n_overlap: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "identical_schema": self.identical_schema,
            "column_max_abs_deviation": self.column_max_abs,
            "omega_max_rel_deviation": self.omega_max_rel,
            "omega_mean_rel_deviation": self.omega_mean_rel,
            "zeta_max_abs_deviation": self.zeta_max_abs,
            "zeta_max_rel_deviation": self.zeta_max_rel,
            "n_overlap_points": self.n_overlap,
            "passed": self.passed,
        }


def compare_results(table_a: dict, table_b: dict,
                    tol_omega_rel: float = 0.01,
                    tol_zeta_rel: float = 0.10,
                    tol_zeta_abs: float = 0.002) -> ComparisonReport:
    """Compare two result tables.

    Tables with identical schema and row count are compared column-wise.
    Backbone-style tables (carrying ``modal_amplitude``, ``omega_rad_s``
    and ``zeta``) are additionally resampled onto their amplitude
    overlap with monotone cubic interpolation; the sparser table's
    points are matched against the denser table's interpolant.  The
    pass flag combines the frequency and damping tolerances (identical
    tables pass trivially).
    """
    from scipy.interpolate import PchipInterpolator

    same_schema = list(table_a) == list(table_b)
    col_dev: dict[str, float] = {}
    if same_schema and len(next(iter(table_a.values()))) == len(
            next(iter(table_b.values()))):
        for name in table_a:
            a, b = table_a[name], table_b[name]
            if a.dtype.kind == "U" or b.dtype.kind == "U":
                col_dev[name] = 0.0 if np.array_equal(a, b) else math.inf
            else:
                both = np.isfinite(a) & np.isfinite(b)
                onenan = np.isfinite(a) ^ np.isfinite(b)
                dev = float(np.abs(a[both] - b[both]).max()) if both.any() else 0.0
                if onenan.any():
                    dev = math.inf
                col_dev[name] = dev

    omega_max = omega_mean = zeta_abs = zeta_rel = None
    n_overlap = 0
    backboneish = all(k in t for t in (table_a, table_b)
                      for k in ("modal_amplitude", "omega_rad_s", "zeta"))
    if backboneish:
        def valid_mask(t):
            m = np.isfinite(t["modal_amplitude"]) & np.isfinite(t["omega_rad_s"])
            if "valid_flag" in t and t["valid_flag"].dtype.kind != "U":
                m &= t["valid_flag"] > 0
            return m

        ma, mb = valid_mask(table_a), valid_mask(table_b)
        aa, ab = table_a["modal_amplitude"][ma], table_b["modal_amplitude"][mb]
        if aa.size == 0 or ab.size == 0:
            raise ConfigError("no valid rows to compare")
        lo = max(aa.min(), ab.min())
        hi = min(aa.max(), ab.max())
        if not lo < hi:
            raise ConfigError("amplitude ranges do not overlap")
        # densest table becomes the interpolant, the other supplies points
        if aa.size >= ab.size:
            dense, sparse, md, ms = table_a, table_b, ma, mb
        else:
            dense, sparse, md, ms = table_b, table_a, mb, ma
        ad = dense["modal_amplitude"][md]
        order = np.argsort(ad)
        ad, idx = np.unique(ad[order], return_index=True)
        om_i = PchipInterpolator(np.log(ad),
                                 dense["omega_rad_s"][md][order][idx])
        ze_i = PchipInterpolator(np.log(ad), dense["zeta"][md][order][idx])
        a_s = sparse["modal_amplitude"][ms]
        sel = (a_s >= lo) & (a_s <= hi)
        n_overlap = int(sel.sum())
        if n_overlap == 0:
            raise ConfigError("no points inside the amplitude overlap")
        om_s = sparse["omega_rad_s"][ms][sel]
        ze_s = sparse["zeta"][ms][sel]
        om_d = om_i(np.log(a_s[sel]))
        ze_d = ze_i(np.log(a_s[sel]))
        rel = np.abs(om_s - om_d) / np.abs(om_d)
        omega_max = float(rel.max())
        omega_mean = float(rel.mean())
        zeta_abs = float(np.abs(ze_s - ze_d).max())
        zeta_rel = float((np.abs(ze_s - ze_d)
                          / np.maximum(np.abs(ze_d), 1e-300)).max())
        passed = bool(
            omega_max < tol_omega_rel
            and np.all(np.abs(ze_s - ze_d)
                       < np.maximum(tol_zeta_rel * np.abs(ze_d), tol_zeta_abs)))
    else:
        passed = same_schema and all(v == 0.0 for v in col_dev.values())
    return ComparisonReport(
        identical_schema=same_schema, column_max_abs=col_dev,
        omega_max_rel=omega_max, omega_mean_rel=omega_mean,
        zeta_max_abs=zeta_abs, zeta_max_rel=zeta_rel,
        n_overlap=n_overlap, passed=passed)


# ---------------------------------------------------------------------------
# noise injection
# ---------------------------------------------------------------------------

def add_measurement_noise(record: TimeSeriesRecord, rms_rel: float,
                          rng: np.random.Generator) -> TimeSeriesRecord:
    """Seeded Gaussian noise on the measured channels (force, drive-point
    and sensor signals), scaled per channel to ``rms_rel`` of its RMS.
    Controller-internal channels (frequency, phase) stay clean and the
    integrator state is never touched: noise emulates instrumentation,
    not physics."""
    noisy = record.copy()
    for name, values in noisy.channels.items():
        if name.startswith(("force", "drive", "sens")):
            scale = rms_rel * float(np.sqrt(np.mean(values**2)))
            noisy.channels[name] = values + rng.normal(0.0, 1.0, len(values)) * scale
    return noisy


# ---------------------------------------------------------------------------
# protocol runners
# ---------------------------------------------------------------------------

def _steady_from(cfg: ExperimentConfig, pll: PllConfig) -> SteadyConfig:
    t = cfg.timesim
    return SteadyConfig(
        rel_tol=pll.steady_rel_tol,
        max_periods=int(t.get("max_periods", 30000)),
        n_record=int(t.get("n_record", 10)),
        window=pll.steady_window,
        window_rel_tol=pll.steady_window_rel_tol)


def _dt_from(cfg: ExperimentConfig, model) -> float:
    t = cfg.timesim
    if t.get("dt_s"):
        return float(t["dt_s"])
    return default_dt(model, int(t.get("steps_per_period", 500)))


def _pll_from(cfg: ExperimentConfig, model) -> PllConfig:
    return default_pll_config(model, **cfg.pll)


def _run_lma(cfg, out: Path, artifacts: list):
    model = build_beam_model(cfg.rig)
    n_modes = int(cfg.identify.get("n_modes", 3))
    info = {}
    for contact in ("stuck", "free"):
        modes = linear_modes(model, contact, n_modes=n_modes)
        path = out / f"lma_{contact}.csv"
        modes.to_csv(path)
        artifacts.append(path)
        info[contact] = {
            "frequencies_hz": [float(f) / (2 * math.pi) for f in modes.frequencies],
            "damping_ratios": [float(z) for z in modes.damping_ratios],
        }
    return info


def _identified_backbone(cfg, model, pll, records_sink=None):
    if cfg.schedule is None:
        raise ConfigError("backbone protocol requires a schedule")
    steady = _steady_from(cfg, pll)
    dt = _dt_from(cfg, model)
    H = int(cfg.identify.get("harmonics", 7))
    n_modes = int(cfg.identify.get("n_modes", 3))
    rms_rel = float(cfg.noise.get("sensor_rms_rel", 0.0))
    bb = track_backbone(model, pll, cfg.schedule.levels_n, H=H,
                        n_modes=n_modes, steady=steady, dt=dt,
                        keep_records=True)
    if rms_rel > 0.0:
        modes_stuck = linear_modes(model, "stuck", n_modes=n_modes)
        modes_free = linear_modes(model, "free", n_modes=n_modes)
        for i, rec in enumerate(bb.records):
            if rec is None:
                continue
            rng = np.random.default_rng(cfg.seed + i)
            noisy = add_measurement_noise(rec, rms_rel, rng)
            bb.records[i] = noisy
            bb.points[i] = extract_backbone_point(noisy, modes_stuck,
                                                  modes_free, H=H)
    if records_sink is not None:
        records_sink.extend(bb.records)
    return bb


def _run_backbone(cfg, out: Path, artifacts: list):
    model = build_beam_model(cfg.rig)
    pll = _pll_from(cfg, model)
    bb = _identified_backbone(cfg, model, pll)
    path = out / "backbone.csv"
    bb.to_csv(path)
    artifacts.append(path)
    if cfg.write_records:
        for i, rec in enumerate(bb.records):
            if rec is None:
                continue
            rpath = out / f"backbone_level{i}_record.csv"
            rec.to_csv(rpath)
            artifacts.append(rpath)
    if not bb.amplitudes_strictly_monotone():
        return {"warnings": ["modal amplitudes not strictly monotone along "
                             "the schedule"],
                "n_valid": int(bb.valid.sum()), "failures": bb.failures}
    return {"n_valid": int(bb.valid.sum()), "failures": bb.failures}


def _run_stepped_sine(cfg, out: Path, artifacts: list):
    model = build_beam_model(cfg.rig)
    pll = _pll_from(cfg, model)
    ss = cfg.stepped_sine
    try:
        force_levels = [float(x) for x in ss["force_levels_n"]]
    except KeyError as exc:
        raise ConfigError("stepped_sine.force_levels_n is required") from exc
    setpoints_deg = ss.get("phase_setpoints_deg",
                           [145, 130, 115, 100, 90, 80, 65, 50, 35, 20])
    setpoints = [math.radians(float(d)) for d in setpoints_deg]
    gains = (float(ss.get("amp_kp", 0.5)), float(ss.get("amp_ki", 1.0)))
    steady = _steady_from(cfg, pll)
    dt = _dt_from(cfg, model)
    info = {}
    for j, F in enumerate(force_levels):
        frf = run_stepped_sine_frf(
            model, pll, F, setpoints, amp_gains=gains,
            F_max=ss.get("force_limit_n"),
            H=int(cfg.identify.get("harmonics", 7)), steady=steady, dt=dt)
        path = out / f"stepped_sine_F{j}.csv"
        frf.to_csv(path)
        artifacts.append(path)
        info[f"F{j}"] = {"force_n": F, "n_valid": len(frf.valid_points),
                         "failures": frf.failures}
    return info


def _run_epmc(cfg, out: Path, artifacts: list):
    model = build_beam_model(cfg.rig)
    ep = cfg.epmc
    try:
        a_min, a_max = float(ep["a_min"]), float(ep["a_max"])
    except KeyError as exc:
        raise ConfigError("epmc.a_min and epmc.a_max are required") from exc
    count = int(ep.get("count", 30))
    H = int(ep.get("harmonics", 7))
    sols = trace_epmc_backbone(model, np.geomspace(a_min, a_max, count), H=H,
                               n_time=int(ep.get("n_time", 4096)),
                               tol=float(ep.get("tolerance", 1e-8)))
    path = out / "backbone_epmc.csv"
    epmc_backbone_to_csv(sols, model, path, H=H)
    artifacts.append(path)
    return {"n_points": len(sols)}


def epmc_backbone_to_csv(solutions, model, path, H: int = 7) -> None:
    """Write harmonic-balance backbone points in the backbone CSV schema."""
    omega_ref = float(linear_modes(model, "stuck", n_modes=1).frequencies[0])
    n_sens = len(model.sensor_dofs)
    cols = ["level_index", "F1_N", "omega_rad_s", "omega_norm", "zeta",
            "modal_amplitude", "thd_response", "valid_flag"]
    for i in range(n_sens):
        for h in range(H + 1):
            cols.append(f"sens{i}_h{h}_m")
    cols.append("source")
    lines = [",".join(cols)]
    sensor_dofs = list(model.sensor_dofs)
    for idx, s in enumerate(solutions):
        row = [str(idx), "nan", repr(float(s.omega)),
               repr(float(s.omega / omega_ref)), repr(float(s.zeta)),
               repr(float(s.a)), repr(float(s.thd_acceleration())),
               "1" if s.converged else "0"]
        for i in range(n_sens):
            for h in range(H + 1):
                row.append(repr(float(abs(s.harmonics[sensor_dofs[i], h]))))
        row.append("epmc")
        lines.append(",".join(row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def backbone_functions_from_csv(table: dict):
    """Rebuild interpolable backbone points from a backbone CSV table.

    Harmonic magnitudes fully determine single-point-forcing predictions;
    the deflection-shape phases are not persisted in the CSV.
    """
    from dataclasses import dataclass as _dc

    @_dc
    class _P:
        a: float
        omega: float
        zeta: float
        phi1: np.ndarray

    n_sens = 0
    while f"sens{n_sens}_h1_m" in table:
        n_sens += 1
    if n_sens == 0:
        raise ConfigError("table lacks sensor harmonic columns")
    pts = []
    valid = table.get("valid_flag")
    for i in range(len(table["modal_amplitude"])):
        if valid is not None and not valid[i] > 0:
            continue
        a = float(table["modal_amplitude"][i])
        if not math.isfinite(a):
            continue
        phi = np.array([table[f"sens{s}_h1_m"][i] / a for s in range(n_sens)],
                       dtype=complex)
        pts.append(_P(a=a, omega=float(table["omega_rad_s"][i]),
                      zeta=float(table["zeta"][i]), phi1=phi))
    return fit_backbone_functions(pts)


def _run_predict(cfg, out: Path, artifacts: list):
    model = build_beam_model(cfg.rig)
    pr = cfg.predict
    bpath = pr.get("backbone_csv")
    if bpath is None:
        bpath = Path(cfg.output_dir) / "backbone.csv"
    table = read_csv_table(bpath)
    mf = backbone_functions_from_csv(table)
    try:
        force_levels = [float(x) for x in pr["force_levels_n"]]
    except KeyError as exc:
        raise ConfigError("predict.force_levels_n is required") from exc
    drive_sensor = list(model.sensor_dofs).index(model.drive_dof)
    omega_ref = float(linear_modes(model, "stuck", n_modes=1).frequencies[0])
    n_sens = len(model.sensor_dofs)
    info = {}
    for j, F in enumerate(force_levels):
        f1 = np.zeros(n_sens, dtype=complex)
        f1[drive_sensor] = F
        curve = synthesize_frf(mf, f1, drive_sensor,
                               grid_per_knot=int(pr.get("grid_per_knot", 10)),
                               omega_ref=omega_ref)
        path = out / f"frf_pred_F{j}.csv"
        curve.to_csv(path)
        artifacts.append(path)
        om_pk, a_pk = curve.peak(drive_sensor)
        info[f"F{j}"] = {"force_n": F, "peak_omega_rad_s": om_pk,
                         "peak_amplitude_m": a_pk}
    return info


def _run_compare(cfg, out: Path, artifacts: list):
    c = cfg.compare
    try:
        a_path, b_path = c["a_csv"], c["b_csv"]
    except KeyError as exc:
        raise ConfigError("compare.a_csv and compare.b_csv are required") from exc
    report = compare_results(
        read_csv_table(a_path), read_csv_table(b_path),
        tol_omega_rel=float(c.get("tol_omega_rel", 0.01)),
        tol_zeta_rel=float(c.get("tol_zeta_rel", 0.10)),
        tol_zeta_abs=float(c.get("tol_zeta_abs", 0.002)))
    path = out / "compare.json"
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts.append(path)
    if not report.passed:
        raise RuntimeError("comparison failed tolerances; see compare.json")
    return report.to_dict()


_RUNNERS = {
    "lma": _run_lma,
    "backbone": _run_backbone,
    "stepped_sine": _run_stepped_sine,
    "epmc": _run_epmc,
    "predict": _run_predict,
    "compare": _run_compare,
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(config: ExperimentConfig, quiet: bool = False) -> dict:
    """Execute one protocol end-to-end; returns the manifest dict."""
    t0 = time.time()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []
    result = _RUNNERS[config.protocol](config, out, artifacts)
    import numba
    import scipy
    manifest = {
        "protocol": config.protocol,
        "config": _config_echo(config),
        "result": result,
        "artifacts": {p.name: _sha256(p) for p in artifacts},
        "wall_time_s": time.time() - t0,
        "versions": {"nlmodal": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "numba": numba.__version__},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not quiet:
        names = ", ".join(p.name for p in artifacts) or "none"
        print(f"{config.protocol}: wrote {names} in {out} "
              f"({manifest['wall_time_s']:.1f} s)")
    return manifest


def _config_echo(config: ExperimentConfig) -> dict:
    echo = {
        "protocol": config.protocol,
        "rig": config.rig.to_dict(),
        "pll": config.pll,
        "stepped_sine": config.stepped_sine,
        "epmc": config.epmc,
        "predict": {k: str(v) if k == "backbone_csv" else v
                    for k, v in config.predict.items()},
        "compare": {k: str(v) if k.endswith("_csv") else v
                    for k, v in config.compare.items()},
        "identify": config.identify,
        "timesim": config.timesim,
        "noise": config.noise,
        "output_dir": config.output_dir,
        "seed": config.seed,
        "write_records": config.write_records,
    }
    if config.schedule is not None:
        echo["schedule"] = {"levels_n": list(config.schedule.levels_n)}
    return echo


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlmodal",
        description="Virtual nonlinear modal testing experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("lma", "backbone", "stepped-sine", "epmc", "predict",
                 "compare", "batch"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "batch":
            with open(args.config) as fh:
                batch = json.load(fh)
            _check_keys(batch, {"runs"}, "batch config")
            runs = batch.get("runs")
            if not isinstance(runs, list) or not runs:
                raise ConfigError("batch config needs a non-empty 'runs' list")
            base = Path(args.config).parent
            configs = []
            for item in runs:
                if isinstance(item, str):
                    configs.append(load_experiment_config(base / item))
                else:
                    configs.append(ExperimentConfig.from_dict(item))
            for i, cfg in enumerate(configs):
                cfg = _apply_overrides(cfg, args, subdir=f"run{i}")
                run_experiment(cfg, quiet=args.quiet)
            return 0
        cfg = load_experiment_config(args.config, protocol=args.command)
        cfg = _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        run_experiment(cfg, quiet=args.quiet)
    except (LockError, BackboneError, ContinuationError, PredictError,
            ModelError, RuntimeError, ValueError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc)}
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "error.json", "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        print(f"protocol failed: {exc}", file=sys.stderr)
        return 3
    return 0


def _apply_overrides(cfg: ExperimentConfig, args, subdir: str | None = None):
    from dataclasses import replace
    out = args.out
    if out is not None and subdir is not None:
        out = str(Path(out) / subdir)
    elif out is None and subdir is not None:
        out = str(Path(cfg.output_dir) / subdir)
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


if __name__ == "__main__":
    sys.exit(main())
