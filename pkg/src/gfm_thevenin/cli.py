"""Command-line front end: scan -> fit -> comply, plus the validation studies.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 compliance fail.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import IdvsConfig, VoltageStep, idvs_transient_pq, pv_nose_analytic
from .core import AdmittanceSpectrum, PerUnitBase, RlImpedance, SpectrumError, TheveninEquivalent, rl_from_x_over_r
from .emt import (
    DisturbanceEvent,
    EquilibriumError,
    GfmPlantModel,
    IdealisticMode,
    SimulationDiverged,
    build_classical_machine,
    build_droop_gfm,
    build_idvs,
)
from .emt.models import UnstableModelError
from .fit import FitConfig, check_compliance, fit, fit_overlay_rows
from .scan import ScanConfig, ScanError, import_trace_scan, sweep
from .study import SetupError, case_study, poi_operating_point, pv_trace, step_compare, thevenin_source

SCHEMA = "gfm-thevenin/run-config/v1"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_NONCOMPLIANT = 0, 1, 2, 3

log = logging.getLogger("gfm_thevenin")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _section(doc: dict, key: str, required: bool = False) -> dict:
    sec = doc.get(key)
    if sec is None:
        if required:
            raise ConfigError(key, "section is required for this command")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be an object")
    return sec


def _build(cls, doc: dict, path: str, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown field")
    try:
        return cls(**{**doc, **extra})
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        # dataclass validators already prefix the section name on most errors
        if msg.startswith(path + "."):
            raise ConfigError(msg.split(":")[0], msg.split(":", 1)[1].strip()) from exc
        raise ConfigError(path, msg) from exc


def load_config(path) -> dict:
    if path is None:
        return {"$schema": SCHEMA}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be an object")
    schema = doc.get("$schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError("$schema", f"unsupported version {schema!r}, expected {SCHEMA!r}")
    return doc


def _impedance(sec: dict, path: str) -> RlImpedance:
    if "r" in sec or "l" in sec:
        return RlImpedance(float(sec.get("r", 0.0)), float(sec["l"]))
    if "x" in sec:
        return rl_from_x_over_r(float(sec["x"]), float(sec.get("x_over_r", 10.0)))
    raise ConfigError(path, "needs either r/l or x/x_over_r")


def base_from(doc: dict) -> PerUnitBase:
    return _build(PerUnitBase, _section(doc, "base"), "base")


def build_device(doc: dict):
    device = doc.get("device")
    base = base_from(doc)
    if device == "idvs":
        sec = _section(doc, "idvs", required=True)
        return build_idvs(IdvsConfig(float(sec.get("v_id", 1.0)), _impedance(sec, "idvs"), base))
    if device == "classical_machine":
        sec = _section(doc, "classical_machine", required=True)
        try:
            return build_classical_machine(float(sec.get("e", 1.0)), float(sec["r_a"]), float(sec["x_dpp"]), base)
        except KeyError as exc:
            raise ConfigError(f"classical_machine.{exc.args[0]}", "missing") from exc
    if device == "droop_gfm":
        sec = dict(_section(doc, "droop_gfm"))
        mode = IdealisticMode(bool(sec.pop("idealistic", False)), float(sec.pop("gain_factor", 5.0)))
        for k in ("z_coupling_plus_grid", "virtual_z"):
            if k in sec:
                sec[k] = _impedance(sec[k], f"droop_gfm.{k}")
        plant = _build(GfmPlantModel, sec, "droop_gfm", f1=base.f1)
        return build_droop_gfm(plant, mode, base)
    raise ConfigError("device", f"must be one of idvs, droop_gfm, classical_machine, imported; got {device!r}")


def scan_config(doc: dict, args) -> ScanConfig:
    sec = dict(_section(doc, "scan"))
    if getattr(args, "points", None) is not None:
        sec["n_points"] = args.points
    if getattr(args, "parallel", None):
        sec["parallel"] = args.parallel
    if "axes" in sec:
        sec["axes"] = tuple(sec["axes"])
    return _build(ScanConfig, sec, "scan")


def fit_config(doc: dict, args) -> FitConfig:
    sec = dict(_section(doc, "fit"))
    eps = getattr(args, "eps", None)
    if eps is None:
        eps = _section(doc, "compliance").get("eps")
    if eps is not None:
        sec["eps"] = eps
    if getattr(args, "parallel", None):
        sec["parallel"] = args.parallel
    return _build(FitConfig, sec, "fit")


def _write_manifest(out: Path, command: str, doc: dict, args, extra: dict | None = None):
    manifest = {"command": command, "version": __version__, "config": doc}
    if not args.stable_output:
        manifest["created_unix"] = time.time()
    manifest.update(extra or {})
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _spectrum_for(doc: dict, args) -> AdmittanceSpectrum:
    if doc.get("device") == "imported":
        sec = _section(doc, "imported", required=True)
        if "manifest" not in sec:
            raise ConfigError("imported.manifest", "missing")
        return import_trace_scan(sec["manifest"])
    return sweep(build_device(doc), scan_config(doc, args),
                 raw_dir=(args.out / "raw") if getattr(args, "keep_raw", False) else None)


# ---------------------------------------------------------------- commands

def cmd_scan(args) -> int:
    doc = load_config(args.config)
    spectrum = _spectrum_for(doc, args)
    spectrum.to_csv(args.out / "spectrum.csv")
    spectrum.to_json(args.out / "spectrum.json")
    _write_manifest(args.out, "scan", doc, args, {"n_points": len(spectrum.points)})
    print(f"wrote {len(spectrum.points)} points to {args.out / 'spectrum.csv'}")
    return EXIT_OK


def _read_spectrum(path: Path) -> AdmittanceSpectrum:
    if path.suffix == ".json":
        spectrum = AdmittanceSpectrum.from_json(path)
        if not spectrum.has("qd"):
            raise SpectrumError("spectrum is missing the y_qd column")
        return spectrum
    return AdmittanceSpectrum.from_csv(path)


def _fit_and_report(args, overlay: bool) -> int:
    doc = load_config(args.config)
    spectrum = _read_spectrum(Path(args.spectrum))
    if "base" in doc:
        spectrum = dataclasses.replace(spectrum, base=base_from(doc))
    cfg = fit_config(doc, args)
    eq = fit(spectrum, cfg)
    location = _section(doc, "compliance").get("location", "HV")
    report = check_compliance(eq, location, eps=cfg.eps, f1=spectrum.base.f1)
    (args.out / "fit.json").write_text(report.to_json() + "\n")
    if overlay:
        rows = fit_overlay_rows(spectrum, eq)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["f_hz", "mag_full", "mag_th", "phase_full_deg", "phase_th_deg"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
        (args.out / "fit_overlay.csv").write_text(buf.getvalue())
    print(f"r_eff={eq.r_eff:.6g} x_eff={eq.l_eff:.6g} rms={eq.rms_error:.3g} "
          f"{location} {'PASS' if report.passed else 'FAIL'}")
    if eq.boundary_solution:
        print("fit converged onto a parameter bound", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK if report.passed else EXIT_NONCOMPLIANT


def cmd_fit(args) -> int:
    return _fit_and_report(args, overlay=True)


def cmd_comply(args) -> int:
    return _fit_and_report(args, overlay=False)


def _equivalent(doc: dict, args, model) -> TheveninEquivalent:
    if args.fit:
        rep = json.loads(Path(args.fit).read_text())
        try:
            return TheveninEquivalent(rep["r_eff"], rep["l_eff"], rep.get("rms_error", 0.0),
                                      rep.get("resonance_hz") or float("nan"))
        except KeyError as exc:
            raise ConfigError(f"fit.json.{exc.args[0]}", "missing") from exc
    return fit(sweep(model, scan_config(doc, args)), fit_config(doc, args))


def cmd_step(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "step")
    model = build_device(doc)
    eq = _equivalent(doc, args, model)
    event = DisturbanceEvent(float(sec.get("t", 0.01)), float(sec.get("dv", -0.05)),
                             math.radians(float(sec.get("ddelta_deg", 0.0))))
    res = step_compare(model, eq, event, float(sec.get("window", 0.2)))
    res.write(args.out)
    _write_manifest(args.out, "step", doc, args, {"r_eff": eq.r_eff, "l_eff": eq.l_eff})
    print(f"rms_error_q={res.rms_error_q:.4g} rms_error_p={res.rms_error_p:.4g}")
    return EXIT_OK


def cmd_pv(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "pv")
    kw = {"base_load": tuple(sec.get("base_load", (0.125, 0.0625))),
          "step": tuple(sec.get("step", (0.05, 0.025))),
          "max_steps": int(sec.get("max_steps", 200)),
          "refinements": int(sec.get("refinements", 12))}
    model = build_device(doc)
    full = pv_trace(model, **kw)
    full.to_csv(args.out / "pv_full.csv")
    summary = {"full": full.summary()}
    if doc.get("device") == "idvs" and kw["base_load"][1] == 0 and kw["step"][1] == 0:
        z = _impedance(_section(doc, "idvs"), "idvs")
        p_max, v_nose = pv_nose_analytic(float(_section(doc, "idvs").get("v_id", 1.0)), z, 0.0)
        summary["analytic"] = {"p_max": p_max, "v_at_pmax": v_nose}
    if args.fit or sec.get("compare_equivalent", doc.get("device") == "droop_gfm"):
        eq = _equivalent(doc, args, model)
        v0, s0 = poi_operating_point(model)
        e = abs(thevenin_source(eq.impedance, v0, s0))
        equiv = pv_trace(eq, source_voltage=e, **kw)
        equiv.to_csv(args.out / "pv_equiv.csv")
        summary["equivalent"] = {**equiv.summary(), "source_voltage": e, "r_eff": eq.r_eff, "l_eff": eq.l_eff}
        summary["p_max_rel_diff"] = abs(full.p_max - equiv.p_max) / full.p_max
    (args.out / "pv_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(args.out, "pv", doc, args)
    print(f"p_max={full.p_max:.4f} v_at_pmax={full.v_at_pmax:.4f} ({full.terminated_by})")
    return EXIT_OK


def cmd_case(args) -> int:
    doc = load_config(args.config)
    sec = dict(_section(doc, "case"))
    case = str(sec.pop("case", args.case or "I"))
    if args.case:
        case = args.case
    plant_sec = dict(_section(doc, "droop_gfm"))
    for k in ("z_coupling_plus_grid", "virtual_z"):
        if k in plant_sec:
            plant_sec[k] = _impedance(plant_sec[k], f"droop_gfm.{k}")
    plant_sec.pop("idealistic", None)
    plant = _build(GfmPlantModel, plant_sec, "droop_gfm")
    allowed = {"z_gfm", "z_filter", "x_over_r", "gain_factor", "duration", "t_event"}
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise ConfigError(f"case.{unknown[0]}", "unknown field")
    report = case_study(case, plant=plant, keep_traces=args.keep_raw, **sec)
    report.write(args.out)
    _write_manifest(args.out, "case", doc, args)
    for v in report.variants:
        m = v.metrics
        print(f"{v.label}: peak P {m.p:.4f} Q {m.q:.4f} |I| {m.i:.4f}")
    return EXIT_OK


def cmd_analytic(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "analytic")
    base = base_from(doc)
    cfg = IdvsConfig(float(sec.get("v_id", 1.0)), _impedance(sec or {"x": 0.33, "x_over_r": 10.0}, "analytic"), base)
    v1 = float(sec.get("v1", 1.0))
    d1 = math.radians(float(sec.get("delta1_deg", 0.0)))
    step = VoltageStep(v1, d1, v1 + float(sec.get("dv", -0.1)),
                       d1 + math.radians(float(sec.get("ddelta_deg", -5.0))))
    if "t" in sec:
        t = np.asarray(sec["t"], dtype=float)
    else:
        t = np.linspace(0.0, float(sec.get("t_end", 0.1)), int(sec.get("n_points", 1001)))
    if t.size == 0:
        raise ConfigError("analytic.t", "time grid is empty")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = idvs_transient_pq(cfg, step, t)
    notes = [str(w.message) for w in caught]
    for n in notes:
        print(f"warning: {n}", file=sys.stderr)
    lines = ["t,p,q"] + [f"{a!r},{b!r},{c!r}" for a, b, c in zip(t.tolist(), res.p.tolist(), res.q.tolist())]
    (args.out / "analytic_pq.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(args.out, "analytic", doc, args, {"warnings": notes, "undamped": res.undamped})
    return EXIT_OK


COMMANDS = {
    "scan": cmd_scan, "fit": cmd_fit, "comply": cmd_comply, "step": cmd_step,
    "pv": cmd_pv, "case": cmd_case, "analytic": cmd_analytic,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--keep-raw", action="store_true", help="also write raw time-domain traces")
    common.add_argument("--eps", type=float, help="maximum fit error threshold")
    common.add_argument("--stable-output", action="store_true", help="omit timestamps from run metadata")
    common.add_argument("--parallel", type=int, metavar="N", help="worker threads for sweeps and fits")
    common.add_argument("--points", type=int, help="override scan.n_points")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gfm-thevenin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("scan", parents=[common], help="admittance sweep of the configured device")
    for name, text in (("fit", "fit a spectrum and write report plus overlay"),
                       ("comply", "fit a spectrum and write only the compliance report")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("spectrum", type=Path, help="spectrum.csv or spectrum.json")
    for name, text in (("step", "step response: device vs Thevenin equivalent"),
                       ("pv", "P-V curve of the device (and its equivalent)")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--fit", type=Path, help="fit.json to use instead of scanning")
    p = sub.add_parser("case", parents=[common], help="GFM vs ideal-source case study")
    p.add_argument("--case", choices=["I", "II", "III", "IV"])
    sub.add_parser("analytic", parents=[common], help="closed-form P/Q after a grid step")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.points is not None and args.points < 2:
            raise ConfigError("scan.n_points", f"need at least 2 points, got {args.points}")
        if args.parallel is not None and args.parallel < 1:
            raise ConfigError("--parallel", "must be >= 1")
        if args.eps is not None and not args.eps > 0:
            raise ConfigError("--eps", "must be positive")
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except (ConfigError, SpectrumError, SetupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EquilibriumError, SimulationDiverged, ScanError, UnstableModelError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
