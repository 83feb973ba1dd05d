"""Scan and fit the default droop GFM, then compare it with its Thevenin equivalent
under a voltage step and along a P-V curve."""
import argparse
import json
import os
from pathlib import Path

from gfm_thevenin.emt import DisturbanceEvent, GfmPlantModel, build_droop_gfm
from gfm_thevenin.fit import check_compliance, fit
from gfm_thevenin.scan import ScanConfig, sweep
from gfm_thevenin.study import poi_operating_point, pv_trace, step_compare, thevenin_source


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    model = build_droop_gfm(GfmPlantModel())
    spectrum = sweep(model, ScanConfig(parallel=args.parallel))
    spectrum.to_csv(args.out / "gfm_spectrum.csv")
    eq = fit(spectrum)
    rep = check_compliance(eq, "HV", f1=spectrum.base.f1)
    (args.out / "gfm_fit.json").write_text(rep.to_json() + "\n")
    print(f"fit: r {eq.r_eff:.4f} x {eq.l_eff:.4f} rms {eq.rms_error:.4f} f_res {eq.resonance_freq:.2f} Hz")

    step = step_compare(model, eq, DisturbanceEvent(0.01, dv=-0.05), window=0.2)
    step.write(args.out)
    print(f"step: normalized rms Q {step.rms_error_q:.2%} P {step.rms_error_p:.2%}")

    v, s = poi_operating_point(model)
    full = pv_trace(model)
    equiv = pv_trace(eq, source_voltage=abs(thevenin_source(eq.impedance, v, s)))
    full.to_csv(args.out / "pv_full.csv")
    equiv.to_csv(args.out / "pv_equiv.csv")
    summary = {"full": full.summary(), "equivalent": equiv.summary(),
               "p_max_rel_diff": abs(full.p_max - equiv.p_max) / full.p_max}
    (args.out / "pv_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"pv: p_max {full.p_max:.4f} vs {equiv.p_max:.4f}, nose {full.v_at_pmax:.4f} vs {equiv.v_at_pmax:.4f}")


if __name__ == "__main__":
    main()
