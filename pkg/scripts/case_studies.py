"""Run the four GFM vs ideal-source case studies and write their peak metrics."""
import argparse
from pathlib import Path

from gfm_thevenin.study import case_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--traces", action="store_true", help="also write every variant's time series")
    args = ap.parse_args()

    for case in ("I", "II", "III", "IV"):
        rep = case_study(case, keep_traces=args.traces)
        rep.write(args.out)
        print(f"case {case}")
        for v in rep.variants:
            m = v.metrics
            print(f"  {v.label:26s} {v.point:3s}  P {m.p:.4f} ({m.t_p * 1e3:4.1f} ms)  "
                  f"Q {m.q:.4f} ({m.t_q * 1e3:4.1f} ms)  |I| {m.i:.4f} ({m.t_i * 1e3:4.1f} ms)")


if __name__ == "__main__":
    main()
