"""Retarget a dataset at several ratios and tabulate BDS and DDr for each.

    python3 scripts/make_synthetic_dataset.py data/synthetic
    python3 scripts/retarget_sweep.py data/synthetic --ratios 0.5,0.8,1.5
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from svretarget.cli import main as cli
from svretarget.config import RunConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("root", type=Path)
    ap.add_argument("--ratios", default="0.5,0.7,0.8,1.5")
    ap.add_argument("--out", type=Path, default=Path("runs/sweep"))
    ap.add_argument("--weights", type=Path, default=None)
    ap.add_argument("--no-saliency", action="store_true", help="retarget with uniform importance")
    args = ap.parse_args()

    cfg = RunConfig.toy()
    cfg.data.synthetic = False
    cfg.data.root = str(args.root.resolve())
    if not args.no_saliency and (args.root / "saliency").is_dir():
        cfg.data.saliency_dir = str((args.root / "saliency").resolve())
        cfg.data.boxes_dir = str((args.root / "boxes").resolve())
    args.out.mkdir(parents=True, exist_ok=True)
    ini = args.out / "run.ini"
    ini.write_text(cfg.to_ini())

    rows = []
    for ratio in (float(r) for r in args.ratios.split(",")):
        out = args.out / f"r{ratio:g}"
        argv = ["retarget", "--config", str(ini), "--ratio", str(ratio), "--out", str(out)]
        if args.weights:
            argv += ["--weights", str(args.weights)]
        if cli(argv) or cli(["evaluate", "--source", str(args.root), "--retargeted", str(out),
                             "--metrics", "bds,ddr", "--out", str(out / "report.json")]):
            sys.exit(f"ratio {ratio} failed")
        rep = json.loads((out / "report.json").read_text())
        rows.append({"ratio": ratio, "bds": rep["bds"], "ddr_signed": rep["ddr_signed"], "ddr_abs": rep["ddr_abs"]})

    with open(args.out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['ratio']:>5}  bds {r['bds']:.5f}  ddr {r['ddr_signed']:+.4f} / {r['ddr_abs']:.4f}")


if __name__ == "__main__":
    main()
