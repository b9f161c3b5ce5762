"""Train on the synthetic stereo clip and write the loss curve.

    python3 scripts/train_toy.py --iterations 200 --out runs/toy
    python3 scripts/train_toy.py --lr-scaling none      # one step size for every tensor
"""

import argparse
import logging
from pathlib import Path

from svretarget.config import RunConfig
from svretarget.pipeline import train, write_loss_curve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--lr-scaling", choices=("fan_in", "none"), default="fan_in")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/toy"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = RunConfig.toy()
    cfg.optim.iterations, cfg.optim.lr, cfg.optim.seed = args.iterations, args.lr, args.seed
    cfg.optim.lr_scaling = args.lr_scaling
    cfg.validate()

    def progress(it, rep):
        if it % 10 == 0 or it == args.iterations - 1:
            logging.info("%4d total %.4f  vgg %.4f  dwt %.4f  photo %.4f  smooth %.4f",
                         it, rep.total, rep.l_vgg_total, rep.l_dwt, rep.l_photo, rep.l_smooth)

    net, curve = train(cfg, progress=progress)
    args.out.mkdir(parents=True, exist_ok=True)
    net.save(args.out / "weights.svrw")
    write_loss_curve(args.out / "loss_curve.csv", curve)
    (args.out / "run.ini").write_text(cfg.to_ini())
    if curve:
        base = sum(r.total for r in curve[:5]) / min(5, len(curve))
        print(f"first-5 mean {base:.4f} -> final {curve[-1].total:.4f} ({100 * (1 - curve[-1].total / base):.1f}% lower)")


if __name__ == "__main__":
    main()
