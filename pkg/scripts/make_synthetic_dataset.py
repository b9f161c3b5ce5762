"""Write synthetic stereo scenes as a KITTI-style tree (frames, 16-bit disparity, saliency, boxes).

    python3 scripts/make_synthetic_dataset.py data/synthetic --scenes 3 --frames 6
"""

import argparse
from pathlib import Path

from svretarget.data import SyntheticScene, synthetic_clip, write_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("root", type=Path)
    ap.add_argument("--scenes", type=int, default=2)
    ap.add_argument("--frames", type=int, default=4)
    ap.add_argument("--height", type=int, default=48)
    ap.add_argument("--width", type=int, default=96)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    clips = {f"{i:06d}": synthetic_clip(SyntheticScene(frames=args.frames, height=args.height,
                                                       width=args.width, seed=args.seed + i))
             for i in range(args.scenes)}
    write_dataset(args.root, clips, saliency_dir=args.root / "saliency", boxes_dir=args.root / "boxes")
    print(f"wrote {args.scenes} scenes x {args.frames} frames to {args.root}")


if __name__ == "__main__":
    main()
