"""Convert VGG19 conv weights from an ``.npz`` export into the extractor's weight file.

The input uses torchvision's ``features.<i>.weight|bias`` names, e.g. exported with

    sd = torchvision.models.vgg19(weights="IMAGENET1K_V1").features.state_dict()
    numpy.savez("vgg19.npz", **{"features." + k: v.numpy() for k, v in sd.items()})

Only the seven conv layers up to conv3_3 are kept.
"""

import argparse

import numpy as np

from svretarget.losses import VGG_LAYERS
from svretarget.weights import save_weights

# index of each conv in torchvision's vgg19().features
TORCHVISION_INDEX = {"conv1_1": 0, "conv1_2": 2, "conv2_1": 5, "conv2_2": 7,
                     "conv3_1": 10, "conv3_2": 12, "conv3_3": 14}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("npz")
    ap.add_argument("out")
    args = ap.parse_args()
    src = np.load(args.npz)
    out = {}
    for name, ci, co in VGG_LAYERS:
        i = TORCHVISION_INDEX[name]
        w, b = src[f"features.{i}.weight"], src[f"features.{i}.bias"]
        if w.shape != (co, ci, 3, 3):
            raise SystemExit(f"{name}: expected {(co, ci, 3, 3)}, got {w.shape}")
        out[f"vgg.{name}.weight"] = w.astype(np.float32)
        out[f"vgg.{name}.bias"] = b.astype(np.float32)
    save_weights(args.out, out)
    print(f"wrote {len(out)} tensors to {args.out}")


if __name__ == "__main__":
    main()
