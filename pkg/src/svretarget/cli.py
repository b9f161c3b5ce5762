"""Command-line entry point: ``svretarget <subcommand> ...``.

Exit status: 0 success, 1 usage or contract error, 2 ingestion failure,
3 numeric failure (non-finite losses, failed gradient checks).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import (DatasetLayout, StereoDataset, SyntheticScene, synthetic_centered, synthetic_clip)
from .imageio import IngestionError, read_boxes, read_disparity, read_gray, read_rgb, write_gray, write_rgb
from .metrics import MetricsReport, bds_pair, ddr, feature_distance_pair
from .saliency import Box, DisparityMap, dilate, fuse
from .shiftwarp import ColumnMapping
from .tensor import NumericError
from .weights import WeightFileError

log = logging.getLogger("svretarget")

EXIT_OK, EXIT_USAGE, EXIT_INGEST, EXIT_NUMERIC = 0, 1, 2, 3
METRICS = ("bds", "featdist", "ddr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; usage errors here map to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _existing_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise argparse.ArgumentTypeError(f"not a directory: {value}")
    return path


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {value}")
    return path


def _metric_list(value: str) -> list[str]:
    names = [v.strip() for v in value.split(",") if v.strip()]
    bad = [n for n in names if n not in METRICS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown metrics {bad}; choose from {','.join(METRICS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="svretarget", description="Stereo video retargeting toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fuse-saliency", help="fuse saliency maps, detection boxes and disparity into masks")
    p.add_argument("--saliency", type=_existing_dir, required=True)
    p.add_argument("--boxes", type=_existing_dir, required=True)
    p.add_argument("--disparity", type=_existing_dir, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--min-conf", type=float, default=0.25)
    p.add_argument("--dilate", action="store_true", help="also apply blur + box dilation")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("retarget", help="retarget every frame of a dataset or the synthetic scene")
    p.add_argument("--config", type=_existing_file, required=True)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--weights", type=_existing_file, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--reconstruct", action="store_true",
                   help="also write the source-width reconstructions (needs trained weights to be meaningful)")
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("train", help="unsupervised training; writes weights and a loss-curve CSV")
    p.add_argument("--config", type=_existing_file, required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--weights-out", type=Path, default=None)
    p.add_argument("--curve-out", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compare retargeted frames against their sources")
    p.add_argument("--source", type=_existing_dir, required=True, help="dataset root (image_2/, image_3/, disp_occ_0/)")
    p.add_argument("--retargeted", type=_existing_dir, required=True)
    p.add_argument("--mappings", type=_existing_dir, default=None,
                   help="column mappings; defaults to <retargeted>/mappings")
    p.add_argument("--metrics", type=_metric_list, default=list(METRICS))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", type=Path, default=None)
    p.add_argument("--patch", type=int, default=7)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--vgg-weights", type=_existing_file, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", type=lambda v: v.split(","), default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


# ------------------------------------------------------------------ commands


def cmd_fuse(args) -> int:
    files = sorted(p for p in args.saliency.rglob("*.png"))
    if not files:
        raise IngestionError(f"no saliency PNGs under {args.saliency}")
    for path in files:
        rel = path.relative_to(args.saliency)
        sal = read_gray(path)
        boxes = [Box.from_dict(b) for b in read_boxes((args.boxes / rel).with_suffix(".json"))]
        values, valid = read_disparity(args.disparity / rel)
        if values.shape != sal.shape:
            raise IngestionError(f"{args.disparity / rel}: extents {values.shape} differ from saliency {sal.shape}")
        mask = fuse(sal, DisparityMap(values, valid), boxes, args.min_conf)
        if args.dilate:
            mask = dilate(mask)
        write_gray(args.out / rel, mask)
    print(f"fused {len(files)} masks -> {args.out}")
    return EXIT_OK


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "ratio", None) is not None:
        cfg.retarget.target_ratio = args.ratio
    for flag, section, key in (("iterations", "optim", "iterations"), ("lr", "optim", "lr"),
                               ("seed", "optim", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(cfg, section), key, value)
    cfg.validate()
    return cfg


def _clips(cfg: RunConfig):
    """Every frame of every scene as the centre of a clamped window."""
    d = cfg.data
    if d.synthetic:
        scene = SyntheticScene(frames=d.synthetic_frames, height=d.synthetic_height, width=d.synthetic_width,
                               seed=cfg.optim.seed)
        yield from synthetic_centered(synthetic_clip(scene), d.window)
        return
    if not d.root:
        raise ConfigError("config needs data.root or data.synthetic = true")
    layout = DatasetLayout(d.left_dir, d.right_dir, d.disparity_dir)
    ds = StereoDataset(d.root, layout, d.window, d.saliency_dir or None, d.boxes_dir or None)
    for scene in ds.scenes:
        yield from ds.centered_windows(scene)


def cmd_retarget(args) -> int:
    from .pipeline import RetargetNet, retarget_clip, stereo_forward

    cfg = _config(args)
    net = RetargetNet(cfg)
    if args.weights is not None:
        net.load(args.weights)
    dirs = (cfg.data.left_dir, cfg.data.right_dir)
    n = 0
    for clip in _clips(cfg):
        name = clip.center_id
        if args.reconstruct:
            fwd = stereo_forward(clip, cfg, net, training=False)
            result = fwd.retarget
            for view_dir, rec in zip(dirs, (fwd.rec_l, fwd.rec_r)):
                write_rgb(args.out / "reconstructed" / view_dir / f"{name}.png", np.clip(rec.data, 0, 1))
        else:
            result = retarget_clip(clip, cfg, net, with_features=False)
        for view_dir, view in zip(dirs, (result.left, result.right)):
            write_rgb(args.out / view_dir / f"{name}.png", view.frame.data)
            view.mapping.save(args.out / "mappings" / view_dir / f"{name}.map")
            view.shift.save(args.out / "shifts" / view_dir / f"{name}.txt")
        n += 1
    if n == 0:
        raise IngestionError("no frames to retarget")
    print(f"retargeted {n} frame pairs at ratio {cfg.retarget.target_ratio} -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import train, write_loss_curve

    cfg = _config(args)
    weights = args.weights_out or Path(cfg.output.weights)
    curve_path = args.curve_out or Path(cfg.output.loss_curve)

    def progress(it, report):
        log.info("iter %d total %.6f", it, report.total)

    net, curve = train(cfg, progress=progress)
    net.save(weights)
    write_loss_curve(curve_path, curve)
    last = f"; final total {curve[-1].total:.6f}" if curve else ""
    print(f"trained {len(curve)} iterations{last}; weights -> {weights}, curve -> {curve_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    layout = DatasetLayout()
    dirs = (layout.left_dir, layout.right_dir)
    names = sorted(p.name for p in (args.retargeted / layout.left_dir).glob("*.png")) \
        if (args.retargeted / layout.left_dir).is_dir() else []
    if not names:
        raise IngestionError(f"no retargeted frames under {args.retargeted / layout.left_dir}")
    extractor = None
    if "featdist" in args.metrics:
        from .losses import FeatureExtractor
        extractor = FeatureExtractor(path=args.vgg_weights)
    report = MetricsReport()
    bds_values, fd_values = [], []
    disparities, maps_l, maps_r = [], [], []
    mapping_root = args.mappings or args.retargeted / "mappings"
    for name in names:
        row = {"frame": Path(name).stem}
        for view_dir in dirs:
            src = read_rgb(args.source / view_dir / name)
            ret = read_rgb(args.retargeted / view_dir / name)
            if "bds" in args.metrics:
                value = sum(bds_pair(src, ret, args.patch, args.stride))
                bds_values.append(value)
                row[f"bds_{view_dir}"] = value
            if extractor is not None:
                value = feature_distance_pair(src, ret, extractor)
                fd_values.append(value)
                row[f"featdist_{view_dir}"] = value
        if "ddr" in args.metrics:
            values, valid = read_disparity(args.source / layout.disparity_dir / name)
            disparities.append(DisparityMap(values, valid))
            stem = Path(name).stem
            maps_l.append(_load_mapping(mapping_root / layout.left_dir / f"{stem}.map"))
            maps_r.append(_load_mapping(mapping_root / layout.right_dir / f"{stem}.map"))
        report.per_frame.append(row)
    if bds_values:
        report.bds = float(np.mean(bds_values))
    if fd_values:
        report.feature_distance = float(np.mean(fd_values))
    if disparities:
        report.ddr_signed, report.ddr_abs = ddr(disparities, maps_l, maps_r)
    report.save(args.out)
    if args.csv is not None:
        report.save_csv(args.csv)
    summary = {k: v for k, v in report.to_dict().items() if k != "per_frame" and v is not None}
    print(" ".join(f"{k}={v:.6g}" for k, v in summary.items()))
    return EXIT_OK


def _load_mapping(path: Path) -> ColumnMapping:
    if not path.is_file():
        raise IngestionError(f"missing mapping file: {path}")
    try:
        mapping = ColumnMapping.load(path)
    except (ValueError, IndexError) as err:
        raise IngestionError(f"bad mapping file {path}: {err}") from None
    return mapping


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed, names=args.only, report=lambda r: print(r.line(), flush=True))
    if not results:
        raise UsageError(f"no gradient checks named {args.only}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


# ---------------------------------------------------------------------- main


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"svretarget: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IngestionError, WeightFileError, OSError) as err:
        print(f"svretarget: ingestion error: {err}", file=sys.stderr)
        return EXIT_INGEST
    except NumericError as err:
        print(f"svretarget: numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ValueError) as err:
        print(f"svretarget: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
