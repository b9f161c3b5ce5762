"""Stereo clip ingestion (KITTI-style directory layouts) and synthetic scenes."""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .imageio import (IngestionError, read_boxes, read_disparity, read_gray, read_rgb, write_boxes,
                      write_disparity, write_gray, write_rgb)
from .saliency import Box, DisparityMap

log = logging.getLogger(__name__)


@dataclass
class DatasetLayout:
    left_dir: str = "image_2"
    right_dir: str = "image_3"
    disparity_dir: str = "disp_occ_0"
    pattern: str = r"^(?P<scene>.+)_(?P<frame>\d+)\.png$"


@dataclass
class ViewSaliency:
    """External detector outputs for one view of one frame."""

    saliency: np.ndarray
    boxes: list[Box]


@dataclass
class StereoClip:
    left: np.ndarray                     # [T,3,H,W] in [0,1]
    right: np.ndarray
    disparity: list[DisparityMap]        # left-referenced, one per frame
    frame_ids: list[str]
    center: int
    scene: str = ""
    saliency: tuple[ViewSaliency | None, ViewSaliency | None] = (None, None)
    # optional (mask, box) per frame and view, used to re-window synthetic clips
    frame_saliency: tuple[list, list] | None = None

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.ndim != 4:
            raise ValueError("left/right frame stacks must share [T,C,H,W] extents")
        if len(self.disparity) != len(self.left) or len(self.frame_ids) != len(self.left):
            raise ValueError("one disparity map and id per frame required")
        if not 0 <= self.center < len(self.left):
            raise ValueError("center index outside the window")

    @property
    def length(self) -> int:
        return len(self.left)

    @property
    def height(self) -> int:
        return self.left.shape[2]

    @property
    def width(self) -> int:
        return self.left.shape[3]

    @property
    def center_id(self) -> str:
        return self.frame_ids[self.center]

    def crop(self, height: int, width: int) -> "StereoClip":
        """Centred spatial crop (no-op along an axis that is already small enough)."""
        h, w = min(height, self.height), min(width, self.width)
        y0, x0 = (self.height - h) // 2, (self.width - w) // 2
        ys, xs = slice(y0, y0 + h), slice(x0, x0 + w)
        disp = [DisparityMap(d.values[ys, xs], d.valid[ys, xs]) for d in self.disparity]
        sal = tuple(None if v is None else ViewSaliency(v.saliency[ys, xs], _shift_boxes(v.boxes, x0, y0, w, h))
                    for v in self.saliency)
        return StereoClip(self.left[:, :, ys, xs].copy(), self.right[:, :, ys, xs].copy(), disp,
                          list(self.frame_ids), self.center, self.scene, sal)


def _shift_boxes(boxes, x0, y0, w, h):
    out = []
    for b in boxes:
        nx, ny = b.x - x0, b.y - y0
        if nx < w and ny < h and nx + b.w > 0 and ny + b.h > 0:
            out.append(Box(nx, ny, b.w, b.h, b.label, b.conf))
    return out


def window_count(n: int, window: int) -> int:
    return max(0, n - window + 1)


def centered_indices(frame: int, n: int, window: int) -> np.ndarray:
    """Frame indices of a ``window`` centred on ``frame`` (centre ``window // 2``), clamped to ``[0, n)``."""
    half = window // 2
    return np.clip(np.arange(frame - half, frame - half + window), 0, n - 1)


def _check_png(path: Path) -> None:
    try:
        with Image.open(path):
            pass
    except (UnidentifiedImageError, OSError) as err:
        raise IngestionError(f"corrupt image {path}: {err}") from None


class StereoDataset(Sequence[StereoClip]):
    """Sliding ``window``-frame clips over every scene, loaded on access.

    File discovery and pairing happen eagerly so that missing counterparts
    fail at construction; pixel data is decoded when a clip is requested.
    """

    def __init__(self, root, layout: DatasetLayout = DatasetLayout(), window: int = 4,
                 saliency_dir=None, boxes_dir=None):
        self.root = Path(root)
        self.layout = layout
        self.window = window
        self.saliency_dir = Path(saliency_dir) if saliency_dir else None
        self.boxes_dir = Path(boxes_dir) if boxes_dir else None
        left_dir = self.root / layout.left_dir
        if not left_dir.is_dir():
            raise IngestionError(f"missing directory: {left_dir}")
        if not (self.root / layout.right_dir).is_dir():
            raise IngestionError(f"missing directory: {self.root / layout.right_dir}")
        regex = re.compile(layout.pattern)
        scenes: dict[str, list[tuple[int, str]]] = defaultdict(list)
        for path in sorted(left_dir.iterdir()):
            m = regex.match(path.name)
            if not m:
                continue
            right = self.root / layout.right_dir / path.name
            if not right.is_file():
                raise IngestionError(f"missing right counterpart for {path}: {right}")
            _check_png(path)
            _check_png(right)
            scenes[m.group("scene")].append((int(m.group("frame")), path.name))
        self.scenes: dict[str, list[str]] = {}
        self.index: list[tuple[str, int]] = []
        for scene in sorted(scenes):
            names = [name for _, name in sorted(scenes[scene])]
            self.scenes[scene] = names
            if len(names) < window:
                log.warning("scene %s has %d frames (< window %d); skipped", scene, len(names), window)
                continue
            self.index.extend((scene, start) for start in range(window_count(len(names), window)))

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        scene, start = self.index[i]
        names = self.scenes[scene][start:start + self.window]
        return self.load_window(scene, names, center=self.window // 2)

    def load_window(self, scene: str, names: Sequence[str], center: int) -> StereoClip:
        left = np.stack([read_rgb(self.root / self.layout.left_dir / n) for n in names])
        right = np.stack([read_rgb(self.root / self.layout.right_dir / n) for n in names])
        disp = [self.read_disparity(n, left.shape[2:]) for n in names]
        ids = [Path(n).stem for n in names]
        sal = (self.read_saliency(self.layout.left_dir, names[center]),
               self.read_saliency(self.layout.right_dir, names[center]))
        return StereoClip(left, right, disp, ids, center, scene, sal)

    def centered_windows(self, scene: str):
        """One clip per frame of ``scene``, window indices clamped at the scene ends."""
        names = self.scenes[scene]
        for f in range(len(names)):
            idx = centered_indices(f, len(names), self.window)
            yield self.load_window(scene, [names[k] for k in idx], center=self.window // 2)

    def read_disparity(self, name: str, shape) -> DisparityMap:
        path = self.root / self.layout.disparity_dir / name
        if not path.is_file():
            return DisparityMap.empty(shape)
        values, valid = read_disparity(path)
        return DisparityMap(values, valid)

    def read_saliency(self, view_dir: str, name: str) -> ViewSaliency | None:
        if self.saliency_dir is None:
            return None
        sal = read_gray(self.saliency_dir / view_dir / name)
        if self.boxes_dir is None:
            boxes = [Box(0, 0, sal.shape[1], sal.shape[0], "frame", 1.0)]
        else:
            boxes = [Box.from_dict(b) for b in read_boxes(self.boxes_dir / view_dir / (Path(name).stem + ".json"))]
        return ViewSaliency(sal, boxes)


def load_dataset(root, layout: DatasetLayout = DatasetLayout(), window: int = 4,
                 saliency_dir=None, boxes_dir=None) -> StereoDataset:
    return StereoDataset(root, layout, window, saliency_dir, boxes_dir)


# ------------------------------------------------------------------- synthetic


@dataclass
class SyntheticScene:
    frames: int = 8
    height: int = 24
    width: int = 32
    square: int = 8
    speed: int = 1
    background_disparity: int = 1
    object_disparity: int = 3
    seed: int = 0
    extra: dict = field(default_factory=dict)


def _background(h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    return np.stack([0.15 + 0.5 * xx / max(w - 1, 1),
                     0.2 + 0.3 * yy / max(h - 1, 1),
                     0.35 + 0.2 * (xx + yy) / max(h + w - 2, 1)])


def synthetic_clip(scene: SyntheticScene = SyntheticScene()) -> StereoClip:
    """A bright square sliding over a colour gradient, seen by a rectified stereo pair.

    The square sits nearer than the background (larger disparity), carries
    saliency 1 and a detection box in both views.
    """
    h, w, s = scene.height, scene.width, scene.square
    rng = np.random.default_rng(scene.seed)
    y0 = int(rng.integers(1, max(2, h - s - 1)))
    x_start = int(rng.integers(scene.object_disparity + 1, max(scene.object_disparity + 2, w - s - scene.speed * scene.frames)))
    db, do = scene.background_disparity, scene.object_disparity
    bg_full = _background(h, w + db)
    colour = np.array([0.95, 0.9, 0.3], np.float32)[:, None, None]
    left, right, disp, sal_l, sal_r = [], [], [], [], []
    for t in range(scene.frames):
        x0 = x_start + scene.speed * t
        lf = bg_full[:, :, :w].copy()
        rf = bg_full[:, :, db:db + w].copy()     # right(x) = background(x + d)
        lf[:, y0:y0 + s, x0:x0 + s] = colour
        rf[:, y0:y0 + s, x0 - do:x0 - do + s] = colour
        d = np.full((h, w), float(db), np.float32)
        d[y0:y0 + s, x0:x0 + s] = do
        m_l = np.zeros((h, w), np.float32)
        m_l[y0:y0 + s, x0:x0 + s] = 1.0
        m_r = np.zeros((h, w), np.float32)
        m_r[y0:y0 + s, x0 - do:x0 - do + s] = 1.0
        left.append(lf)
        right.append(rf)
        disp.append(DisparityMap.dense(d))
        sal_l.append((m_l, Box(x0 - 1, y0 - 1, s + 2, s + 2, "square", 0.9)))
        sal_r.append((m_r, Box(x0 - do - 1, y0 - 1, s + 2, s + 2, "square", 0.9)))
    center = scene.frames // 2
    views = (ViewSaliency(sal_l[center][0], [sal_l[center][1]]),
             ViewSaliency(sal_r[center][0], [sal_r[center][1]]))
    return StereoClip(np.stack(left), np.stack(right), disp, [f"synthetic_{t:02d}" for t in range(scene.frames)],
                      center, "synthetic", views, (sal_l, sal_r))


def synthetic_windows(clip: StereoClip, window: int) -> list[StereoClip]:
    """Sliding sub-clips of a synthetic clip, each carrying its own centre-frame saliency."""
    sal_l, sal_r = clip.frame_saliency
    out = []
    for start in range(window_count(clip.length, window)):
        c = start + window // 2
        views = (ViewSaliency(sal_l[c][0], [sal_l[c][1]]), ViewSaliency(sal_r[c][0], [sal_r[c][1]]))
        sl = slice(start, start + window)
        out.append(StereoClip(clip.left[sl], clip.right[sl], clip.disparity[sl], clip.frame_ids[sl],
                              window // 2, clip.scene, views))
    return out


def synthetic_centered(clip: StereoClip, window: int) -> list[StereoClip]:
    """One clip per frame of a synthetic clip, centred on that frame with clamped indices."""
    sal_l, sal_r = clip.frame_saliency
    out = []
    for f in range(clip.length):
        idx = centered_indices(f, clip.length, window)
        views = (ViewSaliency(sal_l[f][0], [sal_l[f][1]]), ViewSaliency(sal_r[f][0], [sal_r[f][1]]))
        out.append(StereoClip(clip.left[idx], clip.right[idx], [clip.disparity[k] for k in idx],
                              [clip.frame_ids[k] for k in idx], window // 2, clip.scene, views))
    return out


def write_dataset(root, clips_by_scene: dict[str, StereoClip], layout: DatasetLayout = DatasetLayout(),
                  saliency_dir=None, boxes_dir=None) -> None:
    """Write clips as a KITTI-style tree: ``<scene>_<frame>.png`` per view plus 16-bit disparity."""
    root = Path(root)
    for scene, clip in clips_by_scene.items():
        sal = clip.frame_saliency
        for t in range(clip.length):
            name = f"{scene}_{t:02d}.png"
            write_rgb(root / layout.left_dir / name, clip.left[t])
            write_rgb(root / layout.right_dir / name, clip.right[t])
            write_disparity(root / layout.disparity_dir / name, clip.disparity[t].values, clip.disparity[t].valid)
            if sal is None:
                continue
            for view_dir, per_view in ((layout.left_dir, sal[0]), (layout.right_dir, sal[1])):
                mask, box = per_view[t]
                if saliency_dir is not None:
                    write_gray(Path(saliency_dir) / view_dir / name, mask)
                if boxes_dir is not None:
                    write_boxes(Path(boxes_dir) / view_dir / f"{scene}_{t:02d}.json", [box.to_dict()])
