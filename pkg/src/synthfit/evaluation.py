"""Sliding-window detection, NMS, precision/recall and parameter histograms."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .effects import THETA_NAMES
from .errors import DataError
from .imaging import to_gray


@dataclass(frozen=True)
class Detection:
    """Window center in original-image pixels, its size there, and its score."""

    x: float
    y: float
    size: float
    scale: float
    score: float
    image: str = ""

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataError(f"detection score must be finite, got {self.score}")


@dataclass(frozen=True)
class ScoreMap:
    scale: float
    stride: int
    window: int
    scores: np.ndarray

    def detections(self, image: str = "") -> list[Detection]:
        out = []
        half = (self.window - 1) / 2.0
        size = self.window / self.scale
        for r, c in np.ndindex(*self.scores.shape):
            x, y = map_to_original(c * self.stride + half, r * self.stride + half, self.scale)
            out.append(Detection(x, y, size, self.scale, float(self.scores[r, c]), image))
        return out


def map_to_original(x, y, scale):
    """Pixel-center coordinates in a rescaled image back to the original."""
    return (x + 0.5) / scale - 0.5, (y + 0.5) / scale - 0.5


def resize_bilinear(img: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear resize by ``scale`` with pixel-center alignment and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    if scale == 1.0:
        return img.copy()
    h, w = img.shape[:2]
    nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    ys = (np.arange(nh) + 0.5) / scale - 0.5
    xs = (np.arange(nw) + 0.5) / scale - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    if img.ndim == 2:
        return ndimage.map_coordinates(img, grid, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(img[:, :, k], grid, order=1, mode="nearest") for k in range(img.shape[2])], axis=2)


def window_stacks(image, scales, stride: int, window: int):
    """Yield ``(scale, rows, cols, patches)`` for every scale, where ``patches``
    is the ``(rows * cols, window, window)`` stack of stride-aligned windows."""
    if stride < 1 or window < 1:
        raise DataError("stride and window must be positive")
    gray = to_gray(np.asarray(image, dtype=np.float64))
    for s in scales:
        if not s > 0:
            raise DataError(f"scale must be positive, got {s}")
        scaled = resize_bilinear(gray, s)
        h, w = scaled.shape
        if window > h or window > w:
            raise DataError(f"window {window} exceeds scaled image {w}x{h} at scale {s}")
        views = sliding_window_view(scaled, (window, window))[::stride, ::stride]
        rows, cols = views.shape[:2]
        yield float(s), rows, cols, views.reshape(-1, window, window)


def sliding_window(classifier, image, scales, stride: int, window: int, batch: int = 4096) -> list[ScoreMap]:
    """Score every stride-aligned ``window``x``window`` patch at every scale.

    ``classifier`` maps an (N, window, window) stack to N scores.
    """
    maps = []
    for s, rows, cols, flat in window_stacks(image, scales, stride, window):
        scores = np.concatenate(
            [np.asarray(classifier(flat[i : i + batch]), dtype=np.float64).ravel() for i in range(0, len(flat), batch)]
        )
        maps.append(ScoreMap(s, stride, window, scores.reshape(rows, cols)))
    return maps


def detect(classifier, image, scales, stride, window, nms_radius, image_id="") -> list[Detection]:
    dets = [d for m in sliding_window(classifier, image, scales, stride, window) for d in m.detections(image_id)]
    return nms(dets, nms_radius)


def _order_key(d: Detection):
    return (-d.score, d.scale, d.y, d.x)


def nms(detections, radius: float) -> list[Detection]:
    """Greedy non-maximum suppression across scales by center distance.

    A detection is dropped when its center lies within ``radius`` (inclusive)
    of an already kept, better-ranked one. Ranking is by descending score,
    then ascending (scale, y, x).
    """
    if not radius > 0:
        raise DataError("radius must be positive")
    if not detections:
        return []
    dets = sorted(detections, key=_order_key)
    xy = np.array([(d.x, d.y) for d in dets])
    alive = np.ones(len(dets), dtype=bool)
    keep = []
    r2 = radius * radius
    for i in range(len(dets)):
        if not alive[i]:
            continue
        keep.append(dets[i])
        d2 = ((xy[i + 1 :] - xy[i]) ** 2).sum(axis=1)
        alive[i + 1 :] &= d2 > r2
    return keep


@dataclass(frozen=True)
class GroundTruth:
    """Object centers and sizes per image id."""

    objects: dict

    def __post_init__(self):
        clean = {str(k): [tuple(float(v) for v in o) for o in objs] for k, objs in self.objects.items()}
        object.__setattr__(self, "objects", clean)

    @property
    def count(self) -> int:
        return sum(len(v) for v in self.objects.values())

    @classmethod
    def read(cls, path) -> "GroundTruth":
        objs: dict = {}
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            if rd.fieldnames is None or set(rd.fieldnames) != {"image", "x", "y", "size"}:
                raise DataError(f"{path}: ground truth needs columns image,x,y,size")
            for rec in rd:
                objs.setdefault(rec["image"], []).append((float(rec["x"]), float(rec["y"]), float(rec["size"])))
        return cls(objs)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("image,x,y,size\n")
            for img in sorted(self.objects):
                for x, y, s in self.objects[img]:
                    fh.write(f"{img},{x!r},{y!r},{s!r}\n")


def pr_curve(detections, gt: GroundTruth, match_radius: float) -> list[tuple[float, float]]:
    """One (recall, precision) point per score-ordered prefix of the detections.

    Each detection claims the nearest still-unmatched object of its image
    within ``match_radius``; otherwise it is a false positive.
    """
    if not match_radius > 0:
        raise DataError("match_radius must be positive")
    n_gt = gt.count
    if n_gt == 0:
        raise DataError("ground truth is empty; recall is undefined")
    dets = sorted(detections, key=lambda d: (-d.score, d.image, d.scale, d.y, d.x))
    used = {k: np.zeros(len(v), dtype=bool) for k, v in gt.objects.items()}
    centers = {k: np.array([(o[0], o[1]) for o in v]).reshape(-1, 2) for k, v in gt.objects.items()}
    tp = fp = 0
    points = []
    for d in dets:
        hit = False
        if d.image in centers and len(centers[d.image]):
            dist = np.hypot(centers[d.image][:, 0] - d.x, centers[d.image][:, 1] - d.y)
            dist[used[d.image]] = np.inf
            j = int(np.argmin(dist))
            if dist[j] <= match_radius:
                used[d.image][j] = True
                hit = True
        if hit:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    return points


def average_precision(curve) -> float:
    """Exact area under the monotone precision envelope of a PR curve."""
    if len(curve) == 0:
        return 0.0
    pts = np.asarray(curve, dtype=np.float64)
    recall, precision = pts[:, 0], pts[:, 1]
    if np.any(np.diff(recall) < 0):
        raise DataError("recall must be non-decreasing")
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    widths = np.diff(np.concatenate([[0.0], recall]))
    return float(np.clip((widths * envelope).sum(), 0.0, 1.0))


def joint_histogram(thetas, pair, bins: int):
    """Equal-width 2D counts of two theta coordinates over their observed range.

    Returns ``(counts, x_edges, y_edges)``; ``counts[i, j]`` holds thetas in
    bin ``i`` of the first coordinate and bin ``j`` of the second.
    """
    if bins < 1:
        raise DataError("bins must be >= 1")
    if len(thetas) == 0:
        raise DataError("need at least one theta")
    idx = []
    for name in pair:
        if name not in THETA_NAMES:
            raise DataError(f"unknown coordinate {name!r}")
        idx.append(THETA_NAMES.index(name))
    vals = np.array([t.to_vector() for t in thetas])[:, idx]
    counts = np.zeros((bins, bins), dtype=np.int64)
    cells, edges = [], []
    for k in range(2):
        v = vals[:, k]
        lo, hi = float(v.min()), float(v.max())
        edges.append(np.linspace(lo, hi, bins + 1))
        if hi > lo:
            b = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
        else:
            b = np.zeros(len(v), dtype=np.int64)
        cells.append(np.clip(b, 0, bins - 1))
    np.add.at(counts, (cells[0], cells[1]), 1)
    return counts, edges[0], edges[1]


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_histogram(path, counts) -> None:
    _atomic_write(path, "".join(" ".join(str(int(c)) for c in row) + "\n" for row in counts))


def write_detections(path, detections) -> None:
    lines = ["image,x,y,scale,score\n"]
    lines += [f"{d.image},{d.x!r},{d.y!r},{d.scale!r},{d.score!r}\n" for d in detections]
    _atomic_write(path, "".join(lines))


def read_detections(path, window: float | None = None) -> list[Detection]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            scale = float(rec["scale"])
            size = window / scale if window else float("nan")
            out.append(Detection(float(rec["x"]), float(rec["y"]), size, scale, float(rec["score"]), rec["image"]))
    return out


def format_report(curve, ap: float) -> str:
    lines = ["# recall precision"]
    lines += [f"{r:.6f} {p:.6f}" for r, p in curve]
    lines.append(f"AveP {ap:.4f}")
    return "\n".join(lines) + "\n"


def write_report(path, curve, ap: float) -> None:
    _atomic_write(path, format_report(curve, ap))
