"""Training-set assembly: background recovery, synthetic mass production,
negative sampling, and the two augmentation baselines."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .effects import CAPTURE_NAMES, POSE_NAMES, THETA_NAMES, CaptureParams, Theta, noise_seed, synthesize
from .errors import DataError, ShapeMismatchError
from .imaging import convolve, gaussian_kernel, load_image, save_image
from .learn import LabeledPatchSet
from .render import Mesh, Pose, RenderConfig

MANIFEST_FIELDS = ("path", "label", "source", "seed_id") + THETA_NAMES


# ---------------------------------------------------------------------------
# Background extraction
# ---------------------------------------------------------------------------


def estimate_offset(ref: np.ndarray, img: np.ndarray, max_shift: int = 8) -> tuple[int, int]:
    """Integer displacement ``(dx, dy)`` of ``img``'s content relative to ``ref``.

    Exhaustive search maximizing zero-mean normalized correlation over the
    overlap of the two frames.
    """
    ref = np.asarray(ref, dtype=np.float64)
    img = np.asarray(img, dtype=np.float64)
    if ref.ndim == 3:
        ref, img = ref.mean(axis=2), img.mean(axis=2)
    h, w = ref.shape
    best, best_score = (0, 0), -np.inf
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            # ref[y, x] is compared with img[y + dy, x + dx]
            ys, ye = max(0, -dy), min(h, h - dy)
            xs, xe = max(0, -dx), min(w, w - dx)
            if ye - ys < 2 or xe - xs < 2:
                continue
            a = ref[ys:ye, xs:xe]
            b = img[ys + dy : ye + dy, xs + dx : xe + dx]
            a = a - a.mean()
            b = b - b.mean()
            denom = math.sqrt(float((a * a).sum() * (b * b).sum()))
            score = float((a * b).sum()) / denom if denom > 0 else 0.0
            if score > best_score + 1e-12:
                best, best_score = (dx, dy), score
    return best


def shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Move content by ``(dx, dy)`` pixels, replicating edges."""
    shift = (dy, dx) if img.ndim == 2 else (dy, dx, 0)
    return ndimage.shift(img, shift, order=0, mode="nearest")


def extract_background(frames, align: str = "none", max_shift: int = 8) -> np.ndarray:
    """Per-pixel median of the (optionally translation-aligned) frames."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if len(frames) < 3:
        raise DataError(f"need at least 3 frames, got {len(frames)}")
    if any(f.shape != frames[0].shape for f in frames):
        raise ShapeMismatchError("frames differ in size")
    if align not in ("none", "translation"):
        raise DataError(f"unknown alignment {align!r}")
    if align == "translation":
        ref = frames[0]
        aligned = [ref]
        for f in frames[1:]:
            dx, dy = estimate_offset(ref, f, max_shift)
            aligned.append(shift_image(f, -dx, -dy))
        frames = aligned
    return np.median(np.stack(frames), axis=0)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass
class ManifestRow:
    path: str
    label: str
    source: str
    seed_id: str = ""
    theta: Theta | None = None

    def __post_init__(self):
        if self.label not in ("pos", "neg"):
            raise DataError(f"bad label {self.label!r}")
        if self.source not in ("real", "synthetic", "perturbed"):
            raise DataError(f"bad source {self.source!r}")
        if self.source in ("synthetic", "perturbed") and self.label != "pos":
            raise DataError(f"{self.source} rows must be positives")

    def as_dict(self) -> dict:
        d = {"path": self.path, "label": self.label, "source": self.source, "seed_id": self.seed_id}
        vals = self.theta.to_vector() if self.theta is not None else [None] * len(THETA_NAMES)
        d.update({n: "" if v is None else repr(float(v)) for n, v in zip(THETA_NAMES, vals)})
        return d


@dataclass
class DatasetManifest:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def extend(self, other: "DatasetManifest") -> "DatasetManifest":
        self.rows.extend(other.rows)
        return self

    def write(self, path) -> None:
        """CSV with image paths stored relative to the manifest's directory."""
        base = os.path.dirname(os.path.abspath(os.fspath(path)))
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
            wr.writeheader()
            for r in self.rows:
                rec = r.as_dict()
                rec["path"] = os.path.relpath(os.path.abspath(r.path), base)
                wr.writerow(rec)
        os.replace(tmp, path)

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        rows = []
        base = os.path.dirname(os.fspath(path))
        with open(path, newline="") as fh:
            rd = csv.DictReader(fh)
            if tuple(rd.fieldnames or ()) != MANIFEST_FIELDS:
                raise DataError(f"{path}: unexpected manifest header")
            for rec in rd:
                theta = None
                if rec["alpha"]:
                    theta = Theta.from_vector(float(rec[n]) for n in THETA_NAMES)
                p = rec["path"]
                if not os.path.isabs(p):
                    p = os.path.join(base, p)
                rows.append(ManifestRow(p, rec["label"], rec["source"], rec["seed_id"], theta))
        return cls(rows)

    def load_patches(self) -> LabeledPatchSet:
        imgs = [load_image(r.path) for r in self.rows]
        labels = [1 if r.label == "pos" else -1 for r in self.rows]
        return LabeledPatchSet(np.stack(imgs) if imgs else np.zeros((0, 1, 1)), labels)


# ---------------------------------------------------------------------------
# Synthetic positives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoseRanges:
    """Sampling interval per pose coordinate; ``None`` keeps the fitted value."""

    alpha: tuple | None = (-math.pi, math.pi)
    beta: tuple | None = (-math.pi, math.pi)
    gamma: tuple | None = (-math.pi, math.pi)
    tx: tuple | None = None
    ty: tuple | None = None

    def __post_init__(self):
        for name in POSE_NAMES:
            r = getattr(self, name)
            if r is not None and not r[0] <= r[1]:
                raise DataError(f"pose range {name} has low > high")

    @classmethod
    def fixed(cls) -> "PoseRanges":
        return cls(None, None, None, None, None)

    @classmethod
    def centered(cls, width: int, height: int, jitter: float = 2.0) -> "PoseRanges":
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        return cls(tx=(cx - jitter, cx + jitter), ty=(cy - jitter, cy + jitter))

    def sample(self, base: Pose, rng: np.random.Generator) -> Pose:
        vals = []
        for name, b in zip(POSE_NAMES, base.as_tuple()):
            r = getattr(self, name)
            vals.append(b if r is None else float(rng.uniform(r[0], r[1])))
        return Pose(*vals)


def render_thetas(jobs, mesh: Mesh, backgrounds, render_cfg: RenderConfig):
    """Synthesize ``(seed_id, index, theta)`` jobs; background ``k`` of the run
    is ``backgrounds[k % len(backgrounds)]``."""
    if not backgrounds:
        raise DataError("no backgrounds supplied")
    out = []
    for k, (seed_id, index, theta) in enumerate(jobs):
        bg = backgrounds[k % len(backgrounds)]
        img, _ = synthesize(theta, bg, mesh, render_cfg, np.random.default_rng(noise_seed(seed_id, index)))
        out.append(img)
    return out


def synthetic_jobs(fits, per_seed: int, ranges: PoseRanges, rng, suppress=()):
    """Per fit, ``per_seed`` thetas keeping its capture block and drawing a new pose."""
    if per_seed < 1:
        raise DataError("per_seed must be >= 1")
    if not fits:
        raise DataError("no fits supplied")
    jobs = []
    for fit in fits:
        theta = fit.theta.suppress(suppress) if suppress else fit.theta
        for j in range(per_seed):
            jobs.append((fit.seed_id, j, Theta(ranges.sample(theta.pose, rng), theta.capture)))
    return jobs


def write_dataset(jobs, images, out_dir, source="synthetic") -> DatasetManifest:
    if not os.path.isdir(out_dir):
        raise DataError(f"output directory {out_dir} does not exist")
    rows = []
    for (seed_id, index, theta), img in zip(jobs, images):
        name = f"{seed_id.replace(':', '_')}_{index:05d}.png"
        path = os.path.join(out_dir, name)
        save_image(img, path)
        rows.append(ManifestRow(path, "pos", source, seed_id, theta))
    return DatasetManifest(rows)


def synthesize_dataset(fits, mesh, backgrounds, per_seed, ranges, render_cfg, rng, out_dir, suppress=()):
    """Generate ``per_seed`` synthetic positives per fit and write them with a manifest.

    The capture parameters of every image are the fit's own; only the pose
    is redrawn. Image ``j`` of a seed uses noise seed ``noise_seed(seed_id, j)``.
    """
    jobs = synthetic_jobs(fits, per_seed, ranges, rng, suppress)
    images = render_thetas(jobs, mesh, backgrounds, render_cfg)
    return write_dataset(jobs, images, out_dir)


def sample_theta_uniform(fits, n: int, rng: np.random.Generator, ranges: PoseRanges | None = None):
    """Thetas whose capture coordinates are uniform over the fitted min/max box.

    Poses come from ``ranges``; coordinates it leaves open are copied from
    the fits in turn.
    """
    if len(fits) < 2:
        raise DataError("need at least 2 fits to define a sampling box")
    caps = np.array([[getattr(f.theta.capture, c) for c in CAPTURE_NAMES] for f in fits])
    lo, hi = caps.min(axis=0), caps.max(axis=0)
    ranges = ranges if ranges is not None else PoseRanges.fixed()
    out = []
    for k in range(n):
        cap = CaptureParams(*(float(v) for v in rng.uniform(lo, hi)))
        pose = ranges.sample(fits[k % len(fits)].theta.pose, rng)
        out.append(Theta(pose, cap))
    return out


# ---------------------------------------------------------------------------
# Perturbation baseline and negatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    angle: float = 0.0  # radians
    dx: float = 0.0
    dy: float = 0.0
    mirror: bool = False
    blur: float = 0.0
    noise: float = 0.0

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "Perturbation":
        return cls(
            angle=math.radians(float(rng.uniform(-15.0, 15.0))),
            dx=float(rng.uniform(-3.0, 3.0)),
            dy=float(rng.uniform(-3.0, 3.0)),
            mirror=bool(rng.random() < 0.5),
            blur=float(rng.uniform(0.0, 1.0)),
            noise=float(rng.uniform(0.0, 0.03)),
        )


def perturb_image(img: np.ndarray, p: Perturbation, rng: np.random.Generator) -> np.ndarray:
    """Rotate about the center, translate, mirror, blur, add noise, in that order."""
    out = np.asarray(img, dtype=np.float64)
    if p.angle != 0 or p.dx != 0 or p.dy != 0:
        h, w = out.shape[:2]
        c, s = math.cos(p.angle), math.sin(p.angle)
        # output (r, c) samples input at R^-1 (out - center - shift) + center
        mat = np.array([[c, s], [-s, c]])
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        offset = center - mat @ (center + np.array([p.dy, p.dx]))
        planes = [out] if out.ndim == 2 else [out[:, :, k] for k in range(out.shape[2])]
        res = [ndimage.affine_transform(pl, mat, offset=offset, order=1, mode="nearest") for pl in planes]
        out = res[0] if out.ndim == 2 else np.stack(res, axis=2)
    if p.mirror:
        out = out[:, ::-1].copy()
    if p.blur > 0:
        out = convolve(out, gaussian_kernel(p.blur))
    if p.noise > 0:
        out = np.clip(out + p.noise * rng.standard_normal(out.shape), 0.0, 1.0)
    return out


def perturbed_images(images, per_image: int, rng: np.random.Generator, draw=Perturbation.draw):
    if per_image < 1:
        raise DataError("per_image must be >= 1")
    out = []
    for i, img in enumerate(images):
        for j in range(per_image):
            out.append((i, j, perturb_image(img, draw(rng), rng)))
    return out


def perturb_real(images, per_image: int, rng: np.random.Generator, out_dir, draw=Perturbation.draw, names=None):
    """Baseline augmentation of real positives; ``draw`` chooses each perturbation."""
    if not os.path.isdir(out_dir):
        raise DataError(f"output directory {out_dir} does not exist")
    rows = []
    for i, j, img in perturbed_images(images, per_image, rng, draw):
        stem = names[i] if names else f"real{i:04d}"
        path = os.path.join(out_dir, f"{stem}_p{j:04d}.png")
        save_image(img, path)
        rows.append(ManifestRow(path, "pos", "perturbed", stem))
    return DatasetManifest(rows)


def sample_negatives(backgrounds, n: int, size: int, rng: np.random.Generator) -> LabeledPatchSet:
    """``n`` random ``size``x``size`` crops from the backgrounds, labeled -1."""
    backgrounds = [np.asarray(b, dtype=np.float64) for b in backgrounds]
    if not backgrounds and n > 0:
        raise DataError("no backgrounds supplied")
    for b in backgrounds:
        if b.shape[0] < size or b.shape[1] < size:
            raise DataError(f"background {b.shape[:2]} smaller than crop size {size}")
    crops = []
    for _ in range(n):
        b = backgrounds[int(rng.integers(len(backgrounds)))]
        y = int(rng.integers(0, b.shape[0] - size + 1))
        x = int(rng.integers(0, b.shape[1] - size + 1))
        crops.append(b[y : y + size, x : x + size])
    shape = (0, size, size) + (backgrounds[0].shape[2:] if backgrounds else ())
    patches = np.stack(crops) if crops else np.zeros(shape)
    return LabeledPatchSet(patches, -np.ones(n, dtype=np.int64))
