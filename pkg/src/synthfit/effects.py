"""Capture effects and the synthesis pipeline.

``synthesize`` turns a background and a parameter vector into a finished
synthetic image in a fixed order: shade the object (diffuse weight), motion
blur the object layer, composite it over the background, blur across the
silhouette boundary, then add noise on object pixels.
"""

from __future__ import annotations

import hashlib
from dataclasses import astuple, dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeMismatchError
from .imaging import convolve, gaussian_kernel, kernel_radius, oriented_gaussian_kernel
from .render import Mesh, Pose, RenderConfig, composite, render_object, wrap_angle

POSE_NAMES = ("alpha", "beta", "gamma", "tx", "ty")
CAPTURE_NAMES = ("sigma_s", "sigma_mu", "sigma_mv", "alpha_m", "sigma_n", "w_d")
THETA_NAMES = POSE_NAMES + CAPTURE_NAMES

# Coordinates zeroed by each ablation switch.
EFFECT_PARAMS = {
    "bb": ("sigma_s",),
    "mb": ("sigma_mu", "sigma_mv", "alpha_m"),
    "rn": ("sigma_n",),
    "mp": ("w_d",),
}


@dataclass(frozen=True)
class CaptureParams:
    sigma_s: float = 0.0
    sigma_mu: float = 0.0
    sigma_mv: float = 0.0
    alpha_m: float = 0.0
    sigma_n: float = 0.0
    w_d: float = 0.0

    def __post_init__(self):
        for name in ("sigma_s", "sigma_mu", "sigma_mv", "sigma_n"):
            if not getattr(self, name) >= 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.w_d <= 1.0:
            raise DataError(f"w_d must lie in [0, 1], got {self.w_d}")


@dataclass(frozen=True)
class Theta:
    pose: Pose
    capture: CaptureParams

    def to_vector(self) -> np.ndarray:
        return np.array(self.pose.as_tuple() + astuple(self.capture), dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "Theta":
        vec = [float(v) for v in vec]
        if len(vec) != 11:
            raise DataError(f"theta needs 11 values, got {len(vec)}")
        return cls(Pose(*vec[:5]), CaptureParams(*vec[5:]))

    def suppress(self, effects) -> "Theta":
        """Zero the parameters of the named effects (``bb``, ``mb``, ``rn``, ``mp``)."""
        zeroed = {}
        for eff in effects:
            if eff not in EFFECT_PARAMS:
                raise DataError(f"unknown effect {eff!r}; expected one of {sorted(EFFECT_PARAMS)}")
            zeroed.update({name: 0.0 for name in EFFECT_PARAMS[eff]})
        return replace(self, capture=replace(self.capture, **zeroed))

    def with_pose(self, pose: Pose) -> "Theta":
        return replace(self, pose=pose)


def noise_seed(seed_id: str, index: int = 0) -> int:
    """Stable noise seed for image ``index`` generated from seed image ``seed_id``.

    Index 0 is the seed used while fitting, so regenerating the fitted pose
    reproduces the fitted image exactly.
    """
    digest = hashlib.sha256(f"{seed_id}\x00{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _check_mask(img, mask):
    if mask.shape != img.shape[:2]:
        raise ShapeMismatchError(f"mask {mask.shape} does not match image {img.shape[:2]}")


def motion_blur(img: np.ndarray, mask: np.ndarray, sigma_mu: float, sigma_mv: float, alpha_m: float):
    """Oriented Gaussian blur of the masked pixels only."""
    mask = np.asarray(mask, dtype=bool)
    _check_mask(img, mask)
    kernel = oriented_gaussian_kernel(sigma_mu, sigma_mv, alpha_m)
    if kernel.size == 1 or not mask.any():
        return np.array(img, dtype=np.float64)
    return convolve(img, kernel, support=mask)


def boundary_band(mask: np.ndarray, radius: int) -> np.ndarray:
    """Pixels within Chebyshev distance ``radius`` of both object and background."""
    if radius <= 0:
        return np.zeros(mask.shape, dtype=bool)
    size = 2 * radius + 1
    m = mask.astype(np.uint8)
    near_obj = ndimage.maximum_filter(m, size=size, mode="constant", cval=0)
    near_bg = ndimage.maximum_filter(1 - m, size=size, mode="constant", cval=0)
    return (near_obj & near_bg).astype(bool)


def boundary_blur(img: np.ndarray, mask: np.ndarray, sigma_s: float) -> np.ndarray:
    """Replace the silhouette band of half-width ceil(3 sigma) by a full-image blur."""
    mask = np.asarray(mask, dtype=bool)
    _check_mask(img, mask)
    kernel = gaussian_kernel(sigma_s)
    out = np.array(img, dtype=np.float64)
    band = boundary_band(mask, kernel_radius(sigma_s))
    if not band.any():
        return out
    blurred = convolve(img, kernel)
    out[band] = blurred[band]
    return out


def add_object_noise(img: np.ndarray, mask: np.ndarray, sigma_n: float, rng: np.random.Generator):
    """Add independent N(0, sigma_n^2) noise to masked pixels, clamped to [0, 1].

    A full-frame standard-normal field is always drawn, so the noise at a
    pixel depends only on the generator state and not on the mask.
    """
    mask = np.asarray(mask, dtype=bool)
    _check_mask(img, mask)
    if sigma_n < 0:
        raise DataError(f"sigma_n must be >= 0, got {sigma_n}")
    field = rng.standard_normal(np.shape(img))
    out = np.array(img, dtype=np.float64)
    if sigma_n == 0:
        return out
    sel = mask if out.ndim == 2 else np.broadcast_to(mask[:, :, None], out.shape)
    out[sel] = np.clip(out[sel] + sigma_n * field[sel], 0.0, 1.0)
    return out


def apply_capture(layer, mask, background, capture: CaptureParams, rng) -> np.ndarray:
    """The post-render stages of the pipeline, for an already shaded layer."""
    blurred = motion_blur(layer, mask, capture.sigma_mu, capture.sigma_mv, capture.alpha_m)
    img = composite(blurred, mask, background)
    img = boundary_blur(img, mask, capture.sigma_s)
    return add_object_noise(img, mask, capture.sigma_n, rng)


def synthesize(theta: Theta, background: np.ndarray, mesh: Mesh, cfg: RenderConfig, rng):
    """Render ``theta`` over ``background``; returns ``(image, silhouette mask)``."""
    background = np.asarray(background, dtype=np.float64)
    h, w = background.shape[:2]
    if (h, w) != (cfg.height, cfg.width):
        cfg = cfg.with_size(w, h)
    layer, mask = render_object(mesh, theta.pose, theta.capture.w_d, cfg)
    return apply_capture(layer, mask, background, theta.capture, rng), mask


def synthesize_rgb(thetas, background: np.ndarray, mesh: Mesh, cfg: RenderConfig, rngs):
    """Stack three single-channel syntheses, one parameter set per channel."""
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 3 or background.shape[2] != 3 or len(thetas) != 3:
        raise ShapeMismatchError("RGB synthesis needs a 3-channel background and 3 thetas")
    chans, masks = [], []
    for c, (theta, rng) in enumerate(zip(thetas, rngs)):
        img, mask = synthesize(theta, background[:, :, c], mesh, cfg, rng)
        chans.append(img)
        masks.append(mask)
    return np.stack(chans, axis=2), masks


# ---------------------------------------------------------------------------
# Theta record files: ``seed_id alpha beta gamma tx ty sigma_s ... w_d``
# ---------------------------------------------------------------------------


def format_theta_record(seed_id: str, theta: Theta) -> str:
    if not seed_id or any(ch.isspace() for ch in seed_id) or "#" in seed_id:
        raise DataError(f"invalid seed id {seed_id!r}")
    return " ".join([seed_id] + [repr(float(v)) for v in theta.to_vector()])


def write_theta_records(path, records, append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        if not append:
            fh.write("# seed_id " + " ".join(THETA_NAMES) + "\n")
        for seed_id, theta in records:
            fh.write(format_theta_record(seed_id, theta) + "\n")


def read_theta_records(path) -> list[tuple[str, Theta]]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 12:
                raise DataError(f"{path}:{lineno}: expected 12 fields, got {len(parts)}")
            try:
                theta = Theta.from_vector(float(p) for p in parts[1:])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            records.append((parts[0], theta))
    return records


def normalize_theta(theta: Theta) -> Theta:
    """Wrap angular coordinates into (-pi, pi]."""
    p, c = theta.pose, theta.capture
    pose = Pose(wrap_angle(p.alpha), wrap_angle(p.beta), wrap_angle(p.gamma), p.tx, p.ty)
    return Theta(pose, replace(c, alpha_m=wrap_angle(c.alpha_m)))
