"""Feature extractors: HoG, normalized gradient energy, and a small CNN."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeMismatchError
from .imaging import to_gray

ENERGY_EPS = 1e-9
HOG_EPS = 1e-5


def image_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered differences [-1, 0, 1] with edge replication.

    Works on the last two axes, so stacks of images are accepted.
    """
    img = np.asarray(img, dtype=np.float64)
    pad = [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(img, pad, mode="edge")
    gx = p[..., 1:-1, 2:] - p[..., 1:-1, :-2]
    gy = p[..., 2:, 1:-1] - p[..., :-2, 1:-1]
    return gx, gy


def unsigned_orientation(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    theta[theta >= np.pi] = 0.0
    return theta


# ---------------------------------------------------------------------------
# HoG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HogConfig:
    cell: int = 8
    block: int = 2
    bins: int = 9
    stride: int = 1

    def __post_init__(self):
        if self.cell < 1 or self.bins < 1 or self.block < 1 or self.stride < 1:
            raise DataError(f"invalid HoG config {self}")

    def length(self, height: int, width: int) -> int:
        ny = (height // self.cell - self.block) // self.stride + 1
        nx = (width // self.cell - self.block) // self.stride + 1
        return ny * nx * self.block * self.block * self.bins


def cell_histograms(img: np.ndarray, cfg: HogConfig) -> np.ndarray:
    """Per-cell orientation histograms ``(cells_y, cells_x, bins)``.

    Each pixel votes its gradient magnitude into the two nearest bins,
    whose centers sit at ``(k + 0.5) * pi / bins``.
    """
    img = to_gray(np.asarray(img, dtype=np.float64))
    h, w = img.shape
    if h % cfg.cell or w % cfg.cell:
        raise ShapeMismatchError(f"image {h}x{w} not divisible by cell size {cfg.cell}")
    gx, gy = image_gradients(img)
    mag = np.hypot(gx, gy)
    pos = unsigned_orientation(gx, gy) / (np.pi / cfg.bins) - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % cfg.bins
    hi = (lo + 1) % cfg.bins
    c = cfg.cell
    ncx = w // c
    cell = (np.arange(h) // c)[:, None] * ncx + (np.arange(w) // c)[None, :]
    n = (h // c) * ncx * cfg.bins
    votes = np.bincount((cell * cfg.bins + lo).ravel(), (mag * (1.0 - frac)).ravel(), minlength=n)
    votes += np.bincount((cell * cfg.bins + hi).ravel(), (mag * frac).ravel(), minlength=n)
    return votes.reshape(h // c, ncx, cfg.bins)


def compute_hog(img: np.ndarray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Block-normalized HoG descriptor, blocks concatenated in row-major order."""
    cells = cell_histograms(img, cfg)
    ny, nx = cells.shape[:2]
    if ny < cfg.block or nx < cfg.block:
        raise ShapeMismatchError(f"image has {ny}x{nx} cells, fewer than the block size {cfg.block}")
    win = sliding_window_view(cells, (cfg.block, cfg.block), axis=(0, 1))
    win = win[:: cfg.stride, :: cfg.stride]  # (by, bx, bins, block, block)
    blocks = win.transpose(0, 1, 3, 4, 2).reshape(win.shape[0], win.shape[1], -1)
    norm = np.sqrt((blocks * blocks).sum(axis=2, keepdims=True) + HOG_EPS**2)
    return (blocks / norm).ravel()


# ---------------------------------------------------------------------------
# Normalized gradient energy and weak learners
# ---------------------------------------------------------------------------


def _orientation_bins(img: np.ndarray, n_bins: int):
    gx, gy = image_gradients(img)
    mag = np.hypot(gx, gy)
    b = np.minimum((unsigned_orientation(gx, gy) / (np.pi / n_bins)).astype(np.int64), n_bins - 1)
    return mag, b


def orientation_channels(img: np.ndarray, n_bins: int) -> np.ndarray:
    """Gradient magnitude split by hard unsigned-orientation sector.

    Returns ``(..., n_bins, H, W)`` for input ``(..., H, W)``.
    """
    mag, b = _orientation_bins(img, n_bins)
    out = np.zeros(mag.shape[:-2] + (n_bins,) + mag.shape[-2:])
    np.put_along_axis(out, b[..., None, :, :], mag[..., None, :, :], axis=-3)
    return out


def integral_channels(img: np.ndarray, n_bins: int) -> np.ndarray:
    """Summed-area tables of the orientation channels plus a total channel.

    Shape ``(..., n_bins + 1, H + 1, W + 1)``; channel ``n_bins`` holds the
    magnitude summed over all orientations.
    """
    mag, b = _orientation_bins(img, n_bins)
    h, w = mag.shape[-2:]
    out = np.zeros(mag.shape[:-2] + (n_bins + 1, h + 1, w + 1))
    inner = out[..., :n_bins, 1:, 1:]
    np.put_along_axis(inner, b[..., None, :, :], mag[..., None, :, :], axis=-3)
    out[..., n_bins, 1:, 1:] = mag
    np.cumsum(out, axis=-1, out=out)
    np.cumsum(out, axis=-2, out=out)
    return out


def _region_sum(integral, ch, x, y, w, h):
    return (
        integral[..., ch, y + h, x + w]
        - integral[..., ch, y, x + w]
        - integral[..., ch, y + h, x]
        + integral[..., ch, y, x]
    )


def _check_region(region, shape):
    x, y, w, h = region
    if w < 1 or h < 1:
        raise DataError(f"empty region {region}")
    if x < 0 or y < 0 or x + w > shape[1] or y + h > shape[0]:
        raise DataError(f"region {region} outside image {shape[1]}x{shape[0]}")


def gradient_energy(img: np.ndarray, region, orientation: int, n_bins: int) -> float:
    """Fraction of the region's gradient magnitude that falls in one orientation sector.

    ``region`` is ``(x, y, w, h)`` in pixels. Sums come from summed-area
    tables, the same path the batched ``energy_matrix`` takes, so scalar and
    batched evaluation agree bit for bit.
    """
    img = to_gray(np.asarray(img, dtype=np.float64))
    _check_region(region, img.shape)
    if not 0 <= orientation < n_bins:
        raise DataError(f"orientation {orientation} outside [0, {n_bins})")
    x, y, w, h = region
    integ = integral_channels(img, n_bins)
    num = _region_sum(integ, orientation, x, y, w, h)
    den = _region_sum(integ, n_bins, x, y, w, h)
    return float(num / (den + ENERGY_EPS))


@dataclass(frozen=True)
class WeakLearner:
    x: int
    y: int
    w: int
    h: int
    orientation: int
    tau: float
    alpha: float = 1.0

    @property
    def region(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


def eval_weak(h: WeakLearner, img: np.ndarray, n_bins: int) -> int:
    """1 if the learner's gradient energy exceeds its threshold, else 0."""
    return int(gradient_energy(img, h.region, h.orientation, n_bins) > h.tau)


def learner_arrays(learners):
    """Columns ``(x, y, w, h, o, tau, alpha)`` of a learner list as arrays."""
    a = np.array([[l.x, l.y, l.w, l.h, l.orientation] for l in learners], dtype=np.int64).reshape(-1, 5)
    t = np.array([[l.tau, l.alpha] for l in learners], dtype=np.float64).reshape(-1, 2)
    return a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4], t[:, 0], t[:, 1]


def energy_matrix(patches, learners, n_bins: int, chunk: int = 256, cols=None) -> np.ndarray:
    """Gradient energies ``(n_patches, n_learners)`` for a stack of equal-size patches.

    ``cols`` may carry ``learner_arrays(learners)`` to skip rebuilding them.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 4:
        patches = patches.mean(axis=3)
    if patches.ndim == 2:
        patches = patches[None]
    x, y, w, h, o, _, _ = learner_arrays(learners) if cols is None else cols
    hh, ww = patches.shape[1:]
    if len(x) and (x.min() < 0 or y.min() < 0 or (x + w).max() > ww or (y + h).max() > hh):
        raise DataError(f"learner region outside {ww}x{hh} patches")
    out = np.empty((len(patches), len(x)))
    for s in range(0, len(patches), chunk):
        integ = integral_channels(patches[s : s + chunk], n_bins)
        num = _region_sum(integ, o, x, y, w, h)
        den = _region_sum(integ, n_bins, x, y, w, h)
        out[s : s + chunk] = num / (den + ENERGY_EPS)
    return out


# ---------------------------------------------------------------------------
# Minimal CNN
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "identity")


@dataclass
class Conv:
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    kind = "conv"

    def output_shape(self, shape):
        c, h, w = shape
        out, cin, k, _ = self.weight.shape
        if cin != c or h < k or w < k:
            raise ShapeMismatchError(f"conv {self.weight.shape} cannot take input {shape}")
        return (out, h - k + 1, w - k + 1)

    def linear(self, x: np.ndarray) -> np.ndarray:
        k = self.weight.shape[2]
        win = sliding_window_view(x, (k, k), axis=(2, 3))  # (N, C, H', W', k, k)
        return np.einsum("nchwij,ocij->nohw", win, self.weight, optimize=True) + self.bias[None, :, None, None]


@dataclass
class Pool:
    size: int = 2
    activation: str = "identity"

    kind = "pool"

    def output_shape(self, shape):
        c, h, w = shape
        if h < self.size or w < self.size:
            raise ShapeMismatchError(f"pool {self.size} cannot take input {shape}")
        return (c, h // self.size, w // self.size)

    def linear(self, x: np.ndarray) -> np.ndarray:
        s = self.size
        n, c, h, w = x.shape
        x = x[:, :, : h // s * s, : w // s * s]
        return x.reshape(n, c, h // s, s, w // s, s).max(axis=(3, 5))


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    kind = "fc"

    def output_shape(self, shape):
        n_in = int(np.prod(shape))
        if self.weight.shape[1] != n_in:
            raise ShapeMismatchError(f"fc {self.weight.shape} cannot take input {shape}")
        return (self.weight.shape[0], 1, 1)

    def linear(self, x: np.ndarray) -> np.ndarray:
        out = x.reshape(len(x), -1) @ self.weight.T + self.bias
        return out[:, :, None, None]


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else z


@dataclass
class CnnNet:
    """Feed-forward stack of conv / 2x2 max-pool / fully-connected layers.

    Activations are kept in ``(N, C, H, W)`` layout; fully-connected layers
    produce ``(N, C, 1, 1)``.
    """

    input_shape: tuple[int, int, int]
    layers: list

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.layers) < 2:
            raise DataError("a CnnNet needs at least two layers")
        shape = self.input_shape
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise DataError(f"unknown activation {layer.activation!r}")
            shape = layer.output_shape(shape)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def shapes(self) -> list[tuple[int, int, int]]:
        out, shape = [], self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append(shape)
        return out

    def params(self) -> list[np.ndarray]:
        return [p for l in self.layers if l.kind != "pool" for p in (l.weight, l.bias)]

    def copy(self) -> "CnnNet":
        layers = []
        for l in self.layers:
            if l.kind == "pool":
                layers.append(Pool(l.size, l.activation))
            else:
                layers.append(type(l)(l.weight.copy(), l.bias.copy(), l.activation))
        return CnnNet(self.input_shape, layers)


def as_batch(net: CnnNet, imgs) -> np.ndarray:
    x = np.asarray(imgs, dtype=np.float64)
    c, h, w = net.input_shape
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3 and x.shape == (h, w, c) and c == 3:
        x = x.transpose(2, 0, 1)[None]
    elif x.ndim == 3:
        x = x[:, None] if c == 1 else x[None]
    elif x.ndim == 4 and x.shape[1:] != (c, h, w) and x.shape[-1] == c:
        x = x.transpose(0, 3, 1, 2)
    if x.shape[1:] != (c, h, w):
        raise ShapeMismatchError(f"input {np.shape(imgs)} does not match net input {net.input_shape}")
    return x


def cnn_forward(net: CnnNet, img) -> list[np.ndarray]:
    """Post-activation outputs of every layer, each ``(N, C, H, W)``.

    A single image yields batch size 1.
    """
    x = as_batch(net, img)
    acts = []
    for layer in net.layers:
        x = activate(layer.linear(x), layer.activation)
        acts.append(x)
    return acts


def default_cnn(rng: np.random.Generator, input_shape=(1, 40, 40), n_classes: int = 2) -> CnnNet:
    """conv5x5x6 - pool - conv5x5x12 - pool - fc64 - fc(n_classes), He-initialized."""

    def he(shape, fan_in):
        return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)

    c, h, w = input_shape
    layers = [Conv(he((6, c, 5, 5), c * 25), np.zeros(6)), Pool(2)]
    layers += [Conv(he((12, 6, 5, 5), 6 * 25), np.zeros(12)), Pool(2)]
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
    flat = int(np.prod(shape))
    layers += [Dense(he((64, flat), flat), np.zeros(64)), Dense(he((n_classes, 64), 64), np.zeros(n_classes), "identity")]
    return CnnNet(input_shape, layers)


def save_cnn(net: CnnNet, path) -> None:
    """Text header describing the layers, then all parameters in declaration order."""
    lines = ["cnnnet 1", "input %d %d %d" % net.input_shape, f"layers {net.n_layers}"]
    for l in net.layers:
        if l.kind == "conv":
            lines.append("conv %d %d %d %d %s" % (*l.weight.shape, l.activation))
        elif l.kind == "pool":
            lines.append(f"pool {l.size} {l.activation}")
        else:
            lines.append("fc %d %d %s" % (*l.weight.shape, l.activation))
    lines.append("params")
    for p in net.params():
        lines.append(" ".join(repr(float(v)) for v in p.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cnn(path) -> CnnNet:
    with open(path) as fh:
        text = fh.read()
    try:
        head, body = text.split("\nparams\n", 1)
        hl = head.splitlines()
        if hl[0].split()[0] != "cnnnet":
            raise ValueError("missing cnnnet header")
        input_shape = tuple(int(v) for v in hl[1].split()[1:4])
        n = int(hl[2].split()[1])
        values = np.array([float(v) for v in body.split()])
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            if pos + size > len(values):
                raise ValueError("parameter block truncated")
            arr = values[pos : pos + size].reshape(shape)
            pos += size
            return arr

        layers = []
        for line in hl[3 : 3 + n]:
            t = line.split()
            if t[0] == "conv":
                shape = tuple(int(v) for v in t[1:5])
                layers.append(Conv(take(shape), take((shape[0],)), t[5]))
            elif t[0] == "pool":
                layers.append(Pool(int(t[1]), t[2]))
            elif t[0] == "fc":
                shape = (int(t[1]), int(t[2]))
                layers.append(Dense(take(shape), take((shape[0],)), t[3]))
            else:
                raise ValueError(f"unknown layer {t[0]!r}")
        if pos != len(values):
            raise ValueError("trailing parameters")
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed network file ({exc})") from None
    return CnnNet(input_shape, layers)
