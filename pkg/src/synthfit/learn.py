"""Trainers: discrete AdaBoost over gradient-energy weak learners, random
ensembles, and an SGD trainer for the small CNN."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, DivergenceError, ShapeMismatchError, UnlearnablePoolError
from .features import (
    CnnNet,
    WeakLearner,
    activate,
    as_batch,
    energy_matrix,
    learner_arrays,
)

DEFAULT_BINS = 8
MIN_REGION = 4
ALPHA_CAP = 0.5 * math.log(1e6)
ERR_TOL = 1e-12


@dataclass(frozen=True)
class WeakLearnerEnsemble:
    learners: tuple
    provenance: str = "random"
    n_bins: int = DEFAULT_BINS

    def __post_init__(self):
        object.__setattr__(self, "learners", tuple(self.learners))
        if not self.learners:
            raise DataError("ensemble must contain at least one learner")
        if self.provenance not in ("random", "adaboost"):
            raise DataError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "random" and any(l.alpha != 1.0 for l in self.learners):
            raise DataError("random ensembles must have unit weights")

    def __len__(self):
        return len(self.learners)

    @cached_property
    def columns(self):
        return learner_arrays(self.learners)

    @property
    def alphas(self) -> np.ndarray:
        return self.columns[6]

    def fire(self, patches) -> np.ndarray:
        """Binary outputs ``(n_patches, n_learners)``."""
        E = energy_matrix(patches, self.learners, self.n_bins, cols=self.columns)
        return (E > self.columns[5]).astype(np.int8)


@dataclass
class LabeledPatchSet:
    patches: np.ndarray  # (N, H, W) or (N, H, W, C)
    labels: np.ndarray  # (N,) of +1 / -1

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.patches) != len(self.labels):
            raise DataError("patches and labels differ in length")
        if len(self.labels) and not np.all(np.isin(self.labels, (-1, 1))):
            raise DataError("labels must be +1 or -1")

    def __len__(self):
        return len(self.labels)

    def require_both_classes(self):
        if not (np.any(self.labels == 1) and np.any(self.labels == -1)):
            raise DataError("training needs both positive and negative samples")

    @classmethod
    def concat(cls, *sets: "LabeledPatchSet") -> "LabeledPatchSet":
        sets = [s for s in sets if len(s)]
        return cls(np.concatenate([s.patches for s in sets]), np.concatenate([s.labels for s in sets]))


def random_ensemble(n: int, dims, n_bins: int, rng: np.random.Generator) -> WeakLearnerEnsemble:
    """``n`` unit-weight learners with random in-bounds regions (side >= 4 px)."""
    if n < 1:
        raise DataError("ensemble size must be >= 1")
    height, width = dims
    if height < MIN_REGION or width < MIN_REGION:
        raise DataError(f"patch {width}x{height} smaller than the {MIN_REGION}px minimum region")
    learners = []
    for _ in range(n):
        w = int(rng.integers(MIN_REGION, width + 1))
        h = int(rng.integers(MIN_REGION, height + 1))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        o = int(rng.integers(0, n_bins))
        learners.append(WeakLearner(x, y, w, h, o, float(rng.uniform(0.0, 1.0)), 1.0))
    return WeakLearnerEnsemble(learners, "random", n_bins)


@dataclass
class BoostReport:
    errors: list = field(default_factory=list)
    alphas: list = field(default_factory=list)

    def loss_bound(self) -> list[float]:
        """Running product of 2 sqrt(eps (1 - eps)) after each round."""
        out, acc = [], 1.0
        for e in self.errors:
            acc *= 2.0 * math.sqrt(e * (1.0 - e))
            out.append(acc)
        return out


def train_adaboost(
    data: LabeledPatchSet,
    pool: WeakLearnerEnsemble,
    rounds: int = 100,
    report: BoostReport | None = None,
    energies: np.ndarray | None = None,
) -> WeakLearnerEnsemble:
    """Discrete AdaBoost over a pool of candidate regions and orientations.

    Each round every pool entry has its threshold re-fitted over the observed
    energies (a learner fires, voting positive, when energy exceeds the
    threshold); the one with least weighted error is kept, ties going to
    the lowest pool index and then the lowest threshold. Rounds stop once
    the best error reaches 0.5, or after a perfect learner, whose weight is
    capped. ``energies`` may carry a precomputed ``energy_matrix``.
    """
    data.require_both_classes()
    if rounds < 1:
        raise DataError("rounds must be >= 1")
    y = data.labels.astype(np.float64)
    n = len(y)
    E = energy_matrix(data.patches, pool.learners, pool.n_bins) if energies is None else energies
    order = np.argsort(E, axis=0, kind="stable")
    E_sorted = np.take_along_axis(E, order, axis=0)
    # a threshold at a sorted position is usable only at the end of a run of ties
    usable = np.ones_like(E_sorted, dtype=bool)
    usable[:-1] = E_sorted[:-1] < E_sorted[1:]
    y_sorted = y[order]

    w = np.full(n, 1.0 / n)
    px, py, pw, ph, po, _, _ = learner_arrays(pool.learners)
    chosen = []
    for t in range(rounds):
        w_neg = w[y < 0].sum()
        s = w[order] * y_sorted
        err = w_neg + np.cumsum(s, axis=0)
        err[~usable] = np.inf
        # ties (within rounding) go to the lowest pool index, then the lowest threshold
        ties = err.T <= err.min() + ERR_TOL
        j, k = np.unravel_index(np.argmax(ties), ties.shape)
        eps = float(err[k, j])
        eps = 0.0 if eps <= ERR_TOL else eps
        if eps >= 0.5:
            if t == 0:
                raise UnlearnablePoolError("no pool learner beats chance")
            break
        tau = float(E_sorted[k, j])
        alpha = ALPHA_CAP if eps == 0 else min(0.5 * math.log((1.0 - eps) / eps), ALPHA_CAP)
        chosen.append(WeakLearner(int(px[j]), int(py[j]), int(pw[j]), int(ph[j]), int(po[j]), tau, alpha))
        if report is not None:
            report.errors.append(eps)
            report.alphas.append(alpha)
        if eps == 0:
            break
        pred = np.where(E[:, j] > tau, 1.0, -1.0)
        w = w * np.exp(-alpha * y * pred)
        w /= w.sum()
    return WeakLearnerEnsemble(chosen, "adaboost", pool.n_bins)


def boost_scores(ensemble: WeakLearnerEnsemble, patches) -> np.ndarray:
    """Signed margins sum(alpha_i (2 h_i - 1)) for a stack of patches."""
    return (2.0 * ensemble.fire(patches) - 1.0) @ ensemble.alphas


def boost_score(ensemble: WeakLearnerEnsemble, img) -> float:
    img = np.asarray(img, dtype=np.float64)
    return float(boost_scores(ensemble, img[None])[0])


def save_ensemble(ens: WeakLearnerEnsemble, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"ensemble provenance={ens.provenance} bins={ens.n_bins}\n")
        for l in ens.learners:
            fh.write(f"{l.x} {l.y} {l.w} {l.h} {l.orientation} {l.tau!r} {l.alpha!r}\n")


def load_ensemble(path) -> WeakLearnerEnsemble:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        head = lines[0].split()
        if head[0] != "ensemble":
            raise ValueError("missing ensemble header")
        meta = dict(item.split("=", 1) for item in head[1:])
        learners = []
        for ln in lines[1:]:
            x, y, w, h, o, tau, alpha = ln.split()
            learners.append(WeakLearner(int(x), int(y), int(w), int(h), int(o), float(tau), float(alpha)))
        return WeakLearnerEnsemble(learners, meta["provenance"], int(meta["bins"]))
    except (ValueError, IndexError, KeyError) as exc:
        raise DataError(f"{path}: malformed ensemble file ({exc})") from None


# ---------------------------------------------------------------------------
# CNN training
# ---------------------------------------------------------------------------


def _forward_cache(net: CnnNet, x: np.ndarray):
    cache = []
    for layer in net.layers:
        z = layer.linear(x)
        a = activate(z, layer.activation)
        cache.append((x, z))
        x = a
    return x, cache


def _conv_backward(layer, x, dz):
    k = layer.weight.shape[2]
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    dw = np.einsum("nchwij,nohw->ocij", win, dz, optimize=True)
    db = dz.sum(axis=(0, 2, 3))
    dzp = np.pad(dz, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    dwin = sliding_window_view(dzp, (k, k), axis=(2, 3))
    dx = np.einsum("nohwab,ocab->nchw", dwin, layer.weight[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def _pool_backward(layer, x, dout):
    s = layer.size
    n, c, h, w = x.shape
    h2, w2 = h // s, w // s
    xr = x[:, :, : h2 * s, : w2 * s].reshape(n, c, h2, s, w2, s).transpose(0, 1, 2, 4, 3, 5)
    xr = xr.reshape(n, c, h2, w2, s * s)
    onehot = np.zeros_like(xr)
    np.put_along_axis(onehot, xr.argmax(axis=-1)[..., None], 1.0, axis=-1)
    g = onehot * dout[..., None]
    g = g.reshape(n, c, h2, w2, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * s, w2 * s)
    dx = np.zeros_like(x)
    dx[:, :, : h2 * s, : w2 * s] = g
    return dx


def loss_and_grads(net: CnnNet, x: np.ndarray, targets: np.ndarray):
    """Mean softmax cross-entropy and parameter gradients (``net.params()`` order)."""
    logits, cache = _forward_cache(net, x)
    logits = logits.reshape(len(x), -1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(x)
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    grad = (grad / n)[:, :, None, None]
    grads = []
    for layer, (xin, z) in zip(reversed(net.layers), reversed(cache)):
        if layer.activation == "relu":
            grad = grad * (z > 0)
        if layer.kind == "fc":
            dz = grad.reshape(n, -1)
            flat = xin.reshape(n, -1)
            grads.append((dz.T @ flat, dz.sum(axis=0)))
            grad = (dz @ layer.weight).reshape(xin.shape)
        elif layer.kind == "conv":
            grad, dw, db = _conv_backward(layer, xin, grad)
            grads.append((dw, db))
        else:
            grad = _pool_backward(layer, xin, grad)
    flat_grads = [g for pair in reversed(grads) for g in pair]
    return float(loss), flat_grads


def cnn_predict(net: CnnNet, imgs) -> np.ndarray:
    """Score for the positive class: logit difference (class 1 minus class 0)."""
    x = as_batch(net, imgs)
    out = np.empty(len(x))
    for s in range(0, len(x), 256):
        logits, _ = _forward_cache(net, x[s : s + 256])
        logits = logits.reshape(len(logits), -1)
        out[s : s + 256] = logits[:, 1] - logits[:, 0]
    return out


def train_cnn(
    data: LabeledPatchSet,
    net0: CnnNet,
    epochs: int = 20,
    learning_rate: float = 0.05,
    batch_size: int = 16,
    rng: np.random.Generator | None = None,
) -> CnnNet:
    """Mini-batch SGD on softmax cross-entropy; label +1 maps to class 1."""
    data.require_both_classes()
    if net0.shapes()[-1][0] != 2:
        raise ShapeMismatchError("network must end in a 2-way output")
    rng = np.random.default_rng(0) if rng is None else rng
    net = net0.copy()
    x = as_batch(net, data.patches)
    targets = (data.labels > 0).astype(np.int64)
    for epoch in range(epochs):
        perm = rng.permutation(len(x))
        for s in range(0, len(x), batch_size):
            idx = perm[s : s + batch_size]
            loss, grads = loss_and_grads(net, x[idx], targets[idx])
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            if learning_rate != 0:
                for p, g in zip(net.params(), grads):
                    p -= learning_rate * g
    return net
