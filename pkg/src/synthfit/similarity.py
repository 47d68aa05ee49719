"""Image distances: each is the L2 norm of a feature difference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DataError, ShapeMismatchError
from .features import CnnNet, HogConfig, cnn_forward, compute_hog
from .imaging import to_gray
from .learn import WeakLearnerEnsemble

KINDS = ("eucl", "hog", "wl-random", "wl-learned", "cnn")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def d_eucl(a, b) -> float:
    a, b = _pair(a, b)
    diff = a - b
    return math.sqrt(float(np.vdot(diff, diff)))


def d_hog(a, b, cfg: HogConfig = HogConfig()) -> float:
    a, b = _pair(a, b)
    diff = compute_hog(a, cfg) - compute_hog(b, cfg)
    return math.sqrt(float(diff @ diff))


def d_wl(ensemble: WeakLearnerEnsemble, a, b) -> float:
    """sqrt of the summed weights of the learners that disagree on ``a`` and ``b``."""
    a, b = _pair(a, b)
    fired = ensemble.fire(np.stack([to_gray(a), to_gray(b)]))
    disagree = fired[0] != fired[1]
    return math.sqrt(float(ensemble.alphas[disagree].sum()))


def _layer_gap(acts_a, acts_b) -> float:
    return math.sqrt(sum(float(((x - y) ** 2).sum()) for x, y in zip(acts_a[1:], acts_b[1:])))


def d_cnn(net: CnnNet, a, b) -> float:
    """Activation distance over layers 2..N (the first layer is left out)."""
    a, b = _pair(a, b)
    return _layer_gap(cnn_forward(net, a), cnn_forward(net, b))


@dataclass(frozen=True)
class DistanceSpec:
    """A distance kind plus the payload it needs.

    ``hog`` takes a HogConfig (default used when absent), ``wl-random`` and
    ``wl-learned`` a WeakLearnerEnsemble of matching provenance, ``cnn`` a
    CnnNet; ``eucl`` takes nothing.
    """

    kind: str
    payload: Any = None

    def __post_init__(self):
        kind = self.kind.replace("_", "-")
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise DataError(f"unknown distance {self.kind!r}; expected one of {KINDS}")
        p = self.payload
        if kind == "eucl" and p is not None:
            raise DataError("eucl takes no payload")
        if kind == "hog":
            if p is None:
                object.__setattr__(self, "payload", HogConfig())
            elif not isinstance(p, HogConfig):
                raise DataError("hog payload must be a HogConfig")
        if kind.startswith("wl-"):
            want = "random" if kind == "wl-random" else "adaboost"
            if not isinstance(p, WeakLearnerEnsemble) or p.provenance != want:
                raise DataError(f"{kind} needs a {want} WeakLearnerEnsemble")
        if kind == "cnn" and not isinstance(p, CnnNet):
            raise DataError("cnn needs a CnnNet payload")

    def __call__(self, a, b) -> float:
        if self.kind == "eucl":
            return d_eucl(a, b)
        if self.kind == "hog":
            return d_hog(a, b, self.payload)
        if self.kind == "cnn":
            return d_cnn(self.payload, a, b)
        return d_wl(self.payload, a, b)

    def against(self, reference):
        """A one-argument distance to a fixed image, with its features cached."""
        ref = np.asarray(reference, dtype=np.float64)
        if self.kind == "hog":
            cfg = self.payload
            ref_feat = compute_hog(ref, cfg)

            def dist(x):
                diff = compute_hog(_pair(ref, x)[1], cfg) - ref_feat
                return math.sqrt(float(diff @ diff))

            return dist
        if self.kind.startswith("wl-"):
            ens = self.payload
            ref_fire = ens.fire(to_gray(ref)[None])[0]

            def dist(x):
                fired = ens.fire(to_gray(_pair(ref, x)[1])[None])[0]
                return math.sqrt(float(ens.alphas[fired != ref_fire].sum()))

            return dist
        if self.kind == "cnn":
            net = self.payload
            ref_acts = cnn_forward(net, ref)
            return lambda x: _layer_gap(ref_acts, cnn_forward(net, _pair(ref, x)[1]))
        return lambda x: self(ref, x)
