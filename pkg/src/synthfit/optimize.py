"""Simulated-annealing fit of rendering parameters to real seed images."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .effects import (
    CAPTURE_NAMES,
    EFFECT_PARAMS,
    THETA_NAMES,
    CaptureParams,
    Theta,
    apply_capture,
    noise_seed,
)
from .errors import DataError, ObjectiveNaNError, ShapeMismatchError
from .render import Mesh, Pose, RenderConfig, face_shading, rasterize, shade

N_PARAMS = len(THETA_NAMES)

DEFAULT_STEPS = {
    "alpha": 0.035,
    "beta": 0.035,
    "gamma": 0.035,
    "tx": 0.7,
    "ty": 0.7,
    "sigma_s": 0.1,
    "sigma_mu": 0.1,
    "sigma_mv": 0.1,
    "alpha_m": 0.07,
    "sigma_n": 0.007,
    "w_d": 0.017,
}

CAPTURE_BOUNDS = {
    "sigma_s": (0.0, 5.0),
    "sigma_mu": (0.0, 5.0),
    "sigma_mv": (0.0, 5.0),
    "alpha_m": (-math.pi, math.pi),
    "sigma_n": (0.0, 0.2),
    "w_d": (0.0, 1.0),
}


@dataclass(frozen=True)
class SAConfig:
    """Annealing schedule and search box.

    ``t0=None`` starts at ``t0_scale`` times the objective value of the
    initial point. A zero entry in ``steps`` freezes that coordinate.
    ``max_iter`` caps one chain. A chain whose best objective stays above
    ``restart_ratio`` times the initial value is followed by a fresh chain
    from the initial point, at most ``restarts`` times.
    """

    steps: tuple
    bounds: tuple
    t0: float | None = None
    t0_scale: float = 0.05
    cooling: float = 0.95
    steps_per_temp: int = 100
    max_iter: int = 10000
    restarts: int = 2
    restart_ratio: float = 0.03
    seed: int = 0

    def __post_init__(self):
        steps = tuple(float(s) for s in self.steps)
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "bounds", bounds)
        if len(steps) != N_PARAMS or len(bounds) != N_PARAMS:
            raise DataError(f"SAConfig needs {N_PARAMS} steps and bounds")
        if any(s < 0 for s in steps):
            raise DataError("proposal steps must be >= 0")
        if any(not lo < hi for lo, hi in bounds):
            raise DataError("every bound needs low < high")
        if self.t0 is not None and not self.t0 > 0:
            raise DataError("t0 must be positive")
        if not self.t0_scale > 0:
            raise DataError("t0_scale must be positive")
        if not 0 < self.cooling < 1:
            raise DataError("cooling factor must lie in (0, 1)")
        if self.steps_per_temp < 1 or self.max_iter < 0:
            raise DataError("steps_per_temp must be >= 1 and max_iter >= 0")
        if self.restarts < 0 or not self.restart_ratio >= 0:
            raise DataError("restarts and restart_ratio must be >= 0")

    @classmethod
    def default(cls, width: int, height: int, **overrides) -> "SAConfig":
        bounds = dict(CAPTURE_BOUNDS)
        for name in ("alpha", "beta", "gamma"):
            bounds[name] = (-math.pi, math.pi)
        bounds["tx"] = (0.0, float(width - 1))
        bounds["ty"] = (0.0, float(height - 1))
        return cls(
            steps=tuple(DEFAULT_STEPS[n] for n in THETA_NAMES),
            bounds=tuple(bounds[n] for n in THETA_NAMES),
            **overrides,
        )

    def freeze(self, names) -> "SAConfig":
        steps = list(self.steps)
        for n in names:
            steps[THETA_NAMES.index(n)] = 0.0
        return replace(self, steps=tuple(steps))


@dataclass
class FitResult:
    theta: Theta
    objective: float
    trace: list = field(default_factory=list)
    seed_id: str = ""
    theta0: Theta | None = None
    objective0: float = float("nan")
    chains: int = 1


def simulated_annealing(objective, theta0, cfg: SAConfig, rng: np.random.Generator) -> FitResult:
    """Minimize ``objective(Theta)`` by single-coordinate annealing.

    Each iteration perturbs one coordinate, picked uniformly among the
    unfrozen ones, by a Gaussian step and clamps it to its bounds. Downhill
    moves are always taken, uphill ones with probability exp(-delta / T).
    T is multiplied by the cooling factor every ``steps_per_temp``
    iterations. Chains that end above ``restart_ratio`` times the initial
    objective are rerun from ``theta0`` (see ``SAConfig``). Returns the best
    point visited; ``trace[k]`` is the best objective after ``k`` iterations
    counted across chains.
    """
    x0 = theta0.to_vector() if isinstance(theta0, Theta) else np.asarray(theta0, dtype=np.float64).copy()
    lo = np.array([b[0] for b in cfg.bounds])
    hi = np.array([b[1] for b in cfg.bounds])
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise DataError("initial theta lies outside the bounds")
    steps = np.array(cfg.steps)
    free = np.flatnonzero(steps > 0)

    def f(vec):
        val = float(objective(Theta.from_vector(vec)))
        if math.isnan(val):
            raise ObjectiveNaNError(vec.tolist())
        return val

    f0 = f(x0)
    t0 = cfg.t0 if cfg.t0 is not None else (cfg.t0_scale * f0 if f0 > 0 else 1.0)
    best_x, best_f = x0.copy(), f0
    trace = [best_f]
    chains = 0
    while chains <= cfg.restarts:
        chains += 1
        x, fx, temp = x0.copy(), f0, t0
        for it in range(cfg.max_iter):
            if temp < 1e-6 * t0 or len(free) == 0:
                break
            i = free[rng.integers(len(free))]
            cand = x.copy()
            cand[i] = min(max(cand[i] + steps[i] * rng.standard_normal(), lo[i]), hi[i])
            fc = f(cand)
            delta = fc - fx
            if delta <= 0 or rng.random() < math.exp(-delta / temp):
                x, fx = cand, fc
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
            trace.append(best_f)
            if (it + 1) % cfg.steps_per_temp == 0:
                temp *= cfg.cooling
        if best_f <= cfg.restart_ratio * f0 or len(free) == 0:
            break
    return FitResult(Theta.from_vector(best_x), best_f, trace, chains=chains)


class CachedSynthesizer:
    """``synthesize`` with rasterization memoized on the pose.

    Proposals that only touch capture parameters reuse the last coverage, so
    annealing pays for rasterization only on pose moves. Output is identical
    to ``effects.synthesize`` for the same generator state.
    """

    def __init__(self, background, mesh: Mesh, cfg: RenderConfig, maxsize: int = 8):
        self.background = np.asarray(background, dtype=np.float64)
        h, w = self.background.shape[:2]
        self.cfg = cfg.with_size(w, h)
        self.mesh = mesh
        self._cache: OrderedDict = OrderedDict()
        self._maxsize = maxsize

    def _coverage(self, pose: Pose):
        key = pose.as_tuple()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        face_id, _ = rasterize(self.mesh, pose, self.cfg)
        val = (face_id, face_shading(self.mesh, pose, self.cfg))
        self._cache[key] = val
        if len(self._cache) > self._maxsize:
            self._cache.popitem(last=False)
        return val

    def __call__(self, theta: Theta, rng):
        face_id, lambert = self._coverage(theta.pose)
        layer, mask = shade(face_id, lambert, theta.capture.w_d, self.cfg.ambient)
        return apply_capture(layer, mask, self.background, theta.capture, rng), mask


def initial_theta(center_hint, cfg: SAConfig, rng, suppress=()) -> Theta:
    """Zero rotation at the given center; capture drawn uniformly within bounds."""
    frozen = {n for eff in suppress for n in EFFECT_PARAMS[eff]}
    capture = {}
    for name in CAPTURE_NAMES:
        lo, hi = cfg.bounds[THETA_NAMES.index(name)]
        val = float(rng.uniform(lo, hi))
        capture[name] = 0.0 if name in frozen else val
    pose = Pose(0.0, 0.0, 0.0, float(center_hint[0]), float(center_hint[1]))
    return Theta(pose, CaptureParams(**capture))


def fit_theta(
    real,
    background,
    mesh: Mesh,
    center_hint,
    dist,
    cfg: SAConfig,
    render_cfg: RenderConfig,
    rng: np.random.Generator,
    seed_id: str = "seed",
    suppress=(),
) -> FitResult:
    """Fit one seed image: argmin over theta of ``dist(real, S(theta, background))``.

    The synthesis noise is drawn from a generator reseeded with
    ``noise_seed(seed_id)`` on every evaluation, which makes the objective a
    deterministic function of theta. Effects named in ``suppress`` are held
    at zero throughout.
    """
    real = np.asarray(real, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if real.shape != background.shape:
        raise ShapeMismatchError(f"real {real.shape} and background {background.shape} differ")
    h, w = real.shape[:2]
    cx, cy = center_hint
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise DataError(f"center hint {center_hint} lies outside the {w}x{h} image")
    for eff in suppress:
        if eff not in EFFECT_PARAMS:
            raise DataError(f"unknown effect {eff!r}")
    frozen = [n for eff in suppress for n in EFFECT_PARAMS[eff]]
    cfg = cfg.freeze(frozen)
    theta0 = initial_theta(center_hint, cfg, rng, suppress)
    synth = CachedSynthesizer(background, mesh, render_cfg)
    distance = dist.against(real) if hasattr(dist, "against") else (lambda x: dist(real, x))
    nseed = noise_seed(seed_id)

    def objective(theta):
        img, _ = synth(theta, np.random.default_rng(nseed))
        return distance(img)

    res = simulated_annealing(objective, theta0, cfg, rng)
    res.seed_id = seed_id
    res.theta0 = theta0
    res.objective0 = res.trace[0]
    return res


def fit_theta_rgb(real, background, mesh, center_hint, dist, cfg, render_cfg, rng, seed_id="seed", suppress=()):
    """Fit each RGB channel independently; returns three FitResults (R, G, B).

    All channels share one annealing seed and one noise seed, so identical
    channels yield identical fits.
    """
    real = np.asarray(real, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    for name, img in (("real", real), ("background", background)):
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeMismatchError(f"{name} image must have 3 channels, got shape {img.shape}")
    sa_seed = int(rng.integers(2**63))
    return [
        fit_theta(
            real[:, :, c], background[:, :, c], mesh, center_hint, dist, cfg, render_cfg,
            np.random.default_rng(sa_seed), seed_id, suppress,
        )
        for c in range(3)
    ]


def write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("# iteration best_objective\n")
        for i, v in enumerate(trace):
            fh.write(f"{i} {v!r}\n")


def read_trace(path) -> list[float]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].split()
            if line:
                out.append(float(line[1]))
    return out
