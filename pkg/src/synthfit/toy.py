"""A self-contained toy world for measuring what fitted synthesis buys a detector.

The "real" object is a faceted blob photographed under a fixed capture
regime over cluttered backgrounds that contain flat, object-sized decoys.
The fitting model is the same mesh; ``albedo_range`` optionally gives the
real object a per-face texture the model lacks. One repetition fits a
handful of real seeds, trains several AdaBoost detectors on differently
augmented sets, and scores each on a held-out test set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .datagen import (
    PoseRanges,
    perturbed_images,
    render_thetas,
    sample_negatives,
    sample_theta_uniform,
    synthetic_jobs,
)
from .effects import CaptureParams, Theta, apply_capture
from .evaluation import GroundTruth, ScoreMap, average_precision, nms, pr_curve, window_stacks
from .features import WeakLearner, energy_matrix
from .learn import LabeledPatchSet, random_ensemble, train_adaboost
from .optimize import SAConfig, fit_theta
from .render import Mesh, Pose, RenderConfig, face_shading, rasterize, shade
from .similarity import DistanceSpec

CONDITIONS = ("real", "fitted", "suppress_mb", "perturbed", "random")


@dataclass(frozen=True)
class ToyConfig:
    window: int = 40
    test_size: int = 64
    background_size: int = 128
    n_backgrounds: int = 5
    n_seeds: int = 12
    per_seed: int = 100
    n_negatives: int = 1000
    n_test: int = 200
    ortho_scale: float = 12.0
    mesh_points: int = 40
    mesh_roughness: float = 0.3
    n_decoys: int = 8
    sa_iters: int = 1500
    sa_cooling: float = 0.8
    pool_size: int = 1500
    n_bins: int = 8
    rounds: int = 60
    scales: tuple = (0.9, 1.0, 1.1)
    stride: int = 4
    nms_radius: float = 20.0
    match_radius: float = 20.0
    pose_jitter: float = 2.0
    seed_tilt: float = 0.25
    albedo_range: tuple = (1.0, 1.0)
    fit_distance: str = "hog"
    distance_learners: int = 60
    true_sigma_mu: float = 3.0


@dataclass
class ToyWorld:
    mesh: Mesh
    albedo: np.ndarray
    backgrounds: list
    render_cfg: RenderConfig


@dataclass
class ToyRun:
    ap: dict = field(default_factory=dict)
    fits: list = field(default_factory=list)


def make_mesh(rng: np.random.Generator, n_points: int = 12) -> Mesh:
    pts = rng.normal(size=(n_points, 3)) * np.array([1.0, 0.6, 0.4])
    pts -= pts.mean(axis=0)
    hull = ConvexHull(pts)
    used = np.unique(hull.simplices)
    remap = {v: i for i, v in enumerate(used)}
    faces = [[remap[a] for a in tri] for tri in hull.simplices]
    return Mesh(pts[used], faces)


def make_faceted_mesh(rng: np.random.Generator, n_points: int = 40, roughness: float = 0.3) -> Mesh:
    """A star-shaped blob whose neighbouring facets differ sharply in normal."""
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    hull = ConvexHull(d)
    r = 1.0 + roughness * rng.uniform(-1.0, 1.0, n_points)
    return Mesh(d * r[:, None] * np.array([1.0, 0.7, 0.5]), hull.simplices)


def make_background(rng: np.random.Generator, size: int, n_decoys: int = 0) -> np.ndarray:
    """Smooth noise plus random bars and blobs.

    Decoys are flat ellipses of the object's size, so only interior
    structure tells the object apart from them.
    """
    img = 0.5 + 1.2 * ndimage.gaussian_filter(rng.normal(size=(size, size)), 3.0)
    yy, xx = np.mgrid[:size, :size]
    for _ in range(12):
        x0, y0 = rng.uniform(0, size, 2)
        ang = rng.uniform(0, math.pi)
        half_len, half_w = rng.uniform(6, 30), rng.uniform(1, 4)
        u = (xx - x0) * math.cos(ang) + (yy - y0) * math.sin(ang)
        v = -(xx - x0) * math.sin(ang) + (yy - y0) * math.cos(ang)
        bar = (np.abs(u) < half_len) & (np.abs(v) < half_w)
        img[bar] = rng.uniform(0.1, 0.9)
    for _ in range(6):
        x0, y0 = rng.uniform(0, size, 2)
        r = rng.uniform(3, 9)
        img[(xx - x0) ** 2 + (yy - y0) ** 2 < r * r] = rng.uniform(0.1, 0.9)
    for _ in range(n_decoys):
        x0, y0 = rng.uniform(0, size, 2)
        ang = rng.uniform(0, math.pi)
        a, b = rng.uniform(9, 13), rng.uniform(6, 10)
        u = (xx - x0) * math.cos(ang) + (yy - y0) * math.sin(ang)
        v = -(xx - x0) * math.sin(ang) + (yy - y0) * math.cos(ang)
        img[(u / a) ** 2 + (v / b) ** 2 < 1.0] = rng.uniform(0.4, 0.9)
    return np.clip(ndimage.gaussian_filter(img, 0.7), 0.0, 1.0)


def make_world(rng: np.random.Generator, cfg: ToyConfig) -> ToyWorld:
    mesh = make_faceted_mesh(rng, cfg.mesh_points, cfg.mesh_roughness)
    albedo = rng.uniform(*cfg.albedo_range, len(mesh.faces))
    bgs = [make_background(rng, cfg.background_size, cfg.n_decoys) for _ in range(cfg.n_backgrounds)]
    return ToyWorld(mesh, albedo, bgs, RenderConfig(ortho_scale=cfg.ortho_scale))


def true_capture(rng: np.random.Generator, cfg: ToyConfig) -> CaptureParams:
    """The camera's capture regime: strong blur along one dominant direction."""
    return CaptureParams(
        sigma_s=float(rng.uniform(1.0, 1.8)),
        sigma_mu=cfg.true_sigma_mu,
        sigma_mv=float(rng.uniform(0.0, 0.5)),
        alpha_m=float(0.6 + 0.15 * rng.standard_normal()),
        sigma_n=float(rng.uniform(0.01, 0.04)),
        w_d=float(rng.uniform(0.55, 0.85)),
    )


def random_pose(rng: np.random.Generator, cx: float, cy: float, tilt: float = math.pi) -> Pose:
    a, b, g = rng.uniform(-tilt, tilt, 3)
    return Pose(float(a), float(b), float(g), cx, cy)


def render_real(world: ToyWorld, theta: Theta, background: np.ndarray, rng) -> np.ndarray:
    """Photograph the textured object."""
    h, w = background.shape[:2]
    cfg = world.render_cfg.with_size(w, h)
    face_id, _ = rasterize(world.mesh, theta.pose, cfg)
    lambert = face_shading(world.mesh, theta.pose, cfg) * world.albedo
    layer, mask = shade(face_id, lambert, theta.capture.w_d, cfg.ambient)
    return apply_capture(layer, mask, background, theta.capture, rng)


def crop(rng: np.random.Generator, backgrounds, size: int) -> np.ndarray:
    bg = backgrounds[int(rng.integers(len(backgrounds)))]
    y, x = rng.integers(0, bg.shape[0] - size + 1, 2)
    return bg[y : y + size, x : x + size].copy()


def make_seeds(world: ToyWorld, cfg: ToyConfig, rng):
    """Real seed images with their clean backgrounds and rounded center hints.

    Seeds are photographed within ``seed_tilt`` of the reference orientation;
    test objects take any orientation.
    """
    seeds = []
    c = (cfg.window - 1) / 2.0
    for _ in range(cfg.n_seeds):
        bg = crop(rng, world.backgrounds, cfg.window)
        cx, cy = c + rng.uniform(-1.5, 1.5, 2)
        theta = Theta(random_pose(rng, float(cx), float(cy), cfg.seed_tilt), true_capture(rng, cfg))
        seeds.append((render_real(world, theta, bg, rng), bg, (round(cx), round(cy))))
    return seeds


def make_test_set(world: ToyWorld, cfg: ToyConfig, rng):
    images, objects = {}, {}
    half = cfg.window / 2.0
    for i in range(cfg.n_test):
        bg = crop(rng, world.backgrounds, cfg.test_size)
        cx, cy = rng.uniform(half, cfg.test_size - half, 2)
        theta = Theta(random_pose(rng, float(cx), float(cy)), true_capture(rng, cfg))
        name = f"t{i:04d}"
        images[name] = render_real(world, theta, bg, rng)
        objects[name] = [(float(cx), float(cy), float(cfg.window))]
    return images, GroundTruth(objects)


def fit_distance(cfg: ToyConfig, reals, negatives, pool, rng) -> DistanceSpec:
    """The fitting distance; the weak-learner kinds are built from the real seeds."""
    if cfg.fit_distance == "wl-learned":
        data = LabeledPatchSet.concat(LabeledPatchSet(reals, np.ones(len(reals), dtype=np.int64)), negatives)
        return DistanceSpec("wl-learned", train_adaboost(data, pool, rounds=cfg.rounds))
    if cfg.fit_distance == "wl-random":
        return DistanceSpec("wl-random", random_ensemble(cfg.distance_learners, (cfg.window, cfg.window), cfg.n_bins, rng))
    return DistanceSpec(cfg.fit_distance)


def fit_seeds(seeds, world: ToyWorld, cfg: ToyConfig, dist: DistanceSpec, rng, suppress=()):
    # short single chains: independent real noise keeps the objective above the restart ratio
    sa = SAConfig.default(
        cfg.window, cfg.window, max_iter=cfg.sa_iters, steps_per_temp=max(1, cfg.sa_iters // 50),
        cooling=cfg.sa_cooling, restarts=0,
    )
    return [
        fit_theta(real, bg, world.mesh, hint, dist, sa, world.render_cfg, rng, seed_id=f"seed{i:02d}", suppress=suppress)
        for i, (real, bg, hint) in enumerate(seeds)
    ]


def evaluate(ensembles: dict, images, gt: GroundTruth, cfg: ToyConfig) -> dict:
    """AveP of each ensemble on one test set.

    Window energies are computed once for the union of all ensembles'
    learners; the scores equal ``boost_scores`` of each ensemble alone.
    """
    union, parts = {}, {}
    for key, ens in ensembles.items():
        idx = [union.setdefault((l.x, l.y, l.w, l.h, l.orientation), len(union)) for l in ens.learners]
        parts[key] = (np.array(idx, dtype=np.int64), ens.columns[5], ens.alphas)
    learners = [WeakLearner(*k, tau=0.0) for k in union]
    n_bins = {ens.n_bins for ens in ensembles.values()}.pop()
    dets = {key: [] for key in ensembles}
    for name, img in images.items():
        found = {key: [] for key in ensembles}
        for scale, rows, cols, patches in window_stacks(img, cfg.scales, cfg.stride, cfg.window):
            E = energy_matrix(patches, learners, n_bins)
            for key, (idx, tau, alpha) in parts.items():
                scores = (2.0 * (E[:, idx] > tau) - 1.0) @ alpha
                found[key].extend(ScoreMap(scale, cfg.stride, cfg.window, scores.reshape(rows, cols)).detections(name))
        for key in ensembles:
            dets[key].extend(nms(found[key], cfg.nms_radius))
    return {key: average_precision(pr_curve(dets[key], gt, cfg.match_radius)) for key in ensembles}


def run_repetition(seed: int, cfg: ToyConfig = ToyConfig(), conditions=CONDITIONS) -> ToyRun:
    """Fit, augment, train and score every requested condition for one seed."""
    ss = np.random.SeedSequence(seed)
    r_world, r_seeds, r_test, r_fit, r_aug, r_pool = (np.random.default_rng(s) for s in ss.spawn(6))
    world = make_world(r_world, cfg)
    seeds = make_seeds(world, cfg, r_seeds)
    test_images, gt = make_test_set(world, cfg, r_test)

    reals = np.stack([s[0] for s in seeds])
    negatives = sample_negatives(world.backgrounds, cfg.n_negatives, cfg.window, r_aug)
    pool = random_ensemble(cfg.pool_size, (cfg.window, cfg.window), cfg.n_bins, r_pool)
    bg_crops = [crop(r_aug, world.backgrounds, cfg.window) for _ in range(97)]
    ranges = PoseRanges.centered(cfg.window, cfg.window, cfg.pose_jitter)
    run = ToyRun()

    dist = fit_distance(cfg, reals, negatives, pool, r_fit)
    fits = fit_seeds(seeds, world, cfg, dist, r_fit) if set(conditions) & {"fitted", "random"} else []
    run.fits = fits

    def positives(cond):
        if cond == "real":
            return []
        if cond == "fitted":
            jobs = synthetic_jobs(fits, cfg.per_seed, ranges, r_aug)
        elif cond == "suppress_mb":
            sup = fit_seeds(seeds, world, cfg, dist, r_fit, suppress=("mb",))
            jobs = synthetic_jobs(sup, cfg.per_seed, ranges, r_aug, suppress=("mb",))
        elif cond == "random":
            thetas = sample_theta_uniform(fits, cfg.per_seed * len(fits), r_aug, ranges)
            jobs = [(f"uniform{k:05d}", 0, t) for k, t in enumerate(thetas)]
        elif cond == "perturbed":
            return [img for _, _, img in perturbed_images(reals, cfg.per_seed, r_aug)]
        else:
            raise ValueError(f"unknown condition {cond!r}")
        return render_thetas(jobs, world.mesh, bg_crops, world.render_cfg)

    ensembles = {}
    for cond in conditions:
        extra = positives(cond)
        pos = np.concatenate([reals, np.stack(extra)]) if extra else reals
        data = LabeledPatchSet.concat(LabeledPatchSet(pos, np.ones(len(pos), dtype=np.int64)), negatives)
        ensembles[cond] = train_adaboost(data, pool, rounds=cfg.rounds)
    run.ap = evaluate(ensembles, test_images, gt, cfg)
    return run


# ---------------------------------------------------------------------------
# Self-recovery: fit images that the model itself produced
# ---------------------------------------------------------------------------


RECOVERY_RENDER = RenderConfig(ortho_scale=9.0)


def recovery_cases(seed: int, n: int = 10, size: int = 40):
    """Ground-truth thetas over smooth backgrounds for fitting back.

    Even-indexed cases carry no object noise, odd ones some. Returns the
    mesh and a list of ``(background, theta)``.
    """
    rng = np.random.default_rng(seed)
    mesh = make_mesh(rng)
    c = (size - 1) / 2.0
    cases = []
    for k in range(n):
        bg = np.clip(0.5 + 1.5 * ndimage.gaussian_filter(rng.normal(size=(size, size)), 2.0), 0.0, 1.0)
        pose = Pose(*(float(v) for v in rng.uniform(-0.5, 0.5, 3)), *(float(c + v) for v in rng.uniform(-1.5, 1.5, 2)))
        cap = CaptureParams(
            sigma_s=float(rng.uniform(1.0, 3.0)),
            sigma_mu=float(rng.uniform(0.0, 3.0)),
            sigma_mv=float(rng.uniform(0.0, 1.5)),
            alpha_m=float(rng.uniform(-math.pi, math.pi)),
            sigma_n=0.0 if k % 2 == 0 else float(rng.uniform(0.01, 0.08)),
            w_d=float(rng.uniform(0.3, 0.9)),
        )
        cases.append((bg, Theta(pose, cap)))
    return mesh, cases
