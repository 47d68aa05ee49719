"""Command-line entry point: one subcommand per workflow step.

Every subcommand takes a required ``--seed``; identical invocations write
byte-identical outputs. Settings may come from an INI-style ``--config``
file (sections ``render``, ``sa``, ``distance``, ``dataset``, ``train``,
``eval``); explicit flags override it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .datagen import (
    DatasetManifest,
    ManifestRow,
    PoseRanges,
    extract_background,
    perturb_real,
    render_thetas,
    sample_negatives,
    sample_theta_uniform,
    synthetic_jobs,
    write_dataset,
)
from .effects import EFFECT_PARAMS, THETA_NAMES, Theta, noise_seed, read_theta_records, synthesize, synthesize_rgb, write_theta_records
from .errors import DataError, NumericalError, SynthfitError
from .evaluation import (
    GroundTruth,
    average_precision,
    detect,
    joint_histogram,
    pr_curve,
    write_detections,
    write_histogram,
    write_report,
)
from .features import HogConfig, default_cnn, load_cnn, save_cnn
from .imaging import load_image, save_image, to_gray
from .learn import (
    LabeledPatchSet,
    boost_scores,
    cnn_predict,
    load_ensemble,
    random_ensemble,
    save_ensemble,
    train_adaboost,
    train_cnn,
)
from .optimize import CachedSynthesizer, FitResult, SAConfig, fit_theta, fit_theta_rgb, write_trace
from .render import RenderConfig, load_mesh
from .similarity import DistanceSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RGB_SUFFIXES = (":R", ":G", ":B")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _range(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("expected two numbers")
    return vals


CONFIG_KEYS = {
    "render": {"ortho_scale": float, "ambient": float, "light_dir": _floats},
    "sa": {
        "t0": float,
        "t0_scale": float,
        "cooling": float,
        "steps_per_temp": int,
        "max_iter": int,
        "restarts": int,
        "restart_ratio": float,
    },
    "distance": {
        "kind": str,
        "model": str,
        "hog_cell": int,
        "hog_block": int,
        "hog_bins": int,
        "wl_count": int,
        "wl_bins": int,
    },
    "dataset": {
        "per_seed": int,
        "jitter": float,
        "alpha_range": _range,
        "beta_range": _range,
        "gamma_range": _range,
        "n_negatives": int,
    },
    "train": {
        "pool_size": int,
        "rounds": int,
        "bins": int,
        "epochs": int,
        "learning_rate": float,
        "batch_size": int,
    },
    "eval": {"scales": _floats, "stride": int, "window": int, "nms_radius": float, "match_radius": float},
}


def load_config(path) -> dict:
    """Parse and type-check a config file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from None
    out = {}
    for section in parser.sections():
        if section not in CONFIG_KEYS:
            raise DataError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS[section]:
                raise DataError(f"{path}: unknown key {section}.{key}")
            try:
                out[(section, key)] = CONFIG_KEYS[section][key](raw)
            except ValueError as exc:
                raise DataError(f"{path}: bad value for {section}.{key}: {exc}") from None
    return out


class Settings:
    """Flag value if given, else config value, else the built-in default."""

    def __init__(self, args):
        self.args = args
        self.config = load_config(args.config) if getattr(args, "config", None) else {}

    def get(self, section, key, default=None, flag=None):
        val = getattr(self.args, flag or key, None)
        if val is not None:
            return val
        return self.config.get((section, key), default)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _stem(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _mkdir(path):
    os.makedirs(path, exist_ok=True)


def render_config(s: Settings, width=40, height=40) -> RenderConfig:
    kw = {}
    for key in ("ortho_scale", "ambient", "light_dir"):
        val = s.get("render", key)
        if val is not None:
            kw[key] = tuple(val) if key == "light_dir" else val
    return RenderConfig(width=width, height=height, **kw)


def sa_config(s: Settings, width, height) -> SAConfig:
    kw = {}
    for key in CONFIG_KEYS["sa"]:
        val = s.get("sa", key)
        if val is not None:
            kw[key] = val
    return SAConfig.default(width, height, **kw)


def distance_spec(s: Settings, dims, rng) -> DistanceSpec:
    kind = s.get("distance", "kind", "eucl", flag="distance").replace("_", "-")
    model = s.get("distance", "model")
    if kind == "eucl":
        return DistanceSpec("eucl")
    if kind == "hog":
        cfg = HogConfig(
            cell=s.get("distance", "hog_cell", 8),
            block=s.get("distance", "hog_block", 2),
            bins=s.get("distance", "hog_bins", 9),
        )
        return DistanceSpec("hog", cfg)
    if kind == "wl-random":
        count = s.get("distance", "wl_count", 2000)
        return DistanceSpec(kind, random_ensemble(count, dims, s.get("distance", "wl_bins", 8), rng))
    if kind in ("wl-learned", "cnn"):
        if not model:
            raise UsageError(f"--distance {kind} needs --model")
        payload = load_ensemble(model) if kind == "wl-learned" else load_cnn(model)
        return DistanceSpec(kind, payload)
    return DistanceSpec(kind)


def parse_center(text) -> tuple[float, float]:
    try:
        x, y = _floats(text)
    except ValueError:
        raise UsageError(f"bad center {text!r}; expected x,y") from None
    return x, y


def read_centers(path) -> list[tuple[float, float]]:
    """One ``x y`` (or ``x,y``) line per seed image, in order; ``#`` starts a comment."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                x, y = _floats(line)
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected two numbers") from None
            out.append((x, y))
    return out


def pose_ranges(s: Settings, width, height) -> PoseRanges:
    if getattr(s.args, "fixed_pose", False):
        return PoseRanges.fixed()
    jitter = s.get("dataset", "jitter", 2.0)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    kw = {"tx": (cx - jitter, cx + jitter), "ty": (cy - jitter, cy + jitter)}
    for name in ("alpha", "beta", "gamma"):
        r = s.get("dataset", f"{name}_range")
        if r is not None:
            kw[name] = tuple(r)
    return PoseRanges(**kw)


def load_backgrounds(paths):
    bgs = [load_image(p) for p in paths]
    if any(b.shape != bgs[0].shape for b in bgs):
        raise DataError("backgrounds differ in size")
    return bgs


def _pmap(fn, items, jobs):
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_extract_bg(args, s):
    frames = [load_image(p) for p in args.frames]
    bg = extract_background(frames, args.align, args.max_shift)
    save_image(bg, args.out)


def _fit_one(task):
    i, real, bg, mesh, center, dist, sa, rcfg, seed_seq, seed_id, suppress, rgb = task
    rng = np.random.default_rng(seed_seq)
    if rgb:
        return fit_theta_rgb(real, bg, mesh, center, dist, sa, rcfg, rng, seed_id, suppress)
    return [fit_theta(real, bg, mesh, center, dist, sa, rcfg, rng, seed_id, suppress)]


def cmd_fit(args, s):
    seeds = [load_image(p) for p in args.images]
    if not args.rgb:
        seeds = [to_gray(im) for im in seeds]
    if len(args.backgrounds) not in (1, len(seeds)):
        raise UsageError("give one background, or one per seed image")
    bgs = [load_image(p) for p in args.backgrounds]
    if not args.rgb:
        bgs = [to_gray(b) for b in bgs]
    if len(bgs) == 1:
        bgs = bgs * len(seeds)
    if args.centers:
        centers = read_centers(args.centers)
    elif args.center:
        centers = [parse_center(c) for c in args.center]
    else:
        raise UsageError("fit needs --center or --centers")
    if len(centers) == 1:
        centers = centers * len(seeds)
    if len(centers) != len(seeds):
        raise DataError(f"{len(centers)} centers for {len(seeds)} seed images")
    mesh = load_mesh(args.mesh)
    h, w = seeds[0].shape[:2]
    rcfg = render_config(s, w, h)
    sa = sa_config(s, w, h)
    ss = np.random.SeedSequence(args.seed)
    dist_seq, *fit_seqs = ss.spawn(len(seeds) + 1)
    dist = distance_spec(s, (h, w), np.random.default_rng(dist_seq))
    suppress = tuple(args.suppress or ())
    ids = [_stem(p) for p in args.images]
    tasks = [
        (i, seeds[i], bgs[i], mesh, centers[i], dist, sa, rcfg, fit_seqs[i], ids[i], suppress, args.rgb)
        for i in range(len(seeds))
    ]
    results = _pmap(_fit_one, tasks, args.jobs)
    records = []
    for sid, fits in zip(ids, results):
        names = [f"{sid}{suf}" for suf in RGB_SUFFIXES] if args.rgb else [sid]
        for name, fit in zip(names, fits):
            records.append((name, fit.theta))
            if args.trace_dir:
                _mkdir(args.trace_dir)
                write_trace(os.path.join(args.trace_dir, f"{name.replace(':', '_')}.txt"), fit.trace)
    _atomic_records(args.out, records)
    if args.render_dir:
        _mkdir(args.render_dir)
        for i, (sid, fits) in enumerate(zip(ids, results)):
            if args.rgb:
                rngs = [np.random.default_rng(noise_seed(sid)) for _ in range(3)]
                img, _ = synthesize_rgb([f.theta for f in fits], bgs[i], mesh, rcfg, rngs)
            else:
                img, _ = synthesize(fits[0].theta, bgs[i], mesh, rcfg, np.random.default_rng(noise_seed(sid)))
            save_image(img, os.path.join(args.render_dir, f"{sid}_00000.png"))


def _atomic_records(path, records):
    tmp = f"{path}.tmp{os.getpid()}"
    write_theta_records(tmp, records)
    os.replace(tmp, path)


def _group_rgb(records):
    """Collapse consecutive ``id:R``/``id:G``/``id:B`` records into one entry."""
    out, i = [], 0
    while i < len(records):
        trio = records[i : i + 3]
        if len(trio) == 3 and all(r[0].endswith(suf) for r, suf in zip(trio, RGB_SUFFIXES)):
            base = {r[0][:-2] for r in trio}
            if len(base) == 1:
                out.append((base.pop(), [r[1] for r in trio]))
                i += 3
                continue
        raise DataError(f"record {records[i][0]!r} is not part of an R/G/B triple")
    return out


def _render_chunk(task):
    jobs, mesh, bgs, rcfg, offset = task
    out = []
    for k, (sid, j, thetas) in enumerate(jobs):
        bg = bgs[(offset + k) % len(bgs)]
        if isinstance(thetas, list):
            rngs = [np.random.default_rng(noise_seed(sid, j)) for _ in range(3)]
            out.append(synthesize_rgb(thetas, bg, mesh, rcfg, rngs)[0])
        else:
            out.append(render_thetas([(sid, j, thetas)], mesh, [bg], rcfg)[0])
    return out


def cmd_synth(args, s):
    records = read_theta_records(args.thetas)
    if not records:
        raise DataError(f"{args.thetas}: no theta records")
    mesh = load_mesh(args.mesh)
    bgs = load_backgrounds(args.backgrounds)
    rgb = bgs[0].ndim == 3
    h, w = bgs[0].shape[:2]
    rcfg = render_config(s, w, h)
    per_seed = s.get("dataset", "per_seed", 100)
    ranges = pose_ranges(s, w, h)
    rng = np.random.default_rng(args.seed)
    suppress = tuple(args.suppress or ())
    for eff in suppress:
        if eff not in EFFECT_PARAMS:
            raise UsageError(f"unknown effect {eff!r}")

    if rgb:
        groups = _group_rgb(records)
        jobs = []
        for sid, thetas in groups:
            thetas = [t.suppress(suppress) if suppress else t for t in thetas]
            for j in range(per_seed):
                # the three channels share one pose draw
                pose = ranges.sample(thetas[0].pose, rng)
                jobs.append((sid, j, [t.with_pose(pose) for t in thetas]))
    else:
        fits = [FitResult(theta=t, objective=float("nan"), seed_id=sid) for sid, t in records]
        if args.random_params:
            thetas = sample_theta_uniform(fits, per_seed * len(fits), rng, ranges)
            if suppress:
                thetas = [t.suppress(suppress) for t in thetas]
            jobs = [(f"uniform{k:05d}", 0, t) for k, t in enumerate(thetas)]
        else:
            jobs = synthetic_jobs(fits, per_seed, ranges, rng, suppress)

    chunk = max(1, -(-len(jobs) // max(1, args.jobs)))
    tasks = [(jobs[i : i + chunk], mesh, bgs, rcfg, i) for i in range(0, len(jobs), chunk)]
    images = [img for part in _pmap(_render_chunk, tasks, args.jobs) for img in part]

    _mkdir(args.out_dir)
    if rgb:
        manifest = write_dataset([(sid, j, None) for sid, j, _ in jobs], images, args.out_dir)
        flat = [(f"{sid}{suf}.{j:05d}", t) for sid, j, ts in jobs for suf, t in zip(RGB_SUFFIXES, ts)]
    else:
        manifest = write_dataset(jobs, images, args.out_dir)
        flat = [(f"{sid}.{j:05d}", t) for sid, j, t in jobs]
    manifest.write(os.path.join(args.out_dir, "manifest.csv"))
    _atomic_records(os.path.join(args.out_dir, "thetas.txt"), flat)


def cmd_perturb(args, s):
    images = [load_image(p) for p in args.images]
    _mkdir(args.out_dir)
    per = s.get("dataset", "per_seed", 100, flag="per_image")
    manifest = perturb_real(images, per, np.random.default_rng(args.seed), args.out_dir, names=[_stem(p) for p in args.images])
    manifest.write(os.path.join(args.out_dir, "manifest.csv"))


def _training_set(args, s, rng) -> LabeledPatchSet:
    manifest = DatasetManifest()
    for path in args.manifest:
        manifest.extend(DatasetManifest.read(path))
    sets = []
    if len(manifest):
        data = manifest.load_patches()
        if data.patches.ndim == 4:
            data = LabeledPatchSet(data.patches.mean(axis=3), data.labels)
        sets.append(data)
    if args.negatives_from:
        if not sets:
            raise UsageError("--negatives-from needs a manifest to fix the patch size")
        size = sets[0].patches.shape[1]
        n = s.get("dataset", "n_negatives", 1000)
        bgs = [to_gray(load_image(p)) for p in args.negatives_from]
        sets.append(sample_negatives(bgs, n, size, rng))
    if not sets:
        raise DataError("no training samples")
    return LabeledPatchSet.concat(*sets)


def cmd_train_adaboost(args, s):
    ss = np.random.SeedSequence(args.seed)
    neg_seq, pool_seq = ss.spawn(2)
    data = _training_set(args, s, np.random.default_rng(neg_seq))
    dims = data.patches.shape[1:3]
    pool = random_ensemble(s.get("train", "pool_size", 2000), dims, s.get("train", "bins", 8), np.random.default_rng(pool_seq))
    ens = train_adaboost(data, pool, rounds=s.get("train", "rounds", 100))
    save_ensemble(ens, args.out)


def cmd_train_cnn(args, s):
    ss = np.random.SeedSequence(args.seed)
    neg_seq, init_seq, sgd_seq = ss.spawn(3)
    data = _training_set(args, s, np.random.default_rng(neg_seq))
    h, w = data.patches.shape[1:3]
    net0 = load_cnn(args.init) if args.init else default_cnn(np.random.default_rng(init_seq), (1, h, w))
    net = train_cnn(
        data,
        net0,
        epochs=s.get("train", "epochs", 20),
        learning_rate=s.get("train", "learning_rate", 0.05),
        batch_size=s.get("train", "batch_size", 16),
        rng=np.random.default_rng(sgd_seq),
    )
    save_cnn(net, args.out)


def load_classifier(path):
    with open(path) as fh:
        head = fh.readline().split()
    if head and head[0] == "ensemble":
        ens = load_ensemble(path)
        return lambda patches: boost_scores(ens, patches)
    if head and head[0] == "cnnnet":
        net = load_cnn(path)
        return lambda patches: cnn_predict(net, patches)
    raise DataError(f"{path}: not an ensemble or CNN model file")


def cmd_eval(args, s):
    classify = load_classifier(args.model)
    gt = GroundTruth.read(args.gt)
    window = s.get("eval", "window", 40)
    scales = s.get("eval", "scales", (1.0,))
    stride = s.get("eval", "stride", 4)
    nms_radius = s.get("eval", "nms_radius", window / 2.0)
    match_radius = s.get("eval", "match_radius", window / 2.0)
    dets = []
    for path in args.images:
        dets.extend(detect(classify, load_image(path), scales, stride, window, nms_radius, _stem(path)))
    curve = pr_curve(dets, gt, match_radius)
    ap = average_precision(curve)
    write_report(args.out, curve, ap)
    if args.detections:
        write_detections(args.detections, dets)
    print(f"AveP {ap:.4f}")


def cmd_render(args, s):
    if args.theta:
        vals = _floats(args.theta)
        if len(vals) != len(THETA_NAMES):
            raise UsageError(f"--theta needs {len(THETA_NAMES)} numbers")
        theta, sid = Theta.from_vector(vals), None
    elif args.thetas:
        records = read_theta_records(args.thetas)
        if not 0 <= args.index < len(records):
            raise DataError(f"record index {args.index} out of range (have {len(records)})")
        sid, theta = records[args.index]
    else:
        raise UsageError("render needs --theta or --thetas")
    bg = to_gray(load_image(args.background))
    h, w = bg.shape
    rng = np.random.default_rng(noise_seed(sid) if sid else args.seed)
    img, _ = synthesize(theta, bg, load_mesh(args.mesh), render_config(s, w, h), rng)
    save_image(img, args.out)


def cmd_hist(args, s):
    thetas = [t for _, t in read_theta_records(args.thetas)]
    pair = tuple(p.strip() for p in args.pair.split(","))
    if len(pair) != 2:
        raise UsageError("--pair needs two coordinate names")
    counts, _, _ = joint_histogram(thetas, pair, args.bins)
    write_histogram(args.out, counts)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="synthfit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--seed", type=int, required=True, help="master random seed")
        sp.add_argument("--config", help="INI-style settings file")
        sp.set_defaults(func=fn)
        return sp

    sp = add("extract-bg", cmd_extract_bg, "median background from a frame stack")
    sp.add_argument("--frames", nargs="+", required=True)
    sp.add_argument("--align", choices=("none", "translation"), default="none")
    sp.add_argument("--max-shift", type=int, default=8)
    sp.add_argument("--out", required=True)

    sp = add("fit", cmd_fit, "fit rendering parameters to real seed images")
    sp.add_argument("--images", nargs="+", required=True, help="real seed images")
    sp.add_argument("--backgrounds", nargs="+", required=True, help="one shared or one per seed")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--center", action="append", help="x,y object center; repeat per seed")
    sp.add_argument("--centers", help="file with one 'x y' line per seed")
    sp.add_argument("--distance", choices=("eucl", "hog", "wl-random", "wl-learned", "cnn"))
    sp.add_argument("--model", help="ensemble or CNN file for wl-learned / cnn distances")
    sp.add_argument("--suppress", action="append", choices=sorted(EFFECT_PARAMS))
    sp.add_argument("--rgb", action="store_true", help="fit each color channel separately")
    sp.add_argument("--max-iter", type=int, help="annealing iteration cap")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--trace-dir")
    sp.add_argument("--render-dir", help="also write the best synthetic image per seed")
    sp.add_argument("--out", required=True, help="theta records file")

    sp = add("synth", cmd_synth, "mass-produce synthetic positives from theta records")
    sp.add_argument("--thetas", required=True)
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--backgrounds", nargs="+", required=True)
    sp.add_argument("--per-seed", type=int)
    sp.add_argument("--jitter", type=float, help="translation range around the image center")
    sp.add_argument("--fixed-pose", action="store_true", help="keep the fitted pose")
    sp.add_argument("--suppress", action="append", choices=sorted(EFFECT_PARAMS))
    sp.add_argument("--random-params", action="store_true", help="capture uniform over the fitted box")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out-dir", required=True)

    sp = add("perturb", cmd_perturb, "perturbed copies of real positives")
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--per-image", type=int)
    sp.add_argument("--out-dir", required=True)

    for name, fn in (("train-adaboost", cmd_train_adaboost), ("train-cnn", cmd_train_cnn)):
        sp = add(name, fn, f"{name.split('-')[1]} detector from dataset manifests")
        sp.add_argument("--manifest", nargs="*", default=[])
        sp.add_argument("--negatives-from", nargs="*", help="backgrounds to crop negatives from")
        sp.add_argument("--n-negatives", type=int)
        sp.add_argument("--out", required=True)
        if name == "train-adaboost":
            sp.add_argument("--pool-size", type=int)
            sp.add_argument("--rounds", type=int)
            sp.add_argument("--bins", type=int)
        else:
            sp.add_argument("--init", help="starting network file")
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--learning-rate", type=float)
            sp.add_argument("--batch-size", type=int)

    sp = add("eval", cmd_eval, "sliding-window detection scored against ground truth")
    sp.add_argument("--model", required=True)
    sp.add_argument("--images", nargs="+", required=True)
    sp.add_argument("--gt", required=True, help="CSV image,x,y,size (image = file stem)")
    sp.add_argument("--scales", type=_floats)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--window", type=int)
    sp.add_argument("--nms-radius", type=float)
    sp.add_argument("--match-radius", type=float)
    sp.add_argument("--detections", help="also write all kept detections")
    sp.add_argument("--out", required=True)

    sp = add("render", cmd_render, "render one parameter vector")
    sp.add_argument("--theta", help="11 numbers: pose then capture parameters")
    sp.add_argument("--thetas", help="theta records file")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--background", required=True)
    sp.add_argument("--out", required=True)

    sp = add("hist", cmd_hist, "joint histogram of two theta coordinates")
    sp.add_argument("--thetas", required=True)
    sp.add_argument("--pair", required=True, help="two names, e.g. sigma_s,sigma_n")
    sp.add_argument("--bins", type=int, default=10)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        settings = Settings(args)
        args.func(args, settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SynthfitError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
