import numpy as np
import pytest

from synthfit.effects import CaptureParams, Theta, noise_seed, synthesize
from synthfit.errors import DataError, ObjectiveNaNError, ShapeMismatchError
from synthfit.optimize import (
    CachedSynthesizer,
    SAConfig,
    fit_theta,
    fit_theta_rgb,
    read_trace,
    simulated_annealing,
    write_trace,
)
from synthfit.render import Pose
from synthfit.similarity import DistanceSpec

from conftest import smooth_image


VALID = [(-5.0, 5.0)] * 5 + [(0.0, 5.0)] * 3 + [(-5.0, 5.0), (0.0, 1.0), (0.0, 1.0)]


def quad_cfg(**kw):
    base = dict(steps=[0.3] * 11, bounds=VALID, t0=1.0, cooling=0.9, steps_per_temp=40, max_iter=6000, restarts=0)
    base.update(kw)
    return SAConfig(**base)


def quadratic(target):
    return lambda th: float(((th.to_vector() - target) ** 2).sum())


TARGET = np.array([0.5, -1.0, 2.0, 1.0, -2.0, 1.5, 0.5, 2.5, -0.5, 0.3, 0.7])
START = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.5, 0.5])


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(t0=0.0), dict(cooling=1.0), dict(cooling=0.0), dict(bounds=[(1.0, 1.0)] * 11), dict(steps=[0.1] * 10),
         dict(restarts=-1), dict(restart_ratio=-0.1), dict(t0_scale=0.0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            quad_cfg(**kw)

    def test_default_box(self):
        cfg = SAConfig.default(40, 30)
        assert len(cfg.steps) == len(cfg.bounds) == 11
        assert cfg.bounds[3] == (0.0, 39.0) and cfg.bounds[4] == (0.0, 29.0)


class TestAnnealing:
    def test_constant_objective(self, rng):
        th0 = Theta.from_vector(START)
        res = simulated_annealing(lambda th: 3.0, th0, quad_cfg(max_iter=200), rng)
        assert res.objective == 3.0

    def test_quadratic_smoke_and_beats_random_search(self):
        cfg = quad_cfg(bounds=VALID)
        f = quadratic(TARGET)
        res = simulated_annealing(f, Theta.from_vector(START), cfg, np.random.default_rng(0))
        assert res.objective < 1e-2
        # random search with the same evaluation budget, best of 10 restarts
        lo = np.array([b[0] for b in cfg.bounds])
        hi = np.array([b[1] for b in cfg.bounds])
        r = np.random.default_rng(1)
        per = cfg.max_iter // 10
        best = min(f(Theta.from_vector(r.uniform(lo, hi))) for _ in range(10) for _ in range(per))
        assert res.objective <= best

    def test_trace_and_bounds(self):
        cfg = quad_cfg(bounds=[(-1.0, 1.0)] * 5 + [(0.0, 1.0)] * 6, steps=[2.0] * 11, max_iter=800)
        res = simulated_annealing(quadratic(TARGET), Theta.from_vector(np.clip(START, 0, 1)), cfg, np.random.default_rng(3))
        tr = np.array(res.trace)
        assert np.all(np.diff(tr) <= 0)
        assert tr[-1] == res.objective
        v = res.theta.to_vector()
        assert np.all(v >= [b[0] for b in cfg.bounds]) and np.all(v <= [b[1] for b in cfg.bounds])
        # the optimum lies outside the box on several axes; clamping lands exactly on the face
        assert v[2] == 1.0 and v[7] == 1.0

    def test_zero_temperature_is_descent(self):
        calls = []

        def f(th):
            val = quadratic(TARGET)(th)
            calls.append((th.to_vector(), val))
            return val

        cfg = quad_cfg(t0=1e-300, max_iter=500, bounds=VALID)
        simulated_annealing(f, Theta.from_vector(START), cfg, np.random.default_rng(5))
        cur_x, cur_f = calls[0]
        for x, val in calls[1:]:
            # every proposal is one step away from the current point, which never got worse
            assert np.count_nonzero(x != cur_x) <= 1
            if val <= cur_f:
                cur_x, cur_f = x, val

    def test_restart_until_ratio_reached(self):
        # a floor of 1 above the quadratic keeps the ratio out of reach, so every chain runs
        f = lambda th: 1.0 + quadratic(TARGET)(th)
        cfg = quad_cfg(max_iter=300, restarts=2, restart_ratio=0.01)
        res = simulated_annealing(f, Theta.from_vector(START), cfg, np.random.default_rng(2))
        assert res.chains == 3 and len(res.trace) == 1 + 3 * 300
        assert np.all(np.diff(res.trace) <= 0) and res.trace[-1] == res.objective

    def test_no_restart_once_ratio_reached(self):
        cfg = quad_cfg(restarts=5, restart_ratio=0.5)
        res = simulated_annealing(quadratic(TARGET), Theta.from_vector(START), cfg, np.random.default_rng(2))
        assert res.chains == 1

    def test_restart_keeps_best_chain(self):
        f = lambda th: 1.0 + quadratic(TARGET)(th)
        one = simulated_annealing(f, Theta.from_vector(START), quad_cfg(max_iter=200), np.random.default_rng(4))
        three = simulated_annealing(f, Theta.from_vector(START), quad_cfg(max_iter=200, restarts=2, restart_ratio=0.01),
                                    np.random.default_rng(4))
        # the first chain consumes the same random stream, so its history is a prefix
        assert three.trace[: len(one.trace)] == one.trace
        assert three.objective <= one.objective

    def test_deterministic(self):
        f = quadratic(TARGET)
        cfg = quad_cfg(max_iter=300, bounds=VALID)
        a = simulated_annealing(f, Theta.from_vector(START), cfg, np.random.default_rng(9))
        b = simulated_annealing(f, Theta.from_vector(START), cfg, np.random.default_rng(9))
        assert a.trace == b.trace and a.theta == b.theta

    def test_nan_reports_theta(self, rng):
        with pytest.raises(ObjectiveNaNError) as err:
            simulated_annealing(lambda th: float("nan"), Theta.from_vector(START), quad_cfg(), rng)
        assert len(err.value.theta) == 11

    def test_start_outside_bounds(self, rng):
        with pytest.raises(DataError):
            simulated_annealing(lambda th: 0.0, Theta.from_vector(START), quad_cfg(bounds=[(1.0, 2.0)] * 11), rng)

    def test_frozen_coordinates_stay(self, rng):
        cfg = quad_cfg(max_iter=300, bounds=VALID)
        cfg = cfg.freeze(["sigma_mu", "tx"])
        res = simulated_annealing(quadratic(TARGET), Theta.from_vector(START), cfg, rng)
        assert res.theta.capture.sigma_mu == START[6] and res.theta.pose.tx == START[3]


class TestFit:
    @pytest.fixture
    def world(self, blob_mesh, render_cfg):
        r = np.random.default_rng(21)
        bg = smooth_image(r)
        truth = Theta(Pose(0.2, -0.3, 0.1, 20.4, 19.6), CaptureParams(1.5, 1.0, 0.5, 0.4, 0.0, 0.6))
        real, _ = synthesize(truth, bg, blob_mesh, render_cfg, np.random.default_rng(noise_seed("s")))
        return real, bg, truth

    def test_cached_synthesizer_bitwise(self, world, blob_mesh, render_cfg):
        _, bg, truth = world
        synth = CachedSynthesizer(bg, blob_mesh, render_cfg)
        for sn in (0.0, 0.05):
            th = Theta(truth.pose, CaptureParams(1.0, 2.0, 0.3, 1.0, sn, 0.5))
            a, ma = synth(th, np.random.default_rng(4))
            b, mb = synthesize(th, bg, blob_mesh, render_cfg, np.random.default_rng(4))
            assert np.array_equal(a, b) and np.array_equal(ma, mb)

    def test_objective_deterministic(self, world, blob_mesh, render_cfg):
        real, bg, truth = world
        synth = CachedSynthesizer(bg, blob_mesh, render_cfg)
        th = Theta(truth.pose, CaptureParams(1.0, 0.0, 0.0, 0.0, 0.08, 0.5))
        vals = [np.linalg.norm(real - synth(th, np.random.default_rng(noise_seed("s")))[0]) for _ in range(2)]
        assert vals[0] == vals[1]

    def test_short_fit_improves(self, world, blob_mesh, render_cfg):
        real, bg, truth = world
        cfg = SAConfig.default(40, 40, max_iter=600)
        res = fit_theta(real, bg, blob_mesh, (20, 20), DistanceSpec("eucl"), cfg, render_cfg, np.random.default_rng(0), "s")
        assert res.objective < res.objective0
        assert res.theta0.pose.as_tuple() == (0.0, 0.0, 0.0, 20.0, 20.0)
        assert res.seed_id == "s"

    def test_suppressed_effect_stays_zero(self, world, blob_mesh, render_cfg):
        real, bg, _ = world
        cfg = SAConfig.default(40, 40, max_iter=200)
        res = fit_theta(real, bg, blob_mesh, (20, 20), DistanceSpec("eucl"), cfg, render_cfg, np.random.default_rng(0), "s", suppress=("mb",))
        c = res.theta.capture
        assert (c.sigma_mu, c.sigma_mv, c.alpha_m) == (0.0, 0.0, 0.0)

    def test_center_off_image(self, world, blob_mesh, render_cfg):
        real, bg, _ = world
        with pytest.raises(DataError):
            fit_theta(real, bg, blob_mesh, (45, 10), DistanceSpec("eucl"), SAConfig.default(40, 40), render_cfg, np.random.default_rng(0))

    def test_shape_mismatch(self, world, blob_mesh, render_cfg):
        real, bg, _ = world
        with pytest.raises(ShapeMismatchError):
            fit_theta(real, bg[:30], blob_mesh, (10, 10), DistanceSpec("eucl"), SAConfig.default(40, 40), render_cfg, np.random.default_rng(0))

    def test_rgb_equal_channels(self, world, blob_mesh, render_cfg):
        real, bg, _ = world
        rgb, bg3 = np.repeat(real[:, :, None], 3, axis=2), np.repeat(bg[:, :, None], 3, axis=2)
        cfg = SAConfig.default(40, 40, max_iter=150)
        fits = fit_theta_rgb(rgb, bg3, blob_mesh, (20, 20), DistanceSpec("eucl"), cfg, render_cfg, np.random.default_rng(1), "s")
        assert len(fits) == 3
        assert fits[0].theta == fits[1].theta == fits[2].theta
        assert fits[0].trace == fits[1].trace == fits[2].trace

    def test_rgb_needs_three_channels(self, world, blob_mesh, render_cfg):
        real, bg, _ = world
        with pytest.raises(ShapeMismatchError):
            fit_theta_rgb(real, bg, blob_mesh, (20, 20), DistanceSpec("eucl"), SAConfig.default(40, 40), render_cfg, np.random.default_rng(1))


def test_trace_file_round_trip(tmp_path):
    tr = [3.0, 2.5, 2.5, 0.1 + 0.2]
    write_trace(tmp_path / "t.txt", tr)
    assert read_trace(tmp_path / "t.txt") == tr
