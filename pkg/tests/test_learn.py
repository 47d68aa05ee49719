import math

import numpy as np
import pytest

from synthfit.errors import DataError, DivergenceError, UnlearnablePoolError
from synthfit.features import CnnNet, Conv, Dense, Pool, WeakLearner, default_cnn, energy_matrix
from synthfit.learn import (
    BoostReport,
    LabeledPatchSet,
    WeakLearnerEnsemble,
    boost_score,
    boost_scores,
    cnn_predict,
    load_ensemble,
    loss_and_grads,
    random_ensemble,
    save_ensemble,
    train_adaboost,
    train_cnn,
)


def edge_patches(rng, n, size=12):
    """Positives carry a horizontal edge (vertical gradient), negatives a vertical one."""
    out, labels = [], []
    for i in range(n):
        img = rng.random((size, size)) * 0.05
        cut = int(rng.integers(3, size - 3))
        if i % 2 == 0:
            img[cut:] += 0.8
            labels.append(1)
        else:
            img[:, cut:] += 0.8
            labels.append(-1)
        out.append(np.clip(img, 0, 1))
    return LabeledPatchSet(np.stack(out), labels)


def adaboost_reference(E, y, rounds):
    """Plain AdaBoost: every learner, every distinct threshold, fires when E > tau."""
    n, m = E.shape
    w = np.full(n, 1.0 / n)
    picked = []
    for _ in range(rounds):
        cands = []
        for j in range(m):
            for tau in np.unique(E[:, j]):
                pred = np.where(E[:, j] > tau, 1, -1)
                cands.append((w[pred != y].sum(), j, tau))
        low = min(c[0] for c in cands)
        err, j, tau = min((c for c in cands if c[0] <= low + 1e-12), key=lambda c: (c[1], c[2]))
        err = 0.0 if err <= 1e-12 else err
        if err >= 0.5:
            break
        alpha = 0.5 * math.log((1 - err) / err) if err > 0 else 0.5 * math.log(1e6)
        picked.append((j, tau, alpha))
        if err == 0:
            break
        pred = np.where(E[:, j] > tau, 1, -1)
        w = w * np.exp(-alpha * y * pred)
        w /= w.sum()
    return picked


class TestRandomEnsemble:
    def test_properties(self, rng):
        ens = random_ensemble(1000, (20, 30), 8, rng)
        assert np.all(ens.alphas == 1.0)
        for l in ens.learners:
            assert l.w >= 4 and l.h >= 4
            assert 0 <= l.x and l.x + l.w <= 30 and 0 <= l.y and l.y + l.h <= 20
            assert 0 <= l.orientation < 8 and 0 <= l.tau <= 1

    def test_deterministic(self):
        a = random_ensemble(20, (16, 16), 8, np.random.default_rng(4))
        b = random_ensemble(20, (16, 16), 8, np.random.default_rng(4))
        assert a == b

    def test_too_small(self, rng):
        with pytest.raises(DataError):
            random_ensemble(3, (3, 10), 8, rng)

    def test_random_needs_unit_weights(self):
        with pytest.raises(DataError):
            WeakLearnerEnsemble([WeakLearner(0, 0, 4, 4, 0, 0.5, 2.0)], "random")


class TestAdaBoost:
    def test_alpha_formula(self):
        # 4 samples; the best learner misclassifies exactly one
        patches = LabeledPatchSet(np.zeros((4, 8, 8)), [1, 1, -1, -1])
        pool = WeakLearnerEnsemble([WeakLearner(0, 0, 4, 4, 0, 0.5)], "random", 4)
        E = np.array([[0.9], [0.1], [0.05], [0.2]])
        report = BoostReport()
        ens = train_adaboost(patches, pool, rounds=1, report=report, energies=E)
        assert report.errors[0] == pytest.approx(0.25)
        assert ens.learners[0].alpha == pytest.approx(0.5 * math.log(3))

    def test_separable_in_one_round(self, rng):
        data = edge_patches(rng, 20)
        pool = WeakLearnerEnsemble([WeakLearner(0, 0, 12, 12, o, 0.5) for o in range(4)], "random", 4)
        ens = train_adaboost(data, pool, rounds=10)
        assert len(ens) == 1
        assert ens.learners[0].alpha == pytest.approx(0.5 * math.log(1e6))
        assert np.all(np.sign(boost_scores(ens, data.patches)) == data.labels)

    @pytest.mark.parametrize("trial", range(5))
    def test_matches_exhaustive_reference(self, trial):
        r = np.random.default_rng(400 + trial)
        n, m = 30, 6
        E = r.random((n, m)).round(2)
        y = np.where(r.random(n) < 0.5, 1, -1)
        y[:2] = (1, -1)
        pool = WeakLearnerEnsemble([WeakLearner(0, 0, 4, 4, 0, 0.5)] * m, "random", 4)
        ens = train_adaboost(LabeledPatchSet(np.zeros((n, 4, 4)), y), pool, rounds=8, energies=E)
        ref = adaboost_reference(E, y, 8)
        assert len(ens) == len(ref)
        for l, (j, tau, alpha) in zip(ens.learners, ref):
            assert l.tau == tau
            assert l.alpha == pytest.approx(alpha, rel=1e-9)

    def test_bounds_and_errors(self, rng):
        data = edge_patches(rng, 40)
        data.patches[:6] = rng.random((6, 12, 12))  # label noise makes it non-separable
        pool = random_ensemble(200, (12, 12), 4, rng)
        report = BoostReport()
        ens = train_adaboost(data, pool, rounds=15, report=report)
        assert all(e < 0.5 for e in report.errors)
        bound = report.loss_bound()
        assert all(b2 <= b1 + 1e-15 for b1, b2 in zip(bound, bound[1:]))
        train_err = np.mean(np.where(boost_scores(ens, data.patches) > 0, 1, -1) != data.labels)
        assert train_err <= math.exp(-2 * sum((0.5 - e) ** 2 for e in report.errors)) + 1e-12

    def test_unlearnable(self):
        data = LabeledPatchSet(np.zeros((4, 8, 8)), [1, -1, 1, -1])
        pool = WeakLearnerEnsemble([WeakLearner(0, 0, 8, 8, 0, 0.5)], "random", 4)
        with pytest.raises(UnlearnablePoolError):
            train_adaboost(data, pool)

    def test_one_class(self):
        with pytest.raises(DataError):
            train_adaboost(LabeledPatchSet(np.zeros((2, 8, 8)), [1, 1]), random_ensemble(3, (8, 8), 4, np.random.default_rng(0)))

    def test_deterministic(self, rng):
        data = edge_patches(rng, 30)
        pool = random_ensemble(100, (12, 12), 4, rng)
        assert train_adaboost(data, pool, 5) == train_adaboost(data, pool, 5)


class TestBoostScore:
    def test_all_and_none(self):
        img = np.zeros((8, 8))
        img[4:] = 1.0
        fire = WeakLearnerEnsemble([WeakLearner(0, 0, 8, 8, 2, -1.0, a) for a in (0.3, 0.5)], "adaboost", 4)
        quiet = WeakLearnerEnsemble([WeakLearner(0, 0, 8, 8, 2, 1.0, a) for a in (0.3, 0.5)], "adaboost", 4)
        assert boost_score(fire, img) == pytest.approx(0.8)
        assert boost_score(quiet, img) == pytest.approx(-0.8)

    def test_mixed_and_linear(self, rng):
        ens = random_ensemble(30, (12, 12), 8, rng)
        ens = WeakLearnerEnsemble([WeakLearner(*l.region, l.orientation, l.tau, float(a)) for l, a in zip(ens.learners, rng.random(30))], "adaboost", 8)
        patches = rng.random((5, 12, 12))
        E = energy_matrix(patches, ens.learners, 8)
        for i in range(5):
            ref = sum(l.alpha * (2 * (E[i, j] > l.tau) - 1) for j, l in enumerate(ens.learners))
            assert boost_scores(ens, patches)[i] == pytest.approx(ref, abs=1e-12)
        doubled = WeakLearnerEnsemble([WeakLearner(*l.region, l.orientation, l.tau, 2 * l.alpha) for l in ens.learners], "adaboost", 8)
        np.testing.assert_allclose(boost_scores(doubled, patches), 2 * boost_scores(ens, patches), atol=1e-12)

    def test_file_round_trip(self, tmp_path, rng):
        ens = random_ensemble(10, (12, 12), 8, rng)
        save_ensemble(ens, tmp_path / "e.txt")
        assert load_ensemble(tmp_path / "e.txt") == ens

    def test_bad_file(self, tmp_path):
        (tmp_path / "e.txt").write_text("ensemble provenance=random bins=8\n1 2 3\n")
        with pytest.raises(DataError):
            load_ensemble(tmp_path / "e.txt")


class TestCnnTraining:
    @staticmethod
    def _small_net(rng):
        layers = [
            Conv(rng.normal(size=(3, 1, 3, 3)) * 0.5, rng.normal(size=3) * 0.1, "relu"),
            Pool(2),
            Dense(rng.normal(size=(5, 3 * 3 * 3)) * 0.3, rng.normal(size=5) * 0.1, "relu"),
            Dense(rng.normal(size=(2, 5)) * 0.5, np.zeros(2), "identity"),
        ]
        return CnnNet((1, 8, 8), layers)

    def test_gradient_check(self, rng):
        net = self._small_net(rng)
        x = rng.random((3, 1, 8, 8))
        t = np.array([0, 1, 1])
        _, grads = loss_and_grads(net, x, t)
        for p, g in zip(net.params(), grads):
            flat, gflat = p.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                h = 1e-4 * max(1.0, abs(old))
                flat[i] = old + h
                up, _ = loss_and_grads(net, x, t)
                flat[i] = old - h
                down, _ = loss_and_grads(net, x, t)
                flat[i] = old
                assert gflat[i] == pytest.approx((up - down) / (2 * h), abs=1e-5)

    def test_learns_bright_vs_dark(self, rng):
        n = 50
        imgs = np.where(np.arange(n)[:, None, None] % 2 == 0, 0.8, 0.2) + rng.normal(0, 0.02, (n, 8, 8))
        data = LabeledPatchSet(imgs, np.where(np.arange(n) % 2 == 0, 1, -1))
        net = train_cnn(data, self._small_net(rng), epochs=20, learning_rate=0.1, batch_size=10, rng=rng)
        assert np.all(np.sign(cnn_predict(net, imgs)) == data.labels)

    def test_zero_lr_unchanged(self, rng):
        net = self._small_net(rng)
        data = LabeledPatchSet(rng.random((6, 8, 8)), [1, -1] * 3)
        out = train_cnn(data, net, epochs=2, learning_rate=0.0, rng=rng)
        assert all(np.array_equal(a, b) for a, b in zip(net.params(), out.params()))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, rng):
        net = self._small_net(rng)
        net.layers[-1].weight[:] = np.inf
        data = LabeledPatchSet(rng.random((4, 8, 8)), [1, -1, 1, -1])
        with pytest.raises(DivergenceError):
            train_cnn(data, net, epochs=1, rng=rng)

    def test_deterministic(self, rng):
        data = LabeledPatchSet(rng.random((8, 40, 40)), [1, -1] * 4)
        net = default_cnn(np.random.default_rng(0))
        a = train_cnn(data, net, epochs=1, rng=np.random.default_rng(1))
        b = train_cnn(data, net, epochs=1, rng=np.random.default_rng(1))
        assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
