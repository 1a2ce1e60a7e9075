import numpy as np
import pytest

import oracles
from conftest import unit_rows
from gradcheck import gradient_check
from vidsum.errors import DomainError, EmptyBatchError, FormatError, ShapeError, TrainingDivergedError
from vidsum.featureio import FeatureMatrix
from vidsum.metrics import cosine_neighbors, global_consistency, local_dissimilarity
from vidsum.refine import (
    Adam,
    FilterParams,
    ProjectorParams,
    TrainConfig,
    filter_loss,
    filter_scores,
    filter_targets,
    full_loss,
    init_params,
    load_checkpoint,
    project,
    refined_importance,
    refined_losses,
    save_checkpoint,
    segment_features,
    train,
    uniqueness_loss,
)
from vidsum.refine.checkpoint import decode_checkpoint, encode_checkpoint
from vidsum.refine.trainer import make_batches, prepare_videos

SMALL = dict(proj_dim=8, hidden_dim=16, filter_hidden=8, segment_len=4, length=None)


def small_videos(rng, n=4, t=20, d=6):
    return [FeatureMatrix(unit_rows(rng, t, d).astype(np.float32), normalized=True) for _ in range(n)]


class TestProjector:
    def test_unit_norm_and_deterministic(self, rng):
        p = ProjectorParams.init(6, 8, 16, rng)
        x = rng.normal(size=(30, 6))
        z = project(p, x)
        np.testing.assert_allclose(np.linalg.norm(z.data.astype(np.float64), axis=1), 1.0, atol=1e-6)
        assert project(p, x).data.tobytes() == z.data.tobytes()

    def test_identity_path(self, rng):
        d = 5
        p = ProjectorParams(
            np.eye(d, dtype=np.float32), np.zeros(d, np.float32),
            np.zeros((d, 3), np.float32), np.zeros(3, np.float32),
            np.zeros((3, d), np.float32), np.zeros(d, np.float32),
        )
        x = rng.normal(size=(7, d))
        np.testing.assert_allclose(project(p, x).data, x / np.linalg.norm(x, axis=1, keepdims=True), atol=1e-6)

    def test_dim_mismatch(self, rng):
        p = ProjectorParams.init(6, 4, 4, rng)
        with pytest.raises(ShapeError):
            project(p, np.ones((2, 5)))


class TestFilter:
    def test_zero_last_layer(self, rng):
        f = FilterParams.init(4, 8, rng)
        f.w2[:] = 0
        np.testing.assert_array_equal(filter_scores(f, unit_rows(rng, 9, 4)), 0.5)

    def test_range_and_determinism(self, rng):
        f = FilterParams.init(4, 8, rng)
        f.w2 *= 10
        z = unit_rows(rng, 200, 4)
        r = filter_scores(f, z)
        assert np.all((r > 0) & (r < 1))
        np.testing.assert_array_equal(filter_scores(f, z), r)

    def test_targets(self):
        np.testing.assert_allclose(filter_targets([-4, 0]), [1, 0])
        np.testing.assert_allclose(filter_targets([2, 2, 2]), [0.5] * 3)
        y = filter_targets(np.random.default_rng(0).normal(size=50))
        assert y.min() >= 0 and y.max() <= 1

    def test_bce(self):
        assert filter_loss([0.5], [0.5]) == pytest.approx(np.log(2), abs=1e-12)
        assert filter_loss([1.0], [0.9]) == pytest.approx(-np.log(0.9), abs=1e-12)

    def test_bce_loop_oracle(self, rng):
        y, r = rng.random(40), rng.uniform(0.01, 0.99, 40)
        expect = sum(-(a * np.log(b) + (1 - a) * np.log(1 - b)) for a, b in zip(y, r)) / 40
        assert filter_loss(y, r) == pytest.approx(expect, abs=1e-12)

    def test_bce_domain(self):
        with pytest.raises(DomainError):
            filter_loss([0.5], [1.0])
        with pytest.raises(DomainError):
            filter_loss([1.5], [0.5])
        with pytest.raises(ShapeError):
            filter_loss([0.5, 0.5], [0.5])


class TestLosses:
    def test_refined_equals_metrics_for_identity(self, rng):
        x = unit_rows(rng, 40, 5)
        n = cosine_neighbors(x, 0.1)
        la, lu = refined_losses(x, n)
        np.testing.assert_allclose(la, local_dissimilarity(x, n), atol=1e-9)
        np.testing.assert_allclose(lu, global_consistency(x), atol=1e-9)

    def test_refined_brute_force(self, rng):
        x, z = unit_rows(rng, 30, 5), unit_rows(rng, 30, 4)
        n = cosine_neighbors(x, 0.2)
        la, lu = refined_losses(z, n)
        np.testing.assert_allclose(la, oracles.local_dissimilarity_loop(z, n.indices), atol=1e-9)
        np.testing.assert_allclose(lu, oracles.global_consistency_loop(z), atol=1e-9)
        np.testing.assert_allclose(refined_losses(np.eye(2), cosine_neighbors(np.eye(2)))[1], [-4, -4])

    def test_uniqueness_simple(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(uniqueness_loss(z, [np.array([[1.0, 0.0]])]), [0.0, -4.0], atol=1e-12)

    def test_uniqueness_brute_force(self, rng):
        zs = [unit_rows(rng, 20, 6) for _ in range(4)]
        others = [segment_features(z, 5) for z in zs[1:]]
        np.testing.assert_allclose(
            uniqueness_loss(zs[0], others), oracles.uniqueness_loop(zs[0], np.concatenate(others)), atol=1e-9
        )
        with pytest.raises(EmptyBatchError):
            uniqueness_loss(zs[0], [])

    def test_segments(self, rng):
        z = unit_rows(rng, 23, 4)
        np.testing.assert_allclose(segment_features(z, 5), oracles.segments_loop(z, 5), atol=1e-9)
        assert len(segment_features(z, 5)) == 4
        with pytest.raises(ShapeError):
            segment_features(z[:3], 5)


class TestFullLoss:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.xs = [unit_rows(rng, 20, 6) for _ in range(3)]
        self.cfg = TrainConfig(**SMALL)
        self.p, self.f = init_params(6, self.cfg)

    def loss(self, **kw):
        cfg = TrainConfig(**{**SMALL, **kw})
        return full_loss(self.xs, self.p, self.f, cfg)

    def test_decomposition(self):
        res = self.loss(lambda1=0, lambda2=0, lambda3=0)
        assert res.loss == pytest.approx(res.terms["align"], abs=1e-12)
        la = np.concatenate([local_dissimilarity(z, cosine_neighbors(x, 0.1))
                             for x, z in zip(self.xs, res.projected)])
        assert res.loss == pytest.approx(la.mean(), abs=1e-12)

    def test_linear_in_lambda1(self):
        a, b = self.loss(lambda1=0.5), self.loss(lambda1=1.0)
        assert b.loss - a.loss == pytest.approx(0.5 * a.terms["uniform"], abs=1e-12)

    def test_stop_gradient(self):
        a, b = self.loss(lambda3=0.0), self.loss(lambda3=1.0)
        for k in a.projector_grads:
            assert np.abs(a.projector_grads[k] - b.projector_grads[k]).max() < 1e-12
        assert all(np.all(g == 0) for g in a.filter_grads.values())

    def test_gradients(self):
        assert gradient_check(3)[0] < 1e-4

    def test_needs_two_videos(self):
        with pytest.raises(EmptyBatchError):
            full_loss(self.xs[:1], self.p, self.f, self.cfg)


class TestAdam:
    def test_weight_decay_shrinks(self, rng):
        p = {"w": rng.normal(size=(4, 4)).astype(np.float32)}
        before = np.linalg.norm(p["w"])
        Adam(lr=1e-2, weight_decay=0.1).step(p, {"w": np.zeros((4, 4))})
        assert np.linalg.norm(p["w"]) < before
        assert p["w"].dtype == np.float32

    def test_first_step_size(self):
        # bias-corrected first step moves each entry by lr * sign(grad)
        p = {"w": np.array([1.0, 1.0])}
        Adam(lr=0.1).step(p, {"w": np.array([3.0, -0.5])})
        np.testing.assert_allclose(p["w"], [0.9, 1.1], atol=1e-6)


class TestTrain:
    def test_batches(self):
        rng = np.random.default_rng(0)
        b = make_batches(9, 4, rng)
        assert sorted(np.concatenate(b).tolist()) == list(range(9))
        assert [len(x) for x in b] == [4, 5]

    def test_epochs_zero_is_init(self, rng):
        cfg = TrainConfig(**SMALL, epochs=0)
        p, f, h = train(small_videos(rng), cfg)
        p0, f0 = init_params(6, cfg)
        for a, b in zip(list(p.named().values()) + list(f.named().values()),
                        list(p0.named().values()) + list(f0.named().values())):
            assert a.tobytes() == b.tobytes()
        assert h.epoch_loss == []

    def test_deterministic(self, rng):
        vids = small_videos(rng)
        cfg = TrainConfig(**SMALL, epochs=3, batch_size=2, lr=1e-3)
        a = train(vids, cfg)
        b = train(vids, cfg)
        assert encode_checkpoint(a[0], a[1], cfg) == encode_checkpoint(b[0], b[1], cfg)
        assert a[2].step_loss == b[2].step_loss

    def test_neighbors_frozen(self, rng):
        vids = small_videos(rng)
        cfg = TrainConfig(**SMALL, epochs=2, lr=1e-2)
        before = [cosine_neighbors(v, cfg.a).indices.copy() for v in vids]
        train(vids, cfg)
        after = [cosine_neighbors(v, cfg.a).indices for v in vids]
        for x, y in zip(before, after):
            np.testing.assert_array_equal(x, y)

    def test_descent_small(self, rng):
        cfg = TrainConfig(**SMALL, epochs=30, lr=3e-3)
        _, _, h = train(small_videos(rng, n=4, t=30), cfg)
        assert np.all(np.isfinite(h.step_loss))
        assert h.epoch_loss[-1] < h.epoch_loss[0]

    def test_divergence_detected(self, rng):
        cfg = TrainConfig(**SMALL, epochs=1)
        vids = small_videos(rng)
        p, f = init_params(6, cfg)
        import vidsum.refine.trainer as tr
        orig = tr.full_loss

        def broken(*a, **k):
            res = orig(*a, **k)
            res.loss = float("nan")
            return res

        tr.full_loss = broken
        try:
            with pytest.raises(TrainingDivergedError):
                train(vids, cfg)
        finally:
            tr.full_loss = orig

    def test_needs_two_videos(self, rng):
        with pytest.raises(EmptyBatchError):
            train(small_videos(rng, n=1), TrainConfig(**SMALL))

    def test_prepare_normalizes_length(self, rng):
        vids = prepare_videos([rng.normal(size=(50, 3)), rng.normal(size=(20, 3))], TrainConfig(length=30))
        assert [v.frames for v in vids] == [30, 30]
        assert all(v.normalized for v in vids)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        cfg = TrainConfig(**SMALL, seed=4)
        p, f = init_params(6, cfg)
        save_checkpoint(tmp_path / "c.vckp", p, f, cfg)
        p2, f2, cfg2 = load_checkpoint(tmp_path / "c.vckp")
        assert cfg2 == cfg
        for a, b in zip(p.named().values(), p2.named().values()):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(f.named().values(), f2.named().values()):
            np.testing.assert_array_equal(a, b)

    def test_corrupt(self):
        with pytest.raises(FormatError):
            decode_checkpoint(b"nope")
        p, f = init_params(6, TrainConfig(**SMALL))
        buf = encode_checkpoint(p, f, TrainConfig(**SMALL))
        with pytest.raises(FormatError):
            decode_checkpoint(buf[:-4])
        with pytest.raises(FormatError):
            decode_checkpoint(buf + b"\0")


class TestRefinedImportance:
    def test_neighbors_from_input(self, rng):
        x = unit_rows(rng, 25, 6)
        p, f = init_params(6, TrainConfig(**SMALL))
        s = refined_importance(x, p, f, ("align",), 0.2, epsilon=0, sigma=0)
        z = project(p, x).data.astype(np.float64)
        la = local_dissimilarity(z, cosine_neighbors(x, 0.2))
        np.testing.assert_allclose(s, (la - la.min()) / (la.max() - la.min()), atol=1e-6)

    def test_filter_needs_params(self, rng):
        p, _ = init_params(6, TrainConfig(**SMALL))
        with pytest.raises(ValueError):
            refined_importance(unit_rows(rng, 10, 6), p, None, ("filter",))
