import numpy as np
import pytest
from hypothesis import given, strategies as st

from nrtr import checkpoint, rng as rngmod
from nrtr import tensor as T
from nrtr.data import CorpusSpec, collate, synth_corpus
from nrtr.errors import ConfigError, IntegrityError
from nrtr.gradcheck import tiny_config
from nrtr.model import NRTR
from nrtr.optim import Adam, average_checkpoints, lrate


def formula(n, d, w):
    return d ** -0.5 * min(n ** -0.5, n * w ** -1.5)


class TestSchedule:
    @pytest.mark.parametrize("n", [1, 200, 400, 800, 1600])
    def test_matches_formula(self, n):
        assert abs(lrate(n, 64, 400) - formula(n, 64, 400)) < 1e-12

    def test_peak_at_d512_warmup16000(self):
        assert abs(lrate(16000, 512, 16000) - 3.494e-4) < 1e-7

    def test_crossover_branches_equal(self):
        w = 400
        assert w ** -0.5 == pytest.approx(w * w ** -1.5, rel=1e-15)
        assert lrate(w, 64, w) == pytest.approx(64 ** -0.5 * w ** -0.5, rel=1e-15)

    def test_first_step_is_linear_branch(self):
        assert lrate(1, 512, 16000) == 512 ** -0.5 * 16000 ** -1.5

    def test_up_then_down(self):
        vals = [lrate(n, 64, 400) for n in range(1, 2001)]
        assert all(a < b for a, b in zip(vals[:399], vals[1:400]))
        assert all(a > b for a, b in zip(vals[399:], vals[400:]))

    def test_step_zero_rejected(self):
        with pytest.raises(ConfigError):
            lrate(0, 64, 400)


def _param(x):
    return T.parameter(np.asarray(x, dtype=np.float64), dtype=np.float64)


class TestAdam:
    def test_first_step_closed_form(self):
        p = _param([1.0, -2.0, 3.0])
        g = np.array([0.5, -0.25, 4.0])
        p.grad = g.copy()
        opt = Adam([("p", p)], lr=0.1)
        opt.step()
        np.testing.assert_allclose(p.data, [1.0, -2.0, 3.0] - 0.1 * g / (np.abs(g) + 1e-9), rtol=1e-14)

    def test_zero_gradient_leaves_params(self):
        p = _param([1.0, 2.0])
        opt = Adam([("p", p)], lr=0.1)
        for _ in range(3):
            p.grad = np.zeros(2)
            opt.step()
        assert p.data.tolist() == [1.0, 2.0]

    def test_zero_lr_is_bitwise_identity(self):
        gen = np.random.default_rng(0)
        start = gen.normal(size=(4, 5)).astype(np.float32)
        p = T.parameter(start)
        opt = Adam([("p", p)], lr=0.0)
        for _ in range(10):
            p.grad = gen.normal(size=(4, 5)).astype(np.float32)
            opt.step()
        assert np.array_equal(p.data, start)

    def test_constant_gradient_steady_state(self):
        p = _param([0.0, 0.0])
        opt = Adam([("p", p)], lr=1e-3)
        for _ in range(1000):
            before = p.data.copy()
            p.grad = np.array([3.0, -0.01])
            opt.step()
        step = p.data - before
        np.testing.assert_allclose(step, [-1e-3, 1e-3], rtol=0.05)

    def test_uses_schedule_and_counts(self):
        p = _param([0.0])
        opt = Adam([("p", p)], lr=lambda n: lrate(n, 64, 400))
        p.grad = np.array([1.0])
        assert opt.step() == lrate(1, 64, 400)
        assert opt.step_count == 1

    def test_missing_gradient_named(self):
        opt = Adam([("w", _param([1.0]))], lr=0.1)
        with pytest.raises(ConfigError, match="'w'"):
            opt.step()

    def test_clip_norm_bounds_first_step(self):
        a, b = _param([0.0]), _param([0.0])
        opt = Adam([("a", a), ("b", b)], lr=1.0, clip_norm=1.0)
        a.grad, b.grad = np.array([30.0]), np.array([40.0])
        opt.step()
        # Adam is scale-invariant in the first step, so clipping leaves the sign-like update
        np.testing.assert_allclose([a.data[0], b.data[0]], [-1.0, -1.0], rtol=1e-6)

    def test_state_round_trip(self):
        p = _param([1.0, 2.0])
        opt = Adam([("p", p)], lr=0.1)
        p.grad = np.array([0.3, -0.7])
        opt.step()
        other = Adam([("p", _param([1.0, 2.0]))], lr=0.1)
        other.load_state_dict(opt.state_dict())
        assert other.step_count == 1
        assert np.array_equal(other.m["p"], opt.m["p"]) and np.array_equal(other.v["p"], opt.v["p"])

    def test_missing_state_rejected(self):
        with pytest.raises(IntegrityError):
            Adam([("p", _param([1.0]))], lr=0.1).load_state_dict({})


class TestAveraging:
    def test_identical_checkpoints_reproduce_input(self, tmp_path):
        gen = np.random.default_rng(1)
        state = {"a": gen.normal(size=(3, 4)).astype(np.float32), "b": gen.normal(size=7).astype(np.float32)}
        paths = []
        for i in range(10):
            paths.append(tmp_path / f"{i}.ckpt")
            checkpoint.save(paths[-1], state)
        avg = average_checkpoints(paths)
        assert all(np.array_equal(avg[k], state[k]) for k in state)

    @given(st.integers(1, 10), st.integers(0, 2**31))
    def test_mean_of_inputs(self, k, seed):
        gen = np.random.default_rng(seed)
        states = [{"w": gen.normal(size=5).astype(np.float32)} for _ in range(k)]
        ref = np.mean([s["w"].astype(np.float64) for s in states], axis=0)
        np.testing.assert_allclose(average_checkpoints(states)["w"], ref, rtol=1e-6)

    def test_optimizer_state_dropped(self):
        avg = average_checkpoints([{"w": np.ones(2, np.float32), "adam.step": np.float32(3)}])
        assert list(avg) == ["w"]

    def test_manifest_mismatch(self):
        with pytest.raises(IntegrityError, match="b"):
            average_checkpoints([{"a": np.ones(2)}, {"a": np.ones(2), "b": np.ones(1)}])
        with pytest.raises(IntegrityError, match="a"):
            average_checkpoints([{"a": np.ones(2)}, {"a": np.ones(3)}])

    def test_empty(self):
        with pytest.raises(ConfigError):
            average_checkpoints([])


def test_one_step_lowers_loss_on_fixed_batch():
    cfg = tiny_config()
    samples = synth_corpus(CorpusSpec(size=16), 123, split=0)
    batch = collate(samples, list(range(8)), 32)
    wins = 0
    for seed in range(100):
        model = NRTR.init(cfg, rngmod.stream(seed, rngmod.INIT))
        opt = Adam(model.named_parameters(), lr=lambda n: lrate(n, cfg.d_model, 400))
        loss = model.loss(batch, training=True, rng=rngmod.stream(seed, rngmod.DROPOUT))
        T.backward(loss, model.parameters())
        opt.step()
        after = model.loss(batch, training=True, rng=rngmod.stream(seed, rngmod.DROPOUT))
        wins += float(after.data) < float(loss.data)
    assert wins >= 95
