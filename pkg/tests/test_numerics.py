import numpy as np
import pytest

from gais.errors import DataError, NumericError, UnsupportedOpError
from gais.numerics import tensor as T
from gais.numerics.checkpoint import load_checkpoint, save_checkpoint
from gais.numerics.optim import AdamState, PlateauScheduler, adam_step
from gais.numerics.tensor import Segments, Tensor, backward

from helpers import gradcheck

rng = np.random.default_rng(0)
SEG_IDS = np.array([0, 0, 1, 2, 2, 2])
SEG = Segments.from_sorted_ids(SEG_IDS, 3)

# (name, fn, inputs) triples; each fn reduces to a scalar with random weights
W4x3 = rng.normal(size=(4, 3))
W4x5 = rng.normal(size=(4, 5))
W2x4x3 = rng.normal(size=(2, 4, 3))
W3x2 = rng.normal(size=(3, 2))
OPS = [
    ("add", lambda t: T.sum_((t["a"] + t["b"]) * W4x3), dict(a=rng.normal(size=(4, 3)), b=rng.normal(size=(3,)))),
    ("sub", lambda t: T.sum_((t["a"] - t["b"]) * W4x3), dict(a=rng.normal(size=(4, 3)), b=rng.normal(size=(4, 1)))),
    ("mul", lambda t: T.sum_(t["a"] * t["b"]), dict(a=rng.normal(size=(4, 3)), b=rng.normal(size=(4, 3)))),
    ("div", lambda t: T.sum_(t["a"] / t["b"]), dict(a=rng.normal(size=(4, 3)), b=rng.uniform(1, 2, (4, 3)))),
    ("neg", lambda t: T.sum_(-t["a"] * W4x3), dict(a=rng.normal(size=(4, 3)))),
    ("exp", lambda t: T.sum_(T.exp(t["a"]) * W4x3), dict(a=rng.normal(size=(4, 3)))),
    ("log", lambda t: T.sum_(T.log(t["a"]) * W4x3), dict(a=rng.uniform(0.5, 2, (4, 3)))),
    ("sqrt", lambda t: T.sum_(T.sqrt(t["a"]) * W4x3), dict(a=rng.uniform(0.5, 2, (4, 3)))),
    ("abs", lambda t: T.sum_(T.abs_(t["a"]) * W4x3), dict(a=rng.uniform(0.2, 1, (4, 3)) * rng.choice([-1, 1], (4, 3)))),
    ("sigmoid", lambda t: T.sum_(T.sigmoid(t["a"]) * W4x3), dict(a=rng.normal(size=(4, 3)))),
    ("leaky_relu", lambda t: T.sum_(T.leaky_relu(t["a"]) * W4x3),
     dict(a=rng.uniform(0.1, 1, (4, 3)) * rng.choice([-1, 1], (4, 3)))),
    ("elu", lambda t: T.sum_(T.elu(t["a"]) * W4x3), dict(a=rng.uniform(0.1, 1, (4, 3)) * rng.choice([-1, 1], (4, 3)))),
    ("matmul", lambda t: T.sum_((t["a"] @ t["b"]) * W4x3), dict(a=rng.normal(size=(4, 5)), b=rng.normal(size=(5, 3)))),
    ("matmul3d", lambda t: T.sum_(T.matmul(t["a"], t["b"]) * W2x4x3),
     dict(a=rng.normal(size=(2, 4, 5)), b=rng.normal(size=(2, 5, 3)))),
    ("matvec", lambda t: T.sum_((t["a"] @ t["b"]) * W4x3[:, 0]), dict(a=rng.normal(size=(4, 5)), b=rng.normal(size=(5,)))),
    ("reshape", lambda t: T.sum_(T.reshape(t["a"], (3, 4)) * W4x3.T), dict(a=rng.normal(size=(4, 3)))),
    ("transpose", lambda t: T.sum_(T.transpose(t["a"], (1, 0)) * W4x3.T), dict(a=rng.normal(size=(4, 3)))),
    ("concat", lambda t: T.sum_(T.concat([t["a"], t["b"]], axis=1) * W4x5),
     dict(a=rng.normal(size=(4, 3)), b=rng.normal(size=(4, 2)))),
    ("sum_axis", lambda t: T.sum_(T.sum_(t["a"], axis=0) * W4x3[0]), dict(a=rng.normal(size=(4, 3)))),
    ("mean", lambda t: T.sum_(T.mean(t["a"], axis=1, keepdims=True) * W4x3), dict(a=rng.normal(size=(4, 3)))),
    ("gather", lambda t: T.sum_(T.gather(t["a"], [0, 2, 2, 3]) * W4x3), dict(a=rng.normal(size=(4, 3)))),
    ("softmax", lambda t: T.sum_(T.softmax(t["a"], axis=1) * W4x3), dict(a=rng.normal(size=(4, 3)))),
    ("cross_entropy", lambda t: T.cross_entropy(t["a"], np.array([0, 2, 1, 1]), rows=[0, 1, 3]),
     dict(a=rng.normal(size=(4, 3)))),
    ("segment_sum", lambda t: T.sum_(T.segment_sum(t["a"], SEG) * W3x2),
     dict(a=rng.normal(size=(6, 2)))),
    ("segment_mean", lambda t: T.sum_(T.segment_mean(t["a"], SEG) * np.arange(1.0, 7.0).reshape(3, 2)),
     dict(a=rng.normal(size=(6, 2)))),
    ("segment_expand", lambda t: T.sum_(T.segment_expand(t["a"], SEG) * np.arange(1.0, 13.0).reshape(6, 2)),
     dict(a=rng.normal(size=(3, 2)))),
    ("segment_softmax", lambda t: T.sum_(T.segment_softmax(t["a"], SEG) * np.arange(1.0, 13.0).reshape(6, 2)),
     dict(a=rng.normal(size=(6, 2)))),
    ("attend", lambda t: T.sum_(T.attend(t["alpha"], t["z"], np.array([1, 3, 0, 0, 2, 3]), SEG)
                                * np.arange(1.0, 13.0).reshape(3, 2, 2)),
     dict(alpha=rng.uniform(size=(6, 2)), z=rng.normal(size=(4, 2, 2)))),
]


class TestGradients:
    @pytest.mark.parametrize("name,fn,inputs", OPS, ids=[o[0] for o in OPS])
    def test_gradcheck(self, name, fn, inputs):
        assert gradcheck(fn, inputs) < 1e-4

    def test_linear_map(self):
        W = Tensor(np.zeros((2, 3)), requires_grad=True)
        x = np.array([1.0, 2.0, 3.0])
        backward(T.sum_(W @ Tensor(x)))
        np.testing.assert_allclose(W.grad, np.tile(x, (2, 1)))

    def test_sigmoid_at_zero(self):
        a = Tensor(np.zeros(1), requires_grad=True)
        backward(T.sum_(T.sigmoid(a)))
        assert a.grad[0] == pytest.approx(0.25)

    def test_shared_node_accumulates(self):
        a = Tensor(np.array([3.0]), requires_grad=True)
        backward(T.sum_(a * a + a))
        assert a.grad[0] == pytest.approx(7.0)

    def test_unrecorded_op_named(self):
        a = Tensor(np.ones(2), requires_grad=True)
        bad = Tensor(np.ones(2), requires_grad=True, op="mystery", parents=(a,))
        with pytest.raises(UnsupportedOpError, match="mystery"):
            backward(T.sum_(bad))

    def test_non_scalar_loss(self):
        with pytest.raises(NumericError):
            backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


class TestAttendPaths:
    def test_sparse_matches_small(self, monkeypatch):
        r = np.random.default_rng(7)
        ids = np.sort(r.integers(0, 9, 40))
        ids[:9] = np.arange(9)
        ids = np.sort(ids)
        seg = Segments.from_sorted_ids(ids, 9)
        src = r.integers(0, 12, 40)
        alpha0, z0 = r.uniform(size=(40, 3)), r.normal(size=(12, 3, 4))
        G = r.normal(size=(9, 3, 4))

        def run():
            alpha = Tensor(alpha0, requires_grad=True)
            z = Tensor(z0, requires_grad=True)
            out = T.attend(alpha, z, src, seg)
            T.sum_(out * G).backward()
            return out.data, alpha.grad, z.grad

        small = run()
        monkeypatch.setattr(T, "SMALL_ATTEND", 0)
        sparse = run()
        for a, b in zip(small, sparse):
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestStability:
    def test_sigmoid_extremes(self):
        out = T.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[2] == 1.0

    def test_softmax_large_logits(self):
        out = T.softmax(Tensor(np.array([[1000.0, 0.0, -1000.0]]))).data
        assert np.all(np.isfinite(out)) and out[0, 0] == pytest.approx(1.0)

    def test_segment_softmax_rows_sum_to_one(self):
        x = Tensor(rng.normal(scale=50, size=(6, 3)))
        s = T.segment_softmax(x, SEG).data
        np.testing.assert_allclose(SEG.reduce_sum(s), 1.0, atol=1e-12)

    def test_empty_segment_rejected(self):
        with pytest.raises(NumericError, match="node 1"):
            Segments.from_sorted_ids(np.array([0, 0, 2]), 3)

    def test_unsorted_ids_rejected(self):
        with pytest.raises(ValueError):
            Segments.from_sorted_ids(np.array([1, 0]), 2)


class TestAdam:
    def test_zero_gradient_no_decay(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState(weight_decay=0.0))
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = {"w": np.array([0.5])}
        st = AdamState(weight_decay=0.0)
        adam_step(p, {"w": np.array([1.0])}, st)
        # m_hat = 1, v_hat = 1 after bias correction
        assert p["w"][0] == pytest.approx(0.5 - st.lr / (1.0 + st.eps), abs=1e-15)

    def test_decay_shrinks(self):
        p = {"w": np.array([2.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        assert abs(p["w"][0]) < 2.0 and abs(p["w"][1]) < 2.0

    def test_closed_form_two_steps(self):
        st = AdamState(lr=0.1, weight_decay=0.0)
        p = {"w": np.array([0.0])}
        for g in (1.0, -3.0):
            adam_step(p, {"w": np.array([g])}, st)
        m = 0.9 * 0.1 * 1.0 + 0.1 * -3.0
        v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
        expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert p["w"][0] == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="w"):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())

    def test_deterministic(self):
        def run():
            r = np.random.default_rng(7)
            p = {"w": r.normal(size=(3, 3))}
            st = AdamState()
            for _ in range(20):
                adam_step(p, {"w": r.normal(size=(3, 3))}, st)
            return p["w"]
        np.testing.assert_array_equal(run(), run())


class TestScheduler:
    def test_reduces_after_patience(self):
        s = PlateauScheduler()
        s.step(1.0)
        lrs = [s.step(1.0) for _ in range(26)]
        assert lrs[23] == 5e-3 and lrs[24] == pytest.approx(3.75e-3)
        assert lrs[25] == pytest.approx(3.75e-3)

    def test_improvement_resets(self):
        s = PlateauScheduler()
        s.step(1.0)
        for _ in range(24):
            s.step(1.0)
        assert s.step(0.5) == 5e-3 and s.wait == 0

    def test_floor(self):
        s = PlateauScheduler(lr=1e-5)
        s.step(1.0)
        for _ in range(100):
            assert s.step(1.0) == 1e-5

    def test_threshold(self):
        s = PlateauScheduler()
        s.step(1.0)
        s.step(1.0 - 1e-10)
        assert s.wait == 1

    def test_non_finite(self):
        with pytest.raises(ValueError):
            PlateauScheduler().step(float("nan"))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = {"b": rng.normal(size=(3,)), "a.W": rng.normal(size=(2, 4)), "s": np.array(1.5)}
        save_checkpoint(tmp_path / "m", params, {"k": 1})
        back, extra = load_checkpoint(tmp_path / "m")
        assert extra == {"k": 1} and set(back) == set(params)
        for k in params:
            np.testing.assert_array_equal(back[k], params[k])

    def test_little_endian_layout(self, tmp_path):
        save_checkpoint(tmp_path / "m", {"x": np.array([1.0, 2.0])})
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw == np.array([1.0, 2.0], dtype="<f8").tobytes()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_checkpoint(tmp_path / "nope")
