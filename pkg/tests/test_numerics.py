import tempfile
import unittest
from pathlib import Path

import numpy as np

from lanecast.errors import MissingGradient, NonScalarLoss, ParseError, SchemaVersionMismatch, ShapeMismatch, StaleTape
from lanecast.numerics import tensor as T
from lanecast.numerics.checkpoint import (
    FORMAT_VERSION,
    config_path,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from lanecast.numerics.nn import Conv1d, Conv2d, DecoderLayer, EncoderLayer, LayerNorm, Linear, MLP
from lanecast.numerics.optim import SGD
from lanecast.numerics.tensor import Tensor


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def assert_gradients(case, loss_fn, params, samples=6, eps=1e-6, rtol=1e-5, atol=1e-8, seed=0):
    """Compare analytic gradients to central differences on a few entries of each parameter."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    for p in params:
        case.assertIsNotNone(p.grad)
        flat = p.values.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        for i in picks:
            original = flat[i]
            with T.no_grad():
                flat[i] = original + eps
                up = loss_fn().item()
                flat[i] = original - eps
                down = loss_fn().item()
            flat[i] = original
            numeric = (up - down) / (2 * eps)
            analytic = p.grad.reshape(-1)[i]
            error = abs(numeric - analytic)
            if error > atol:
                case.assertLess(error / max(abs(numeric) + abs(analytic), 1e-12), rtol,
                                f"entry {i}: analytic {analytic} vs numeric {numeric}")


class ElementaryOpTests(unittest.TestCase):
    def test_square_sum_gradient(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(T.mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0])

    def test_softmax_of_zeros_is_uniform(self):
        out = T.softmax(Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.values, np.full(3, 1.0 / 3.0))

    def test_softmax_is_stable_for_large_logits(self):
        out = T.softmax(Tensor([1000.0, 1000.0, -1000.0]))
        self.assertTrue(np.isfinite(out.values).all())
        np.testing.assert_allclose(out.values, [0.5, 0.5, 0.0], atol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        out = T.softmax(Tensor(rng.normal(0.0, 5.0, (20, 7))), axis=-1).values
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        self.assertTrue((out > 0).all())

    def test_all_pass_mask_matches_no_mask(self):
        rng = np.random.default_rng(4)
        q, k, v = (Tensor(rng.normal(size=(2, 5, 4))) for _ in range(3))
        masked = T.scaled_dot_product_attention(q, k, v, np.ones((5, 5), dtype=bool))
        plain = T.scaled_dot_product_attention(q, k, v)
        np.testing.assert_array_equal(masked.values, plain.values)

    def test_conv1d_output_length(self):
        self.assertEqual(T.conv_output_length(18, 3, 2), 8)
        rng = np.random.default_rng(0)
        out = T.conv1d(Tensor(rng.normal(size=(2, 2, 18))), Tensor(rng.normal(size=(4, 2, 3))), None, stride=2)
        self.assertEqual(out.shape, (2, 4, 8))

    def test_multiplying_by_mask_zeroes_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.tsum(T.mul(x, np.array([1.0, 0.0, 1.0]))).backward()
        np.testing.assert_allclose(x.grad, [1.0, 0.0, 1.0])

    def test_constant_loss_gives_zero_gradient(self):
        w = Tensor([1.0, -3.0], requires_grad=True)
        T.tsum(T.mul(w, 0.0)).backward()
        np.testing.assert_allclose(w.grad, [0.0, 0.0])

    def test_broadcast_mismatch_raises(self):
        with self.assertRaises(ShapeMismatch):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
        with self.assertRaises(ShapeMismatch):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_non_scalar_backward_raises(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(NonScalarLoss):
            T.mul(w, 2.0).backward()

    def test_second_backward_raises(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.square(w))
        loss.backward()
        with self.assertRaises(StaleTape):
            loss.backward()

    def test_no_grad_builds_no_graph(self):
        w = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            out = T.mul(w, 3.0)
        self.assertFalse(out.requires_grad)


class GradientCheckTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_pointwise_and_reduction_ops(self):
        x = _param(self.rng, 3, 4)
        y = Tensor(self.rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)

        def loss():
            a = T.div(T.exp(T.mul(x, 0.3)), y)
            b = T.log(T.add(T.square(y), 1.0))
            return T.mean(T.sub(a, b)) + T.tsum(T.mean(x, axis=0) * 0.7)

        assert_gradients(self, loss, [x, y])

    def test_shape_ops_and_concat(self):
        x = _param(self.rng, 2, 3, 4)
        y = _param(self.rng, 2, 3, 1)

        def loss():
            joined = T.concat([x, y], axis=-1)
            moved = T.transpose(T.swapaxes(joined, 0, 1), (0, 2, 1))
            picked = T.reshape(moved[:, 1:, :], (-1,))
            return T.tsum(T.square(picked))

        assert_gradients(self, loss, [x, y])

    def test_matmul_linear_and_relu(self):
        x = _param(self.rng, 2, 5, 3)
        w = _param(self.rng, 3, 4)
        b = _param(self.rng, 4)

        def loss():
            return T.tsum(T.square(T.relu(T.linear(x, w, b)))) + T.tsum(T.matmul(x, w))

        assert_gradients(self, loss, [x, w, b])

    def test_softmax_layer_norm_and_masked_fill(self):
        x = _param(self.rng, 3, 5)
        gamma = _param(self.rng, 5)
        beta = _param(self.rng, 5)
        keep = self.rng.random((3, 5)) > 0.3
        keep[:, 0] = True
        target = self.rng.normal(size=(3, 5))

        def loss():
            normed = T.layer_norm(x, gamma, beta)
            probs = T.softmax(T.masked_fill(normed, keep, -1e9), axis=-1)
            return T.tsum(T.mul(probs, target))

        assert_gradients(self, loss, [x, gamma, beta])

    def test_cross_entropy(self):
        logits = _param(self.rng, 4, 3)
        labels = np.array([0, 2, 1, 1])
        assert_gradients(self, lambda: T.cross_entropy(T.softmax(logits), labels), [logits])

    def test_conv1d_and_conv2d(self):
        x1 = _param(self.rng, 2, 2, 18)
        w1 = _param(self.rng, 3, 2, 3)
        b1 = _param(self.rng, 3)
        x2 = _param(self.rng, 1, 2, 9, 9)
        w2 = _param(self.rng, 2, 2, 3, 3)
        b2 = _param(self.rng, 2)

        def loss():
            one = T.tsum(T.square(T.conv1d(x1, w1, b1, stride=2)))
            two = T.tsum(T.square(T.conv2d(x2, w2, b2, stride=2)))
            return one + two

        assert_gradients(self, loss, [x1, w1, b1, x2, w2, b2])

    def test_attention_with_causal_mask(self):
        q = _param(self.rng, 2, 4, 6)
        k = _param(self.rng, 2, 4, 6)
        v = _param(self.rng, 2, 4, 6)
        target = self.rng.normal(size=(2, 4, 6))
        mask = T.causal_mask(4)

        def loss():
            return T.tsum(T.mul(T.scaled_dot_product_attention(q, k, v, mask), target))

        assert_gradients(self, loss, [q, k, v])

    def test_encoder_and_decoder_layers(self):
        encoder = EncoderLayer(8, 2, 16, self.rng)
        decoder = DecoderLayer(8, 2, 16, self.rng)
        history = Tensor(self.rng.normal(size=(2, 5, 8)))
        target = Tensor(self.rng.normal(size=(2, 3, 8)))
        weights = self.rng.normal(size=(2, 3, 8))

        def loss():
            memory = encoder(history)
            return T.tsum(T.mul(decoder(target, memory, T.causal_mask(3)), weights))

        assert_gradients(self, loss, encoder.parameters() + decoder.parameters(), samples=3)

    def test_small_modules(self):
        mlp = MLP(4, (6, 2), self.rng)
        norm = LayerNorm(4)
        conv1 = Conv1d(2, 3, 3, 2, self.rng)
        conv2 = Conv2d(1, 2, 3, 2, self.rng)
        x = Tensor(self.rng.normal(size=(3, 4)))
        seq = Tensor(self.rng.normal(size=(2, 2, 18)))
        img = Tensor(self.rng.normal(size=(1, 1, 9, 9)))

        def loss():
            return (T.tsum(T.square(mlp(norm(x)))) + T.tsum(T.square(conv1(seq)))
                    + T.tsum(T.square(conv2(img))))

        params = mlp.parameters() + norm.parameters() + conv1.parameters() + conv2.parameters()
        assert_gradients(self, loss, params, samples=4)


class ModuleStateTests(unittest.TestCase):
    def test_state_dict_round_trip(self):
        rng = np.random.default_rng(3)
        source, target = MLP(3, (4, 2), rng), MLP(3, (4, 2), rng)
        target.load_state_dict(source.state_dict())
        x = Tensor(rng.normal(size=(5, 3)))
        np.testing.assert_array_equal(source(x).values, target(x).values)

    def test_state_dict_mismatch_raises(self):
        rng = np.random.default_rng(3)
        layer = Linear(3, 2, rng)
        with self.assertRaises(ShapeMismatch):
            layer.load_state_dict({})
        state = layer.state_dict()
        state["weight"] = np.zeros((2, 3))
        with self.assertRaises(ShapeMismatch):
            layer.load_state_dict(state)


class OptimizerTests(unittest.TestCase):
    def test_single_step_and_decay(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([2.0])
        opt = SGD([p], learning_rate=0.5, decay=0.9999)
        opt.step()
        np.testing.assert_allclose(p.values, [0.0])
        self.assertAlmostEqual(opt.learning_rate, 0.49995)
        self.assertIsNone(p.grad)
        self.assertEqual(opt.step_count, 1)

    def test_learning_rate_after_ten_thousand_steps(self):
        p = Tensor([0.0], requires_grad=True)
        opt = SGD([p], learning_rate=0.0005, decay=0.9999)
        for _ in range(10000):
            p.grad = np.zeros(1)
            opt.step()
        self.assertAlmostEqual(opt.learning_rate, 1.839e-4, delta=1e-7)

    def test_zero_gradient_leaves_parameters(self):
        p = Tensor([1.5, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        SGD([p], learning_rate=0.1).step()
        np.testing.assert_array_equal(p.values, [1.5, -2.0])

    def test_missing_gradient_raises(self):
        p = Tensor([1.0], requires_grad=True, name="w")
        with self.assertRaises(MissingGradient):
            SGD([p]).step()

    def test_gradient_clipping(self):
        p = Tensor([0.0, 0.0], requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        SGD([p], learning_rate=1.0, grad_clip=1.0).step()
        np.testing.assert_allclose(p.values, [-0.6, -0.8])


class CheckpointTests(unittest.TestCase):
    def test_round_trip_with_config(self):
        tensors = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array(2.5)}
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / "model.ckpt", tensors, {"d_model": 64, "map_mode": "lane"})
            self.assertTrue(config_path(path).exists())
            loaded, config = load_checkpoint(path)
        self.assertEqual(list(loaded), ["a.weight", "b"])
        np.testing.assert_array_equal(loaded["a.weight"], tensors["a.weight"])
        self.assertEqual(loaded["b"].shape, ())
        self.assertEqual(config["map_mode"], "lane")
        self.assertEqual(config["d_model"], "64")

    def test_bad_magic(self):
        with self.assertRaises(ParseError):
            decode_checkpoint(b"NOPE" + encode_checkpoint({})[4:])

    def test_version_mismatch(self):
        blob = bytearray(encode_checkpoint({"w": np.ones(2)}))
        blob[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
        with self.assertRaises(SchemaVersionMismatch):
            decode_checkpoint(bytes(blob))

    def test_truncated_blob(self):
        blob = encode_checkpoint({"w": np.ones(4)})
        with self.assertRaises(ParseError):
            decode_checkpoint(blob[:-3])

    def test_missing_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ParseError):
                load_checkpoint(Path(tmp) / "absent.ckpt")


if __name__ == "__main__":
    unittest.main()
