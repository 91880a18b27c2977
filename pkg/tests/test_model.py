import math
import unittest

import numpy as np

from lanecast.config import ModelConfig, TrainConfig
from lanecast.errors import (
    ConfigError,
    InvariantViolation,
    MaskedGroundTruthLane,
    MaskedLaneRequested,
    ShapeMismatch,
    WrongRasterSize,
)
from lanecast.lanes.processing import LEFT, MIDDLE, RIGHT
from lanecast.model.loss import compute_loss, training_loss
from lanecast.model.mtpp import MTPP, OCCUPANCY_KERNELS, OCCUPANCY_STRIDES, PredictionOutput
from lanecast.model.training import evaluate_loss, fit, make_optimizer, train_step
from lanecast.numerics import tensor as T
from lanecast.numerics.tensor import Tensor, no_grad
from tests.fixtures import toy_samples


def toy_config(**overrides) -> ModelConfig:
    values = dict(d_model=8, n_enc_layers=1, n_dec_layers=1, n_heads=2, ff_dim=16, fusion_dim=16,
                  map_fc_dim=8, classifier_dims=(16, 3), generator_dims=(16, 2), occupancy_channels=2,
                  lane_channels=4, history_frames=4, horizon_frames=4)
    values.update(overrides)
    return ModelConfig(**values)


class ArchitectureTests(unittest.TestCase):
    def test_occupancy_conv_sizes(self):
        sizes, size = [], 64
        for kernel, stride in zip(OCCUPANCY_KERNELS, OCCUPANCY_STRIDES):
            size = T.conv_output_length(size, kernel, stride)
            sizes.append(size)
        self.assertEqual(sizes, [30, 13, 9, 7])
        model = MTPP(toy_config(map_mode="occupancy"))
        self.assertEqual(model.occupancy_encoder.fc.weight.shape, (2 * 7 * 7, 8))

    def test_lane_encoder_feature_size(self):
        model = MTPP(toy_config())
        self.assertEqual(model.lane_encoder.fc.weight.shape, (4 * 8, 8))
        per_lane, flat = model.encode_map_lane(toy_samples(2).lanes)
        self.assertEqual(per_lane.shape, (2, 3, 8))
        self.assertEqual(flat.shape, (2, 24))

    def test_unused_blocks_are_not_built(self):
        none = MTPP(toy_config(map_mode="none"))
        occupancy = MTPP(toy_config(map_mode="occupancy"))
        self.assertFalse(hasattr(none, "classifier"))
        self.assertFalse(hasattr(none, "lane_encoder"))
        self.assertFalse(hasattr(occupancy, "lane_encoder"))
        self.assertTrue(hasattr(occupancy, "occupancy_encoder"))

    def test_same_seed_same_weights(self):
        first, second = MTPP(toy_config(), seed=3), MTPP(toy_config(), seed=3)
        for (name, a), b in zip(first.state_dict().items(), second.state_dict().values()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_config_presets_and_validation(self):
        full = ModelConfig.full_scale(map_mode="occupancy")
        self.assertEqual((full.d_model, full.n_enc_layers, full.n_heads), (512, 6, 8))
        self.assertEqual(full.map_mode, "occupancy")
        with self.assertRaises(ConfigError):
            ModelConfig(d_model=10, n_heads=4)
        with self.assertRaises(ConfigError):
            ModelConfig(alpha=1.5)

    def test_input_shape_errors(self):
        model = MTPP(toy_config(map_mode="occupancy"))
        with self.assertRaises(ShapeMismatch):
            model.encode_history(np.zeros((1, 1, 2)))
        with self.assertRaises(WrongRasterSize):
            model.encode_map_occupancy(np.zeros((1, 32, 32), dtype=bool))
        with self.assertRaises(ShapeMismatch):
            MTPP(toy_config()).encode_map_lane(np.zeros((1, 2, 18, 2)))


class PredictionTests(unittest.TestCase):
    def test_output_shapes(self):
        prediction = MTPP(toy_config()).predict_batch(toy_samples(5, horizon_frames=4))
        self.assertEqual(prediction.trajectories.shape, (5, 3, 4, 2))
        self.assertEqual(prediction.lane_probs.shape, (5, 3))
        np.testing.assert_allclose(prediction.lane_probs.sum(axis=1), 1.0, atol=1e-12)
        self.assertEqual(prediction.selected_trajectories().shape, (5, 4, 2))

    def test_masked_slots_get_no_probability_or_path(self):
        model = MTPP(toy_config())
        for mask in ((True, True, True), (False, True, True), (True, True, False), (False, True, False)):
            samples = toy_samples(3, horizon_frames=4, mask=mask)
            prediction = model.predict_batch(samples)
            hidden = ~np.asarray(mask)
            self.assertTrue((prediction.lane_probs[:, hidden] == 0.0).all(), mask)
            self.assertTrue((prediction.trajectories[:, hidden] == 0.0).all(), mask)
            self.assertTrue(np.asarray(mask)[prediction.selected].all(), mask)
            np.testing.assert_allclose(prediction.lane_probs.sum(axis=1), 1.0, atol=1e-12)

    def test_non_lane_modes_commit_to_middle(self):
        for map_mode in ("none", "occupancy"):
            prediction = MTPP(toy_config(map_mode=map_mode)).predict_batch(toy_samples(2, horizon_frames=4))
            np.testing.assert_array_equal(prediction.lane_probs, [[0.0, 1.0, 0.0]] * 2)
            np.testing.assert_array_equal(prediction.mask, [[False, True, False]] * 2)
            np.testing.assert_array_equal(prediction.selected, [MIDDLE, MIDDLE])

    def test_middle_slot_must_be_present(self):
        model = MTPP(toy_config())
        samples = toy_samples(1, horizon_frames=4)
        with no_grad():
            fused, _ = model.encode(samples.history, samples.lanes, samples.raster)
            with self.assertRaises(InvariantViolation):
                model.classify_lane(fused, np.array([[True, False, True]]))

    def test_decoding_masked_lane_raises(self):
        model = MTPP(toy_config())
        samples = toy_samples(1, horizon_frames=4, mask=(True, True, False))
        with no_grad():
            fused, per_lane = model.encode(samples.history, samples.lanes, samples.raster)
            model.decode_trajectory(fused, per_lane, LEFT, samples.lane_mask)
            with self.assertRaises(MaskedLaneRequested):
                model.decode_trajectory(fused, per_lane, RIGHT, samples.lane_mask)

    def test_prediction_output_rejects_masked_selection(self):
        with self.assertRaises(InvariantViolation):
            PredictionOutput(np.zeros((3, 4, 2)), np.array([0.0, 1.0, 0.0]), np.array([False, True, False]), 0)
        with self.assertRaises(InvariantViolation):
            PredictionOutput(np.zeros((3, 4, 2)), np.array([0.1, 0.9, 0.0]), np.array([False, True, True]), 1)


class DecoderFeedbackTests(unittest.TestCase):
    def setUp(self):
        self.model = MTPP(toy_config())
        self.samples = toy_samples(2, horizon_frames=4)

    def _encode(self):
        fused, per_lane = self.model.encode(self.samples.history, self.samples.lanes, self.samples.raster)
        return fused, per_lane[:, MIDDLE, :]

    def test_autoregressive_steps_see_previous_outputs(self):
        trace = []
        with no_grad():
            fused, lane = self._encode()
            out = self.model.decode(fused, lane, trace=trace).values
        self.assertEqual(len(trace), 4)
        for step, fed in enumerate(trace):
            self.assertEqual(fed.shape, (2, step + 1, 2))
            np.testing.assert_array_equal(fed[:, 0], 0.0)
            np.testing.assert_allclose(fed[:, 1:], out[:, :step])

    def test_step_hook_replaces_fed_back_position(self):
        trace = []
        replacement = np.full((2, 1, 2), 7.0)
        with no_grad():
            fused, lane = self._encode()
            out = self.model.decode(fused, lane, trace=trace, on_step=lambda step, position: Tensor(replacement))
        np.testing.assert_array_equal(out.values, 7.0)
        np.testing.assert_array_equal(trace[-1][:, 1:], 7.0)

    def test_teacher_forcing_is_causal(self):
        teacher = self.samples.future.copy()
        changed = teacher.copy()
        changed[:, 2] += 3.0
        trace = []
        with no_grad():
            fused, lane = self._encode()
            base = self.model.decode(fused, lane, teacher=teacher, trace=trace).values
            other = self.model.decode(fused, lane, teacher=changed).values
        self.assertEqual(len(trace), 1)
        np.testing.assert_array_equal(trace[0][:, 1:], teacher[:, :-1])
        np.testing.assert_allclose(other[:, :3], base[:, :3], atol=1e-12)
        self.assertFalse(np.allclose(other[:, 3], base[:, 3]))

    def test_teacher_shape_checked(self):
        with no_grad():
            fused, lane = self._encode()
            with self.assertRaises(ShapeMismatch):
                self.model.decode(fused, lane, teacher=np.zeros((2, 3, 2)))


class LossTests(unittest.TestCase):
    def test_unit_offset_and_cross_entropy(self):
        pred = PredictionOutput(np.zeros((3, 4, 2)), np.array([0.2, 0.5, 0.3]), np.ones(3, dtype=bool), 1)
        gt = np.tile([1.0, 0.0], (4, 1))
        value = compute_loss(pred, gt, MIDDLE, alpha=0.3)
        self.assertAlmostEqual(value.mse_part, 1.0)
        self.assertAlmostEqual(value.ce_part, math.log(2.0))
        self.assertAlmostEqual(value.total, 0.3 * 1.0 + 0.7 * math.log(2.0))

    def test_alpha_extremes(self):
        pred = PredictionOutput(np.zeros((3, 4, 2)), np.array([0.2, 0.5, 0.3]), np.ones(3, dtype=bool), 1)
        gt = np.zeros((4, 2))
        self.assertAlmostEqual(compute_loss(pred, gt, LEFT, alpha=1.0).total, 0.0)
        self.assertAlmostEqual(compute_loss(pred, gt, LEFT, alpha=0.0).total, -math.log(0.2))

    def test_masked_ground_truth_lane(self):
        pred = PredictionOutput(np.zeros((3, 4, 2)), np.array([0.5, 0.5, 0.0]), np.array([True, True, False]), 1)
        with self.assertRaises(MaskedGroundTruthLane):
            compute_loss(pred, np.zeros((4, 2)), RIGHT, alpha=0.5)

    def test_batch_loss_combines_terms(self):
        model = MTPP(toy_config(alpha=0.25))
        samples = toy_samples(3, horizon_frames=4)
        result = model.forward_train(samples)
        total, value = training_loss(result.positions, result.lane_probs, samples.future, samples.gt_lane,
                                     samples.lane_mask, 0.25)
        self.assertAlmostEqual(value.total, 0.25 * value.mse_part + 0.75 * value.ce_part, places=10)
        total.backward()
        self.assertTrue(all(p.grad is not None for p in model.parameters()))

    def test_batch_loss_rejects_masked_label(self):
        model = MTPP(toy_config())
        samples = toy_samples(2, horizon_frames=4, mask=(True, True, False), gt_lane=RIGHT)
        with self.assertRaises(MaskedGroundTruthLane):
            model_result = model.forward_train(samples.subset([0]))
            training_loss(model_result.positions, model_result.lane_probs, samples.future[:1],
                          samples.gt_lane[:1], samples.lane_mask[:1], 0.5)


class TrainingTests(unittest.TestCase):
    def test_single_sample_overfits(self):
        model = MTPP(toy_config(map_mode="none", alpha=1.0, regression_mode="AR"), seed=1)
        sample = toy_samples(1, horizon_frames=4, speed=0.5)
        optimizer = make_optimizer(model, TrainConfig(learning_rate=0.01, decay=1.0, grad_clip=5.0))
        before = evaluate_loss(model, sample).total
        for _ in range(200):
            train_step(model, sample, optimizer)
        after = evaluate_loss(model, sample).total
        self.assertLessEqual(after, 0.1 * before)

    def test_nar_training_step_runs(self):
        model = MTPP(toy_config(regression_mode="NAR"))
        samples = toy_samples(4, horizon_frames=4)
        optimizer = make_optimizer(model, TrainConfig())
        value = train_step(model, samples, optimizer)
        self.assertTrue(np.isfinite(value.total))
        self.assertEqual(optimizer.step_count, 1)

    def test_zero_epochs_keeps_initial_weights(self):
        model = MTPP(toy_config())
        initial = model.state_dict()
        result = fit(model, toy_samples(2, horizon_frames=4), None, TrainConfig(epochs=0))
        self.assertEqual(result.best_epoch, 0)
        self.assertEqual(result.history, [])
        for name, values in initial.items():
            np.testing.assert_array_equal(result.best_state[name], values)

    def test_fit_tracks_validation_fde(self):
        model = MTPP(toy_config(horizon_frames=4))
        epochs = []
        result = fit(model, toy_samples(4, horizon_frames=4), toy_samples(2, horizon_frames=4, seed=1),
                     TrainConfig(epochs=2, batch_size=2), on_epoch=lambda epoch, row: epochs.append(epoch))
        self.assertEqual(epochs, [1, 2])
        self.assertIn(result.best_epoch, (1, 2))
        self.assertEqual(list(result.history_frame()["epoch"]), [1, 2])
        self.assertIn("val_fde", result.history_frame().columns)


if __name__ == "__main__":
    unittest.main()
