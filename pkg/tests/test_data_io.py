import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from lanecast.config import GeneratorConfig
from lanecast.core.geometry import angle_between, point_to_polyline_distance
from lanecast.core.types import Direction2, Scene
from lanecast.data.dataset import SampleSet, build_samples, filter_summary
from lanecast.data.generator import generate, generate_scene
from lanecast.data.scene_io import dumps_scene, load_scene, load_scenes, loads_scene, save_scene
from lanecast.data.split import split, split_counts
from lanecast.errors import ConfigError, EmptyDataset, InvalidTemplate, ParseError, SchemaVersionMismatch, TooFewScenes
from lanecast.lanes.processing import MIDDLE
from tests.fixtures import eastbound_agent, make_agent, make_scene, three_lane_road


def _route_polyline(scene: Scene, agent) -> np.ndarray:
    chunks = {c.chunk_id: c for c in scene.lane_chunks}
    return np.vstack([chunks[c].points for c in agent.route])


class SceneFileTests(unittest.TestCase):
    def test_round_trip_is_byte_identical(self):
        scene = generate_scene(0, GeneratorConfig(seed=5))
        with tempfile.TemporaryDirectory() as tmp:
            first = save_scene(scene, Path(tmp) / "scene_00000.json")
            loaded = load_scene(first)
            second = save_scene(loaded, Path(tmp) / "copy.json")
            self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(loaded.scene_id, scene.scene_id)
        self.assertEqual([a.agent_id for a in loaded.agents], [a.agent_id for a in scene.agents])
        np.testing.assert_array_equal(loaded.occupancy.grid, scene.occupancy.grid)

    def test_missing_agents_key_is_named(self):
        with self.assertRaises(ParseError) as ctx:
            loads_scene(json.dumps({"scene_id": "x", "lane_chunks": []}))
        self.assertIn("agents", str(ctx.exception))

    def test_single_point_chunk_is_rejected(self):
        payload = {"scene_id": "x", "agents": [], "lane_chunks": [{"id": "c0", "centers": [[0.0, 0.0]]}]}
        with self.assertRaises(ParseError):
            loads_scene(json.dumps(payload))

    def test_malformed_json_and_version(self):
        with self.assertRaises(ParseError):
            loads_scene("{not json")
        with self.assertRaises(SchemaVersionMismatch):
            loads_scene(json.dumps({"schema_version": 99, "scene_id": "x", "agents": [], "lane_chunks": []}))

    def test_load_scenes_sorted(self):
        with tempfile.TemporaryDirectory() as tmp:
            for index in (2, 0, 1):
                save_scene(make_scene([], [], scene_id=f"scene_{index:05d}"), Path(tmp) / f"scene_{index:05d}.json")
            (Path(tmp) / "notes.txt").write_text("ignored", encoding="utf-8")
            scenes = load_scenes(Path(tmp))
            with self.assertRaises(ParseError):
                load_scenes(Path(tmp) / "missing")
        self.assertEqual([s.scene_id for s in scenes], ["scene_00000", "scene_00001", "scene_00002"])


class GeneratorTests(unittest.TestCase):
    def test_same_seed_same_scene(self):
        cfg = GeneratorConfig(seed=11)
        self.assertEqual(dumps_scene(generate_scene(4, cfg)), dumps_scene(generate_scene(4, cfg)))
        self.assertNotEqual(dumps_scene(generate_scene(4, cfg)), dumps_scene(generate_scene(5, cfg)))

    def test_noise_free_agents_stay_on_their_lane(self):
        cfg = GeneratorConfig(seed=2, noise_sigma=0.0, turn_fraction=0.0)
        for index in range(5):
            scene = generate_scene(index, cfg, template="straight")
            for agent in scene.agents:
                distance = point_to_polyline_distance(agent.full_track(), _route_polyline(scene, agent))
                self.assertLess(distance.max(), 1e-6, f"{scene.scene_id}/{agent.agent_id}")

    def test_crossroads_turns_are_quarter_turns(self):
        cfg = GeneratorConfig(seed=3, noise_sigma=0.0, turn_fraction=1.0)
        for index in range(5):
            scene = generate_scene(index, cfg, template="crossroads")
            for agent in scene.agents:
                track = agent.full_track()
                entry = Direction2(*(track[1] - track[0]))
                leave = Direction2(*(track[-1] - track[-2]))
                self.assertAlmostEqual(angle_between(entry, leave), 90.0, delta=20.0)

    def test_chunk_points_are_five_meters_apart(self):
        cfg = GeneratorConfig(seed=4)
        for template, tolerance in (("straight", 1e-6), ("crossroads", 0.1)):
            scene = generate_scene(0, cfg, template=template)
            for chunk in scene.lane_chunks:
                steps = np.linalg.norm(np.diff(chunk.points, axis=0), axis=1)
                np.testing.assert_allclose(steps, 5.0, atol=tolerance)

    def test_chunk_length_must_be_whole_spacings(self):
        self.assertEqual(GeneratorConfig(chunk_length=25.0).chunk_length, 25.0)
        for bad in (22.0, 17.5):
            with self.assertRaises(ConfigError):
                GeneratorConfig(chunk_length=bad)
        with self.assertRaises(ConfigError):
            GeneratorConfig(lane_width=2.0)

    def test_successors_exist(self):
        scene = generate_scene(1, GeneratorConfig(seed=6), template="t_intersection")
        ids = {c.chunk_id for c in scene.lane_chunks}
        for chunk in scene.lane_chunks:
            self.assertTrue(set(chunk.successor_ids) <= ids)

    def test_unknown_template(self):
        with self.assertRaises(InvalidTemplate):
            generate_scene(0, GeneratorConfig(), template="roundabout")
        with self.assertRaises(InvalidTemplate):
            generate(GeneratorConfig(n_scenes=1, templates=("roundabout",)))


class SplitTests(unittest.TestCase):
    def _scenes(self, n):
        return [make_scene([], [], scene_id=f"scene_{i:05d}") for i in range(n)]

    def test_hundred_scenes(self):
        parts = split(self._scenes(100), seed=0)
        self.assertEqual({k: len(v) for k, v in parts.items()}, {"train": 80, "val": 10, "test": 10})
        ids = [s.scene_id for v in parts.values() for s in v]
        self.assertEqual(len(set(ids)), 100)
        for name, scenes in parts.items():
            self.assertTrue(all(s.split_tag == name for s in scenes))

    def test_deterministic(self):
        first = split(self._scenes(30), seed=9)
        second = split(self._scenes(30), seed=9)
        for name in first:
            self.assertEqual([s.scene_id for s in first[name]], [s.scene_id for s in second[name]])

    def test_counts_cover_every_split(self):
        for n in (10, 11, 17, 99):
            counts = split_counts(n)
            self.assertEqual(sum(counts), n)
            self.assertTrue(all(c >= 1 for c in counts))

    def test_too_few_scenes(self):
        with self.assertRaises(TooFewScenes):
            split(self._scenes(9), seed=0)


class SampleBuildingTests(unittest.TestCase):
    def setUp(self):
        parked = make_agent("p00", np.tile([[5.0, -3.5]], (16, 1)))
        short = make_agent("s00", eastbound_agent("s00", y=3.5).full_track()[:7])
        self.scene = make_scene([eastbound_agent(), parked, short], three_lane_road())

    def test_filter_counts(self):
        samples, stats = build_samples(self.scene)
        self.assertEqual(len(samples), 1)
        self.assertEqual(stats.kept, 1)
        self.assertEqual(stats.filtered["stationary"], 1)
        self.assertEqual(stats.filtered["short_track"], 1)
        self.assertEqual(stats.total, 3)
        summary = filter_summary({"train": stats})
        self.assertEqual(int(summary.loc[0, "kept"]), 1)
        self.assertEqual(int(summary.loc[0, "total"]), 3)

    def test_sample_is_in_agent_frame(self):
        samples, _ = build_samples(self.scene)
        np.testing.assert_allclose(samples.history[0, -1], [0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(samples.future[0, :, 0], 5.0 * np.arange(1, 13), atol=1e-6)
        np.testing.assert_allclose(samples.future[0, :, 1], 0.0, atol=1e-6)
        self.assertEqual(samples.gt_lane[0], MIDDLE)
        self.assertTrue(samples.lane_mask[0].all())

    def test_inputs_do_not_depend_on_the_future(self):
        history = np.array([[-15.0, 0.0], [-10.0, 0.3], [-5.0, -0.2], [0.0, 0.1]])
        ahead = 5.0 * np.arange(1, 13)
        steady = np.column_stack([ahead, np.zeros(12)])
        swerve = np.column_stack([ahead, np.minimum(0.75 * np.arange(1, 13), 3.0)])
        scene = make_scene([make_agent("steady", np.vstack([history, steady])),
                            make_agent("swerve", np.vstack([history, swerve]))], three_lane_road())
        samples, stats = build_samples(scene)
        self.assertEqual(stats.kept, 2)
        np.testing.assert_array_equal(samples.history[0], samples.history[1])
        np.testing.assert_array_equal(samples.origin[0], samples.origin[1])
        self.assertEqual(samples.heading_deg[0], samples.heading_deg[1])
        self.assertFalse(np.allclose(samples.future[0], samples.future[1]))

    def test_archive_round_trip(self):
        samples, _ = build_samples(self.scene)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = SampleSet.load(samples.save(Path(tmp) / "samples.npz"))
            with self.assertRaises(EmptyDataset):
                SampleSet.load(Path(tmp) / "absent.npz")
        self.assertEqual(list(loaded.agent_ids), ["a00"])
        np.testing.assert_array_equal(loaded.lanes, samples.lanes)


if __name__ == "__main__":
    unittest.main()
