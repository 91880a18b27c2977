import tempfile
import unittest
from pathlib import Path

import numpy as np

from lanecast.cache import CACHE_VERSION, get_cache_key, get_cache_path, load_or_build
from lanecast.data.dataset import build_samples
from tests.fixtures import eastbound_agent, make_scene, three_lane_road


class SampleCacheTests(unittest.TestCase):
    def test_cache_key_is_stable_and_versioned(self):
        content = b"same scene bytes"

        key_one = get_cache_key("samples", content)
        key_two = get_cache_key("samples", content)
        key_new_version = get_cache_key("samples", content, version=f"{CACHE_VERSION}-next")
        key_new_content = get_cache_key("samples", content + b" changed settings")

        self.assertEqual(key_one, key_two)
        self.assertNotEqual(key_one, key_new_version)
        self.assertNotEqual(key_one, key_new_content)

    def test_cache_miss_then_hit_returns_same_samples(self):
        scene = make_scene([eastbound_agent()], three_lane_road())
        calls = []

        def builder():
            calls.append(scene.scene_id)
            return build_samples(scene)

        with tempfile.TemporaryDirectory() as tmpdir:
            import lanecast.config as config_module

            old_cache_dir = config_module.CACHE_DIR
            config_module.CACHE_DIR = Path(tmpdir)
            try:
                first = load_or_build("samples", b"scene-bytes", builder)
                second = load_or_build("samples", b"scene-bytes", builder)
            finally:
                config_module.CACHE_DIR = old_cache_dir

        self.assertEqual(first.status, "built")
        self.assertEqual(second.status, "cache")
        self.assertEqual(len(calls), 1)
        self.assertEqual(second.path.parent, Path(tmpdir))
        samples, stats = second.data
        np.testing.assert_array_equal(samples.future, first.data[0].future)
        self.assertEqual(stats.kept, 1)

    def test_corrupt_entry_is_rebuilt(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = get_cache_path("samples", b"x", cache_dir=Path(tmpdir))
            path.write_bytes(b"not a pickle")
            result = load_or_build("samples", b"x", lambda: {"rebuilt": True}, cache_dir=Path(tmpdir))
            self.assertEqual(result.status, "built")
            self.assertEqual(result.data, {"rebuilt": True})
            self.assertEqual(load_or_build("samples", b"x", lambda: None, cache_dir=Path(tmpdir)).status, "cache")

    def test_disabled_cache_writes_nothing(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            result = load_or_build("samples", b"x", lambda: 42, cache_dir=Path(tmpdir), enabled=False)
            self.assertEqual(list(Path(tmpdir).iterdir()), [])
        self.assertEqual(result.status, "built")
        self.assertIsNone(result.path)


if __name__ == "__main__":
    unittest.main()
