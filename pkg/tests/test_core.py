import math
import unittest

import numpy as np

from lanecast.core.geometry import (
    angle_between,
    from_agent_frame,
    heading_of,
    point_to_polyline_distance,
    rotate_about,
    to_agent_frame,
)
from lanecast.core.types import Direction2, LaneChunk, OccupancyRaster, Point2, Scene, Trajectory
from lanecast.errors import DegenerateDirection, InvariantViolation, StationaryAgent
from tests.fixtures import eastbound_agent, make_agent


def _traj(points, start=0):
    return Trajectory.from_array("a", start, np.asarray(points, dtype=float))


class HeadingTests(unittest.TestCase):
    def test_heading_is_last_displacement(self):
        heading = heading_of(_traj([(0, 0), (5, 0)]), 1)
        self.assertEqual(heading.as_tuple(), (5.0, 0.0))

    def test_heading_walks_back_over_still_frames(self):
        heading = heading_of(_traj([(0, 1), (1, 1), (1, 1)]), 2)
        self.assertEqual(heading.as_tuple(), (1.0, 0.0))

    def test_stationary_track_raises(self):
        with self.assertRaises(StationaryAgent):
            heading_of(_traj([(2, 2), (2, 2), (2.01, 2)]), 2)

    def test_heading_never_below_stillness_threshold(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            points = np.cumsum(rng.normal(0, 0.5, size=(6, 2)), axis=0)
            try:
                heading = heading_of(_traj(points), 5)
            except StationaryAgent:
                continue
            self.assertGreaterEqual(heading.norm, 0.05)


class AngleTests(unittest.TestCase):
    def test_reference_angles(self):
        self.assertAlmostEqual(angle_between(Direction2(1, 0), Direction2(0, 1)), 90.0)
        self.assertEqual(angle_between(Direction2(1, 0), Direction2(1, 0)), 0.0)
        self.assertAlmostEqual(angle_between(Direction2(1, 0), Direction2(-1, 0)), 180.0)

    def test_zero_vector_is_rejected(self):
        with self.assertRaises(DegenerateDirection):
            angle_between(Direction2(0, 0), Direction2(1, 0))

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(11)
        for a, b in rng.normal(size=(200, 2, 2)):
            da, db = Direction2(*a), Direction2(*b)
            value = angle_between(da, db)
            self.assertTrue(0.0 <= value <= 180.0)
            self.assertAlmostEqual(value, angle_between(db, da), places=12)


class RotationTests(unittest.TestCase):
    def test_reference_rotations(self):
        p = rotate_about(Point2(1, 0), Point2(0, 0), 90)
        self.assertAlmostEqual(p.x, 0.0, places=12)
        self.assertAlmostEqual(p.y, 1.0, places=12)
        self.assertEqual(rotate_about(Point2(3.5, -2), Point2(1, 1), 0), Point2(3.5, -2))
        q = rotate_about(Point2(2, 0), Point2(1, 0), 180)
        self.assertAlmostEqual(q.x, 0.0, places=12)
        self.assertAlmostEqual(q.y, 0.0, places=12)

    def test_distance_preserved_and_rotations_compose(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p, c = Point2(*rng.normal(0, 50, 2)), Point2(*rng.normal(0, 50, 2))
            t1, t2 = rng.uniform(-360, 360, 2)
            once = rotate_about(p, c, t1)
            self.assertAlmostEqual(once.distance_to(c), p.distance_to(c), delta=1e-9 * max(1.0, p.distance_to(c)))
            twice = rotate_about(once, c, t2)
            direct = rotate_about(p, c, t1 + t2)
            self.assertAlmostEqual(twice.x, direct.x, delta=1e-9)
            self.assertAlmostEqual(twice.y, direct.y, delta=1e-9)

    def test_agent_frame_round_trip(self):
        xy = np.array([[3.0, 4.0], [-1.0, 2.5]])
        origin, heading = Point2(1.0, -2.0), Direction2(0.0, 3.0)
        local = to_agent_frame(xy, origin, heading)
        np.testing.assert_allclose(local[0], [6.0, -2.0], atol=1e-12)
        np.testing.assert_allclose(from_agent_frame(local, origin, heading), xy, atol=1e-12)


class DomainTypeTests(unittest.TestCase):
    def test_point_must_be_finite(self):
        with self.assertRaises(InvariantViolation):
            Point2(math.nan, 0.0)
        with self.assertRaises(InvariantViolation):
            Point2(0.0, math.inf)

    def test_trajectory_needs_contiguous_frames(self):
        with self.assertRaises(InvariantViolation):
            Trajectory("a", ((0, Point2(0, 0)), (2, Point2(1, 0))))
        with self.assertRaises(InvariantViolation):
            Trajectory("a", ((0, Point2(0, 0)),))

    def test_history_and_future_must_be_adjacent(self):
        agent = eastbound_agent()
        self.assertEqual(agent.current_frame, 3)
        self.assertEqual(agent.current_position, Point2(0.0, 0.0))
        with self.assertRaises(InvariantViolation):
            type(agent)("b", agent.history, Trajectory.from_array("b", 9, np.zeros((3, 2))))

    def test_lane_chunk_spacing_and_length(self):
        LaneChunk.from_array("c", [[0, 0], [5, 0], [5, 5]])
        with self.assertRaises(InvariantViolation):
            LaneChunk.from_array("c", [[0, 0]])
        with self.assertRaises(InvariantViolation):
            LaneChunk.from_array("c", [[0, 0], [9, 0]])

    def test_nearest_index_breaks_ties_low(self):
        chunk = LaneChunk.from_array("c", [[0, 0], [5, 0], [10, 0]])
        self.assertEqual(chunk.nearest_index(Point2(2.5, 1.0))[0], 0)

    def test_scene_tagged_once_and_ids_unique(self):
        agent = eastbound_agent()
        scene = Scene("s", (agent,), ())
        tagged = scene.tagged("train")
        self.assertEqual(tagged.split_tag, "train")
        with self.assertRaises(InvariantViolation):
            tagged.tagged("val")
        with self.assertRaises(InvariantViolation):
            Scene("s", (agent, agent), ())
        with self.assertRaises(InvariantViolation):
            Scene("s", (), (), split_tag="holdout")

    def test_raster_lookup_respects_rotation(self):
        grid = np.zeros((4, 6), dtype=bool)
        grid[1, 2] = True
        raster = OccupancyRaster(Point2(10.0, 0.0), 1.0, grid, rotation_deg=90.0)
        # local (x=2.5, y=1.5) rotated by 90 degrees about the origin, then shifted
        hit = raster.lookup(np.array([[10.0 - 1.5, 2.5]]))
        miss = raster.lookup(np.array([[10.0 + 2.5, 1.5], [-100.0, 0.0]]))
        self.assertTrue(hit[0])
        self.assertFalse(miss.any())

    def test_point_to_polyline_distance(self):
        polyline = np.array([[0.0, 0.0], [10.0, 0.0]])
        d = point_to_polyline_distance(np.array([[5.0, 3.0], [-4.0, 3.0]]), polyline)
        np.testing.assert_allclose(d, [3.0, 5.0])

    def test_agent_fixture_current_position(self):
        agent = make_agent("x", [[0, 0], [1, 0], [2, 0], [3, 0]], history_frames=2)
        self.assertEqual(agent.current_position, Point2(1.0, 0.0))
        self.assertEqual(len(agent.future), 2)


if __name__ == "__main__":
    unittest.main()
