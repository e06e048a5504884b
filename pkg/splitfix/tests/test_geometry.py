"""
    Automated test suite for skeleton geometry in splitfix app.
"""

import numpy
from hypothesis import HealthCheck, given, settings as hypothesis_settings, strategies
from hypothesis.extra.numpy import arrays

from splitfix.exceptions import DisconnectedSubsetError, EmptyPointSetError, SwcFormatError
from splitfix.geometry import (
    ROOT_PARENT,
    cable_length,
    densify,
    directed_chamfer,
    farthest_point_sample,
    parse_swc,
    path_length,
    serialize_swc
)
from splitfix.tests.utils import Base_TestCase, Test_Skeleton_Factory

finite_points = arrays(
    numpy.float64,
    strategies.tuples(strategies.integers(1, 12), strategies.just(3)),
    elements=strategies.floats(-1000, 1000, allow_nan=False, allow_infinity=False)
)


def point_sets(max_points: int):
    """ Point sets drawn from a small coordinate grid, so duplicate points & equal distances are common. """

    return arrays(
        numpy.float64,
        strategies.tuples(strategies.integers(1, max_points), strategies.just(3)),
        elements=strategies.sampled_from([value * 12.5 for value in range(-20, 21)])
    ) | arrays(
        numpy.float64,
        strategies.tuples(strategies.integers(1, max_points), strategies.just(3)),
        elements=strategies.floats(-1000, 1000, allow_nan=False, allow_infinity=False)
    )


def brute_force_distances(source: numpy.ndarray, target: numpy.ndarray) -> numpy.ndarray:
    return numpy.linalg.norm(source[:, None] - target[None], axis=-1)


class Parse_Swc_Tests(Base_TestCase):
    def test_single_root_node(self):
        skeleton = parse_swc("1 0 0 0 0 5 -1\n", unit_nm=1.0)

        self.assertEqual(1, len(skeleton))
        self.assertEqual(ROOT_PARENT, int(skeleton.parents[0]))
        self.assertEqual(5.0, skeleton.radius(1))
        self.assertEqual([], skeleton.edges())

    def test_two_nodes_make_one_edge(self):
        skeleton = parse_swc("# comment line\n1 0 0 0 0 1 -1\n2 0 10 0 0 1 1\n", unit_nm=1.0)

        self.assertEqual([(1, 2)], skeleton.edges())
        self.assertEqual(10.0, skeleton.edge_length(1, 2))

    def test_unit_scale_converts_to_nanometers(self):
        skeleton = parse_swc("1 0 1 2 3 0.5 -1\n", unit_nm=1000.0)

        numpy.testing.assert_allclose([1000.0, 2000.0, 3000.0], skeleton.position(1))
        self.assertEqual(500.0, skeleton.radius(1))

    def test_self_parent_is_cycle(self):
        with self.assertRaisesMessage(SwcFormatError, "Cycle"):
            parse_swc("1 0 0 0 0 1 1\n", unit_nm=1.0)

    def test_longer_cycle_is_rejected(self):
        with self.assertRaises(SwcFormatError):
            parse_swc("1 0 0 0 0 1 -1\n2 0 1 0 0 1 3\n3 0 2 0 0 1 2\n", unit_nm=1.0)

    def test_wrong_column_count_reports_line_number(self):
        with self.assertRaises(SwcFormatError) as context:
            parse_swc("1 0 0 0 0 1 -1\n2 0 1 0 0 1\n", unit_nm=1.0)

        self.assertEqual(2, context.exception.line_number)

    def test_duplicate_id_is_rejected(self):
        with self.assertRaisesMessage(SwcFormatError, "Duplicate"):
            parse_swc("1 0 0 0 0 1 -1\n1 0 1 0 0 1 -1\n", unit_nm=1.0)

    def test_missing_parent_is_rejected(self):
        with self.assertRaisesMessage(SwcFormatError, "does not exist"):
            parse_swc("1 0 0 0 0 1 -1\n2 0 1 0 0 1 7\n", unit_nm=1.0)

    def test_negative_radius_is_rejected(self):
        with self.assertRaises(SwcFormatError):
            parse_swc("1 0 0 0 0 -1 -1\n", unit_nm=1.0)

    def test_non_finite_value_is_rejected(self):
        with self.assertRaises(SwcFormatError):
            parse_swc("1 0 nan 0 0 1 -1\n", unit_nm=1.0)

    def test_non_positive_unit_is_rejected(self):
        with self.assertRaises(ValueError):
            parse_swc("1 0 0 0 0 1 -1\n", unit_nm=0.0)

    def test_serialized_skeleton_parses_back(self):
        skeleton = Test_Skeleton_Factory.create(node_count=4, spacing_nm=250.0, start=(10.0, 20.0, 30.0))

        parsed = parse_swc(serialize_swc(skeleton, unit_nm=1000.0), unit_nm=1000.0)

        numpy.testing.assert_array_equal(skeleton.ids, parsed.ids)
        numpy.testing.assert_array_equal(skeleton.parents, parsed.parents)
        numpy.testing.assert_allclose(skeleton.positions, parsed.positions)


class Directed_Chamfer_Tests(Base_TestCase):
    def test_single_points(self):
        self.assertAlmostEqual(5.0, directed_chamfer([[0, 0, 0]], [[3, 4, 0]]))

    def test_mean_over_source_points(self):
        self.assertAlmostEqual(5.0, directed_chamfer([[0, 0, 0], [6, 8, 0]], [[3, 4, 0]]))

    def test_direction_matters(self):
        source = [[0, 0, 0]]
        target = [[0, 0, 0], [100, 0, 0]]

        self.assertAlmostEqual(0.0, directed_chamfer(source, target))
        self.assertAlmostEqual(50.0, directed_chamfer(target, source))

    def test_empty_set_raises(self):
        with self.assertRaises(EmptyPointSetError):
            directed_chamfer(numpy.zeros((0, 3)), [[0, 0, 0]])

    @hypothesis_settings(max_examples=40, deadline=None)
    @given(finite_points)
    def test_set_to_itself_is_zero(self, points):
        self.assertAlmostEqual(0.0, directed_chamfer(points, points))

    @hypothesis_settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
    @given(point_sets(1000), point_sets(1000))
    def test_matches_brute_force_mean_of_nearest_distances(self, source, target):
        expected = float(brute_force_distances(source, target).min(axis=1).mean())

        self.assertAlmostEqual(expected, directed_chamfer(source, target), delta=1e-9 * max(1.0, expected))


class Farthest_Point_Sample_Tests(Base_TestCase):
    def test_line_of_ten_points(self):
        points = numpy.stack([numpy.arange(10.0), numpy.zeros(10), numpy.zeros(10)], axis=1)

        self.assertEqual([0, 9, 4], farthest_point_sample(points, 3).tolist())

    def test_single_sample_is_first_index(self):
        self.assertEqual([0], farthest_point_sample(numpy.random.default_rng(3).random((7, 3)), 1).tolist())

    @hypothesis_settings(max_examples=40, deadline=None)
    @given(finite_points)
    def test_all_points_give_permutation(self, points):
        indices = farthest_point_sample(points, len(points))

        self.assertEqual(list(range(len(points))), sorted(indices.tolist()))

    @staticmethod
    def brute_force_fps(points: numpy.ndarray, m: int) -> list[int]:
        """ Exhaustive max-min search over the unchosen points, lowest index first on ties. """

        distances = brute_force_distances(points, points)
        chosen = [0]

        while len(chosen) < m:
            best_index, best_distance = -1, -1.0
            for index in range(len(points)):
                if index in chosen:
                    continue
                nearest = distances[index, chosen].min()
                if nearest > best_distance:
                    best_index, best_distance = index, nearest
            chosen.append(best_index)

        return chosen

    @hypothesis_settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
    @given(point_sets(200), strategies.sampled_from([1, 2, 5, None]))
    def test_matches_brute_force_max_min_search(self, points, m):
        m = len(points) if m is None else min(len(points), m)

        self.assertEqual(self.brute_force_fps(points, m), farthest_point_sample(points, m).tolist())

    def test_oversampling_repeats_last_index(self):
        indices = farthest_point_sample(numpy.eye(3), 5)

        self.assertEqual(3, len(set(indices.tolist())))
        self.assertEqual([indices[2]] * 3, indices[2:].tolist())

    def test_zero_samples_raises(self):
        with self.assertRaises(ValueError):
            farthest_point_sample(numpy.eye(3), 0)


class Path_Length_Tests(Base_TestCase):
    def test_single_node_is_zero(self):
        self.assertEqual(0.0, path_length(Test_Skeleton_Factory.create(node_count=3), [2]))

    def test_collinear_nodes(self):
        self.assertAlmostEqual(20.0, path_length(Test_Skeleton_Factory.create(node_count=3, spacing_nm=10.0), [1, 2, 3]))

    def test_empty_subset_is_zero(self):
        self.assertEqual(0.0, path_length(Test_Skeleton_Factory.create(node_count=3), []))

    def test_disconnected_subset_raises(self):
        with self.assertRaises(DisconnectedSubsetError) as context:
            path_length(Test_Skeleton_Factory.create(node_count=4), [1, 3])

        self.assertEqual(2, context.exception.component_count)

    def test_unknown_node_raises(self):
        with self.assertRaises(KeyError):
            path_length(Test_Skeleton_Factory.create(node_count=3), [1, 99])

    def test_whole_skeleton_equals_cable_length(self):
        skeleton = Test_Skeleton_Factory.create(node_count=6, spacing_nm=7.5, direction=(1.0, 1.0, 0.0))

        self.assertAlmostEqual(cable_length(skeleton), path_length(skeleton, skeleton.ids.tolist()))
        self.assertAlmostEqual(37.5, cable_length(skeleton))


class Densify_Tests(Base_TestCase):
    def test_points_are_added_along_edges(self):
        skeleton = Test_Skeleton_Factory.create(node_count=2, spacing_nm=100.0)

        points = densify(skeleton, 25.0)

        self.assertEqual(5, len(points))
        numpy.testing.assert_allclose([0.0, 25.0, 50.0, 75.0, 100.0], numpy.sort(points[:, 0]))

    def test_non_positive_step_keeps_nodes(self):
        skeleton = Test_Skeleton_Factory.create(node_count=3)

        numpy.testing.assert_array_equal(skeleton.positions, densify(skeleton, 0.0))
