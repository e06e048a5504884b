"""
    Automated test suite for connectivity metrics, agglomeration, expected
    run length, the tracing experiment & report files in splitfix app.
"""

import networkx
import numpy
from hypothesis import given, settings as hypothesis_settings, strategies

from core.utils import provenance_line
from splitfix.evaluation.metrics import (
    Confusion,
    agglomerate,
    expected_run_length,
    node_weights,
    pr_curve,
    sample_eval_pairs,
    score_predictions,
    skeleton_run_lengths
)
from splitfix.evaluation.reports import write_block_report, write_pr_plot, write_summary
from splitfix.evaluation.scoring import constant_scorer
from splitfix.evaluation.tracing import endpoint_candidates, segment_ends, tracing_experiment
from splitfix.exceptions import UnmappedNodeError
from splitfix.tests.utils import Base_TestCase, Test_Pair_Factory, Test_Skeleton_Factory, Test_Volume_Factory

scored_edges = strategies.lists(
    strategies.tuples(strategies.integers(1, 8), strategies.integers(1, 8), strategies.floats(0.0, 1.0)),
    max_size=20
)


@strategies.composite
def labelled_forests(draw):
    """ One to three branched tree skeletons with disjoint node ids, each node labelled with a segment id in 0..4. """

    skeletons = []
    node_segments = []
    first_id = 1

    for _ in range(draw(strategies.integers(1, 3))):
        node_count = draw(strategies.integers(1, 12))
        parent_indices = [draw(strategies.integers(0, index)) for index in range(node_count - 1)]
        positions = draw(strategies.lists(strategies.floats(-500.0, 500.0), min_size=3 * node_count, max_size=3 * node_count))
        segment_ids = draw(strategies.lists(strategies.integers(0, 4), min_size=node_count, max_size=node_count))

        skeleton = Test_Skeleton_Factory.create_tree(parent_indices, positions, first_id=first_id)
        skeletons.append(skeleton)
        node_segments.append(dict(zip(skeleton.ids.tolist(), segment_ids)))
        first_id += node_count

    return skeletons, node_segments


class Score_Predictions_Tests(Base_TestCase):
    PREDICTIONS = [0.9, 0.6, 0.4, 0.2, 0.5]
    LABELS = [1, 0, 1, 0, 1]

    def test_confusion_at_strict_threshold(self):
        report = score_predictions(self.PREDICTIONS, self.LABELS)

        self.assertEqual(Confusion(tp=1, fp=1, tn=1, fn=2), report.confusion)
        self.assertAlmostEqual(0.5, report.precision)
        self.assertAlmostEqual(1 / 3, report.recall)
        self.assertAlmostEqual(0.4, report.f1)

    def test_curve_runs_from_full_recall_to_none(self):
        curve = pr_curve(numpy.array(self.PREDICTIONS), numpy.array(self.LABELS))

        self.assertEqual(1.0, curve[0].recall)
        self.assertAlmostEqual(0.6, curve[0].precision)
        self.assertEqual((1.0, 0.0), (curve[-1].precision, curve[-1].recall))
        self.assertEqual(6, len(curve))

    def test_nothing_predicted_positive(self):
        report = score_predictions([0.1, 0.5], [1, 0])

        self.assertEqual(1.0, report.precision)
        self.assertEqual(0.0, report.recall)

    def test_per_block_confusion(self):
        report = score_predictions([0.9, 0.1, 0.8], [1, 1, 0], blocks=[(0, 0, 0), (1, 0, 0), (0, 0, 0)])

        self.assertEqual({(0, 0, 0): Confusion(tp=1, fp=1), (1, 0, 0): Confusion(fn=1)}, report.blocks)

    def test_invalid_inputs_raise(self):
        with self.assertRaises(ValueError):
            score_predictions([], [])
        with self.assertRaises(ValueError):
            score_predictions([0.5, 0.5], [1])
        with self.assertRaises(ValueError):
            score_predictions([0.5], [2])

    def test_eval_pairs_are_balanced(self):
        pairs = Test_Pair_Factory.create_volume_pairs() + [
            Test_Pair_Factory.create(seg_b=4, label=0),
            Test_Pair_Factory.create(seg_a=5, seg_b=6, truncation=(0.0, 0.0, 0.0), label=1)
        ]

        sampled = sample_eval_pairs(pairs, seed=3)

        self.assertEqual([1, 0, 1], [pair.label for pair in sampled])
        self.assertIn(sampled[1].seg_b, (3, 4))
        self.assertEqual(sampled, sample_eval_pairs(pairs, seed=3))


class Agglomerate_Tests(Base_TestCase):
    def test_threshold_one_keeps_identity(self):
        self.assertEqual({1: 1, 2: 2, 3: 3}, agglomerate([1, 2, 3], [(1, 2, 1.0), (2, 3, 0.99)], threshold=1.0))

    def test_chain_above_threshold_joins_one_cluster(self):
        self.assertEqual({1: 1, 2: 1, 3: 1, 4: 4}, agglomerate([1, 2, 3, 4], [(3, 2, 0.99), (1, 2, 0.99), (3, 4, 0.98)], threshold=0.98))

    @hypothesis_settings(max_examples=60, deadline=None)
    @given(scored_edges)
    def test_clusters_are_connected_components(self, edges):
        segments = list(range(1, 9))
        graph = networkx.Graph()
        graph.add_nodes_from(segments)
        graph.add_edges_from((seg_a, seg_b) for seg_a, seg_b, probability in edges if probability > 0.5)

        clusters = agglomerate(segments, edges, threshold=0.5)

        expected = {segment_id: min(component) for component in networkx.connected_components(graph) for segment_id in component}
        self.assertEqual(expected, clusters)


class Expected_Run_Length_Tests(Base_TestCase):
    @staticmethod
    def brute_force_erl(skeletons, node_segments, clusters: dict[int, int]) -> float:
        """ Per-node run lengths found by walking each node's same-cluster neighbourhood. """

        node_clusters = [
            {node_id: 0 if segment_id == 0 else clusters.get(segment_id, segment_id) for node_id, segment_id in mapping.items()}
            for mapping in node_segments
        ]
        owners: dict[int, set[int]] = {}
        for index, node_cluster in enumerate(node_clusters):
            for cluster in node_cluster.values():
                owners.setdefault(cluster, set()).add(index)

        weighted_total = 0.0
        weight_total = 0.0

        for skeleton, node_cluster in zip(skeletons, node_clusters):
            weights = {node_id: 0.0 for node_id in skeleton.ids.tolist()}
            neighbours: dict[int, list[int]] = {node_id: [] for node_id in weights}
            positions = dict(zip(skeleton.ids.tolist(), skeleton.positions))

            for node_id, parent_id in zip(skeleton.ids.tolist(), skeleton.parents.tolist()):
                if parent_id < 0:
                    continue
                half = float(numpy.linalg.norm(positions[node_id] - positions[parent_id])) / 2
                weights[node_id] += half
                weights[parent_id] += half
                neighbours[node_id].append(parent_id)
                neighbours[parent_id].append(node_id)

            for node_id, weight in weights.items():
                cluster = node_cluster[node_id]
                weight_total += weight
                if cluster == 0 or len(owners[cluster]) > 1:
                    continue

                reached = {node_id}
                frontier = [node_id]
                while frontier:
                    current = frontier.pop()
                    for other in neighbours[current]:
                        if other not in reached and node_cluster[other] == cluster:
                            reached.add(other)
                            frontier.append(other)

                weighted_total += weight * sum(weights[other] for other in reached)

        return weighted_total / weight_total if weight_total > 0 else 0.0

    def test_branch_point_weighs_half_of_every_incident_edge(self):
        skeleton = Test_Skeleton_Factory.create_tree([0, 0], [0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 20.0, 0.0])

        self.assertEqual({1: 15.0, 2: 5.0, 3: 10.0}, node_weights(skeleton))

    def test_perfect_segmentation_runs_whole_cable(self):
        skeleton = Test_Skeleton_Factory.create(node_count=11, spacing_nm=1000.0)

        self.assertAlmostEqual(10000.0, expected_run_length([skeleton], [{node_id: 1 for node_id in range(1, 12)}], {}))

    def test_midpoint_split_halves_run_length(self):
        skeleton = Test_Skeleton_Factory.create(node_count=10, spacing_nm=1000.0)
        mapping = {node_id: 1 if node_id <= 5 else 2 for node_id in range(1, 11)}

        self.assertAlmostEqual(4500.0, expected_run_length([skeleton], [mapping], {}))
        self.assertAlmostEqual(9000.0, expected_run_length([skeleton], [mapping], {2: 1}))

    def test_cluster_spanning_skeletons_runs_zero(self):
        first = Test_Skeleton_Factory.create(node_count=5, spacing_nm=100.0)
        second = Test_Skeleton_Factory.create(node_count=5, spacing_nm=100.0, first_id=20)
        mappings = [{node_id: 1 for node_id in range(1, 6)}, {node_id: 2 for node_id in range(20, 25)}]

        table = skeleton_run_lengths([first, second], mappings, {1: 1, 2: 1})

        self.assertEqual([0.0, 0.0], [row.erl_nm for row in table])
        self.assertEqual([5, 5], [row.merged_nodes for row in table])

    def test_background_nodes_run_zero(self):
        skeleton = Test_Skeleton_Factory.create(node_count=3, spacing_nm=100.0)

        table = skeleton_run_lengths([skeleton], [{1: 0, 2: 0, 3: 0}], {})

        self.assertEqual((0.0, 3), (table[0].erl_nm, table[0].background_nodes))

    def test_unmapped_node_raises(self):
        with self.assertRaises(UnmappedNodeError):
            expected_run_length([Test_Skeleton_Factory.create(node_count=3)], [{1: 1, 2: 1}], {})

    @hypothesis_settings(max_examples=150, deadline=None)
    @given(labelled_forests(), strategies.dictionaries(strategies.integers(1, 4), strategies.integers(1, 4), max_size=4))
    def test_matches_per_node_definition(self, forest, clusters):
        skeletons, node_segments = forest

        expected = self.brute_force_erl(skeletons, node_segments, clusters)

        self.assertAlmostEqual(expected, expected_run_length(skeletons, node_segments, clusters), delta=1e-9 * max(1.0, expected))


class Tracing_Tests(Base_TestCase):
    def setUp(self):
        super().setUp()

        self.volume = Test_Volume_Factory.create()
        self.skeletons = Test_Volume_Factory.create_skeletons()

    def test_no_merges_keep_baseline(self):
        result = tracing_experiment(self.volume, self.skeletons, Test_Pair_Factory.create_volume_pairs(), constant_scorer(0.0))

        self.assertEqual(0.0, result.delta_nm)
        self.assertAlmostEqual((288.0 * 576.0 + 576.0 * 576.0) / 1152.0, result.baseline_erl_nm)

    def test_correct_merge_restores_whole_neuron(self):
        def label_scorer(pairs):
            return numpy.array([float(pair.label) for pair in pairs])

        result = tracing_experiment(self.volume, self.skeletons, Test_Pair_Factory.create_volume_pairs(), label_scorer)

        self.assertAlmostEqual(576.0, result.erl_nm)
        self.assertGreater(result.relative_change, 0)
        self.assertEqual({1: 1, 2: 1, 3: 3}, result.clusters)

    def test_false_merge_zeroes_both_neurons(self):
        result = tracing_experiment(self.volume, self.skeletons, Test_Pair_Factory.create_volume_pairs(), constant_scorer(1.0))

        self.assertEqual(0.0, result.erl_nm)
        self.assertLess(result.delta_nm, 0)

    def test_constant_half_predicts_no_connection(self):
        pairs = Test_Pair_Factory.create_volume_pairs()

        report = score_predictions(constant_scorer(0.5)(pairs), [pair.label for pair in pairs])

        self.assertEqual(0.0, report.recall)

    def test_every_segment_has_two_ends(self):
        ends = segment_ends(self.volume)

        self.assertEqual([1, 1, 2, 2, 3, 3], sorted(end.segment_id for end in ends))

    def test_endpoint_candidates_join_facing_ends(self):
        pairs = endpoint_candidates(self.volume, max_distance_nm=1000.0, tail_nm=50.0)

        self.assertIn((1, 2, 1), [(pair.seg_a, pair.seg_b, pair.label) for pair in pairs])
        self.assertTrue(all(pair.label == 0 for pair in pairs if 3 in (pair.seg_a, pair.seg_b)))


class Report_Tests(Base_TestCase):
    def test_summary_starts_with_provenance(self):
        write_summary(self.temp_dir / "summary.txt", "ab" * 32, score_predictions([0.9, 0.1], [1, 0]), extra={"stage": "eval"})

        lines = (self.temp_dir / "summary.txt").read_text().splitlines()

        self.assertEqual(provenance_line("ab" * 32), lines[0])
        self.assertIn("recall: 1.000000", lines)
        self.assertEqual("stage: eval", lines[-1])

    def test_block_report_ends_with_total_row(self):
        write_block_report(self.temp_dir / "blocks.csv", score_predictions([0.9, 0.1], [1, 0], blocks=[(0, 0, 0), (1, 0, 0)]), "ab" * 32)

        lines = (self.temp_dir / "blocks.csv").read_text().splitlines()

        self.assertEqual(5, len(lines))
        self.assertTrue(lines[-1].startswith("all,"))

    def test_plot_is_reproducible(self):
        curves = {"model": score_predictions([0.9, 0.6, 0.1], [1, 0, 0])}

        write_pr_plot(self.temp_dir / "first.svg", curves, "ab" * 32)
        write_pr_plot(self.temp_dir / "second.svg", curves, "ab" * 32)

        self.assertEqual((self.temp_dir / "first.svg").read_bytes(), (self.temp_dir / "second.svg").read_bytes())
