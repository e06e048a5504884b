"""
    Automated test suite for the embedding network, its losses & the rank
    discriminability measure in splitfix app.
"""

import numpy

from splitfix.embednet.losses import (
    Lambda3Schedule,
    LossWeights,
    connectivity_loss,
    merge_split_loss,
    seg_cluster_gradient,
    seg_cluster_loss,
    segment_mean_embedding,
    total_loss
)
from splitfix.embednet.model import EmbedNet, EmbeddingField, embed_forward
from splitfix.embednet.ranking import mean_rank, positive_rank, rank_discriminability
from splitfix.embednet.samples import Augmentations, build_training_sample, extract_crop, group_pairs
from splitfix.embednet.training import EmbedTrainConfig, load_embed_model, train_embed
from splitfix.exceptions import EmptyMaskError, EmptyPairCropError, ShapeMismatchError
from splitfix.registration import segment_neuron_map
from splitfix.tests.utils import Base_TestCase, Test_Pair_Factory, Test_Volume_Factory


class Merge_Split_Loss_Tests(Base_TestCase):
    def test_identical_means_do_not_merge_cost(self):
        mu = numpy.array([0.3, -1.2, 2.0])

        merge, _ = merge_split_loss(mu, mu, [mu + 10], delta_d=1.5)

        self.assertEqual(0.0, merge)

    def test_coincident_negative_costs_both_hinges(self):
        mu = numpy.zeros(4)

        _, split = merge_split_loss(mu, mu, [mu], delta_d=1.5)

        self.assertAlmostEqual(18.0, split)

    def test_distant_negatives_cost_nothing(self):
        _, split = merge_split_loss(numpy.zeros(2), numpy.zeros(2), [[3.0, 0.0], [0.0, -4.0]], delta_d=1.5)

        self.assertEqual(0.0, split)

    def test_no_negatives(self):
        merge, split = merge_split_loss([1.0, 0.0], [0.0, 0.0], numpy.zeros((0, 2)), delta_d=1.5)

        self.assertEqual((1.0, 0.0), (merge, split))

    def test_dimension_mismatch_raises(self):
        with self.assertRaises(ShapeMismatchError):
            merge_split_loss(numpy.zeros(3), numpy.zeros(2), [], delta_d=1.5)

    def test_total_loss_weights_terms(self):
        self.assertAlmostEqual(0.1 * 2 + 1.0 * 3 + 0.6 * 4, total_loss(2, 3, 4, 0.1, 1.0, 0.6))


class Seg_Cluster_Loss_Tests(Base_TestCase):
    def test_constant_single_segment_costs_only_regularization(self):
        values = numpy.broadcast_to(numpy.array([3.0, 4.0]), (2, 3, 3, 2)).copy()
        labels = numpy.ones((2, 3, 3), dtype=numpy.uint32)

        terms = seg_cluster_loss(values, labels, delta_v=0.5, delta_d=1.5, gamma=0.001)

        self.assertEqual(0.0, terms.intra)
        self.assertEqual(0.0, terms.inter)
        self.assertAlmostEqual(0.001 * 5.0, terms.total)

    def test_close_segments_are_pushed_apart(self):
        values = numpy.zeros((1, 1, 2, 1))
        values[0, 0, 1, 0] = 1.0
        labels = numpy.array([[[1, 2]]])

        terms = seg_cluster_loss(values, labels, delta_v=0.5, delta_d=1.5, gamma=0.0)

        self.assertAlmostEqual((3.0 - 1.0) ** 2, terms.inter)

    def test_background_only_raises(self):
        with self.assertRaises(EmptyMaskError):
            seg_cluster_loss(numpy.zeros((1, 2, 2, 3)), numpy.zeros((1, 2, 2)))

    def test_gradient_is_zero_outside_segments(self):
        rng = numpy.random.default_rng(0)
        labels = rng.integers(0, 3, size=(2, 4, 4))

        gradient = seg_cluster_gradient(rng.normal(size=(2, 4, 4, 3)), labels)

        numpy.testing.assert_array_equal(numpy.zeros((int((labels == 0).sum()), 3)), gradient[labels == 0])

    def test_segment_mean_embedding(self):
        values = numpy.arange(8.0).reshape(1, 2, 2, 2)
        mask = numpy.array([[[True, False], [False, True]]])

        numpy.testing.assert_allclose([3.0, 4.0], segment_mean_embedding(values, mask))

    def test_segment_mean_of_empty_mask_raises(self):
        with self.assertRaises(EmptyMaskError):
            segment_mean_embedding(numpy.zeros((1, 2, 2, 2)), numpy.zeros((1, 2, 2), dtype=bool), segment_id=9)

    def test_connectivity_loss_gradient_matches_field_shape(self):
        rng = numpy.random.default_rng(1)
        labels = numpy.repeat(numpy.arange(1, 5), 4).reshape(1, 4, 4)

        components, gradient = connectivity_loss(rng.normal(size=(1, 4, 4, 3)), labels, 1, 2, [3, 4], LossWeights())

        self.assertEqual((1, 4, 4, 3), gradient.shape)
        self.assertTrue(components.is_finite())
        self.assertAlmostEqual(0.1 * components.merge + components.split + components.seg, components.total)


class Lambda3_Schedule_Tests(Base_TestCase):
    def test_adaptive_moves_linearly_to_end(self):
        schedule = Lambda3Schedule(mode="adaptive", start=1.0, end=0.2, total_steps=100)

        self.assertAlmostEqual(1.0, schedule(0))
        self.assertAlmostEqual(0.6, schedule(50))
        self.assertAlmostEqual(0.2, schedule(100))
        self.assertAlmostEqual(0.2, schedule(250))

    def test_fixed_holds_value(self):
        schedule = Lambda3Schedule(mode="fixed", fixed_value=0.4)

        self.assertEqual([0.4, 0.4], [schedule(0), schedule(10 ** 6)])

    def test_seg_only_switches_connectivity_terms_off(self):
        config = EmbedTrainConfig(lambda3=Lambda3Schedule(mode="seg_only"))

        weights = config.loss_weights(0)

        self.assertEqual((0.0, 0.0, 1.0), (weights.lambda_merge, weights.lambda_split, weights.lambda3))

    def test_unknown_mode_is_rejected(self):
        with self.assertRaises(ValueError):
            Lambda3Schedule(mode="cosine")

    def test_rising_schedule_is_rejected(self):
        with self.assertRaises(ValueError):
            Lambda3Schedule(start=0.2, end=1.0)


class Ranking_Tests(Base_TestCase):
    def test_positive_always_nearest(self):
        self.assertEqual(1.0, mean_rank([0.1, 0.2], [[1.0] * 20, [0.5] * 20]))

    def test_positive_always_farthest(self):
        self.assertEqual(21, positive_rank(10.0, [1.0] * 20))

    def test_ties_rank_pessimistically(self):
        self.assertEqual(3, positive_rank(1.0, [1.0, 1.0, 2.0]))

    def test_empty_ranking_raises(self):
        with self.assertRaises(ValueError):
            mean_rank([], [])

    def test_separated_field_ranks_positive_first(self):
        volume = Test_Volume_Factory.create()
        values = numpy.zeros((*volume.segment_ids.shape, 2), dtype=numpy.float32)
        values[volume.segment_ids == 3] = (5.0, 5.0)

        rank = rank_discriminability(EmbeddingField(values), volume, group_pairs(Test_Pair_Factory.create_volume_pairs()))

        self.assertEqual(1.0, rank)

    def test_field_or_model_is_required(self):
        with self.assertRaises(ValueError):
            rank_discriminability(None, Test_Volume_Factory.create(), [])


class Samples_Tests(Base_TestCase):
    def test_group_pairs_attaches_negatives(self):
        pairs = Test_Pair_Factory.create_volume_pairs() + [Test_Pair_Factory.create(seg_a=3, seg_b=2, label=0)]

        groups = group_pairs(pairs)

        self.assertEqual(1, len(groups))
        self.assertEqual((1, 2, (3,)), (groups[0].seg_a, groups[0].seg_b, groups[0].negatives))
        self.assertEqual((0, 0, 0), groups[0].block)

    def test_crop_is_padded_outside_volume(self):
        volume = Test_Volume_Factory.create()

        image, labels = extract_crop(volume, (0.0, 0.0, 0.0), (9, 9, 3))

        self.assertEqual((3, 9, 9), image.shape)
        self.assertEqual((3, 9, 9), labels.shape)
        self.assertTrue(numpy.all(labels[:, :4, :] == 0))
        self.assertTrue(numpy.all(labels[:, :, :4] == 0))

    def test_training_sample_draws_other_neuron_negatives(self):
        volume = Test_Volume_Factory.create()
        group = group_pairs(Test_Pair_Factory.create_volume_pairs())[0]

        sample = build_training_sample(volume, group, (17, 17, 3), 20, numpy.random.default_rng(0), Augmentations.disabled(), segment_neuron_map(volume))

        self.assertEqual((3, 17, 17), sample.image.shape)
        self.assertEqual((1, 2, (3,)), (sample.query_id, sample.positive_id, sample.negative_ids))

    def test_crop_missing_a_segment_raises(self):
        volume = Test_Volume_Factory.create()
        group = group_pairs([Test_Pair_Factory.create(truncation=(32.0, 64.0, 80.0))])[0]

        with self.assertRaises(EmptyPairCropError):
            build_training_sample(volume, group, (5, 5, 3), 0, numpy.random.default_rng(0), Augmentations.disabled(), segment_neuron_map(volume))

    def test_augmentation_keeps_image_and_labels_aligned(self):
        volume = Test_Volume_Factory.create()
        group = group_pairs(Test_Pair_Factory.create_volume_pairs())[0]

        sample = build_training_sample(volume, group, (17, 17, 3), 20, numpy.random.default_rng(5), Augmentations(rescale=False, intensity=False), segment_neuron_map(volume))

        numpy.testing.assert_allclose(numpy.full(int((sample.labels == 3).sum()), 0.3), sample.image[sample.labels == 3], atol=1e-6)


class Embed_Net_Tests(Base_TestCase):
    def test_output_has_one_embedding_per_voxel(self):
        model = EmbedNet(channels=(2, 2, 2), k=3, seed=0)

        output = model.forward(numpy.random.default_rng(0).random((2, 1, 2, 6, 5)).astype(numpy.float32))

        self.assertEqual((2, 3, 2, 6, 5), output.shape)
        self.assertTrue(numpy.all(numpy.isfinite(output)))

    def test_backward_returns_input_gradient(self):
        model = EmbedNet(channels=(2, 2, 2), k=3, seed=0)
        x = numpy.random.default_rng(1).random((1, 1, 2, 8, 8)).astype(numpy.float32)

        output = model.forward(x)

        self.assertEqual(x.shape, model.backward(numpy.ones_like(output)).shape)

    def test_multi_channel_input_is_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            EmbedNet(channels=(2, 2, 2), k=3).forward(numpy.zeros((1, 2, 2, 4, 4)))

    def test_embed_forward_gives_field(self):
        field = embed_forward(EmbedNet(channels=(2, 2, 2), k=4, seed=3), numpy.zeros((3, 7, 9)))

        self.assertEqual((9, 7, 3), field.dims)
        self.assertEqual(4, field.k)


class Train_Embed_Tests(Base_TestCase):
    def test_short_training_writes_checkpoint_and_log(self):
        volume = Test_Volume_Factory.create()
        config = EmbedTrainConfig(
            crop_size=(17, 17, 3),
            channels=(2, 2, 2),
            k=3,
            steps=2,
            lambda3=Lambda3Schedule(total_steps=2),
            augmentations=Augmentations.disabled(),
            prefetch=1
        )

        result = train_embed(volume, group_pairs(Test_Pair_Factory.create_volume_pairs()), config, self.temp_dir / "embed.ckpt", self.temp_dir / "embed_log.csv", "0" * 64)

        self.assertEqual([0, 1], [row.step for row in result.log])
        self.assertAlmostEqual(1.0, result.log[0].lambda3)
        self.assertEqual(2, result.optimizer.state.step)
        self.assertEqual(4, len((self.temp_dir / "embed_log.csv").read_text().splitlines()))

        loaded = load_embed_model(self.temp_dir / "embed.ckpt", channels=(2, 2, 2), k=3)
        for trained, read_back in zip(result.model.parameters(), loaded.parameters()):
            numpy.testing.assert_allclose(trained.data.astype(numpy.float32), read_back.data)

    def test_training_needs_groups(self):
        with self.assertRaises(ValueError):
            train_embed(Test_Volume_Factory.create(), [], EmbedTrainConfig(), self.temp_dir / "embed.ckpt", self.temp_dir / "embed_log.csv", "0" * 64)

    def test_invalid_config_is_rejected(self):
        with self.assertRaises(ValueError):
            EmbedTrainConfig(delta_d=0.0)
