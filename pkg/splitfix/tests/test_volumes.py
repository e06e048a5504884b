"""
    Automated test suite for synthetic volume generation & volume files in
    splitfix app.
"""

import dataclasses

import numpy

from core.utils import config_hash
from splitfix.exceptions import ArtifactRangeError, InfeasibleConfigError, VolumeFormatError
from splitfix.geometry import cable_length
from splitfix.volumes.generation import degrade, generate_neurons, generate_volume, oversegment, shift_skeletons, voxelize
from splitfix.volumes.io import load_labeled_volume, load_skeletons, read_volume, save_labeled_volume, save_skeletons, write_volume
from splitfix.volumes.types import Artifact, LabeledVolume, SynthConfig
from splitfix.tests.utils import Base_TestCase, Test_Pair_Factory, Test_Skeleton_Factory, Test_Volume_Factory

SMALL_SYNTH_CONFIG = SynthConfig(
    dims=(80, 80, 20),
    neuron_count=2,
    radius_range_nm=(50.0, 60.0),
    max_nodes_per_neuron=200,
    seed=7
)


class Generate_Neurons_Tests(Base_TestCase):
    def test_neurons_are_unbranched_chains_with_unique_ids(self):
        neurons = generate_neurons(SMALL_SYNTH_CONFIG)

        self.assertEqual(2, len(neurons))

        all_ids: list[int] = []
        for neuron in neurons:
            self.assertEqual(1, int(numpy.count_nonzero(neuron.parents == -1)))
            self.assertTrue(numpy.all(numpy.diff(neuron.ids) > 0))
            self.assertEqual(len(neuron) - 1, len(neuron.edges()))
            all_ids.extend(neuron.ids.tolist())

        self.assertEqual(len(all_ids), len(set(all_ids)))

    def test_generation_is_deterministic(self):
        first = generate_neurons(SMALL_SYNTH_CONFIG)
        second = generate_neurons(SMALL_SYNTH_CONFIG)

        for neuron_a, neuron_b in zip(first, second):
            numpy.testing.assert_array_equal(neuron_a.positions, neuron_b.positions)

    def test_zero_neurons(self):
        self.assertEqual([], generate_neurons(dataclasses.replace(SMALL_SYNTH_CONFIG, neuron_count=0)))

    def test_radius_too_large_for_volume(self):
        with self.assertRaises(InfeasibleConfigError):
            generate_neurons(SynthConfig(dims=(4, 4, 4), radius_range_nm=(90.0, 150.0)))


class Generate_Volume_Tests(Base_TestCase):
    def test_zero_cut_rate_gives_one_segment_per_neuron(self):
        volume, skeletons, pairs = generate_volume(dataclasses.replace(SMALL_SYNTH_CONFIG, cut_rate_per_um=0.0))

        self.assertEqual([], pairs)
        for neuron_id in numpy.unique(volume.neuron_ids[volume.neuron_ids > 0]).tolist():
            self.assertEqual(1, len(numpy.unique(volume.segment_ids[volume.neuron_ids == neuron_id])))

    def test_segments_never_span_neurons(self):
        volume, _, _ = generate_volume(dataclasses.replace(SMALL_SYNTH_CONFIG, cut_rate_per_um=3.0, min_cut_spacing_nm=200.0))

        self.assertTrue(numpy.array_equal(volume.segment_ids > 0, volume.neuron_ids > 0))
        for segment_id in numpy.unique(volume.segment_ids[volume.segment_ids > 0]).tolist():
            self.assertEqual(1, len(numpy.unique(volume.neuron_ids[volume.segment_ids == segment_id])))

    def test_voxelize_leaves_segments_empty(self):
        neurons = generate_neurons(SMALL_SYNTH_CONFIG)

        volume = voxelize(neurons, SMALL_SYNTH_CONFIG.dims, SMALL_SYNTH_CONFIG.voxel_size, config=SMALL_SYNTH_CONFIG)

        self.assertEqual(SMALL_SYNTH_CONFIG.dims, volume.dims)
        self.assertFalse(volume.segment_ids.any())
        self.assertTrue(volume.neuron_ids.any())


class Oversegment_Tests(Base_TestCase):
    def test_explicit_cut_at_midpoint(self):
        skeletons = Test_Volume_Factory.create_skeletons()

        volume, pairs = oversegment(Test_Volume_Factory.create(split=False), skeletons, SynthConfig(), cuts={1: [cable_length(skeletons[0]) / 2]})

        self.assertEqual({0, 1, 2, 3}, set(numpy.unique(volume.segment_ids).tolist()))
        self.assertEqual(1, len(pairs))
        self.assertEqual(frozenset((1, 2)), pairs[0].key)
        self.assertEqual(1, pairs[0].neuron_id)
        numpy.testing.assert_allclose(Test_Pair_Factory.SPLIT_POINT, pairs[0].truncation)

    def test_no_cuts_keep_neurons_whole(self):
        volume, pairs = oversegment(Test_Volume_Factory.create(split=False), Test_Volume_Factory.create_skeletons(), SynthConfig(), cuts={})

        self.assertEqual([], pairs)
        self.assertEqual({0, 1, 2}, set(numpy.unique(volume.segment_ids).tolist()))


class Degrade_Tests(Base_TestCase):
    @staticmethod
    def marked_volume() -> LabeledVolume:
        volume = LabeledVolume.empty((64, 8, 12))
        volume.image[:] = 0.75
        volume.segment_ids[:, 3, 5] = 7
        volume.neuron_ids[:, 3, 5] = 1
        volume.image[:, 3, 5] = 0.2

        return volume

    def test_no_artifacts_leave_volume_unchanged(self):
        volume = self.marked_volume()

        degraded = degrade(volume, [])

        numpy.testing.assert_array_equal(volume.image, degraded.image)
        numpy.testing.assert_array_equal(volume.segment_ids, degraded.segment_ids)
        numpy.testing.assert_array_equal(volume.neuron_ids, degraded.neuron_ids)

    def test_misalignment_shifts_later_slices(self):
        degraded = degrade(self.marked_volume(), [Artifact("misalignment", 8, (400.0, 0.0, 0.0))])

        self.assertTrue(numpy.all(degraded.segment_ids[:8, 3, 5] == 7))
        self.assertTrue(numpy.all(degraded.segment_ids[8:, 3, 5] == 0))
        self.assertTrue(numpy.all(degraded.segment_ids[8:, 3, 30] == 7))
        self.assertTrue(numpy.all(degraded.neuron_ids[8:, 3, 30] == 1))
        self.assertAlmostEqual(0.2, float(degraded.image[10, 3, 30]), places=6)

    def test_missing_section_changes_only_its_image_slice(self):
        volume = self.marked_volume()

        degraded = degrade(volume, [Artifact("missing_section", 4)])

        numpy.testing.assert_array_equal(volume.segment_ids, degraded.segment_ids)
        numpy.testing.assert_array_equal(numpy.delete(volume.image, 4, axis=0), numpy.delete(degraded.image, 4, axis=0))
        self.assertFalse(numpy.array_equal(volume.image[4], degraded.image[4]))

    def test_slice_outside_volume_raises(self):
        with self.assertRaises(ArtifactRangeError):
            degrade(self.marked_volume(), [Artifact("missing_section", 12)])

    def test_shift_beyond_extent_raises(self):
        with self.assertRaises(ArtifactRangeError):
            degrade(self.marked_volume(), [Artifact("misalignment", 2, (64 * 16.0, 0.0, 0.0))])

    def test_skeletons_follow_misalignment(self):
        skeleton = Test_Skeleton_Factory.create(node_count=12, spacing_nm=40.0, direction=(0.0, 0.0, 1.0))

        shifted = shift_skeletons([skeleton], [Artifact("misalignment", 8, (400.0, 0.0, 0.0))], (16.0, 16.0, 40.0))[0]

        numpy.testing.assert_allclose(numpy.zeros(8), shifted.positions[:8, 0])
        numpy.testing.assert_allclose(numpy.full(4, 400.0), shifted.positions[8:, 0])


class Volume_Files_Tests(Base_TestCase):
    def test_saved_volume_loads_back(self):
        volume = Test_Volume_Factory.create()

        save_labeled_volume(self.temp_dir / "volume", volume, config_hash({"test": 1}))
        loaded = load_labeled_volume(self.temp_dir / "volume")

        numpy.testing.assert_array_equal(volume.segment_ids, loaded.segment_ids)
        numpy.testing.assert_array_equal(volume.neuron_ids, loaded.neuron_ids)
        numpy.testing.assert_allclose(volume.image, loaded.image, atol=1 / 255)
        numpy.testing.assert_allclose(volume.voxel_size, loaded.voxel_size)

    def test_header_keeps_config_hash_prefix(self):
        digest = config_hash({"test": 2})

        write_volume(self.temp_dir / "segments.vol", numpy.ones((2, 3, 4)), "segments", (16.0, 16.0, 40.0), (0.0, 0.0, 0.0), digest)
        grid, header = read_volume(self.temp_dir / "segments.vol")

        self.assertEqual((4, 3, 2), header.dims)
        self.assertEqual(digest[:16], header.config_hash)
        self.assertEqual((2, 3, 4), grid.shape)

    def test_wrong_magic_raises(self):
        (self.temp_dir / "broken.vol").write_bytes(b"NOTAVOLUME" * 20)

        with self.assertRaises(VolumeFormatError):
            read_volume(self.temp_dir / "broken.vol")

    def test_truncated_payload_raises(self):
        write_volume(self.temp_dir / "neurons.vol", numpy.ones((2, 3, 4)), "neurons", (16.0, 16.0, 40.0), (0.0, 0.0, 0.0), "0" * 64)
        raw = (self.temp_dir / "neurons.vol").read_bytes()
        (self.temp_dir / "neurons.vol").write_bytes(raw[:-4])

        with self.assertRaisesMessage(VolumeFormatError, "payload size"):
            read_volume(self.temp_dir / "neurons.vol")

    def test_missing_file_raises(self):
        with self.assertRaises(VolumeFormatError):
            read_volume(self.temp_dir / "absent.vol")

    def test_skeletons_load_in_neuron_order(self):
        skeletons = Test_Volume_Factory.create_skeletons()

        save_skeletons(self.temp_dir / "skeletons", skeletons, "0" * 64)
        loaded = load_skeletons(self.temp_dir / "skeletons")

        self.assertEqual(2, len(loaded))
        for original, read_back in zip(skeletons, loaded):
            numpy.testing.assert_allclose(original.positions, read_back.positions)
