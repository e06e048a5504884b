"""
    Utility classes for splitfix app test suite.
"""

import abc
import tempfile
from pathlib import Path

import numpy
from django.test import SimpleTestCase

from splitfix.geometry import ROOT_PARENT, Skeleton
from splitfix.registration import CandidatePair
from splitfix.volumes.types import LabeledVolume

TEST_VOXEL_SIZE: tuple[float, float, float] = (16.0, 16.0, 40.0)
TEST_VOLUME_DIMS: tuple[int, int, int] = (40, 16, 4)
""" (x, y, z) size of the hand-built test volume. """

TEST_NODE_X_VOXELS: tuple[int, ...] = tuple(range(2, 40, 4))
TEST_NEURON_Y_VOXELS: dict[int, int] = {1: 4, 2: 11}
TEST_NEURON_Z_VOXEL = 2
TEST_SPLIT_X_VOXEL = 20


class Base_TestCase(SimpleTestCase):
    def setUp(self):
        """
            Hook method for setting up the test fixture before exercising it.

            Every test gets its own temporary directory for written files.
        """

        temporary_directory = tempfile.TemporaryDirectory()
        self.addCleanup(temporary_directory.cleanup)

        self.temp_dir = Path(temporary_directory.name)


class Base_Test_Data_Factory(abc.ABC):
    """
        Helper class to provide functions that create test object instances of
        the splitfix data types.
    """

    @classmethod
    @abc.abstractmethod
    def create(cls, **kwargs):
        """
            Helper function that creates & returns a test object instance, with
            additional options for its attributes provided in kwargs.
        """

        raise NotImplementedError


class Test_Skeleton_Factory(Base_Test_Data_Factory):
    """
        Helper class to provide functions that create unbranched chain
        skeletons.
    """

    @classmethod
    def create(cls, *, node_count: int = 10, spacing_nm: float = 10.0, start=(0.0, 0.0, 0.0), direction=(1.0, 0.0, 0.0), radius_nm: float = 100.0, first_id: int = 1) -> Skeleton:
        """
            Helper function that creates & returns a chain skeleton of
            node_count nodes spaced spacing_nm apart along direction, rooted
            at its first node.
        """

        step: numpy.ndarray = numpy.asarray(direction, dtype=numpy.float64)
        step = step / numpy.linalg.norm(step) * spacing_nm
        ids: numpy.ndarray = numpy.arange(first_id, first_id + node_count)

        return Skeleton(
            ids=ids,
            positions=numpy.asarray(start, dtype=numpy.float64) + numpy.arange(node_count)[:, None] * step,
            radii=numpy.full(node_count, radius_nm),
            parents=numpy.concatenate(([ROOT_PARENT], ids[:-1]))
        )

    @classmethod
    def create_from_positions(cls, positions, radius_nm: float = 100.0) -> Skeleton:
        """ Helper function that creates a chain skeleton through the given positions. """

        positions = numpy.asarray(positions, dtype=numpy.float64).reshape(-1, 3)
        ids: numpy.ndarray = numpy.arange(1, len(positions) + 1)

        return Skeleton(ids=ids, positions=positions, radii=numpy.full(len(positions), radius_nm), parents=numpy.concatenate(([ROOT_PARENT], ids[:-1])))

    @classmethod
    def create_tree(cls, parent_indices, positions, first_id: int = 1, radius_nm: float = 100.0) -> Skeleton:
        """
            Helper function that creates a (possibly branched) tree skeleton:
            node i + 1 hangs off node parent_indices[i], which must be an
            earlier node. Node 0 is the root.
        """

        positions = numpy.asarray(positions, dtype=numpy.float64).reshape(-1, 3)
        ids: numpy.ndarray = numpy.arange(first_id, first_id + len(positions))
        parents: list[int] = [ROOT_PARENT] + [int(ids[parent_index]) for parent_index in parent_indices]

        return Skeleton(ids=ids, positions=positions, radii=numpy.full(len(positions), radius_nm), parents=numpy.array(parents))


class Test_Volume_Factory(Base_Test_Data_Factory):
    """
        Helper class to provide a small hand-built labelled volume holding two
        parallel straight neurons running along x. Neuron 1 is cut in two at
        TEST_SPLIT_X_VOXEL (segments 1 & 2); neuron 2 is the single segment 3.
    """

    @classmethod
    def create(cls, *, split: bool = True) -> LabeledVolume:
        volume: LabeledVolume = LabeledVolume.empty(TEST_VOLUME_DIMS, TEST_VOXEL_SIZE)
        volume.image[:] = 0.75

        neuron_id: int
        y_center: int
        for neuron_id, y_center in TEST_NEURON_Y_VOXELS.items():
            tube: tuple[slice, slice, slice] = (slice(1, 4), slice(y_center - 2, y_center + 3), slice(0, TEST_VOLUME_DIMS[0]))
            volume.neuron_ids[tube] = neuron_id
            volume.image[tube] = 0.5 - 0.1 * neuron_id
            volume.segment_ids[tube] = 1 if neuron_id == 1 else 3

        if split:
            volume.segment_ids[:, :, TEST_SPLIT_X_VOXEL:][volume.segment_ids[:, :, TEST_SPLIT_X_VOXEL:] == 1] = 2

        return volume

    @classmethod
    def create_skeletons(cls) -> list[Skeleton]:
        """
            Helper function that returns the ground-truth skeleton of each
            neuron of the test volume, with nodes at the centers of the
            TEST_NODE_X_VOXELS voxels.
        """

        skeletons: list[Skeleton] = []

        y_center: int
        for y_center in TEST_NEURON_Y_VOXELS.values():
            skeletons.append(Test_Skeleton_Factory.create_from_positions([
                (x * TEST_VOXEL_SIZE[0], y_center * TEST_VOXEL_SIZE[1], TEST_NEURON_Z_VOXEL * TEST_VOXEL_SIZE[2])
                for x in TEST_NODE_X_VOXELS
            ]))

        return skeletons


class Test_Pair_Factory(Base_Test_Data_Factory):
    """
        Helper class to provide functions that create candidate pairs of the
        test volume.
    """

    SPLIT_POINT: tuple[float, float, float] = (
        TEST_SPLIT_X_VOXEL * TEST_VOXEL_SIZE[0],
        TEST_NEURON_Y_VOXELS[1] * TEST_VOXEL_SIZE[1],
        TEST_NEURON_Z_VOXEL * TEST_VOXEL_SIZE[2]
    )

    @classmethod
    def create(cls, *, seg_a: int = 1, seg_b: int = 2, truncation=None, label: int | None = None, block: tuple[int, int, int] | None = (0, 0, 0)) -> CandidatePair:
        """
            Helper function that creates & returns a test candidate pair at the
            cut of the test volume. Unless given, the label is 1 exactly for
            the (1, 2) pair.
        """

        return CandidatePair(
            seg_a=seg_a,
            seg_b=seg_b,
            truncation=tuple(truncation) if truncation is not None else cls.SPLIT_POINT,
            label=label if label is not None else int({seg_a, seg_b} == {1, 2}),
            block=block
        )

    @classmethod
    def create_volume_pairs(cls) -> list[CandidatePair]:
        """ Helper function that returns the positive pair of the test volume & its one negative. """

        return [cls.create(), cls.create(seg_b=3)]
