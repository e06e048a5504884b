"""
    Connectivity classifiers: a two-level hierarchical point-set network &
    a voxel-mask 3D convolutional baseline, plus the embedding-distance rule.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy
from scipy import spatial

from splitfix.connectnet.samples import MaskSample, PointSample, stack_samples
from splitfix.embednet.losses import segment_mean_embedding
from splitfix.exceptions import ShapeMismatchError
from splitfix.geometry import farthest_point_sample
from splitfix.numerics.layers import Affine, Axis_Max_Pool, Channel_Norm, Conv3d, Global_Max_Pool, ReLU, Spatial_Max_Pool, sigmoid
from splitfix.numerics.tensor import Layer, Sequential

POINT_ARCHITECTURE_TAG = "connectnet-point-v1"
MASK_ARCHITECTURE_TAG = "connectnet-mask-v1"
DECISION_THRESHOLD = 0.5


@dataclass(frozen=True)
class PointModelConfig:
    centroids: tuple[int, int] = (256, 64)
    neighbours: tuple[int, int] = (16, 16)
    widths: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]] = ((32, 64), (64, 128), (128, 256))
    head_width: int = 64


@dataclass(frozen=True)
class MaskModelConfig:
    filters: tuple[int, int, int] = (16, 32, 64)
    head_width: int = 32


def shared_mlp(in_features: int, widths: Sequence[int], rng: numpy.random.Generator, name: str) -> Sequential:
    """ Per-point affine, norm & ReLU stages shared by every point (channels last). """

    layers: list[Layer] = []

    index: int
    width: int
    for index, width in enumerate(widths):
        layers += [Affine(in_features, width, rng, f"{name}.{index}.affine"), Channel_Norm(width, f"{name}.{index}.norm", channel_axis=-1), ReLU()]
        in_features = width

    return Sequential(*layers)


class Set_Abstraction(Layer):
    """
        Selects centroids by farthest point sampling, groups each centroid's
        nearest neighbours (relative positions & features), runs a shared MLP
        over the group & max-pools it. Inputs & outputs are (N, P, 3 + C)
        arrays whose first three columns are positions; positions are data,
        so their gradient is returned as zero.
    """

    def __init__(self, in_features: int, widths: Sequence[int], centroids: int, neighbours: int, rng: numpy.random.Generator, name: str) -> None:
        self.centroids = centroids
        self.neighbours = neighbours
        self.mlp = shared_mlp(in_features + 3, widths, rng, f"{name}.mlp")
        self.pool = Axis_Max_Pool(axis=2)
        self._cache: tuple | None = None

    def _group(self, xyz: numpy.ndarray) -> tuple[numpy.ndarray, numpy.ndarray]:
        centroid_count: int = min(self.centroids, len(xyz))
        centroid_index: numpy.ndarray = farthest_point_sample(xyz, centroid_count)
        _, neighbour_index = spatial.cKDTree(xyz).query(xyz[centroid_index], k=min(self.neighbours, len(xyz)))

        return centroid_index, numpy.asarray(neighbour_index, dtype=numpy.int64).reshape(centroid_count, -1)

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 3)

        groups: list[tuple[numpy.ndarray, numpy.ndarray]] = [self._group(sample[:, :3].astype(numpy.float64)) for sample in x]
        centroid_index = numpy.stack([group[0] for group in groups])
        neighbour_index = numpy.stack([group[1] for group in groups])
        batch_index: numpy.ndarray = numpy.arange(len(x))[:, None, None]

        centroid_xyz: numpy.ndarray = numpy.take_along_axis(x[:, :, :3], centroid_index[..., None], axis=1)
        grouped: numpy.ndarray = x[batch_index, neighbour_index]
        grouped = numpy.concatenate([grouped[..., :3] - centroid_xyz[:, :, None], grouped], axis=-1)

        if self.training:
            self._cache = (neighbour_index, x.shape)

        return numpy.concatenate([centroid_xyz, self.pool(self.mlp(grouped))], axis=-1)

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        neighbour_index, input_shape = self._cache
        grad_grouped: numpy.ndarray = self.mlp.backward(self.pool.backward(grad_output[..., 3:]))

        grad_input = numpy.zeros(input_shape, dtype=grad_output.dtype)
        batch_index: numpy.ndarray = numpy.broadcast_to(numpy.arange(input_shape[0])[:, None, None], neighbour_index.shape)
        numpy.add.at(grad_input, (batch_index, neighbour_index), grad_grouped[..., 3:])
        grad_input[..., :3] = 0

        return grad_input


class Point_Classifier(Layer):
    """
        Hierarchical point-set classifier over (N, P, 4 + k) point samples,
        returning one logit per sample. Points are put in a canonical
        (lexicographic) order first, so the output does not depend on the
        input point order.
    """

    def __init__(self, in_features: int, config: PointModelConfig = PointModelConfig(), seed: int = 0) -> None:
        rng = numpy.random.default_rng(seed)
        first_widths, second_widths, global_widths = config.widths

        self.in_features = in_features
        self.level_1 = Set_Abstraction(in_features, first_widths, config.centroids[0], config.neighbours[0], rng, "level_1")
        self.level_2 = Set_Abstraction(3 + first_widths[-1], second_widths, config.centroids[1], config.neighbours[1], rng, "level_2")
        self.global_mlp = shared_mlp(3 + second_widths[-1], global_widths, rng, "global_mlp")
        self.global_pool = Axis_Max_Pool(axis=1)
        self.head = Sequential(Affine(global_widths[-1], config.head_width, rng, "head.hidden"), ReLU(), Affine(config.head_width, 1, rng, "head.output"))
        self._order: numpy.ndarray | None = None

    @staticmethod
    def canonical_order(x: numpy.ndarray) -> numpy.ndarray:
        """ Returns, per sample, the point order sorting rows lexicographically by their columns. """

        return numpy.stack([numpy.lexsort(sample.T[::-1]) for sample in x])

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 3)
        if x.shape[-1] != self.in_features:
            raise ShapeMismatchError("Point sample feature count does not match the model.", expected=self.in_features, actual=x.shape[-1])

        order: numpy.ndarray = self.canonical_order(x)
        self._order = order
        ordered: numpy.ndarray = numpy.take_along_axis(x, order[..., None], axis=1)

        features: numpy.ndarray = self.level_2(self.level_1(ordered))

        return self.head(self.global_pool(self.global_mlp(features)))[:, 0]

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        grad_features: numpy.ndarray = self.global_mlp.backward(self.global_pool.backward(self.head.backward(grad_output[:, None])))
        grad_ordered: numpy.ndarray = self.level_1.backward(self.level_2.backward(grad_features))

        grad_input = numpy.zeros_like(grad_ordered)
        numpy.put_along_axis(grad_input, self._order[..., None], grad_ordered, axis=1)

        return grad_input


class Mask_Classifier(Layer):
    """
        3D convolutional classifier over (N, C, D, H, W) mask samples: three
        conv, norm, ReLU & max-pool stages, global max pooling & a dense head.
    """

    POOL_WINDOWS: tuple[tuple[int, int, int], ...] = ((1, 2, 2), (2, 2, 2), (1, 2, 2))

    def __init__(self, in_channels: int, config: MaskModelConfig = MaskModelConfig(), seed: int = 0) -> None:
        rng = numpy.random.default_rng(seed)

        self.in_channels = in_channels
        stages: list[Layer] = []

        index: int
        width: int
        for index, width in enumerate(config.filters):
            stages += [
                Conv3d(in_channels, width, (3, 3, 3), rng, f"stage_{index}.conv"),
                Channel_Norm(width, f"stage_{index}.norm"),
                ReLU(),
                Spatial_Max_Pool(self.POOL_WINDOWS[index])
            ]
            in_channels = width

        self.stages = Sequential(*stages)
        self.global_pool = Global_Max_Pool()
        self.head = Sequential(Affine(in_channels, config.head_width, rng, "head.hidden"), ReLU(), Affine(config.head_width, 1, rng, "head.output"))

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError("Mask sample channel count does not match the model.", expected=self.in_channels, actual=x.shape[1])

        return self.head(self.global_pool(self.stages(x)))[:, 0]

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        return self.stages.backward(self.global_pool.backward(self.head.backward(grad_output[:, None])))


def predict_connectivity(model: Point_Classifier | Mask_Classifier, samples: PointSample | MaskSample | Sequence[PointSample | MaskSample], batch_size: int = 32) -> numpy.ndarray:
    """ Returns the connection probability of every sample, computed in evaluation mode. """

    if isinstance(samples, (PointSample, MaskSample)):
        samples = [samples]

    was_training: bool = model.training
    model.eval()
    try:
        logits: list[numpy.ndarray] = [
            model.forward(stack_samples(samples[start:start + batch_size]))
            for start in range(0, len(samples), batch_size)
        ]
    finally:
        model.train(was_training)

    return sigmoid(numpy.concatenate(logits).astype(numpy.float64)) if logits else numpy.zeros(0)


def is_connected(probability: float) -> bool:
    """ A pair is predicted connected when its probability is strictly above 0.5. """

    return bool(probability > DECISION_THRESHOLD)


def embedding_distance_classifier(field, query_mask: numpy.ndarray, candidate_mask: numpy.ndarray, delta_d: float = 1.5) -> int:
    """ Returns 1 when the two masks' mean embeddings are strictly closer than delta_d, else 0. """

    distance = float(numpy.linalg.norm(segment_mean_embedding(field, query_mask) - segment_mean_embedding(field, candidate_mask)))

    return int(distance < delta_d)
