"""
    Central finite-difference checks of every layer's backward pass & of the
    embedding loss graphs, run in 64-bit precision.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy

from splitfix.connectnet.models import MaskModelConfig, Mask_Classifier, PointModelConfig, Point_Classifier, Set_Abstraction
from splitfix.embednet.losses import LossWeights, connectivity_loss, merge_split_gradients, merge_split_loss, seg_cluster_gradient, seg_cluster_loss
from splitfix.embednet.model import EmbedNet, Residual_Block
from splitfix.numerics.layers import Affine, Axis_Max_Pool, Channel_Norm, Conv2d, Conv3d, Crop_Pad, Global_Max_Pool, ReLU, Spatial_Max_Pool, Squeeze_Excitation, Upsample
from splitfix.numerics.losses import sigmoid_binary_cross_entropy
from splitfix.numerics.tensor import Layer, Parameter

HINGE_CLEARANCE = 0.02  # NOTE: Instances with a hinge argument this close to its kink are redrawn
MAX_REDRAWS = 100
NETWORK_EPS = 1e-6  # NOTE: Composite networks use a finer step so no ReLU or max pool kink lies within reach
NETWORK_PARAMETERS = 6


@dataclass(frozen=True)
class GradientCheckResult:
    name: str
    instances: int
    worst_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(numpy.isfinite(self.worst_error)) and self.worst_error < self.tolerance


def relative_error(analytic: numpy.ndarray, numeric: numpy.ndarray, floor: float = 1e-8) -> float:
    """
        Returns |analytic - numeric| / max(|analytic|, |numeric|, floor) using
        Euclidean norms over the whole gradient vector.
    """

    analytic = numpy.asarray(analytic, dtype=numpy.float64).reshape(-1)
    numeric = numpy.asarray(numeric, dtype=numpy.float64).reshape(-1)

    return float(numpy.linalg.norm(analytic - numeric) / max(numpy.linalg.norm(analytic), numpy.linalg.norm(numeric), floor))


def _coordinates(size: int, rng: numpy.random.Generator, max_coordinates: int | None) -> numpy.ndarray:
    if max_coordinates is None or size <= max_coordinates:
        return numpy.arange(size)

    return numpy.sort(rng.choice(size, size=max_coordinates, replace=False))


def numeric_gradient(function: Callable[[], float], array: numpy.ndarray, coordinates: numpy.ndarray, eps: float = 1e-3) -> numpy.ndarray:
    """
        Returns the central-difference derivative of function() with respect
        to the given flat coordinates of array, which is perturbed in place &
        restored afterwards. The array must be contiguous.
    """

    flat: numpy.ndarray = array.reshape(-1)
    if not numpy.shares_memory(flat, array):
        raise ValueError("numeric_gradient needs a contiguous array to perturb in place.")

    gradient = numpy.zeros(len(coordinates), dtype=numpy.float64)

    position: int
    index: int
    for position, index in enumerate(coordinates.tolist()):
        original = flat[index]
        flat[index] = original + eps
        plus: float = function()
        flat[index] = original - eps
        minus: float = function()
        flat[index] = original
        gradient[position] = (plus - minus) / (2 * eps)

    return gradient


def check_layer(layer: Layer, x: numpy.ndarray, rng: numpy.random.Generator, eps: float = 1e-3, max_coordinates: int | None = None, checked_inputs: numpy.ndarray | None = None, max_parameters: int | None = None) -> float:
    """
        Returns the worst relative error between a layer's backward pass &
        finite differences, over its input & every trainable parameter, for
        the scalar objective sum(layer(x) * projection) with a random
        projection.

        checked_inputs is a boolean mask (shaped like x) of the input entries
        to compare; point positions, which layers treat as data with a zero
        gradient, are left out this way. max_parameters limits the check to
        a random subset of the trainable parameters.
    """

    layer.astype(numpy.float64).train()
    x = numpy.ascontiguousarray(x, dtype=numpy.float64)

    output: numpy.ndarray = layer.forward(x)
    projection: numpy.ndarray = rng.normal(size=output.shape)
    layer.zero_grad()
    grad_input: numpy.ndarray = layer.backward(projection)

    def _objective() -> float:
        return float(numpy.sum(layer.forward(x) * projection))

    candidates: numpy.ndarray = numpy.arange(x.size) if checked_inputs is None else numpy.flatnonzero(numpy.broadcast_to(checked_inputs, x.shape))
    coordinates: numpy.ndarray = candidates[_coordinates(len(candidates), rng, max_coordinates)]
    errors: list[float] = [relative_error(grad_input.reshape(-1)[coordinates], numeric_gradient(_objective, x, coordinates, eps))]

    parameters: list[Parameter] = layer.trainable_parameters()
    if max_parameters is not None and len(parameters) > max_parameters:
        parameters = [parameters[index] for index in numpy.sort(rng.choice(len(parameters), size=max_parameters, replace=False)).tolist()]

    parameter: Parameter
    for parameter in parameters:
        coordinates = _coordinates(parameter.data.size, rng, max_coordinates)
        analytic: numpy.ndarray = parameter.grad.reshape(-1)[coordinates].copy()
        errors.append(relative_error(analytic, numeric_gradient(_objective, parameter.data, coordinates, eps)))

    return max(errors)


def check_function(value_and_gradient: Callable[[numpy.ndarray], tuple[float, numpy.ndarray]], x: numpy.ndarray, rng: numpy.random.Generator, eps: float = 1e-3, max_coordinates: int | None = None) -> float:
    """ Returns the relative error of a scalar function's analytic gradient at x. """

    x = numpy.ascontiguousarray(x, dtype=numpy.float64)
    _, analytic = value_and_gradient(x)
    coordinates: numpy.ndarray = _coordinates(x.size, rng, max_coordinates)

    def _value() -> float:
        return float(value_and_gradient(x)[0])

    return relative_error(numpy.asarray(analytic).reshape(-1)[coordinates], numeric_gradient(_value, x, coordinates, eps))


def _clear_of(values: numpy.ndarray, kink: float) -> bool:
    return bool(numpy.all(numpy.abs(numpy.asarray(values) - kink) > HINGE_CLEARANCE))


def _redraw(draw: Callable[[], tuple], is_clear: Callable[..., bool]) -> tuple:
    """ Draws instances until one is clear of every kink (keeps the last draw otherwise). """

    instance: tuple = draw()
    for _ in range(MAX_REDRAWS):
        if is_clear(*instance):
            break
        instance = draw()

    return instance


def _segment_means(values: numpy.ndarray, labels: numpy.ndarray) -> dict[int, numpy.ndarray]:
    return {int(segment_id): values[labels == segment_id].mean(axis=0) for segment_id in numpy.unique(labels) if segment_id != 0}


def _clustering_clear(values: numpy.ndarray, labels: numpy.ndarray, weights: LossWeights) -> bool:
    means: dict[int, numpy.ndarray] = _segment_means(values, labels)

    segment_id: int
    for segment_id, mean in means.items():
        if not _clear_of(numpy.linalg.norm(values[labels == segment_id] - mean, axis=1), weights.delta_v):
            return False

    ordered: list[numpy.ndarray] = list(means.values())
    pair_distances: list[float] = [
        float(numpy.linalg.norm(ordered[first] - ordered[second]))
        for first in range(len(ordered))
        for second in range(first + 1, len(ordered))
    ]

    return _clear_of(pair_distances, 2 * weights.delta_d)


def _random_labels(rng: numpy.random.Generator, shape: tuple[int, ...], segment_count: int) -> numpy.ndarray:
    """ Returns a label grid using every id 1..segment_count at least once, plus some background. """

    labels: numpy.ndarray = rng.integers(0, segment_count + 1, size=shape)
    flat: numpy.ndarray = labels.reshape(-1)
    flat[rng.permutation(flat.size)[:segment_count]] = numpy.arange(1, segment_count + 1)

    return labels


GRADCHECK_WEIGHTS = LossWeights(lambda_merge=0.1, lambda_split=1.0, lambda3=0.6, delta_d=0.75, delta_v=0.3, gamma=0.001)
GRADCHECK_POINT_MODEL = PointModelConfig(centroids=(8, 4), neighbours=(4, 4), widths=((4,), (4,), (3,)), head_width=3)


def _case_conv3d(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Conv3d(2, 3, (3, 3, 3), rng, "conv3d"), rng.normal(size=(2, 2, 3, 4, 4)), rng, eps, max_coordinates)


def _case_conv2d(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Conv2d(2, 3, 3, rng, "conv2d"), rng.normal(size=(2, 2, 2, 5, 4)), rng, eps, max_coordinates)


def _case_relu(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    x: numpy.ndarray = rng.choice([-1.0, 1.0], size=(2, 3, 2, 3, 3)) * rng.uniform(0.1, 2.0, size=(2, 3, 2, 3, 3))

    return check_layer(ReLU(), x, rng, eps, max_coordinates)


def _case_norm_batch(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Channel_Norm(3, "norm_batch"), rng.normal(1.0, 2.0, size=(8, 3, 2, 3, 3)), rng, eps, max_coordinates)


def _case_norm_instance(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Channel_Norm(3, "norm_instance"), rng.normal(1.0, 2.0, size=(2, 3, 2, 3, 3)), rng, eps, max_coordinates)


def _case_norm_points(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Channel_Norm(4, "norm_points", channel_axis=-1), rng.normal(size=(8, 10, 4)), rng, eps, max_coordinates)


def _case_squeeze_excitation(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    def _draw() -> tuple:
        layer = Squeeze_Excitation(4, rng, "gate", reduction=2).astype(numpy.float64)
        return layer, rng.normal(size=(2, 4, 2, 3, 3))

    def _is_clear(layer: Squeeze_Excitation, x: numpy.ndarray) -> bool:
        hidden_input: numpy.ndarray = x.mean(axis=(2, 3, 4)) @ layer.squeeze_weight.data.T + layer.squeeze_bias.data
        return _clear_of(hidden_input, 0.0)

    layer, x = _redraw(_draw, _is_clear)

    return check_layer(layer, x, rng, eps, max_coordinates)


def _case_affine(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Affine(4, 3, rng, "affine"), rng.normal(size=(2, 5, 4)), rng, eps, max_coordinates)


def _distinct_values(rng: numpy.random.Generator, shape: tuple[int, ...]) -> numpy.ndarray:
    """ Returns values pairwise at least 0.01 apart, so no max changes under an eps perturbation. """

    return (rng.permutation(int(numpy.prod(shape))) * 0.01 - 0.5).reshape(shape)


def _case_spatial_max_pool(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Spatial_Max_Pool((1, 2, 2)), _distinct_values(rng, (2, 2, 2, 4, 5)), rng, eps, max_coordinates)


def _case_volume_max_pool(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Spatial_Max_Pool((2, 2, 2)), _distinct_values(rng, (2, 2, 4, 4, 4)), rng, eps, max_coordinates)


def _case_point_max_pool(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Axis_Max_Pool(axis=1), _distinct_values(rng, (2, 12, 3)), rng, eps, max_coordinates)


def _case_upsample(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Upsample((1, 2, 2)), rng.normal(size=(2, 2, 2, 2, 3)), rng, eps, max_coordinates)


def _case_crop_pad(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Crop_Pad((2, 3, 3)), rng.normal(size=(2, 2, 3, 4, 5)), rng, eps, max_coordinates)


def _case_global_max_pool(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    return check_layer(Global_Max_Pool(), _distinct_values(rng, (2, 3, 2, 3, 3)), rng, eps, max_coordinates)


def _network_seed(rng: numpy.random.Generator) -> int:
    return int(rng.integers(2 ** 31))


def _point_cloud(rng: numpy.random.Generator, batch: int, points: int, features: int) -> tuple[numpy.ndarray, numpy.ndarray]:
    """ Returns (N, P, 3 + features) points with continuous positions & the mask of their feature columns. """

    x: numpy.ndarray = numpy.concatenate([rng.uniform(0.0, 1.0, size=(batch, points, 3)), rng.normal(size=(batch, points, features))], axis=-1)
    checked = numpy.zeros(x.shape, dtype=bool)
    checked[..., 3:] = True

    return x, checked


def _case_set_abstraction(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    layer = Set_Abstraction(5, (4, 3), centroids=6, neighbours=4, rng=rng, name="set_abstraction")
    x, checked = _point_cloud(rng, 2, 24, 2)

    return check_layer(layer, x, rng, min(eps, NETWORK_EPS), max_coordinates, checked_inputs=checked)


def _case_point_classifier(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    model = Point_Classifier(5, GRADCHECK_POINT_MODEL, seed=_network_seed(rng))
    x, checked = _point_cloud(rng, 2, 32, 2)

    return check_layer(model, x, rng, min(eps, NETWORK_EPS), max_coordinates, checked_inputs=checked, max_parameters=NETWORK_PARAMETERS)


def _case_mask_classifier(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    model = Mask_Classifier(3, MaskModelConfig(filters=(2, 3, 2), head_width=3), seed=_network_seed(rng))

    return check_layer(model, rng.normal(size=(2, 3, 2, 8, 8)), rng, min(eps, NETWORK_EPS), max_coordinates, max_parameters=NETWORK_PARAMETERS)


def _case_residual_block(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    in_channels, out_channels = (2, 3) if rng.random() < 0.5 else (3, 3)
    block = Residual_Block(in_channels, out_channels, rng, "residual_block")

    return check_layer(block, rng.normal(size=(2, in_channels, 2, 4, 4)), rng, min(eps, NETWORK_EPS), max_coordinates, max_parameters=NETWORK_PARAMETERS)


def _case_embed_net(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    model = EmbedNet(channels=(2, 3, 2), k=2, seed=_network_seed(rng))

    return check_layer(model, rng.normal(size=(1, 1, 2, 5, 6)), rng, min(eps, NETWORK_EPS), max_coordinates, max_parameters=NETWORK_PARAMETERS)


def _case_sigmoid_bce(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    labels: numpy.ndarray = rng.integers(0, 2, size=16).astype(numpy.float64)

    return check_function(lambda logits: sigmoid_binary_cross_entropy(logits, labels), rng.normal(0.0, 3.0, size=16), rng, eps, max_coordinates)


def _case_merge_split(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    weights: LossWeights = GRADCHECK_WEIGHTS
    negative_count = int(rng.integers(1, 5))

    def _draw() -> tuple:
        return (rng.normal(0.0, 0.8, size=(2 + negative_count, 4)),)

    def _is_clear(vectors: numpy.ndarray) -> bool:
        distances: numpy.ndarray = numpy.linalg.norm(vectors[:2, None] - vectors[None, 2:], axis=-1)
        return _clear_of(distances, 2 * weights.delta_d) and _clear_of(distances, 0.0)

    (vectors,) = _redraw(_draw, _is_clear)

    def _value_and_gradient(packed: numpy.ndarray) -> tuple[float, numpy.ndarray]:
        merge, split = merge_split_loss(packed[0], packed[1], packed[2:], weights.delta_d)
        grad_query, grad_pos, grad_negs = merge_split_gradients(packed[0], packed[1], packed[2:], weights.delta_d, weights.lambda_merge, weights.lambda_split)
        return weights.lambda_merge * merge + weights.lambda_split * split, numpy.concatenate([grad_query[None], grad_pos[None], grad_negs])

    return check_function(_value_and_gradient, vectors, rng, eps, max_coordinates)


def _case_seg_cluster(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    weights: LossWeights = GRADCHECK_WEIGHTS

    def _draw() -> tuple:
        return rng.normal(0.0, 0.5, size=(2, 4, 4, 3)), _random_labels(rng, (2, 4, 4), 3)

    values, labels = _redraw(_draw, lambda values, labels: _clustering_clear(values, labels, weights))

    def _value_and_gradient(field: numpy.ndarray) -> tuple[float, numpy.ndarray]:
        terms = seg_cluster_loss(field, labels, weights.delta_v, weights.delta_d, weights.gamma)
        return terms.total, seg_cluster_gradient(field, labels, weights.delta_v, weights.delta_d, weights.gamma)

    return check_function(_value_and_gradient, values, rng, eps, max_coordinates)


def _case_connectivity_loss(rng: numpy.random.Generator, eps: float, max_coordinates: int | None) -> float:
    weights: LossWeights = GRADCHECK_WEIGHTS

    def _draw() -> tuple:
        return rng.normal(0.0, 0.5, size=(2, 4, 5, 3)), _random_labels(rng, (2, 4, 5), 5)

    def _is_clear(values: numpy.ndarray, labels: numpy.ndarray) -> bool:
        means: dict[int, numpy.ndarray] = _segment_means(values, labels)
        split_distances: list[float] = [float(numpy.linalg.norm(means[anchor] - means[negative])) for anchor in (1, 2) for negative in (3, 4, 5)]
        return _clustering_clear(values, labels, weights) and _clear_of(split_distances, 2 * weights.delta_d)

    values, labels = _redraw(_draw, _is_clear)

    def _value_and_gradient(field: numpy.ndarray) -> tuple[float, numpy.ndarray]:
        components, gradient = connectivity_loss(field, labels, 1, 2, [3, 4, 5], weights)
        return components.total, gradient

    return check_function(_value_and_gradient, values, rng, eps, max_coordinates)


GRADIENT_CASES: dict[str, Callable[[numpy.random.Generator, float, int | None], float]] = {
    "conv3d": _case_conv3d,
    "conv2d": _case_conv2d,
    "relu": _case_relu,
    "norm_batch": _case_norm_batch,
    "norm_instance": _case_norm_instance,
    "norm_points": _case_norm_points,
    "squeeze_excitation": _case_squeeze_excitation,
    "affine": _case_affine,
    "spatial_max_pool": _case_spatial_max_pool,
    "volume_max_pool": _case_volume_max_pool,
    "point_max_pool": _case_point_max_pool,
    "upsample": _case_upsample,
    "crop_pad": _case_crop_pad,
    "global_max_pool": _case_global_max_pool,
    "set_abstraction": _case_set_abstraction,
    "residual_block": _case_residual_block,
    "point_classifier": _case_point_classifier,
    "mask_classifier": _case_mask_classifier,
    "embed_net": _case_embed_net,
    "sigmoid_bce": _case_sigmoid_bce,
    "merge_split_loss": _case_merge_split,
    "seg_cluster_loss": _case_seg_cluster,
    "connectivity_loss": _case_connectivity_loss,
}


def run_gradient_suite(instances: int, tolerance: float, seed: int = 0, names: Iterable[str] | None = None, eps: float = 1e-3, max_coordinates: int | None = 24) -> list[GradientCheckResult]:
    """
        Runs every named gradient case (all of them by default) on the given
        number of random instances & returns one result per case, holding
        the worst relative error seen.
    """

    selected: list[str] = list(GRADIENT_CASES) if names is None else list(names)
    unknown: list[str] = [name for name in selected if name not in GRADIENT_CASES]
    if unknown:
        raise ValueError(f"Unknown gradient check cases: {', '.join(unknown)}.")

    results: list[GradientCheckResult] = []

    case_index: int
    name: str
    for case_index, name in enumerate(selected):
        worst: float = 0.0

        instance: int
        for instance in range(instances):
            rng = numpy.random.default_rng([seed, case_index, instance])
            error: float = GRADIENT_CASES[name](rng, eps, max_coordinates)
            worst = error if not numpy.isfinite(error) else max(worst, error)

        result = GradientCheckResult(name=name, instances=instances, worst_error=worst, tolerance=tolerance)
        results.append(result)

        if result.passed:
            logging.info(f"Gradient check {name}: worst relative error {worst:.3e} over {instances} instances.")
        else:
            logging.warning(f"Gradient check {name} failed: worst relative error {worst:.3e} >= {tolerance:.1e}.")

    return results
