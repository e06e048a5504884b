"""
    Layer vocabulary shared by the embedding & connectivity networks.

    Volumetric activations are laid out (N, C, D, H, W); point activations are
    laid out (N, P, C) with channels last.
"""

import itertools

import numpy

from splitfix.exceptions import ShapeMismatchError
from splitfix.numerics.tensor import Layer, Parameter, he_normal


def sigmoid(z: numpy.ndarray) -> numpy.ndarray:
    """ Numerically stable logistic function. """

    z = numpy.asarray(z)
    positive: numpy.ndarray = z >= 0
    exp_negative_abs: numpy.ndarray = numpy.exp(-numpy.abs(z))

    return numpy.where(positive, 1 / (1 + exp_negative_abs), exp_negative_abs / (1 + exp_negative_abs))


class Conv3d(Layer):
    """
        3D convolution with stride 1 & zero "same" padding. Kernel sizes must
        be odd along every axis.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: tuple[int, int, int], rng: numpy.random.Generator, name: str) -> None:
        if any(size % 2 == 0 for size in kernel_size):
            raise ValueError("Convolution kernel sizes must be odd.")

        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size: tuple[int, int, int] = tuple(kernel_size)
        self.weight = Parameter(f"{name}.weight", he_normal(rng, (out_channels, in_channels, *kernel_size), fan_in=in_channels * int(numpy.prod(kernel_size))))
        self.bias = Parameter(f"{name}.bias", numpy.zeros(out_channels))
        self._padded: numpy.ndarray | None = None

    def _check_input(self, x: numpy.ndarray) -> None:
        self._require_ndim(x, 5)
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"{type(self).__name__} expects {self.in_channels} input channels.", expected=self.in_channels, actual=x.shape[1])

    @property
    def _padding(self) -> tuple[int, int, int]:
        return tuple(size // 2 for size in self.kernel_size)

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._check_input(x)

        _, _, depth, height, width = x.shape
        pad_z, pad_y, pad_x = self._padding
        padded: numpy.ndarray = numpy.pad(x, ((0, 0), (0, 0), (pad_z, pad_z), (pad_y, pad_y), (pad_x, pad_x)))
        weight: numpy.ndarray = self.weight.data

        output = numpy.zeros((self.out_channels, x.shape[0], depth, height, width), dtype=numpy.result_type(x, weight))

        offset: tuple[int, int, int]
        for offset in itertools.product(*(range(size) for size in self.kernel_size)):
            k, j, i = offset
            window: numpy.ndarray = padded[:, :, k:k + depth, j:j + height, i:i + width]
            output += numpy.tensordot(weight[:, :, k, j, i], window, axes=([1], [1]))

        if self.training:
            self._padded = padded

        return output.transpose(1, 0, 2, 3, 4) + self.bias.data[None, :, None, None, None]

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        padded: numpy.ndarray = self._padded
        _, _, depth, height, width = grad_output.shape
        pad_z, pad_y, pad_x = self._padding
        weight: numpy.ndarray = self.weight.data

        self.bias.grad += grad_output.sum(axis=(0, 2, 3, 4))
        grad_padded: numpy.ndarray = numpy.zeros_like(padded)

        offset: tuple[int, int, int]
        for offset in itertools.product(*(range(size) for size in self.kernel_size)):
            k, j, i = offset
            window: numpy.ndarray = padded[:, :, k:k + depth, j:j + height, i:i + width]
            self.weight.grad[:, :, k, j, i] += numpy.tensordot(grad_output, window, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
            grad_padded[:, :, k:k + depth, j:j + height, i:i + width] += numpy.tensordot(weight[:, :, k, j, i], grad_output, axes=([0], [1])).transpose(1, 0, 2, 3, 4)

        return grad_padded[:, :, pad_z:pad_z + depth, pad_y:pad_y + height, pad_x:pad_x + width]


class Conv2d(Conv3d):
    """ In-plane 2D convolution applied to every slice (a 1 x k x k 3D kernel). """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: numpy.random.Generator, name: str) -> None:
        super().__init__(in_channels, out_channels, (1, kernel_size, kernel_size), rng, name)


class ReLU(Layer):
    def __init__(self) -> None:
        self._mask: numpy.ndarray | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        mask: numpy.ndarray = x > 0
        if self.training:
            self._mask = mask

        return numpy.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        return numpy.where(self._mask, grad_output, 0).astype(grad_output.dtype, copy=False)


class Channel_Norm(Layer):
    """
        Per-channel normalization with learnable scale & shift. Batches of at
        least min_batch samples are normalized with batch statistics (which
        also update running statistics); smaller batches fall back to
        per-sample instance statistics. Evaluation mode uses the running
        statistics once any have been recorded.
    """

    def __init__(self, channels: int, name: str, channel_axis: int = 1, min_batch: int = 8, eps: float = 1e-5, momentum: float = 0.1) -> None:
        self.channels = channels
        self.channel_axis = channel_axis
        self.min_batch = min_batch
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(f"{name}.gamma", numpy.ones(channels))
        self.beta = Parameter(f"{name}.beta", numpy.zeros(channels))
        self.running_mean = Parameter(f"{name}.running_mean", numpy.zeros(channels), trainable=False)
        self.running_var = Parameter(f"{name}.running_var", numpy.ones(channels), trainable=False)
        self.tracked = Parameter(f"{name}.tracked", numpy.zeros(1), trainable=False)
        self._cache: tuple | None = None

    def _broadcast_shape(self, x: numpy.ndarray) -> list[int]:
        shape: list[int] = [1] * x.ndim
        shape[self.channel_axis % x.ndim] = self.channels

        return shape

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        axis: int = self.channel_axis % x.ndim
        if x.shape[axis] != self.channels:
            raise ShapeMismatchError("Channel_Norm channel count does not match its input.", expected=self.channels, actual=x.shape[axis])

        shape: list[int] = self._broadcast_shape(x)
        batch_statistics: bool = x.shape[0] >= self.min_batch
        reduce_axes: tuple[int, ...] = tuple(a for a in range(x.ndim) if a != axis and (batch_statistics or a != 0))
        use_running: bool = not self.training and self.tracked.data[0] > 0

        if use_running:
            mean: numpy.ndarray = self.running_mean.data.reshape(shape).astype(x.dtype)
            variance: numpy.ndarray = self.running_var.data.reshape(shape).astype(x.dtype)
        else:
            mean = x.mean(axis=reduce_axes, keepdims=True)
            variance = x.var(axis=reduce_axes, keepdims=True)

            if self.training and batch_statistics:
                self.running_mean.data = ((1 - self.momentum) * self.running_mean.data + self.momentum * mean.reshape(-1)).astype(self.running_mean.data.dtype)
                self.running_var.data = ((1 - self.momentum) * self.running_var.data + self.momentum * variance.reshape(-1)).astype(self.running_var.data.dtype)
                self.tracked.data[0] = 1

        inverse_std: numpy.ndarray = 1 / numpy.sqrt(variance + self.eps)
        normalized: numpy.ndarray = (x - mean) * inverse_std

        if self.training:
            self._cache = (normalized, inverse_std, reduce_axes, use_running)

        return self.gamma.data.reshape(shape) * normalized + self.beta.data.reshape(shape)

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        normalized, inverse_std, reduce_axes, use_running = self._cache
        shape: list[int] = self._broadcast_shape(grad_output)
        axis: int = self.channel_axis % grad_output.ndim
        parameter_axes: tuple[int, ...] = tuple(a for a in range(grad_output.ndim) if a != axis)

        self.gamma.grad += (grad_output * normalized).sum(axis=parameter_axes)
        self.beta.grad += grad_output.sum(axis=parameter_axes)

        grad_normalized: numpy.ndarray = grad_output * self.gamma.data.reshape(shape)
        if use_running:
            return grad_normalized * inverse_std

        count = int(numpy.prod([grad_output.shape[a] for a in reduce_axes]))

        return inverse_std / count * (
            count * grad_normalized
            - grad_normalized.sum(axis=reduce_axes, keepdims=True)
            - normalized * (grad_normalized * normalized).sum(axis=reduce_axes, keepdims=True)
        )


class Squeeze_Excitation(Layer):
    """
        Channel gating: global average pooling, a bottleneck of two dense maps
        (ReLU then sigmoid) & per-channel rescaling of the input.
    """

    def __init__(self, channels: int, rng: numpy.random.Generator, name: str, reduction: int = 4) -> None:
        hidden: int = max(1, channels // reduction)

        self.channels = channels
        self.squeeze_weight = Parameter(f"{name}.squeeze_weight", he_normal(rng, (hidden, channels), fan_in=channels))
        self.squeeze_bias = Parameter(f"{name}.squeeze_bias", numpy.zeros(hidden))
        self.excite_weight = Parameter(f"{name}.excite_weight", he_normal(rng, (channels, hidden), fan_in=hidden))
        self.excite_bias = Parameter(f"{name}.excite_bias", numpy.zeros(channels))
        self._cache: tuple | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)
        if x.shape[1] != self.channels:
            raise ShapeMismatchError("Squeeze_Excitation channel count does not match its input.", expected=self.channels, actual=x.shape[1])

        squeezed: numpy.ndarray = x.mean(axis=(2, 3, 4))
        hidden_input: numpy.ndarray = squeezed @ self.squeeze_weight.data.T + self.squeeze_bias.data
        hidden: numpy.ndarray = numpy.maximum(hidden_input, 0)
        gate: numpy.ndarray = sigmoid(hidden @ self.excite_weight.data.T + self.excite_bias.data).astype(x.dtype)

        if self.training:
            self._cache = (x, squeezed, hidden_input, hidden, gate)

        return x * gate[:, :, None, None, None]

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        x, squeezed, hidden_input, hidden, gate = self._cache

        grad_gate: numpy.ndarray = (grad_output * x).sum(axis=(2, 3, 4))
        grad_excite_input: numpy.ndarray = grad_gate * gate * (1 - gate)
        self.excite_weight.grad += grad_excite_input.T @ hidden
        self.excite_bias.grad += grad_excite_input.sum(axis=0)

        grad_hidden_input: numpy.ndarray = (grad_excite_input @ self.excite_weight.data) * (hidden_input > 0)
        self.squeeze_weight.grad += grad_hidden_input.T @ squeezed
        self.squeeze_bias.grad += grad_hidden_input.sum(axis=0)

        grad_squeezed: numpy.ndarray = grad_hidden_input @ self.squeeze_weight.data
        voxel_count = int(numpy.prod(x.shape[2:]))

        return grad_output * gate[:, :, None, None, None] + grad_squeezed[:, :, None, None, None] / voxel_count


class Affine(Layer):
    """ Dense affine map over the last axis, shared across every leading index (every point). """

    def __init__(self, in_features: int, out_features: int, rng: numpy.random.Generator, name: str) -> None:
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(f"{name}.weight", he_normal(rng, (in_features, out_features), fan_in=in_features))
        self.bias = Parameter(f"{name}.bias", numpy.zeros(out_features))
        self._input: numpy.ndarray | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatchError("Affine input feature count does not match.", expected=self.in_features, actual=x.shape[-1])

        if self.training:
            self._input = x

        return x @ self.weight.data + self.bias.data

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        flat_input: numpy.ndarray = self._input.reshape(-1, self.in_features)
        flat_grad: numpy.ndarray = grad_output.reshape(-1, self.out_features)

        self.weight.grad += flat_input.T @ flat_grad
        self.bias.grad += flat_grad.sum(axis=0)

        return grad_output @ self.weight.data.T


class Spatial_Max_Pool(Layer):
    """
        Non-overlapping max pooling over (D, H, W) windows. Trailing voxels
        that do not fill a window are dropped; ties pick the first voxel.
    """

    def __init__(self, window: tuple[int, int, int] = (1, 2, 2)) -> None:
        self.window: tuple[int, int, int] = tuple(window)
        self._cache: tuple | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)

        batch, channels, depth, height, width = x.shape
        window_z, window_y, window_x = self.window
        pooled: tuple[int, int, int] = (depth // window_z, height // window_y, width // window_x)
        if 0 in pooled:
            raise ShapeMismatchError("Spatial_Max_Pool input is smaller than its window.", expected=self.window, actual=x.shape[2:])

        cropped: numpy.ndarray = x[:, :, :pooled[0] * window_z, :pooled[1] * window_y, :pooled[2] * window_x]
        blocks: numpy.ndarray = cropped.reshape(batch, channels, pooled[0], window_z, pooled[1], window_y, pooled[2], window_x)
        blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(batch, channels, *pooled, -1)

        indices: numpy.ndarray = blocks.argmax(axis=-1)
        if self.training:
            self._cache = (indices, x.shape)

        return numpy.take_along_axis(blocks, indices[..., None], axis=-1)[..., 0]

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        indices, input_shape = self._cache
        batch, channels, *pooled = grad_output.shape
        window_z, window_y, window_x = self.window

        grad_blocks = numpy.zeros((*grad_output.shape, window_z * window_y * window_x), dtype=grad_output.dtype)
        numpy.put_along_axis(grad_blocks, indices[..., None], grad_output[..., None], axis=-1)

        grad_cropped: numpy.ndarray = grad_blocks.reshape(batch, channels, *pooled, window_z, window_y, window_x)
        grad_cropped = grad_cropped.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(batch, channels, pooled[0] * window_z, pooled[1] * window_y, pooled[2] * window_x)

        grad_input = numpy.zeros(input_shape, dtype=grad_output.dtype)
        grad_input[:, :, :grad_cropped.shape[2], :grad_cropped.shape[3], :grad_cropped.shape[4]] = grad_cropped

        return grad_input


class Axis_Max_Pool(Layer):
    """
        Max pooling over one axis, such as the points of a point cloud or the
        neighbours of a group. Ties pick the first index.
    """

    def __init__(self, axis: int = 1) -> None:
        self.axis = axis
        self._cache: tuple | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        indices: numpy.ndarray = numpy.expand_dims(x.argmax(axis=self.axis), self.axis)
        if self.training:
            self._cache = (indices, x.shape)

        return numpy.take_along_axis(x, indices, axis=self.axis).squeeze(self.axis)

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        indices, input_shape = self._cache

        grad_input = numpy.zeros(input_shape, dtype=grad_output.dtype)
        numpy.put_along_axis(grad_input, indices, numpy.expand_dims(grad_output, self.axis), axis=self.axis)

        return grad_input


class Global_Max_Pool(Layer):
    """ Max pooling of (N, C, D, H, W) over all voxels, giving (N, C). """

    def __init__(self) -> None:
        self.pool = Axis_Max_Pool(axis=2)
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)
        self._shape = x.shape

        return self.pool.forward(x.reshape(x.shape[0], x.shape[1], -1))

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        return self.pool.backward(grad_output).reshape(self._shape)


class Upsample(Layer):
    """ Nearest-neighbour upsampling of (D, H, W) by integer factors. """

    def __init__(self, factor: tuple[int, int, int] = (1, 2, 2)) -> None:
        self.factor: tuple[int, int, int] = tuple(factor)

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)

        factor_z, factor_y, factor_x = self.factor

        return x.repeat(factor_z, axis=2).repeat(factor_y, axis=3).repeat(factor_x, axis=4)

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        batch, channels, depth, height, width = grad_output.shape
        factor_z, factor_y, factor_x = self.factor

        return grad_output.reshape(batch, channels, depth // factor_z, factor_z, height // factor_y, factor_y, width // factor_x, factor_x).sum(axis=(3, 5, 7))


class Crop_Pad(Layer):
    """
        Crops (N, C, D, H, W) to a leading (D, H, W) corner; the backward pass
        zero-pads the gradient back to the original input size.
    """

    def __init__(self, target: tuple[int, int, int]) -> None:
        self.target: tuple[int, int, int] = tuple(target)
        self._shape: tuple[int, ...] | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)
        if any(size < target for size, target in zip(x.shape[2:], self.target)):
            raise ShapeMismatchError("Crop_Pad input is smaller than its crop target.", expected=self.target, actual=x.shape[2:])

        self._shape = x.shape
        depth, height, width = self.target

        return x[:, :, :depth, :height, :width]

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        grad_input = numpy.zeros(self._shape, dtype=grad_output.dtype)
        depth, height, width = self.target
        grad_input[:, :, :depth, :height, :width] = grad_output

        return grad_input
