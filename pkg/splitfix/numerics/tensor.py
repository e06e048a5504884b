"""
    Trainable parameter & layer base classes for the numerics package.

    Activations are plain numpy arrays. Every layer caches what its backward
    pass needs during a training-mode forward pass, so each layer instance
    must be used once per forward/backward round.
"""

from typing import Iterator

import numpy

from splitfix.exceptions import ShapeMismatchError

DEFAULT_DTYPE = numpy.float32


class Parameter:
    """
        Named array of trainable values together with its gradient buffer.
        Non-trainable parameters (running statistics) are saved in
        checkpoints but never updated by the optimizer.
    """

    def __init__(self, name: str, data: numpy.ndarray, trainable: bool = True) -> None:
        data = numpy.asarray(data)

        self.name = name
        self.data: numpy.ndarray = data.astype(data.dtype if numpy.issubdtype(data.dtype, numpy.floating) else DEFAULT_DTYPE, copy=True)
        self.grad: numpy.ndarray = numpy.zeros_like(self.data)
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = numpy.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)


class Layer:
    """
        Base class of every layer & model. Parameters & sub-layers are found
        through the instance attributes, in the order they were assigned,
        which fixes the parameter declaration order used by checkpoints.
    """

    training: bool = True

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        raise NotImplementedError

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        """
            Accumulates parameter gradients for the last forward pass & returns
            the gradient with respect to that pass's input.
        """

        raise NotImplementedError

    def __call__(self, x: numpy.ndarray) -> numpy.ndarray:
        return self.forward(x)

    def children(self) -> Iterator["Layer"]:
        value: object
        for value in vars(self).values():
            if isinstance(value, Layer):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (item for item in value if isinstance(item, Layer))

    def parameters(self) -> list[Parameter]:
        """ Returns every parameter of this layer & its sub-layers, in declaration order. """

        found: list[Parameter] = []

        value: object
        for value in vars(self).values():
            if isinstance(value, Parameter):
                found.append(value)
            elif isinstance(value, Layer):
                found.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                found.extend(parameter for item in value if isinstance(item, Layer) for parameter in item.parameters())

        return found

    def trainable_parameters(self) -> list[Parameter]:
        return [parameter for parameter in self.parameters() if parameter.trainable]

    def zero_grad(self) -> None:
        parameter: Parameter
        for parameter in self.parameters():
            parameter.zero_grad()

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode

        child: Layer
        for child in self.children():
            child.train(mode)

        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def astype(self, dtype) -> "Layer":
        """ Casts every parameter to the given float dtype (float64 for gradient checks). """

        parameter: Parameter
        for parameter in self.parameters():
            parameter.astype(dtype)

        return self

    def _require_ndim(self, x: numpy.ndarray, ndim: int) -> None:
        if x.ndim != ndim:
            raise ShapeMismatchError(f"{type(self).__name__} expects a {ndim}D input.", expected=ndim, actual=x.ndim)


class Sequential(Layer):
    """ Layers applied one after another. """

    def __init__(self, *layers: Layer) -> None:
        self.layers: list[Layer] = list(layers)

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        layer: Layer
        for layer in self.layers:
            x = layer.forward(x)

        return x

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        layer: Layer
        for layer in reversed(self.layers):
            grad_output = layer.backward(grad_output)

        return grad_output


def he_normal(rng: numpy.random.Generator, shape: tuple[int, ...], fan_in: int) -> numpy.ndarray:
    """ Returns He-normal initial weights for a layer with the given fan-in. """

    return (rng.normal(0.0, numpy.sqrt(2.0 / fan_in), shape)).astype(DEFAULT_DTYPE)
