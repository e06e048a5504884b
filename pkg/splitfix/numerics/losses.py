"""
    Scalar objectives on network outputs, returned with their gradients.
"""

import numpy

from splitfix.exceptions import ShapeMismatchError
from splitfix.numerics.layers import sigmoid


def sigmoid_binary_cross_entropy(logits: numpy.ndarray, labels: numpy.ndarray) -> tuple[float, numpy.ndarray]:
    """
        Returns the mean binary cross-entropy of sigmoid(logits) against 0/1
        labels & its gradient with respect to the logits. Computed from the
        logits directly so that large magnitudes never overflow.
    """

    logits = numpy.asarray(logits)
    labels = numpy.asarray(labels, dtype=logits.dtype)
    if logits.shape != labels.shape:
        raise ShapeMismatchError("Logits & labels must have the same shape.", expected=logits.shape, actual=labels.shape)

    per_sample: numpy.ndarray = numpy.maximum(logits, 0) - logits * labels + numpy.log1p(numpy.exp(-numpy.abs(logits)))
    gradient: numpy.ndarray = (sigmoid(logits) - labels) / logits.size

    return float(per_sample.mean()), gradient.astype(logits.dtype)
