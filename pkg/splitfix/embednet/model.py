"""
    Dense volumetric embedding network: a three-scale residual symmetric
    U-Net mixing in-plane 2D & 3D convolutions, with squeeze-excitation
    gating at every scale & additive skip connections.
"""

from dataclasses import dataclass

import numpy

from splitfix.exceptions import ShapeMismatchError
from splitfix.numerics.layers import Channel_Norm, Conv2d, Conv3d, Crop_Pad, ReLU, Spatial_Max_Pool, Squeeze_Excitation, Upsample
from splitfix.numerics.tensor import Layer

ARCHITECTURE_TAG = "embednet-rsunet-v1"
IN_PLANE_MULTIPLE = 4  # NOTE: Two in-plane pooling steps of 2


@dataclass
class EmbeddingField:
    """ Per-voxel k-dimensional embedding grid, stored as (D, H, W, k) values. """

    values: numpy.ndarray

    def __post_init__(self) -> None:
        self.values = numpy.asarray(self.values)
        if self.values.ndim != 4:
            raise ShapeMismatchError("EmbeddingField values must be (D, H, W, k).", expected=4, actual=self.values.ndim)

    @property
    def dims(self) -> tuple[int, int, int]:
        """ Grid size in (W, H, D) order. """

        depth, height, width, _ = self.values.shape

        return width, height, depth

    @property
    def k(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def from_intensity(cls, image: numpy.ndarray) -> "EmbeddingField":
        """ Returns the raw image as a 1-channel pseudo-embedding. """

        return cls(values=numpy.asarray(image, dtype=numpy.float32)[..., None])


class Residual_Block(Layer):
    """
        In-plane conv, norm & ReLU followed by a 3D conv, norm &
        squeeze-excitation gate, added to a (projected when the channel
        count changes) shortcut & passed through a final ReLU.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: numpy.random.Generator, name: str) -> None:
        self.conv_in_plane = Conv2d(in_channels, out_channels, 3, rng, f"{name}.conv_in_plane")
        self.norm_in_plane = Channel_Norm(out_channels, f"{name}.norm_in_plane")
        self.relu_in_plane = ReLU()
        self.conv_volume = Conv3d(out_channels, out_channels, (3, 3, 3), rng, f"{name}.conv_volume")
        self.norm_volume = Channel_Norm(out_channels, f"{name}.norm_volume")
        self.gate = Squeeze_Excitation(out_channels, rng, f"{name}.gate")
        self.shortcut: Conv3d | None = Conv3d(in_channels, out_channels, (1, 1, 1), rng, f"{name}.shortcut") if in_channels != out_channels else None
        self.relu_out = ReLU()

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        main: numpy.ndarray = self.relu_in_plane(self.norm_in_plane(self.conv_in_plane(x)))
        main = self.gate(self.norm_volume(self.conv_volume(main)))
        shortcut: numpy.ndarray = self.shortcut(x) if self.shortcut is not None else x

        return self.relu_out(main + shortcut)

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        grad_sum: numpy.ndarray = self.relu_out.backward(grad_output)

        grad_main: numpy.ndarray = self.conv_volume.backward(self.norm_volume.backward(self.gate.backward(grad_sum)))
        grad_main = self.conv_in_plane.backward(self.norm_in_plane.backward(self.relu_in_plane.backward(grad_main)))
        grad_shortcut: numpy.ndarray = self.shortcut.backward(grad_sum) if self.shortcut is not None else grad_sum

        return grad_main + grad_shortcut


class EmbedNet(Layer):
    """
        Maps a (N, 1, D, H, W) image batch to (N, k, D, H, W) embeddings. Any
        D works; H & W are zero-padded up to a multiple of 4 internally & the
        output is cropped back to the input size.
    """

    def __init__(self, channels: tuple[int, int, int] = (8, 16, 32), k: int = 16, seed: int = 0) -> None:
        rng = numpy.random.default_rng(seed)
        top, middle, bottom = channels

        self.channels: tuple[int, int, int] = tuple(channels)
        self.k = k
        self.encoder_top = Residual_Block(1, top, rng, "encoder_top")
        self.pool_top = Spatial_Max_Pool((1, 2, 2))
        self.encoder_middle = Residual_Block(top, middle, rng, "encoder_middle")
        self.pool_middle = Spatial_Max_Pool((1, 2, 2))
        self.bottleneck = Residual_Block(middle, bottom, rng, "bottleneck")
        self.upsample_middle = Upsample((1, 2, 2))
        self.reduce_middle = Conv3d(bottom, middle, (1, 1, 1), rng, "reduce_middle")
        self.decoder_middle = Residual_Block(middle, middle, rng, "decoder_middle")
        self.upsample_top = Upsample((1, 2, 2))
        self.reduce_top = Conv3d(middle, top, (1, 1, 1), rng, "reduce_top")
        self.decoder_top = Residual_Block(top, top, rng, "decoder_top")
        self.head = Conv3d(top, k, (1, 1, 1), rng, "head")
        self.crop: Crop_Pad | None = None
        self._input_shape: tuple[int, ...] | None = None

    def forward(self, x: numpy.ndarray) -> numpy.ndarray:
        self._require_ndim(x, 5)
        if x.shape[1] != 1:
            raise ShapeMismatchError("EmbedNet expects single-channel images.", expected=1, actual=x.shape[1])

        depth, height, width = x.shape[2:]
        padded_height: int = -(-height // IN_PLANE_MULTIPLE) * IN_PLANE_MULTIPLE
        padded_width: int = -(-width // IN_PLANE_MULTIPLE) * IN_PLANE_MULTIPLE
        x = numpy.pad(x, ((0, 0), (0, 0), (0, 0), (0, padded_height - height), (0, padded_width - width)))
        self.crop = Crop_Pad((depth, height, width))
        self._input_shape = (x.shape[0], 1, depth, height, width)

        top: numpy.ndarray = self.encoder_top(x)
        middle: numpy.ndarray = self.encoder_middle(self.pool_top(top))
        bottom: numpy.ndarray = self.bottleneck(self.pool_middle(middle))

        decoded: numpy.ndarray = self.decoder_middle(self.reduce_middle(self.upsample_middle(bottom)) + middle)
        decoded = self.decoder_top(self.reduce_top(self.upsample_top(decoded)) + top)

        return self.crop(self.head(decoded))

    def backward(self, grad_output: numpy.ndarray) -> numpy.ndarray:
        grad_decoded: numpy.ndarray = self.head.backward(self.crop.backward(grad_output))

        grad_top_sum: numpy.ndarray = self.decoder_top.backward(grad_decoded)
        grad_middle_decoded: numpy.ndarray = self.upsample_top.backward(self.reduce_top.backward(grad_top_sum))

        grad_middle_sum: numpy.ndarray = self.decoder_middle.backward(grad_middle_decoded)
        grad_bottom: numpy.ndarray = self.upsample_middle.backward(self.reduce_middle.backward(grad_middle_sum))

        grad_middle: numpy.ndarray = self.pool_middle.backward(self.bottleneck.backward(grad_bottom)) + grad_middle_sum
        grad_top: numpy.ndarray = self.pool_top.backward(self.encoder_middle.backward(grad_middle)) + grad_top_sum

        _, _, depth, height, width = self._input_shape

        return self.encoder_top.backward(grad_top)[:, :, :depth, :height, :width]


def embed_forward(model: EmbedNet, image: numpy.ndarray) -> EmbeddingField:
    """
        Returns the embedding field of one (D, H, W) image crop, computed in
        evaluation mode.
    """

    image = numpy.asarray(image, dtype=numpy.float32)
    if image.ndim != 3:
        raise ShapeMismatchError("Image crops must be (D, H, W) grids.", expected=3, actual=image.ndim)

    was_training: bool = model.training
    model.eval()
    try:
        output: numpy.ndarray = model.forward(image[None, None])
    finally:
        model.train(was_training)

    return EmbeddingField(values=output[0].transpose(1, 2, 3, 0))
