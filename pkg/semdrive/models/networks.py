"""
Keras building blocks: MLPs, the convolutional image encoder and transposed-convolution decoders
"""

import functools
import math
from typing import NamedTuple, Sequence

import tensorflow as tf

from ..utils.errors import ArgumentError

keras = tf.keras

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def normalize_image(pixels: tf.Tensor, dtype: tf.DType) -> tf.Tensor:
    """Map [0, 255] intensities to [-0.5, 0.5]"""
    return tf.cast(pixels, dtype) / 255.0 - 0.5


def conv_stages(image_size: int) -> int:
    """Number of stride-2 stages between a 4x4 feature map and the full image"""
    stages = int(round(math.log2(image_size))) - 2
    if stages < 1 or 4 * 2 ** stages != image_size:
        raise ArgumentError(f"image_size must be a power of two >= 8, got {image_size}")
    return stages


def mlp(
    sizes: Sequence[int],
    out_size: int,
    dtype: str = "float32",
    activation: str = "elu",
    name: str = "mlp",
) -> keras.Sequential:
    """Feed-forward stack with `activation` on hidden layers and a linear output"""
    layers = [keras.layers.Dense(size, activation=activation, dtype=dtype) for size in sizes]
    layers.append(keras.layers.Dense(out_size, dtype=dtype))
    return keras.Sequential(layers, name=name)


class UnitGaussian(NamedTuple):
    """Diagonal Gaussian with unit variance; `mean` carries the prediction"""

    mean: tf.Tensor

    def nll(self, target: tf.Tensor) -> tf.Tensor:
        """Elementwise negative log-likelihood"""
        return 0.5 * tf.square(tf.cast(target, self.mean.dtype) - self.mean) + HALF_LOG_2PI

    def mode(self) -> tf.Tensor:
        return self.mean


class ConvEncoder(keras.Model):
    """Strided convolutions from an H x W x 3 image down to 4 x 4, flattened"""

    def __init__(self, image_size: int, depth: int = 32, dtype: str = "float32", name: str = "encoder"):
        super().__init__(name=name, dtype=dtype)
        self.image_size = image_size
        conv = functools.partial(
            keras.layers.Conv2D, kernel_size=4, strides=2, padding="same", activation="elu", dtype=dtype
        )
        self.network = keras.Sequential(
            [conv(depth * 2 ** i) for i in range(conv_stages(image_size))] + [keras.layers.Flatten(dtype=dtype)]
        )

    def call(self, pixels: tf.Tensor) -> tf.Tensor:
        return self.network(normalize_image(pixels, self.dtype))


class ConvDecoder(keras.Model):
    """Transposed convolutions from a feature vector to per-pixel Gaussian means"""

    def __init__(self, image_size: int, depth: int = 32, dtype: str = "float32", name: str = "decoder"):
        super().__init__(name=name, dtype=dtype)
        stages = conv_stages(image_size)
        top = depth * 2 ** (stages - 1)
        deconv = functools.partial(
            keras.layers.Conv2DTranspose, kernel_size=4, strides=2, padding="same", activation="elu", dtype=dtype
        )
        self.network = keras.Sequential(
            [
                keras.layers.Dense(4 * 4 * top, dtype=dtype),
                keras.layers.Reshape((4, 4, top), dtype=dtype),
            ]
            + [deconv(depth * 2 ** (stages - 1 - i)) for i in range(stages)]
            + [keras.layers.Conv2D(3, kernel_size=3, padding="same", dtype=dtype)]
        )

    def call(self, features: tf.Tensor) -> tf.Tensor:
        return self.network(features)
