"""Trainable visual/audio encoders and the small heads stacked on top of them."""

from __future__ import annotations

from . import ops
from .errors import DimensionError
from .nn import BatchNorm, Conv2d, Linear, Module


class ConvBlock(Module):
    """conv3x3 -> batch norm -> gelu -> 2x2 max pool."""

    def __init__(self, c_in, c_out, rng):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, rng, bias=False)
        self.bn = BatchNorm(c_out)

    def forward(self, x):
        return ops.max_pool2d(ops.gelu(self.bn(self.conv(x))))


class VisualEncoder(Module):
    def __init__(self, channels=(32, 64, 128), rng=None):
        super().__init__()
        plan = (3,) + tuple(channels)
        self.blocks = [ConvBlock(a, b, rng) for a, b in zip(plan[:-1], plan[1:])]
        self.stride = 2 ** len(self.blocks)
        self.out_channels = plan[-1]

    def forward(self, images):
        """(N, 3, H, W) -> (N, c_v, H/8, W/8)."""
        h, w = images.shape[-2:]
        if h % self.stride or w % self.stride:
            raise DimensionError(f"image size {h}x{w} is not divisible by {self.stride}")
        x = images
        for block in self.blocks:
            x = block(x)
        return x


class AudioEncoder(Module):
    def __init__(self, spec_shape=(32, 32), channels=(16, 32), c_a=64, rng=None):
        super().__init__()
        self.spec_shape = tuple(spec_shape)
        plan = (1,) + tuple(channels)
        self.blocks = [ConvBlock(a, b, rng) for a, b in zip(plan[:-1], plan[1:])]
        self.fc = Linear(plan[-1], c_a, rng)

    def forward(self, spec):
        """(N, F, Tm) -> (N, c_a)."""
        if tuple(spec.shape[-2:]) != self.spec_shape:
            raise DimensionError(f"spectrogram shape {spec.shape[-2:]} != configured {self.spec_shape}")
        x = spec.reshape((spec.shape[0], 1) + self.spec_shape)
        for block in self.blocks:
            x = block(x)
        return self.fc(x.mean(axis=(2, 3)))


class AudioTransform(Module):
    """g: FC -> ReLU -> FC, lifting the audio vector into the visual channel space."""

    def __init__(self, c_a, hidden, c_v, rng):
        super().__init__()
        self.fc1 = Linear(c_a, hidden, rng)
        self.fc2 = Linear(hidden, c_v, rng)

    def forward(self, f_a):
        return self.fc2(ops.relu(self.fc1(f_a)))


class Projector(Module):
    def __init__(self, c_v, hidden, d_z, rng):
        super().__init__()
        self.fc1 = Linear(c_v, hidden, rng, bias=False)
        self.bn1 = BatchNorm(hidden)
        self.fc2 = Linear(hidden, d_z, rng, bias=False)
        self.bn2 = BatchNorm(d_z)

    def forward(self, f_av):
        return self.bn2(self.fc2(ops.relu(self.bn1(self.fc1(f_av)))))


class Predictor(Module):
    """Bottleneck MLP d_z -> hidden -> d_z."""

    def __init__(self, d_z, hidden, rng):
        super().__init__()
        self.fc1 = Linear(d_z, hidden, rng, bias=False)
        self.bn1 = BatchNorm(hidden)
        self.fc2 = Linear(hidden, d_z, rng)

    def forward(self, z):
        return self.fc2(ops.relu(self.bn1(self.fc1(z))))


def encode_image(encoder, view):
    """Single (3, H, W) view or a batch; returns f_v with matching batching."""
    if view.ndim == 3:
        out = encoder(view.reshape((1,) + view.shape))
        return out.reshape(out.shape[1:])
    return encoder(view)


def encode_audio(encoder, spec):
    if spec.ndim == 2:
        out = encoder(spec.reshape((1,) + spec.shape))
        return out.reshape(out.shape[1:])
    return encoder(spec)
