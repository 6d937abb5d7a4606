"""The three-stream model: two visual views and one audio stream."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention, ops
from .encoders import AudioEncoder, AudioTransform, Predictor, Projector, VisualEncoder
from .errors import ConfigurationError
from .nn import Conv2d, Module
from .objective import infonce_baseline, same_class_mask, sspl_loss
from .pcm import PCM, PCMConfig
from .tensor import Tensor, concat, no_grad


@dataclass
class ModelConfig:
    image_size: int = 64
    spec_shape: tuple = (32, 32)
    visual_channels: tuple = (32, 64, 128)
    audio_channels: tuple = (16, 32)
    c_a: int = 64
    g_hidden: int = 128
    proj_hidden: int = 128
    d_z: int = 128
    pred_hidden: int = 32
    use_pcm: bool = True
    pcm: PCMConfig = field(default_factory=PCMConfig)
    scaling: str = "minmax"
    fusion: str = "attention"

    @property
    def c_v(self):
        return self.visual_channels[-1]

    @property
    def feature_size(self):
        return self.image_size // 2 ** len(self.visual_channels)

    def validate(self):
        if self.scaling not in attention.SCALING_METHODS:
            raise ConfigurationError(f"unknown scaling method {self.scaling!r}")
        if self.fusion not in attention.FUSION_MODES:
            raise ConfigurationError(f"unknown fusion mode {self.fusion!r}")
        if self.use_pcm:
            self.pcm.validate(self.c_v, self.c_a)


HEAD_MODULES = ("projector", "predictor")


class SSPLModel(Module):
    def __init__(self, cfg=None, seed=0):
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.visual = VisualEncoder(cfg.visual_channels, rng)
        self.audio = AudioEncoder(cfg.spec_shape, cfg.audio_channels, cfg.c_a, rng)
        self.transform = AudioTransform(cfg.c_a, cfg.g_hidden, cfg.c_v, rng)
        self.pcm = PCM(cfg.pcm, cfg.c_v, cfg.c_a, cfg.feature_size, rng) if cfg.use_pcm else None
        self.concat_proj = Conv2d(2 * cfg.c_v, cfg.c_v, 1, rng) if cfg.fusion == "concat" else None
        self.projector = Projector(cfg.c_v, cfg.proj_hidden, cfg.d_z, rng)
        self.predictor = Predictor(cfg.d_z, cfg.pred_hidden, rng)

    def param_groups(self):
        """(head parameters, remaining parameters)."""
        heads, rest = [], []
        for name, p in self.named_parameters():
            (heads if name.split(".")[0] in HEAD_MODULES else rest).append(p)
        return heads, rest

    # -- streams -------------------------------------------------------------
    def visual_features(self, images, f_a, cycles=None, every_step=False):
        """f_v, refined by the PCM when enabled."""
        f_v = self.visual(images)
        if self.pcm is None:
            return [f_v] if every_step else f_v
        return self.pcm.run(f_v, f_a, cycles, every_step=every_step)

    def fuse(self, f_v, fa_t):
        return attention.fuse(f_v, fa_t, self.cfg.fusion, self.cfg.scaling, self.concat_proj)

    # -- objectives ----------------------------------------------------------
    def embed(self, images, spec):
        """(z, Pred(z)) for a batch of views and their spectrograms."""
        f_a = self.audio(spec)
        f_v = self.visual_features(images, f_a)
        f_av, _ = self.fuse(f_v, self.transform(f_a))
        z = self.projector(f_av)
        return z, self.predictor(z)

    def sspl_step(self, view1, view2, spec, use_stop_gradient=True):
        """Loss report for one batch of paired views; both views share one pass."""
        n = view1.shape[0]
        z, p = self.embed(concat([view1, view2], axis=0), concat([spec, spec], axis=0))
        return sspl_loss(z[:n], z[n:], use_stop_gradient=use_stop_gradient, p1=p[:n], p2=p[n:])

    def contrastive_step(self, view, spec, labels=None, temperature=0.07):
        """InfoNCE comparator; with ``labels`` same-class negatives are masked out."""
        f_a = self.audio(spec)
        fa_t = self.transform(f_a)
        f_v = self.visual_features(view, f_a)
        f_av, _ = self.fuse(f_v, fa_t)
        mask = same_class_mask(labels) if labels is not None else None
        return infonce_baseline(f_av, fa_t, temperature, mask)

    # -- inference -----------------------------------------------------------
    def similarity(self, images, spec, cycles=None, every_step=False):
        """Raw (N, h, w) similarity maps; a list per cycle with ``every_step``."""
        with no_grad():
            f_a = self.audio(Tensor(spec) if not isinstance(spec, Tensor) else spec)
            fa_t = self.transform(f_a)
            images = Tensor(images) if not isinstance(images, Tensor) else images
            feats = self.visual_features(images, f_a, cycles, every_step=every_step)
            if every_step:
                return [attention.cosine_map(fa_t, f).data for f in feats]
            return attention.cosine_map(fa_t, feats).data

    def localization_map(self, images, spec, cycles=None):
        """Min-max scaled maps resized to image resolution, (N, H, W)."""
        return to_image_scale(self.similarity(images, spec, cycles), self.cfg.image_size)


def to_image_scale(sim, size):
    with no_grad():
        up = ops.bilinear_resize(Tensor(np.asarray(sim, dtype=np.float64)), (size, size))
        return attention.minmax(up).data
