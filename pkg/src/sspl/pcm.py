"""Predictive coding module: iterative cross-modal feature alignment.

Layer 0 holds the audio feature (lifted to a 1x1 map), layer L is predicted
by the visual feature map. Each cycle runs a top-down feedback sweep, where
every layer moves toward the prediction made by the layer above, followed by
a bottom-up feedforward sweep, where every layer absorbs the prediction error
of the layer below. The top representation is finally mapped back to the
visual feature space with a 1x1 convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigurationError
from .nn import Conv2d, ConvTranspose2d, Module, parameter
from .tensor import Tensor, as_tensor


@dataclass
class PCMConfig:
    layers: int = 3
    cycles: int = 5
    # top -> bottom; the top entry must equal the visual channel count
    channels: tuple = (128, 128, 64)
    activation: str = "gelu"
    use_bn: bool = True
    learn_rates: bool = True
    a_init: float = 0.1
    b_init: float = 0.5
    kernel_size: int = 3
    downsample: bool = True

    def validate(self, c_v, c_a):
        if self.layers < 1 or self.cycles < 1:
            raise ConfigurationError("PCM needs layers >= 1 and cycles >= 1")
        if len(self.channels) != self.layers:
            raise ConfigurationError(f"{len(self.channels)} channel entries for {self.layers} layers")
        if self.channels[0] != c_v:
            raise ConfigurationError(f"top PCM layer has {self.channels[0]} channels, visual feature has {c_v}")
        if self.learn_rates and not (self.a_init > 0 and 0 < self.b_init < 1):
            raise ConfigurationError("learnable rates need a_init > 0 and 0 < b_init < 1")


@dataclass
class PCMState:
    """Per-layer tensors indexed 0..L; r[0] is the audio map, p[L] the visual map."""

    r: list
    p: list
    e: list = field(default_factory=list)
    t: int = 0


class StepBatchNorm(Module):
    """Batch norm with one affine pair and an independent set of running
    statistics per time step."""

    def __init__(self, channels, steps, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros((steps, channels)))
        self.register_buffer("running_var", np.ones((steps, channels)))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, step):
        # cycles beyond the trained count reuse the last step's statistics
        step = min(step, self._buffers["running_mean"].shape[0] - 1)
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"][step],
            self._buffers["running_var"][step],
            self.training,
            self.momentum,
            self.eps,
        )


def _inverse_softplus(y):
    return math.log(math.expm1(y))


def _logit(p):
    return math.log(p / (1 - p))


class PCM(Module):
    def __init__(self, cfg, c_v, c_a, spatial, rng):
        super().__init__()
        cfg.validate(c_v, c_a)
        self.cfg = cfg
        L = cfg.layers
        # index 0 is the audio layer, index L the top layer
        self.chan = [c_a] + list(reversed(cfg.channels))
        sizes = [spatial]
        for _ in range(L):
            sizes.append(sizes[-1] // 2 if cfg.downsample else sizes[-1])
        self.sizes = list(reversed(sizes))
        self.sizes[0] = 1
        if self.sizes[1] not in (1, 2) or (cfg.downsample and spatial != 2 ** L):
            raise ConfigurationError(
                f"visual map of size {spatial} does not fit a {L}-layer PCM (needs {2 ** L} with downsampling)"
            )
        k = cfg.kernel_size
        # feedback: layer l+1 -> prediction of layer l
        self.feedback = [Conv2d(self.chan[l + 1], self.chan[l], k, rng, bias=False) for l in range(L)]
        # feedforward: error at layer l-1 -> correction of layer l
        self.feedforward = [ConvTranspose2d(self.chan[l - 1], self.chan[l], k, rng, bias=False) for l in range(1, L + 1)]
        self.project = Conv2d(self.chan[L], c_v, 1, rng)
        if cfg.use_bn:
            steps = cfg.cycles
            self.bn_init = [StepBatchNorm(self.chan[l], 1) for l in range(1, L + 1)]
            self.bn_feedback = [StepBatchNorm(self.chan[l], steps) for l in range(1, L + 1)]
            self.bn_feedforward = [StepBatchNorm(self.chan[l], steps) for l in range(1, L + 1)]
        if cfg.learn_rates:
            self.a_raw = parameter(np.full(L, _inverse_softplus(cfg.a_init)))
            self.b_raw = parameter(np.full(L, _logit(cfg.b_init)))

    # -- rates ---------------------------------------------------------------
    def rates(self):
        """(a, b) as length-L tensors, positive and in (0, 1] respectively."""
        if self.cfg.learn_rates:
            return ops.softplus(self.a_raw), ops.sigmoid(self.b_raw)
        shape, dtype = (self.cfg.layers,), self.project.weight.dtype
        a = np.broadcast_to(np.asarray(self.cfg.a_init, dtype=dtype), shape)
        b = np.broadcast_to(np.asarray(self.cfg.b_init, dtype=dtype), shape)
        return Tensor(a.copy()), Tensor(b.copy())

    # -- building blocks -----------------------------------------------------
    def _phi(self, x):
        return ops.activation(x, self.cfg.activation)

    def _norm(self, bank, l, x, step):
        if not self.cfg.use_bn:
            return x
        return bank[l - 1](x, step)

    def predict(self, l, upper):
        """Top-down prediction of layer l from layer l+1 (conv, then pool if the size halves)."""
        out = self.feedback[l](upper)
        if self.sizes[l] < self.sizes[l + 1]:
            out = ops.max_pool2d(out)
        return out

    def correct(self, l, err):
        """Bottom-up message from the error at layer l-1 into layer l (transposed conv, then upsample)."""
        out = self.feedforward[l - 1](err)
        if self.sizes[l] > self.sizes[l - 1]:
            out = ops.bilinear_resize(out, (self.sizes[l], self.sizes[l]))
        return out

    def predict_audio(self, r1):
        # no batch norm on the audio prediction
        return self._phi(self.predict(0, r1))

    # -- the algorithm -------------------------------------------------------
    def init_state(self, f_v, f_a, predictions=False):
        """Bottom-up sweep from the audio feature gives r_l(0) for every layer."""
        f_v, f_a = as_tensor(f_v), as_tensor(f_a)
        L = self.cfg.layers
        if f_v.shape[1:] != (self.chan[L], self.sizes[L], self.sizes[L]):
            raise ConfigurationError(f"visual feature {f_v.shape} does not match PCM layout")
        if f_a.shape[1:] != (self.chan[0],):
            raise ConfigurationError(f"audio feature {f_a.shape} does not match PCM layout")
        r = [f_a.reshape(f_a.shape + (1, 1))]
        for l in range(1, L + 1):
            r.append(self._phi(self._norm(getattr(self, "bn_init", None), l, self.correct(l, r[l - 1]), 0)))
        state = PCMState(r=r, p=[None] * L + [f_v], e=[None] * L, t=0)
        if predictions:
            self.refresh_predictions(state)
        return state

    def refresh_predictions(self, state):
        """Fill p and e from the current representations (used for the t = 0 diagnostics)."""
        L = self.cfg.layers
        for l in range(L - 1, 0, -1):
            state.p[l] = self.predict(l, state.r[l + 1])
        state.p[0] = self.predict_audio(state.r[1])
        state.e = [state.r[l] - state.p[l] for l in range(L)]
        return state

    def feedback_sweep(self, state, t):
        a, b = self.rates()
        for l in range(self.cfg.layers, 0, -1):
            if l < self.cfg.layers:
                state.p[l] = self.predict(l, state.r[l + 1])
            b_l = b[l - 1]
            mixed = (1.0 - b_l) * state.r[l] + b_l * state.p[l]
            state.r[l] = self._phi(self._norm(getattr(self, "bn_feedback", None), l, mixed, t - 1))
        state.t = t
        return state

    def feedforward_sweep(self, state, t):
        a, b = self.rates()
        for l in range(1, self.cfg.layers + 1):
            if l == 1:
                state.p[0] = self.predict_audio(state.r[1])
            state.e[l - 1] = state.r[l - 1] - state.p[l - 1]
            pre = state.r[l] + a[l - 1] * self.correct(l, state.e[l - 1])
            state.r[l] = self._phi(self._norm(getattr(self, "bn_feedforward", None), l, pre, t - 1))
        state.t = t
        return state

    def run(self, f_v, f_a, cycles=None, every_step=False, diagnostics=False):
        """Refined visual feature; with ``every_step`` a list with one map per cycle.

        ``diagnostics`` additionally returns the per-cycle diagnostic losses
        (index 0 is the initial state).
        """
        cycles = self.cfg.cycles if cycles is None else cycles
        state = self.init_state(f_v, f_a, predictions=diagnostics)
        history = [pcm_diagnostic_loss(state)] if diagnostics else None
        outputs = []
        for t in range(1, cycles + 1):
            self.feedback_sweep(state, t)
            self.feedforward_sweep(state, t)
            if diagnostics:
                history.append(pcm_diagnostic_loss(state))
            if every_step:
                outputs.append(self.project(state.r[-1]))
        result = outputs if every_step else self.project(state.r[-1])
        return (result, state, history) if diagnostics else result

    forward = run


def run_pcm(pcm, f_v, f_a, cycles=None):
    return pcm.run(f_v, f_a, cycles)


def diagnostic_energy(state):
    """Differentiable total of :func:`pcm_diagnostic_loss` (a scalar Tensor)."""
    L = len(state.r) - 1
    total = None
    for l in range(1, L + 1):
        e = state.e[l - 1]
        gap = state.r[l] - state.p[l]
        term = 0.5 * (e * e).sum() + 0.5 * (gap * gap).sum()
        total = term if total is None else total + term
    return total


def pcm_diagnostic_loss(state):
    """Per-layer 1/2||e_{l-1}||^2 + 1/2||r_l - p_l||^2, summed over the batch.

    Evaluated on raw arrays; never part of the training graph.
    """
    L = len(state.r) - 1
    per_layer = []
    for l in range(1, L + 1):
        e = state.e[l - 1].data.astype(np.float64)
        gap = state.r[l].data.astype(np.float64) - state.p[l].data.astype(np.float64)
        per_layer.append(0.5 * float((e * e).sum()) + 0.5 * float((gap * gap).sum()))
    return {"per_layer": per_layer, "total": float(sum(per_layer))}

