"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, no_grad

DEFAULT_STEP = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-5}


def numerical_grad(f, inputs, index, step, oracle_dtype=np.float64):
    """Central differences of ``f`` with respect to ``inputs[index]``, one coordinate at a time.

    The perturbed input is upcast to ``oracle_dtype`` while differencing, so
    everything downstream of it is evaluated at that precision. Work upstream
    of the input does not change between the two evaluations.
    """
    x = inputs[index]
    saved = x.data
    x.data = saved.astype(oracle_dtype or saved.dtype, copy=True)
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    try:
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(f(*inputs).data)
                flat[i] = orig - step
                down = float(f(*inputs).data)
                flat[i] = orig
                grad[i] = (up - down) / (2 * step)
    finally:
        x.data = saved
    return grad.reshape(x.shape)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def grad_check(f, x, step=None, oracle_dtype=np.float64):
    """Max relative error between backward() and central differences.

    ``x`` is a tensor or a sequence of tensors that ``f`` is called with; they
    are perturbed in place, so ``f`` may also close over them. The error for
    each input is ``||g_bwd - g_fd|| / max(||g_bwd||, ||g_fd||)``.

    The step defaults to 1e-3 for float32 inputs and 1e-5 for float64. Pass
    ``oracle_dtype=None`` to difference at the input's own precision.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    if step is None:
        step = DEFAULT_STEP.get(inputs[0].dtype, 1e-3)
    backward(f(*inputs))
    worst = 0.0
    for i, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        worst = max(worst, relative_error(analytic, numerical_grad(f, inputs, i, step, oracle_dtype)))
    return worst


def directional_check(f, tensors, rng, directions=8, step=None, oracle_dtype=np.float64):
    """Sketched version of the norm-based relative error of ``grad_check``.

    All of ``tensors`` (typically every parameter plus the inputs) move
    together along Gaussian directions d ~ N(0, I). Since E<g, d>^2 = ||g||^2,
    the directional derivatives give unbiased estimates of both
    ||g_bwd - g_fd||^2 and ||g||^2, so a whole model is checked with two
    evaluations per direction. ``f`` takes no arguments and closes over the
    tensors; every tensor is upcast to ``oracle_dtype`` while differencing.

    The default step with a float64 oracle is 1e-7 per unit of d. The joint
    move is about sqrt(N) times that, and larger steps start crossing relu and
    max-pool kinks.
    """
    tensors = list(tensors)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    if step is None:
        step = 1e-7 if oracle_dtype == np.float64 else DEFAULT_STEP.get(tensors[0].dtype, 1e-3)
    backward(f())
    grads = [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in tensors]
    saved = [t.data for t in tensors]
    analytic, numeric = [], []
    try:
        for _ in range(directions):
            dirs = [rng.normal(size=t.shape) for t in tensors]
            analytic.append(sum(float((g * d).sum()) for g, d in zip(grads, dirs)))
            values = []
            for sign in (1.0, -1.0):
                for t, s, d in zip(tensors, saved, dirs):
                    t.data = s.astype(oracle_dtype or s.dtype) + sign * step * d
                with no_grad():
                    values.append(float(f().data))
            numeric.append((values[0] - values[1]) / (2 * step))
    finally:
        for t, s in zip(tensors, saved):
            t.data = s
    return relative_error(analytic, numeric)
