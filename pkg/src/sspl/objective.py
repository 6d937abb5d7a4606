"""Training objectives: the symmetric stop-gradient loss, a collapse diagnostic,
and an InfoNCE comparator with optional masking of same-class negatives."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import UsageError
from .tensor import Tensor, as_tensor, stop_gradient


@dataclass
class LossReport:
    total: Tensor
    term_12: float
    term_21: float
    collapse: float | None = None


def _identity(z):
    return z


def ncs_loss(z_pred_side, z_target, pred=None):
    """-cos(pred(z_pred_side), z_target), averaged over a leading batch axis if present."""
    pred = pred or _identity
    sim = ops.cosine_sim(pred(as_tensor(z_pred_side)), as_tensor(z_target), axis=-1)
    return -(sim.mean() if sim.ndim else sim)


def sspl_loss(z1, z2, pred=None, use_stop_gradient=True, p1=None, p2=None):
    """1/2 ncs(z1, SG(z2)) + 1/2 ncs(z2, SG(z1)).

    ``p1``/``p2`` may carry precomputed predictions of z1/z2 so callers can
    run the predictor once over a concatenated batch.
    """
    block = stop_gradient if use_stop_gradient else _identity
    if p1 is None or p2 is None:
        pred = pred or _identity
        p1, p2 = pred(z1), pred(z2)
    t12 = ncs_loss(p1, block(z2))
    t21 = ncs_loss(p2, block(z1))
    total = 0.5 * t12 + 0.5 * t21
    z = z1.data if z1.ndim == 2 else None
    return LossReport(
        total=total,
        term_12=float(t12.data),
        term_21=float(t21.data),
        collapse=collapse_metric(z) if z is not None and z.shape[0] >= 2 else None,
    )


def collapse_metric(z_batch):
    """Mean over dimensions of the per-dimension std of l2-normalised rows.

    About 1/sqrt(d) for spread-out embeddings, 0 when every row is identical.
    """
    z = np.asarray(z_batch.data if isinstance(z_batch, Tensor) else z_batch, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise UsageError(f"collapse_metric needs a (b >= 2, d) batch, got shape {z.shape}")
    z = z / (np.linalg.norm(z, axis=1, keepdims=True) + 1e-8)
    return float(z.std(axis=0).mean())


def infonce_baseline(z_v, z_a, temperature=0.07, negative_mask=None):
    """Symmetrised InfoNCE between paired visual and audio embeddings.

    ``negative_mask[i, j]`` True removes pair (i, j) from the negatives of both
    anchors. Anchors left without any negative are skipped. Returns
    ``(loss, skipped)``, where ``skipped`` counts anchors dropped in either
    direction.
    """
    z_v, z_a = as_tensor(z_v), as_tensor(z_a)
    b = z_v.shape[0]
    if b < 2:
        raise UsageError("infonce_baseline needs a batch of at least 2")
    logits = ops.matmul(ops.l2_normalize(z_v, axis=1), ops.l2_normalize(z_a, axis=1).T) * (1.0 / temperature)
    keep = np.ones((b, b), dtype=bool)
    if negative_mask is not None:
        keep &= ~np.asarray(negative_mask, dtype=bool)
    np.fill_diagonal(keep, True)
    has_neg = keep.sum(axis=1) > 1
    eye = np.eye(b, dtype=logits.dtype)
    terms = []
    skipped = ~has_neg
    for lg, kp, ok in ((logits, keep, has_neg), (logits.T, keep.T, keep.T.sum(axis=1) > 1)):
        skipped = skipped | ~ok
        if not ok.any():
            continue
        logp = ops.log_softmax(lg, axis=1, mask=kp)
        weight = eye * ok[:, None] / ok.sum()
        terms.append(-(logp * weight).sum())
    n_skipped = int(skipped.sum())
    if n_skipped:
        warnings.warn(f"{n_skipped} anchors had no negatives and were skipped", RuntimeWarning, stacklevel=2)
    if not terms:
        return Tensor(np.zeros((), dtype=logits.dtype)), n_skipped
    loss = terms[0] if len(terms) == 1 else 0.5 * (terms[0] + terms[1])
    return loss, n_skipped


def same_class_mask(labels):
    """True where two different samples share a class label."""
    labels = np.asarray(labels)
    mask = labels[:, None] == labels[None, :]
    np.fill_diagonal(mask, False)
    return mask
