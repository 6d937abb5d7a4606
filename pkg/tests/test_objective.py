import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sspl.errors import UsageError
from sspl.nn import Linear
from sspl.objective import collapse_metric, infonce_baseline, ncs_loss, same_class_mask, sspl_loss
from sspl.optim import AdamW
from sspl.tensor import Tensor, stop_gradient


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_ncs_parallel_and_orthogonal():
    e1 = np.eye(4)[0]
    assert ncs_loss(t64(e1), t64(e1)).item() == pytest.approx(-1.0)
    assert ncs_loss(t64(e1), t64(np.eye(4)[1])).item() == 0.0


def test_ncs_zero_vector_is_finite():
    out = ncs_loss(t64(np.zeros(3)), t64(np.ones(3)))
    assert np.isfinite(out.item())


def test_ncs_range_on_random_pairs(rng):
    u, v = rng.normal(size=(1000, 8)), rng.normal(size=(1000, 8))
    for a, b in zip(u, v):
        assert -1.0 - 1e-9 <= ncs_loss(t64(a), t64(b)).item() <= 1.0 + 1e-9


def test_sspl_identical_views():
    z = t64(np.eye(3)[:2])
    assert sspl_loss(z, z).total.item() == pytest.approx(-1.0)


@given(seed=st.integers(0, 2**31 - 1))
def test_sspl_symmetry_and_mean(seed):
    r = np.random.default_rng(seed)
    z1, z2 = t64(r.normal(size=(4, 6))), t64(r.normal(size=(4, 6)))
    a, b = sspl_loss(z1, z2), sspl_loss(z2, z1)
    assert a.total.item() == b.total.item()
    assert abs(a.total.item() - 0.5 * (a.term_12 + a.term_21)) < 1e-6
    assert -1.0 <= a.total.item() <= 1.0


def test_directed_term_blocks_target_side(rng):
    enc1, enc2, pred = Linear(4, 3, rng), Linear(4, 3, rng), Linear(3, 3, rng)
    x = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
    # z2 only enters the 1->2 term as the stop-gradient target
    ncs_loss(pred(enc1(x)), stop_gradient(enc2(x))).backward()
    assert np.any(enc1.weight.grad)
    assert enc2.weight.grad is None and enc2.bias.grad is None


def test_symmetric_loss_reaches_both_encoders(rng):
    enc1, enc2, pred = Linear(4, 3, rng), Linear(4, 3, rng), Linear(3, 3, rng)
    x = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
    sspl_loss(enc1(x), enc2(x), pred=pred).total.backward()
    assert np.any(enc1.weight.grad) and np.any(enc2.weight.grad)


def test_sspl_without_stop_gradient_reaches_target(rng):
    enc2 = Linear(4, 3, rng)
    x = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
    z1 = Tensor(rng.normal(size=(5, 3)).astype(np.float32))
    report = sspl_loss(z1, enc2(x), use_stop_gradient=False)
    report.total.backward()
    assert np.any(enc2.weight.grad)


def test_collapse_identical_rows():
    assert collapse_metric(np.tile([1.0, 2.0, 3.0], (5, 1))) == 0.0


def test_collapse_orthonormal_basis():
    d = 8
    # each column holds a single 1 among d entries: std = sqrt(1/d - 1/d^2)
    assert collapse_metric(np.eye(d)) == pytest.approx(math.sqrt(1 / d - 1 / d**2))


def test_collapse_gaussian_near_inverse_sqrt_d(rng):
    value = collapse_metric(rng.normal(size=(512, 128)))
    assert abs(value - 1 / math.sqrt(128)) < 0.2 / math.sqrt(128)


def test_collapse_needs_two_rows():
    with pytest.raises(UsageError):
        collapse_metric(np.ones((1, 4)))


@given(seed=st.integers(0, 2**31 - 1))
def test_collapse_ignores_row_scaling(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(6, 5))
    scales = r.uniform(0.1, 10, size=(6, 1))
    # exact up to the 1e-8 norm epsilon
    assert collapse_metric(z * scales) == pytest.approx(collapse_metric(z), abs=1e-7)


def test_infonce_two_orthogonal_pairs():
    z = t64(np.eye(2))
    loss, skipped = infonce_baseline(z, z, temperature=1.0)
    assert skipped == 0
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)))


def test_infonce_all_negatives_masked():
    z = t64(np.eye(3))
    mask = ~np.eye(3, dtype=bool)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        loss, skipped = infonce_baseline(z, z, negative_mask=mask)
    assert skipped == 3 and loss.item() == 0.0
    assert caught


def test_infonce_needs_two_samples():
    with pytest.raises(UsageError):
        infonce_baseline(t64(np.ones((1, 2))), t64(np.ones((1, 2))))


def test_same_class_mask():
    m = same_class_mask([0, 1, 0])
    assert m.tolist() == [[False, False, True], [False, False, False], [True, False, False]]


def test_infonce_decreases_on_separable_embeddings():
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(4, 8))
    labels = np.arange(16) % 4
    xv = Tensor((centers[labels] + 0.3 * rng.normal(size=(16, 8))).astype(np.float32))
    xa = Tensor((centers[labels] + 0.3 * rng.normal(size=(16, 8))).astype(np.float32))
    fv, fa = Linear(8, 8, rng), Linear(8, 8, rng)
    opt = AdamW([(fv.parameters() + fa.parameters(), 1e-2)])
    losses = []
    for _ in range(200):
        opt.zero_grad()
        loss, _ = infonce_baseline(fv(xv), fa(xa), negative_mask=same_class_mask(labels))
        loss.backward()
        opt.step()
        losses.append(loss.item())
    assert losses[-1] < losses[0]
