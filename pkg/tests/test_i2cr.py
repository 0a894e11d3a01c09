import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from noisykws.i2cr import (
    EmbeddingBatch,
    LossBreakdown,
    LossConfig,
    RampSchedule,
    alpha,
    i2cr_loss,
    positive_sets,
    sim,
    total_loss,
)

from oracles import brute_force_loss, central_difference

HAND_Z = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
# per anchor: -log(e^1 / (2 e^0)) = log 2 - 1
HAND_PER_ANCHOR = math.log(2) - 1
HAND_SUM = 4 * HAND_PER_ANCHOR


def random_batch(rng, n=None, dim=None, n_classes=None):
    n = n or int(rng.integers(2, 13))
    dim = dim or int(rng.integers(2, 9))
    n_classes = n_classes or int(rng.integers(1, 5))
    z = rng.normal(size=(n, dim))
    labels = rng.integers(0, n_classes, size=n)
    view_of = np.arange(n) // 2
    return z, labels, view_of


def loss_of(z, labels, view_of=None, **kw):
    intra = kw.pop("intra_only", False)
    batch = EmbeddingBatch(torch.tensor(z, dtype=torch.float64), torch.tensor(labels),
                           None if view_of is None else torch.tensor(view_of))
    return i2cr_loss(batch, LossConfig(**kw), intra_only=intra).item()


# --- positive sets


def test_positive_sets_pairs():
    assert positive_sets([0, 0, 1, 1]) == [{1}, {0}, {3}, {2}]


def test_positive_sets_none():
    assert positive_sets([0, 1, 2]) == [set(), set(), set()]


def test_positive_sets_inter_and_intra():
    # views 0 and 1 come from sample a, view 2 from sample b (same class)
    sets = positive_sets([0, 0, 0, 1], view_of=[0, 0, 1, 2])
    assert sets[0] == {1, 2}
    intra = positive_sets([0, 0, 0, 1], view_of=[0, 0, 1, 2], intra_only=True)
    assert intra[0] == {1} and intra[2] == set()


# --- sim


def test_sim_properties():
    v = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    assert sim(v, v).item() == pytest.approx(1.0)
    assert sim(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])).item() == 0.0
    assert sim(v, 3 * v).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sim(torch.zeros(3), v)


# --- loss values


def test_hand_computed_value():
    assert brute_force_loss(HAND_Z, [0, 0, 1, 1], tau=1.0, reduction="sum") == pytest.approx(-1.227411, abs=1e-6)
    got = loss_of(HAND_Z, [0, 0, 1, 1], temperature=1.0, reduction="sum")
    assert got == pytest.approx(HAND_SUM, abs=1e-12)
    assert got == pytest.approx(-1.227411, abs=1e-5)
    assert loss_of(HAND_Z, [0, 0, 1, 1], temperature=1.0) == pytest.approx(HAND_PER_ANCHOR, abs=1e-12)


def test_distinct_labels_give_zero():
    z = np.random.default_rng(0).normal(size=(5, 3))
    assert loss_of(z, [0, 1, 2, 3, 4]) == 0.0


def test_single_class_negatives_only_has_no_valid_anchor():
    z = np.random.default_rng(0).normal(size=(4, 3))
    assert loss_of(z, [1, 1, 1, 1]) == 0.0
    assert loss_of(z, [1, 1, 1, 1], denominator="all_non_anchor") == pytest.approx(
        brute_force_loss(z.tolist(), [1, 1, 1, 1], denominator="all_non_anchor"), abs=1e-12)


@pytest.mark.parametrize("denominator", ["negatives_only", "all_non_anchor"])
@pytest.mark.parametrize("reduction", ["mean", "sum"])
@pytest.mark.parametrize("tau", [0.05, 0.1, 1.0])
def test_matches_brute_force(denominator, reduction, tau):
    rng = np.random.default_rng([len(denominator), len(reduction), int(tau * 100)])
    for _ in range(10):
        z, labels, view_of = random_batch(rng)
        expected = brute_force_loss(z.tolist(), labels.tolist(), tau=tau, denominator=denominator, reduction=reduction)
        got = loss_of(z, labels, temperature=tau, denominator=denominator, reduction=reduction)
        assert abs(got - expected) < 1e-6


def test_intra_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        z, labels, view_of = random_batch(rng)
        expected = brute_force_loss(z.tolist(), labels.tolist(), view_of.tolist(), intra_only=True)
        assert abs(loss_of(z, labels, view_of, intra_only=True) - expected) < 1e-6


def test_invalid_config():
    with pytest.raises(ValueError):
        LossConfig(temperature=0)
    with pytest.raises(ValueError):
        LossConfig(reduction="max")
    with pytest.raises(ValueError):
        LossConfig(denominator="other")


def test_zero_norm_embedding_rejected():
    z = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        loss_of(z, [0, 0, 1])


def test_negative_witness_and_nonnegative_all_non_anchor():
    assert loss_of(HAND_Z, [0, 0, 1, 1], temperature=1.0) < 0
    rng = np.random.default_rng(11)
    for _ in range(50):
        z, labels, _ = random_batch(rng)
        for tau in (0.05, 0.1, 1.0):
            assert loss_of(z, labels, temperature=tau, denominator="all_non_anchor") >= 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    z, labels, view_of = random_batch(rng)
    perm = rng.permutation(len(z))
    for denominator in ("negatives_only", "all_non_anchor"):
        a = loss_of(z, labels, view_of, denominator=denominator)
        b = loss_of(z[perm], labels[perm], view_of[perm], denominator=denominator)
        assert abs(a - b) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_row_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    z, labels, _ = random_batch(rng)
    scales = rng.uniform(0.01, 100, size=(len(z), 1))
    assert abs(loss_of(z, labels) - loss_of(z * scales, labels)) <= 1e-6


@pytest.mark.parametrize("tau", [0.05, 0.1, 1.0])
def test_gradient_matches_finite_differences(tau):
    rng = np.random.default_rng(int(tau * 1000))
    for _ in range(5):
        z, labels, _ = random_batch(rng, n_classes=2)
        zt = torch.tensor(z, dtype=torch.float64, requires_grad=True)
        i2cr_loss(EmbeddingBatch(zt, torch.tensor(labels)), LossConfig(temperature=tau)).backward()
        fd = np.array(central_difference(lambda v: brute_force_loss(v, labels.tolist(), tau=tau), z.tolist()))
        err = np.linalg.norm(zt.grad.numpy() - fd) / max(np.linalg.norm(fd), 1e-12)
        assert err < 1e-4


def test_gradients_finite_with_invalid_anchors():
    z = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    i2cr_loss(EmbeddingBatch(z, torch.tensor([0, 0, 1, 2, 3, 4]))).backward()
    assert torch.isfinite(z.grad).all()
    # the singleton anchors still act as negatives for the valid ones
    assert z.grad.abs().sum() > 0


# --- schedules and combination


@pytest.mark.parametrize("epoch, expected", [(0, 0.0), (1, 0.01), (20, 0.2), (50, 0.5), (80, 0.5), (99, 0.5)])
def test_alpha_values(epoch, expected):
    assert alpha(epoch, RampSchedule(total_epochs=100)) == expected


def test_alpha_monotone_and_bounded():
    sched = RampSchedule(total_epochs=37)
    values = [alpha(e, sched) for e in range(37)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert all(0 <= v <= 0.5 for v in values)


def _views(seed=0, n=8, classes=3):
    g = torch.Generator().manual_seed(seed)
    logits = torch.randn(n, classes, generator=g, dtype=torch.float64)
    labels = torch.randint(0, classes, (n,), generator=g)
    z = torch.randn(n, 5, generator=g, dtype=torch.float64)
    return logits, labels, EmbeddingBatch(z, labels, torch.arange(n) // 2)


def test_total_at_epoch_zero_is_ce():
    logits, labels, batch = _views()
    loss, parts = total_loss(logits, labels, batch, 0, RampSchedule(100))
    assert parts.alpha == 0.0 and parts.total == parts.ce
    assert loss.item() == pytest.approx(torch.nn.functional.cross_entropy(logits, labels).item(), abs=0)


def test_total_degenerate_case():
    labels = torch.arange(4)
    logits = torch.full((4, 4), -50.0, dtype=torch.float64)
    logits[torch.arange(4), labels] = 50.0
    batch = EmbeddingBatch(torch.randn(4, 3, dtype=torch.float64), labels)
    _, parts = total_loss(logits, labels, batch, 10, RampSchedule(100))
    assert parts.i2cr == 0.0
    assert parts.total == parts.ce == pytest.approx(0.0, abs=1e-12)


def test_total_recomposes_components():
    logits, labels, batch = _views(seed=4)
    loss, parts = total_loss(logits, labels, batch, 50, RampSchedule(100))
    ce = torch.nn.functional.cross_entropy(logits, labels).item()
    reg = i2cr_loss(batch).item()
    assert parts.alpha == 0.5
    assert parts.ce == ce and parts.i2cr == reg
    assert parts.total == ce + 0.5 * reg
    assert loss.item() == pytest.approx(ce + 0.5 * reg, abs=1e-12)


def test_breakdown_invariant_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ce, reg, a = rng.normal(), rng.normal(), rng.uniform(0, 0.5)
        b = LossBreakdown.compose(ce, reg, a)
        assert b.total == b.ce + b.alpha * b.i2cr


def test_none_regularizer_ignores_embeddings():
    logits, labels, batch = _views()
    loss, parts = total_loss(logits, labels, batch, 60, RampSchedule(100), regularizer="none")
    assert parts.i2cr == 0.0 and parts.alpha == 0.0 and parts.total == parts.ce


def test_intra_equals_i2cr_when_classes_unique_per_sample():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(8, 4))
    labels = np.repeat(np.arange(4), 2)
    view_of = np.repeat(np.arange(4), 2)
    assert loss_of(z, labels, view_of, intra_only=True) == loss_of(z, labels, view_of)
