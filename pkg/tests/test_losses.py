import math

import numpy as np
import pytest
import torch

from codaadapt.errors import DegenerateSignalError, ValidationError
from codaadapt.losses import (
    DOMAIN_LOSSES,
    adversarial_loss,
    byol_loss,
    get_domain_loss,
    mcc_from_probabilities,
    mcc_loss,
    register_domain_loss,
    task_loss,
    total_loss,
)

from oracles import bce_logit, cross_entropy_literal, mcc_literal, mcc_literal_probs

@pytest.fixture(autouse=True)
def _float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


# ---- task ----------------------------------------------------------------

def test_task_loss_anchors():
    assert task_loss(torch.tensor([[20.0, -20.0, -20.0]]), [0]).item() == pytest.approx(0.0, abs=1e-15)
    assert task_loss(torch.zeros(4, 3), [0, 1, 2, 0]).item() == pytest.approx(math.log(3), abs=1e-12)


def test_task_loss_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.normal(0, 3, size=(16, 3))
        labels = rng.integers(0, 3, size=16)
        got = task_loss(torch.tensor(logits), labels).item()
        assert got == pytest.approx(cross_entropy_literal(logits.tolist(), labels.tolist()), abs=1e-7)


# ---- adversarial ---------------------------------------------------------------

def test_adversarial_anchors():
    assert adversarial_loss(torch.tensor([[-20.0]]), torch.tensor([[20.0]])).item() < 1e-8
    assert adversarial_loss(torch.zeros(5, 1), torch.zeros(3, 1)).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_adversarial_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = rng.normal(0, 2, size=(7, 1))
        t = rng.normal(0, 2, size=(5, 1))
        expected = np.mean([bce_logit(z, 0) for z in s[:, 0]]) + np.mean([bce_logit(z, 1) for z in t[:, 0]])
        assert adversarial_loss(torch.tensor(s), torch.tensor(t)).item() == pytest.approx(expected, abs=1e-9)


# ---- MCC -------------------------------------------------------------------------

def test_mcc_one_hot_single_class_is_zero():
    probs = torch.zeros(10, 3)
    probs[:, 1] = 1.0
    loss, mid = mcc_from_probabilities(probs)
    assert loss.item() == pytest.approx(0.0, abs=1e-9)
    assert mid.normalized[1, 1].item() == 1.0


def test_mcc_one_hot_mixed_classes_is_zero():
    probs = torch.zeros(10, 3)
    probs[:4, 0] = 1.0
    probs[4:7, 1] = 1.0
    probs[7:, 2] = 1.0
    loss, mid = mcc_from_probabilities(probs)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    assert torch.allclose(mid.normalized, torch.eye(3))


@pytest.mark.parametrize("n_b", [1, 7, 128])
@pytest.mark.parametrize("temp", [1.0, 2.5, 10.0])
def test_mcc_uniform_two_thirds(n_b, temp):
    loss, mid = mcc_loss(torch.zeros(n_b, 3), temp)
    assert loss.item() == pytest.approx(2 / 3, abs=1e-9)
    lit, _ = mcc_literal([[0.0] * 3] * n_b, temp)
    assert lit == pytest.approx(2 / 3, abs=1e-12)


def test_mcc_random_batches_match_literal():
    rng = np.random.default_rng(42)
    for i in range(100):
        n_b = [1, 7, 128][i % 3]
        temp = [1.0, 2.5, 10.0][(i // 3) % 3]
        logits = rng.normal(0, 4, size=(n_b, 3))
        loss, mid = mcc_loss(torch.tensor(logits), temp)
        lit, parts = mcc_literal(logits.tolist(), temp)
        assert loss.item() == pytest.approx(lit, abs=1e-6)
        assert np.allclose(mid.weights.numpy(), parts["weights"], atol=1e-9)
        assert np.allclose(mid.normalized.numpy(), parts["normalized"], atol=1e-9)


def test_mcc_intermediate_invariants():
    rng = np.random.default_rng(3)
    logits = torch.tensor(rng.normal(0, 3, size=(33, 3)))
    loss, mid = mcc_loss(logits, 2.5)
    assert torch.allclose(mid.scaled_probs.sum(1), torch.ones(33))
    assert mid.weights.mean().item() == pytest.approx(1.0, abs=1e-9)
    assert torch.allclose(mid.normalized.sum(1), torch.ones(3))
    assert torch.allclose(mid.correlation, mid.correlation.T)
    assert (mid.correlation >= 0).all()
    assert 0.0 <= loss.item() <= 2.0


def test_mcc_weights_vary_with_entropy():
    logits = torch.tensor([[10.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    _, mid = mcc_loss(logits, 1.0)
    assert mid.weights[0] > mid.weights[1]


def test_mcc_shift_and_permutation_invariance():
    rng = np.random.default_rng(4)
    for _ in range(20):
        logits = torch.tensor(rng.normal(0, 3, size=(12, 3)))
        base = mcc_loss(logits, 2.5)[0].item()
        shifted = logits + torch.tensor(rng.normal(0, 5, size=(12, 1)))
        assert mcc_loss(shifted, 2.5)[0].item() == pytest.approx(base, abs=1e-9)
        perm = rng.permutation(3)
        assert mcc_loss(logits[:, perm], 2.5)[0].item() == pytest.approx(base, abs=1e-12)


def test_mcc_literal_probs_matches_on_injected_probabilities():
    rng = np.random.default_rng(5)
    p = rng.dirichlet([1, 1, 1], size=9)
    loss, _ = mcc_from_probabilities(torch.tensor(p))
    assert loss.item() == pytest.approx(mcc_literal_probs(p.tolist())[0], abs=1e-12)


def test_mcc_bad_temperature():
    with pytest.raises(ValidationError):
        mcc_loss(torch.zeros(2, 3), 0.0)


# ---- BYOL ------------------------------------------------------------------------

def test_byol_anchor_values():
    a = torch.tensor([[1.0, 0.0, 2.0], [0.5, -1.0, 0.0]])
    assert byol_loss(a, a).item() == pytest.approx(0.0, abs=1e-12)
    orth = torch.tensor([[0.0, 3.0, 0.0], [2.0, 1.0, 0.0]])
    assert byol_loss(a, orth).item() == pytest.approx(2.0, abs=1e-12)
    assert byol_loss(a, -2 * a).item() == pytest.approx(4.0, abs=1e-12)


def test_byol_scale_invariance():
    rng = np.random.default_rng(6)
    p = torch.tensor(rng.normal(size=(8, 128)))
    z = torch.tensor(rng.normal(size=(8, 128)))
    s = torch.tensor(rng.uniform(0.1, 10, size=(8, 1)))
    assert byol_loss(p * s, z).item() == pytest.approx(byol_loss(p, z).item(), abs=1e-9)
    assert byol_loss(p, z * s).item() == pytest.approx(byol_loss(p, z).item(), abs=1e-9)


def test_byol_zero_row():
    with pytest.raises(DegenerateSignalError):
        byol_loss(torch.zeros(2, 4), torch.ones(2, 4))


# ---- total ---------------------------------------------------------------------

def test_total_sum():
    b = total_loss(1.0, 2.0, 3.0, 4.0)
    assert b.total == 10.0
    for name in ("task", "adversarial", "mcc", "byol"):
        kwargs = dict(task=1.0, adversarial=2.0, mcc=3.0, byol=4.0)
        kwargs[name] = 0.0
        assert total_loss(**kwargs).total == 10.0 - dict(task=1, adversarial=2, mcc=3, byol=4)[name]


def test_domain_loss_registry():
    def zero(fs, ft, ls, lt):
        return fs.sum() * 0

    register_domain_loss("test_zero", zero)
    try:
        assert get_domain_loss("test_zero") is zero
        with pytest.raises(ValidationError):
            register_domain_loss("test_zero", zero)
    finally:
        DOMAIN_LOSSES.pop("test_zero")
    with pytest.raises(ValidationError):
        get_domain_loss("nope")
