import math

import numpy as np
import pytest

from terrafuse.gradcheck import check_gradients
from terrafuse.losses import (LossConfig, cross_entropy, soft_dice_loss, soft_dice_per_class,
                              total_loss)
from terrafuse.tensor import Tensor, softmax_channels


def scalar_cross_entropy(logits, target):
    n, c, h, w = logits.shape
    total = 0.0
    for i in range(n):
        for r in range(h):
            for col in range(w):
                z = [float(logits[i, k, r, col]) for k in range(c)]
                m = max(z)
                lse = m + math.log(sum(math.exp(v - m) for v in z))
                total += lse - z[target[i, r, col]]
    return total / (n * h * w)


def one_hot_probs(labels):
    return np.stack([(labels == k).astype(np.float64) for k in range(3)], axis=1)


def test_cross_entropy_confident_correct_is_zero():
    target = np.random.default_rng(0).integers(0, 3, (2, 4, 4))
    logits = 50.0 * one_hot_probs(target)
    assert cross_entropy(Tensor(logits), target).item() < 1e-20


def test_cross_entropy_uniform_is_ln3():
    target = np.random.default_rng(0).integers(0, 3, (2, 4, 4))
    loss = cross_entropy(Tensor(np.zeros((2, 3, 4, 4))), target).item()
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    assert loss == pytest.approx(1.0986, abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((2, 3, 5, 4)) * 3
    target = rng.integers(0, 3, (2, 5, 4))
    assert cross_entropy(Tensor(logits), target).item() == pytest.approx(scalar_cross_entropy(logits, target), abs=1e-6)


def test_cross_entropy_rejects_bad_class():
    target = np.zeros((1, 2, 2), np.int64)
    target[0, 1, 1] = 3
    with pytest.raises(ValueError, match="outside"):
        cross_entropy(Tensor(np.zeros((1, 3, 2, 2))), target)


def test_dice_perfect_prediction_is_zero():
    target = np.random.default_rng(1).integers(0, 3, (2, 6, 6))
    loss = soft_dice_loss(Tensor(one_hot_probs(target)), target, eps=1.0).item()
    assert loss < 1.0 / target.size


def test_dice_disjoint_class_approaches_one():
    target = np.zeros((1, 4, 4), np.int64)
    target[0, :2] = 1
    pred = np.zeros_like(target)
    pred[0, 2:] = 1
    per_class = soft_dice_per_class(Tensor(one_hot_probs(pred)), target, eps=1e-9).data
    assert per_class[1] == pytest.approx(1.0, abs=1e-9)


def test_dice_hand_counted_example():
    # terrace truth at 3 pixels, predicted at 3 pixels, 2 overlap: TP=2, FP=1, FN=1
    target = np.array([[[1, 1, 1, 0]]])
    pred = np.array([[[0, 1, 1, 1]]])
    per_class = soft_dice_per_class(Tensor(one_hot_probs(pred)), target, eps=1e-12).data
    assert per_class[1] == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_dice_background_heavy_batch_all_background_prediction():
    rng = np.random.default_rng(0)
    target = np.zeros((2, 32, 32), np.int64)
    idx = rng.choice(target.size, size=int(0.01 * target.size), replace=False)
    target.flat[idx[: len(idx) // 2]] = 1
    target.flat[idx[len(idx) // 2:]] = 2
    assert (target == 0).mean() >= 0.99
    probs = one_hot_probs(np.zeros_like(target))
    assert soft_dice_loss(Tensor(probs), target, eps=1.0).item() >= 0.6


def uniform_case():
    rng = np.random.default_rng(5)
    target = rng.integers(0, 3, (2, 4, 4))
    return np.zeros((2, 3, 4, 4)), target


def test_total_loss_boundaries():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((2, 3, 4, 4))
    target = rng.integers(0, 3, (2, 4, 4))
    ce = cross_entropy(Tensor(logits), target).item()
    dice = soft_dice_loss(softmax_channels(Tensor(logits)), target, 1.0).item()
    assert total_loss(Tensor(logits), target, LossConfig(beta=1.0)).item() == ce
    assert total_loss(Tensor(logits), target, LossConfig(beta=0.0)).item() == dice


def test_total_loss_uniform_half_is_mean():
    logits, target = uniform_case()
    dice = soft_dice_loss(softmax_channels(Tensor(logits)), target, 1.0).item()
    total = total_loss(Tensor(logits), target, LossConfig(beta=0.5)).item()
    assert total == pytest.approx(0.5 * (math.log(3) + dice), abs=1e-6)


@pytest.mark.parametrize("beta", [0.0, 0.2, 0.5, 0.9, 1.0])
def test_total_loss_affine_in_beta(beta):
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((2, 3, 4, 4))
    target = rng.integers(0, 3, (2, 4, 4))
    t1 = total_loss(Tensor(logits), target, LossConfig(beta=1.0)).item()
    t0 = total_loss(Tensor(logits), target, LossConfig(beta=0.0)).item()
    tb = total_loss(Tensor(logits), target, LossConfig(beta=beta)).item()
    assert tb == pytest.approx(beta * t1 + (1 - beta) * t0, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("which", ["ce", "dice", "total"])
def test_loss_gradients(seed, which):
    rng = np.random.default_rng(seed)
    target = rng.integers(0, 3, (2, 4, 4))
    fns = {
        "ce": lambda z: cross_entropy(z, target),
        "dice": lambda z: soft_dice_loss(softmax_channels(z), target, 1.0),
        "total": lambda z: total_loss(z, target, LossConfig(beta=0.5)),
    }
    assert max(check_gradients(fns[which], [rng.standard_normal((2, 3, 4, 4))], seed)) < 1e-4


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(beta=1.5)
    with pytest.raises(ValueError):
        LossConfig(dice_eps=0.0)
