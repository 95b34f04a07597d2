import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meritseg.losses import (
    LossConfig,
    ce_loss,
    combined_loss,
    dice_loss,
    enumerate_subsets,
    mutation_loss,
    one_hot,
)
from meritseg.numerics.tensor import Tensor

from conftest import check_fd


def dice_oracle(logits, target, eps=1e-5):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    c = logits.shape[1]
    vals = []
    for k in range(c):
        y = (target == k).astype(float)
        pk = p[:, k]
        vals.append((2 * (pk * y).sum() + eps) / (pk.sum() + y.sum() + eps))
    return 1 - float(np.mean(vals))


def ce_oracle(logits, target):
    n, c, h, w = logits.shape
    total = 0.0
    for i, y, x in itertools.product(range(n), range(h), range(w)):
        v = logits[i, :, y, x]
        total += math.log(np.exp(v - v.max()).sum()) + v.max() - v[target[i, y, x]]
    return total / (n * h * w)


def mutation_oracle(maps, target, cfg):
    total = 0.0
    for r in range(1, len(maps) + 1):
        for combo in itertools.combinations(range(len(maps)), r):
            s = sum(maps[i] for i in combo)
            total += cfg.lambda1 * dice_oracle(s, target, cfg.smoothing) + cfg.lambda2 * ce_oracle(s, target)
    return total


def sample(rng, n=2, c=3, s=5):
    return rng.normal(size=(n, c, s, s)), rng.integers(0, c, size=(n, s, s))


def test_dice_matches_oracle(rng):
    x, t = sample(rng)
    assert abs(float(dice_loss(Tensor(x), t).data) - dice_oracle(x, t)) <= 1e-12


def test_dice_perfect_and_total_miss(rng):
    t = rng.integers(0, 3, size=(2, 6, 6))
    perfect = one_hot(t, 3, np.float64)
    assert float(dice_loss(Tensor(perfect), t, from_logits=False).data) <= 1e-4
    miss = one_hot((t + 1) % 3, 3, np.float64)
    assert float(dice_loss(Tensor(miss), t, from_logits=False).data) >= 1 - 1e-3


def test_ce_uniform_is_log_c(rng):
    t = rng.integers(0, 4, size=(1, 3, 3))
    assert abs(float(ce_loss(Tensor(np.zeros((1, 4, 3, 3))), t).data) - math.log(4)) <= 1e-12


def test_ce_matches_oracle(rng):
    x, t = sample(rng, c=4)
    assert abs(float(ce_loss(Tensor(x), t).data) - ce_oracle(x, t)) <= 1e-12


def test_combined_extremes_exact(rng):
    x, t = sample(rng)
    xt = Tensor(x)
    assert float(combined_loss(xt, t, LossConfig(1.0, 0.0)).data) == float(dice_loss(xt, t).data)
    assert float(combined_loss(xt, t, LossConfig(0.0, 1.0)).data) == float(ce_loss(xt, t).data)


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.5, 0.7, 1.0])
def test_combined_is_weighted_sum(rng, lam):
    x, t = sample(rng)
    cfg = LossConfig.from_lambda1(lam)
    expected = lam * dice_oracle(x, t) + (1 - lam) * ce_oracle(x, t)
    assert abs(float(combined_loss(Tensor(x), t, cfg).data) - expected) <= 1e-12


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(0.5, 0.6)
    with pytest.raises(ValueError):
        LossConfig(-0.1, 1.1)


@pytest.mark.parametrize("n,expected", [(1, [1]), (2, [1, 2, 3]), (4, list(range(1, 16)))])
def test_enumerate_subsets(n, expected):
    assert enumerate_subsets(n) == expected


@pytest.mark.parametrize("n", [0, 17])
def test_enumerate_subsets_range(n):
    with pytest.raises(ValueError):
        enumerate_subsets(n)


def test_mutation_single_map_is_plain_loss(rng):
    x, t = sample(rng)
    m = Tensor(x)
    assert float(mutation_loss([m], t).data) == float(combined_loss(m, t).data)


def test_mutation_two_maps_expansion(rng):
    (a, t), (b, _) = sample(rng), sample(rng)
    ta, tb = Tensor(a), Tensor(b)
    expected = sum(float(combined_loss(m, t).data) for m in (ta, tb, Tensor(a + b)))
    assert abs(float(mutation_loss([ta, tb], t).data) - expected) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 3])
def test_mutation_brute_force(rng, n):
    t = rng.integers(0, 3, size=(2, 5, 5))
    maps = [rng.normal(size=(2, 3, 5, 5)) for _ in range(n)]
    cfg = LossConfig()
    assert abs(float(mutation_loss([Tensor(m) for m in maps], t, cfg).data) - mutation_oracle(maps, t, cfg)) <= 1e-9


def test_mutation_counts_fifteen(rng):
    calls = []

    def counting(y, t, cfg):
        calls.append(y.shape)
        return combined_loss(y, t, cfg)

    t = rng.integers(0, 3, size=(1, 4, 4))
    mutation_loss([Tensor(rng.normal(size=(1, 3, 4, 4))) for _ in range(4)], t, loss_fn=counting)
    assert len(calls) == 15


def test_mutation_overwrite_returns_full_subset(rng):
    t = rng.integers(0, 3, size=(1, 4, 4))
    maps = [Tensor(rng.normal(size=(1, 3, 4, 4))) for _ in range(3)]
    full = combined_loss(Tensor(sum(m.data for m in maps)), t)
    np.testing.assert_allclose(mutation_loss(maps, t, accumulate=False).data, full.data, rtol=1e-12)


def test_mutation_permutation_invariant(rng):
    t = rng.integers(0, 3, size=(1, 4, 4))
    maps = [Tensor(rng.normal(size=(1, 3, 4, 4))) for _ in range(4)]
    a = float(mutation_loss(maps, t).data)
    b = float(mutation_loss(maps[::-1], t).data)
    assert abs(a - b) <= 1e-9


def test_mutation_shape_mismatch(rng):
    t = rng.integers(0, 3, size=(1, 4, 4))
    with pytest.raises(ValueError):
        mutation_loss([Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 2, 2)))], t)
    with pytest.raises(ValueError):
        mutation_loss([], t)


def test_label_out_of_range(rng):
    with pytest.raises(ValueError):
        combined_loss(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))


@pytest.mark.parametrize("fn", [dice_loss, ce_loss, combined_loss])
def test_loss_gradients(rng, fn):
    x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    t = rng.integers(0, 3, size=(2, 4, 4))
    assert check_fd(lambda: fn(x, t), [x]) <= 1e-4


def test_mutation_gradient(rng):
    maps = [Tensor(rng.normal(size=(1, 3, 3, 3)), requires_grad=True) for _ in range(3)]
    t = rng.integers(0, 3, size=(1, 3, 3))
    assert check_fd(lambda: mutation_loss(maps, t), maps) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_mutation_non_negative(seed, n):
    r = np.random.default_rng(seed)
    t = r.integers(0, 3, size=(1, 3, 3))
    maps = [Tensor(r.normal(0, 3, (1, 3, 3, 3))) for _ in range(n)]
    assert float(mutation_loss(maps, t).data) >= 0
