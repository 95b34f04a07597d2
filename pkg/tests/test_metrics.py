import math

import numpy as np
import pytest

from meritseg.metrics import boundary_points, dsc, evaluate_case, hd95, merge_reports, nearest_rank


def dsc_oracle(gt, pred, c):
    y = {(i, j) for i, j in zip(*np.nonzero(gt == c))}
    yh = {(i, j) for i, j in zip(*np.nonzero(pred == c))}
    if not y and not yh:
        return 100.0
    return 2 * len(y & yh) / (len(y) + len(yh)) * 100


def boundary_oracle(mask):
    h, w = mask.shape
    pts = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if not (0 <= a < h and 0 <= b < w) or not mask[a, b]:
                    pts.append((i, j))
                    break
    return pts


def rank_oracle(values):
    s = sorted(values)
    return s[math.ceil(0.95 * len(s) - 1e-12) - 1]


def hd95_oracle(gt, pred, c):
    a = boundary_oracle(gt == c)
    b = boundary_oracle(pred == c)
    if not a and not b:
        return 0.0
    if not a or not b:
        return None

    def directed(src, dst):
        return rank_oracle([min(math.hypot(p[0] - q[0], p[1] - q[1]) for q in dst) for p in src])

    return max(directed(a, b), directed(b, a))


def test_fixed_dsc():
    m = np.zeros((4, 4), int)
    m[:2, :2] = 1
    assert dsc(m, m, 1) == 100.0
    other = np.zeros_like(m)
    other[2:, 2:] = 1
    assert dsc(m, other, 1) == 0.0
    half = np.zeros_like(m)
    half[:2, 1:3] = 1
    assert dsc(m, half, 1) == 50.0
    assert dsc(np.zeros_like(m), np.zeros_like(m), 1) == 100.0


def test_fixed_hd95():
    m = np.zeros((4, 4), int)
    m[:2, :2] = 1
    assert hd95(m, m, 1) == 0.0
    a = np.zeros((1, 4), int)
    b = a.copy()
    a[0, 0] = 1
    b[0, 3] = 1
    assert hd95(a, b, 1) == 3.0


def test_hd95_empty_cases():
    z = np.zeros((5, 5), int)
    one = z.copy()
    one[2, 2] = 1
    assert hd95(z, z, 1) == 0.0
    assert hd95(z, one, 1) is None
    assert hd95(one, z, 1) is None


def test_boundary_single_pixel_and_square():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    assert boundary_points(m).tolist() == [[2, 2]]
    m[1:4, 1:4] = True
    assert len(boundary_points(m)) == 8
    full = np.ones((3, 3), bool)
    assert len(boundary_points(full)) == 8


def test_nearest_rank():
    assert nearest_rank(np.arange(1, 21, dtype=float)) == 19.0
    assert nearest_rank(np.arange(1, 101, dtype=float)) == 95.0
    assert nearest_rank(np.array([7.0])) == 7.0


def test_random_pairs_against_oracles():
    rng = np.random.default_rng(7)
    for trial in range(100):
        density = rng.uniform(0.1, 0.6)
        gt = (rng.uniform(size=(16, 16)) < density).astype(int) * rng.integers(1, 3, size=(16, 16))
        pred = (rng.uniform(size=(16, 16)) < density).astype(int) * rng.integers(1, 3, size=(16, 16))
        for c in (1, 2):
            assert dsc(gt, pred, c) == dsc_oracle(gt, pred, c)
            got, want = hd95(gt, pred, c), hd95_oracle(gt, pred, c)
            if want is None:
                assert got is None
            else:
                assert abs(got - want) <= 1e-9
            assert sorted(map(tuple, boundary_points(gt == c).tolist())) == sorted(boundary_oracle(gt == c))


def test_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.integers(0, 3, size=(12, 12))
        b = rng.integers(0, 3, size=(12, 12))
        for c in (1, 2):
            assert dsc(a, b, c) == dsc(b, a, c)
            assert hd95(a, b, c) == hd95(b, a, c)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        dsc(np.zeros((3, 3)), np.zeros((3, 4)), 1)
    with pytest.raises(ValueError):
        hd95(np.zeros((3, 3)), np.zeros((4, 3)), 1)


def test_evaluate_case_and_merge():
    gt = np.zeros((8, 8), int)
    gt[1:3, 1:3] = 1
    rep = evaluate_case(gt, gt, 3)
    assert rep.classes == [1, 2]
    assert rep.per_class_dsc == [100.0, 100.0]
    assert rep.per_class_hd95 == [0.0, None]
    assert rep.mean_dsc == 100.0 and rep.mean_hd95 == 0.0
    pred = np.zeros_like(gt)
    pred[1:3, 2:4] = 1
    rep2 = evaluate_case(gt, pred, 3)
    merged = merge_reports([rep, rep2])
    assert merged.per_class_dsc[0] == pytest.approx((100 + 50) / 2)
    assert merged.per_class_hd95[0] == pytest.approx(rep2.per_class_hd95[0] / 2)
    assert merged.per_class_hd95[1] is None
