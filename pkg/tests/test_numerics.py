import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meritseg.gradcheck_suite import PRIMITIVES
from meritseg.numerics import ops
from meritseg.numerics.rng import RngStream
from meritseg.numerics.tensor import Tensor, grad_of, set_finite_check

from conftest import check_fd, leaf


def bilinear_oracle(img, out_h, out_w):
    """Direct half-pixel-centre bilinear interpolation with edge clamping, one pixel at a time."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = max((i + 0.5) * h / out_h - 0.5, 0.0)
        y0 = min(int(np.floor(sy)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = max((j + 0.5) * w / out_w - 0.5, 0.0)
            x0 = min(int(np.floor(sx)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


# -- conv2d -------------------------------------------------------------------

def test_conv_identity_kernel(rng):
    x = Tensor(rng.normal(size=(1, 1, 5, 6)))
    out = ops.conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_ones():
    out = ops.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert out.shape == (1, 1, 5, 5)
    assert out.data[0, 0, 2, 2] == 9
    assert out.data[0, 0, 0, 0] == 4


@pytest.mark.parametrize("stride,padding,kh", [(1, 0, 3), (2, 1, 3), (1, 2, 5), (3, 1, 2)])
def test_conv_output_size(stride, padding, kh):
    x = Tensor(np.zeros((2, 3, 11, 9)))
    k = Tensor(np.zeros((4, 3, kh, kh)))
    out = ops.conv2d(x, k, stride=stride, padding=padding)
    assert out.shape == (2, 4, (11 + 2 * padding - kh) // stride + 1, (9 + 2 * padding - kh) // stride + 1)


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(2, 4, 7, 6))
    k = rng.normal(size=(6, 2, 3, 3))
    b = rng.normal(size=6)
    out = ops.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1, groups=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(6):
            gi = o // 3
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[n, gi * 2:(gi + 1) * 2, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    ref[n, o, i, j] = (patch * k[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_kernel_gradient_fd(rng):
    x = leaf(rng, 1, 2, 4, 4)
    k = leaf(rng, 3, 2, 3, 3)
    assert check_fd(lambda: ops.sum(ops.conv2d(x, k, padding=1)), [k]) <= 1e-4


def test_conv_errors():
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((3, 1, 3, 3))), groups=2)
    with pytest.raises(ValueError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


# -- attention ----------------------------------------------------------------

def test_attention_single_token(rng):
    q, k, v = (Tensor(rng.normal(size=(1, 4))) for _ in range(3))
    np.testing.assert_allclose(ops.scaled_dot_product_attention(q, k, v).data, v.data)


def test_attention_uniform_keys(rng):
    q = Tensor(rng.normal(size=(5, 3)))
    k = Tensor(np.tile(rng.normal(size=(1, 3)), (5, 1)))
    v = Tensor(rng.normal(size=(5, 3)))
    out = ops.scaled_dot_product_attention(q, k, v).data
    np.testing.assert_allclose(out, np.tile(v.data.mean(axis=0), (5, 1)), atol=1e-12)


def test_attention_query_gradient_fd(rng):
    q, k, v = leaf(rng, 5, 4), leaf(rng, 5, 4), leaf(rng, 5, 4)
    assert check_fd(lambda: ops.sum(ops.mul(ops.scaled_dot_product_attention(q, k, v), v)), [q]) <= 1e-4


def test_attention_zero_dim():
    z = Tensor(np.zeros((3, 0)))
    with pytest.raises(ValueError):
        ops.scaled_dot_product_attention(z, z, z)


# -- resize -------------------------------------------------------------------

def test_bilinear_identity(rng):
    x = Tensor(rng.normal(size=(2, 3, 5, 7)))
    np.testing.assert_array_equal(ops.resize2d(x, 5, 7, "bilinear").data, x.data)


@pytest.mark.parametrize("mode", ops.RESIZE_MODES)
@pytest.mark.parametrize("size", [(1, 1), (3, 8), (9, 4), (16, 16)])
def test_resize_constant(mode, size):
    x = Tensor(np.full((1, 2, 6, 5), 3.25))
    np.testing.assert_allclose(ops.resize2d(x, *size, mode).data, 3.25, rtol=0, atol=1e-12)


def test_bilinear_2x2_to_4x4_matches_oracle():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    # frozen from bilinear_oracle: rows sample at [0, .25, .75, 1] of the 2-row grid
    expected = np.array([
        [0.0, 0.25, 0.75, 1.0],
        [0.5, 0.75, 1.25, 1.5],
        [1.5, 1.75, 2.25, 2.5],
        [2.0, 2.25, 2.75, 3.0],
    ])
    np.testing.assert_allclose(bilinear_oracle(img, 4, 4), expected)
    out = ops.resize2d(Tensor(img[None, None]), 4, 4, "bilinear").data[0, 0]
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("shape_in,shape_out", [((5, 7), (3, 11)), ((4, 4), (13, 2)), ((6, 3), (6, 9))])
def test_bilinear_random_vs_oracle(rng, shape_in, shape_out):
    img = rng.normal(size=shape_in)
    out = ops.resize2d(Tensor(img[None, None]), *shape_out, "bilinear").data[0, 0]
    np.testing.assert_allclose(out, bilinear_oracle(img, *shape_out), atol=1e-12)


def test_nearest_draws_input_values(rng):
    img = rng.normal(size=(1, 1, 5, 6))
    out = ops.resize2d(Tensor(img), 13, 4, "nearest").data
    assert set(out.ravel()) <= set(img.ravel())


def test_resize_bad_mode():
    with pytest.raises(ValueError):
        ops.resize2d(Tensor(np.zeros((1, 1, 2, 2))), 4, 4, "lanczos")
    with pytest.raises(ValueError):
        ops.resize2d(Tensor(np.zeros((1, 1, 2, 2))), 0, 4, "bilinear")


# -- grad_of ------------------------------------------------------------------

def test_grad_quadratic(rng):
    x = leaf(rng, 6)
    (g,) = grad_of(ops.sum(ops.mul(x, x)), [x])
    np.testing.assert_allclose(g, 2 * x.data)


def test_grad_constant_function(rng):
    x = leaf(rng, 3)
    c = Tensor(np.array(2.0), requires_grad=True)
    (g,) = grad_of(ops.mul(c, 3.0), [x])
    np.testing.assert_array_equal(g, np.zeros(3))


def test_grad_chain_fd(rng):
    x, w = leaf(rng, 3, 4), leaf(rng, 4, 2)
    assert check_fd(lambda: ops.sum(ops.sigmoid(ops.matmul(x, w))), [x, w]) <= 1e-4


def test_grad_nonscalar_output(rng):
    x = leaf(rng, 3)
    with pytest.raises(ValueError):
        grad_of(ops.mul(x, 2.0), [x])


def test_grad_repeatable(rng):
    x, w = leaf(rng, 3, 4), leaf(rng, 4, 2)
    out = ops.sum(ops.gelu(ops.matmul(x, w)))
    a = grad_of(out, [x, w])
    b = grad_of(out, [x, w])
    for ga, gb in zip(a, b):
        np.testing.assert_array_equal(ga, gb)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_is_error():
    prev = set_finite_check(True)
    try:
        with pytest.raises(FloatingPointError):
            ops.log(Tensor(np.array([-1.0])))
    finally:
        set_finite_check(prev)


# -- randomized primitive checks ---------------------------------------------



@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_fd_randomized(name):
    worst = 0.0
    for trial in range(50):
        r = np.random.default_rng(10_000 + trial)
        build, inputs = PRIMITIVES[name](r)
        worst = max(worst, check_fd(build, inputs))
    assert worst <= 1e-4, f"{name}: worst relative error {worst:.2e}"


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 7), st.floats(0.1, 30.0), st.integers(0, 2**31))
def test_softmax_rows_sum_to_one(n, c, scale, seed):
    x = Tensor(np.random.default_rng(seed).normal(0, scale, (n, c)))
    p = ops.softmax(x, axis=-1).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


def test_deterministic_ops(rng):
    x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    k = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)

    def run():
        y = ops.conv2d(Tensor(x), Tensor(k), padding=1)
        return ops.resize2d(ops.gelu(y), 13, 5, "bicubic").data

    np.testing.assert_array_equal(run(), run())


def test_rng_stream_reproducible():
    a = RngStream(5, 3).generator().normal(size=10)
    b = RngStream(5, 3).generator().normal(size=10)
    c = RngStream(5, 4).generator().normal(size=10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
