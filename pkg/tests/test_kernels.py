"""im2col/col2im kernel checks against a brute-force convolution oracle."""

import numpy as np
import pytest

from voicemorph import kernels
from voicemorph.kernels import available_backends, get_backend

CASES = [
    # n, c, h, w, kh, kw, sh, sw, ph, pw
    (2, 3, 8, 8, 3, 3, 1, 1, 1, 1),
    (1, 4, 9, 7, 3, 3, 2, 2, 1, 1),
    (2, 2, 5, 5, 4, 4, 1, 1, 0, 0),
    (1, 3, 64, 64, 1, 1, 1, 1, 0, 0),
    (1, 64, 1, 57, 1, 3, 1, 2, 0, 1),
    (3, 1, 6, 6, 2, 2, 2, 2, 0, 0),
]


def naive_conv2d(x, w, sh, sw, ph, pw):
    """Direct dot-product convolution; the independent oracle."""
    n, c, h, win = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (win + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for oh in range(ho):
                for ow in range(wo):
                    patch = xp[ni, :, oh * sh:oh * sh + kh, ow * sw:ow * sw + kw]
                    out[ni, co, oh, ow] = (patch * w[co]).sum()
    return out


def conv_via_cols(backend, x, w, sh, sw, ph, pw):
    n, c, h, win = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (win + 2 * pw - kw) // sw + 1
    cols = backend.im2col(x, kh, kw, sh, sw, ph, pw)
    return (w.reshape(cout, -1) @ cols).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)


@pytest.mark.parametrize("name", available_backends())
@pytest.mark.parametrize("case", CASES)
def test_im2col_matches_naive_convolution(name, case):
    n, c, h, w_, kh, kw, sh, sw, ph, pw = case
    rng = np.random.default_rng(42)
    x = rng.normal(size=(n, c, h, w_))
    w = rng.normal(size=(5, c, kh, kw))
    backend = get_backend(name)
    got = conv_via_cols(backend, x, w, sh, sw, ph, pw)
    want = naive_conv2d(x, w, sh, sw, ph, pw)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", available_backends())
@pytest.mark.parametrize("case", CASES)
def test_col2im_is_exact_adjoint(name, case):
    n, c, h, w_, kh, kw, sh, sw, ph, pw = case
    rng = np.random.default_rng(7)
    backend = get_backend(name)
    x = rng.normal(size=(n, c, h, w_))
    cols = backend.im2col(x, kh, kw, sh, sw, ph, pw)
    y = rng.normal(size=cols.shape)
    back = backend.col2im(y, n, c, h, w_, kh, kw, sh, sw, ph, pw)
    # <col2im(y), x> == <y, im2col(x)> for an adjoint pair
    lhs = float((back * x).sum())
    rhs = float((y * cols).sum())
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


@pytest.mark.skipif("compiled" not in available_backends(),
                    reason="compiled backend not built")
@pytest.mark.parametrize("case", CASES)
def test_backends_bit_identical(case):
    n, c, h, w_, kh, kw, sh, sw, ph, pw = case
    rng = np.random.default_rng(3)
    ref = get_backend("python")
    fast = get_backend("compiled")
    x = rng.normal(size=(n, c, h, w_))
    a = ref.im2col(x, kh, kw, sh, sw, ph, pw)
    b = fast.im2col(x, kh, kw, sh, sw, ph, pw)
    assert a.shape == b.shape
    assert (a == b).all()
    cols = rng.normal(size=a.shape)
    ya = ref.col2im(cols, n, c, h, w_, kh, kw, sh, sw, ph, pw)
    yb = fast.col2im(cols, n, c, h, w_, kh, kw, sh, sw, ph, pw)
    assert (ya == yb).all()


def test_out_size_formula():
    assert kernels.out_size(64, 3, 2, 1) == 32
    assert kernels.out_size(64, 2, 2, 0) == 32
    assert kernels.out_size(4, 4, 1, 0) == 1
    assert kernels.out_size(298, 3, 2, 1) == 149
