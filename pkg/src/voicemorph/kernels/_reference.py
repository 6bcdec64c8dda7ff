"""Pure-numpy gather/scatter kernels for convolution via matrix multiply.

Layout contract (shared with the compiled backend):

  im2col(x, kh, kw, sh, sw, ph, pw) -> cols
      x    : (N, C, H, W) float64, C-contiguous
      cols : (C*kh*kw, N*Ho*Wo) where row = (c*kh + ki)*kw + kj and
             column = (n*Ho + oh)*Wo + ow

  col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw) -> x

col2im is the exact linear adjoint of im2col.  Both backends accumulate
contributions to a given output element in ascending (ki, kj) order, so
their results are bit-identical, not merely close.
"""

import numpy as np


def out_size(size, k, s, p):
    """Spatial output size of a convolution along one axis."""
    return (size + 2 * p - k) // s + 1


def im2col(x, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    ho = out_size(h, kh, sh, ph)
    wo = out_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    st = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(st[0], st[1], st[2], st[3], st[2] * sh, st[3] * sw),
        writeable=False,
    )
    return np.ascontiguousarray(
        windows.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * ho * wo)
    )


def col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw):
    ho = out_size(h, kh, sh, ph)
    wo = out_size(w, kw, sw, pw)
    padded = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    blocks = cols.reshape(c, kh, kw, n, ho, wo)
    for ki in range(kh):
        for kj in range(kw):
            padded[:, :, ki:ki + sh * ho:sh, kj:kj + sw * wo:sw] += (
                blocks[:, ki, kj].transpose(1, 0, 2, 3)
            )
    return np.ascontiguousarray(padded[:, :, ph:ph + h, pw:pw + w])
