"""Pure numpy im2col / col2im used when the compiled extension is unavailable.

Layouts are channels-last: images ``[B, H, W, C]``, patch columns
``[B, Ho, Wo, kh, kw, C]``.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(xp, kh, kw, stride, ho, wo):
    """Gather sliding patches from an already zero-padded input ``xp``."""
    b, _, _, c = xp.shape
    sb, sh, sw, sc = xp.strides
    view = as_strided(
        xp,
        shape=(b, ho, wo, kh, kw, c),
        strides=(sb, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def col2im(cols, hp, wp, stride):
    """Scatter-add patch gradients back onto a padded ``[B, hp, wp, C]`` grid."""
    b, ho, wo, kh, kw, c = cols.shape
    out = np.zeros((b, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols[:, :, :, i, j, :]
    return out
