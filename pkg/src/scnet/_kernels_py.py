"""Pure-numpy implementations of the inner kernels.

Mirrors the compiled ``_ckernels`` extension function-for-function; used when
the extension is not built or ``SCN_PURE_PYTHON=1`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def warp_bilinear(images, src_rows, src_cols):
    """Resample ``images`` (n, H, W, C) at fractional source coordinates.

    ``src_rows``/``src_cols`` are (H, W) float64 maps shared by the whole
    batch. Neighbours that fall outside the image read as zero.
    """
    n, h, w, c = images.shape
    r0 = np.floor(src_rows)
    c0 = np.floor(src_cols)
    fy = src_rows - r0
    fx = src_cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    src = images.astype(np.float64, copy=False)

    def tap(r, cc):
        ok = (r >= 0) & (r < h) & (cc >= 0) & (cc < w)
        rr = np.where(ok, r, 0)
        ci = np.where(ok, cc, 0)
        vals = src[:, rr, ci, :]
        return np.where(ok[None, :, :, None], vals, 0.0)

    v00 = tap(r0, c0)
    v01 = tap(r0, c0 + 1)
    v10 = tap(r0 + 1, c0)
    v11 = tap(r0 + 1, c0 + 1)
    fx = fx[None, :, :, None]
    fy = fy[None, :, :, None]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    out = top * (1.0 - fy) + bot * fy
    return out.astype(images.dtype)


def rasterize(xy, size):
    """Density raster of (n, N, 2) points with coordinates in [-1, 1].

    x maps to columns left-to-right, y to rows bottom-to-top. Each image is
    divided by its own maximum cell count.
    """
    n, npts, _ = xy.shape
    cols = np.floor((xy[..., 0] + 1.0) * 0.5 * size).astype(np.int64)
    rows = np.floor((1.0 - xy[..., 1]) * 0.5 * size).astype(np.int64)
    np.clip(cols, 0, size - 1, out=cols)
    np.clip(rows, 0, size - 1, out=rows)
    flat = rows * size + cols + (np.arange(n, dtype=np.int64) * size * size)[:, None]
    counts = np.bincount(flat.ravel(), minlength=n * size * size).reshape(n, size, size)
    peak = counts.reshape(n, -1).max(axis=1).astype(np.float64)
    peak[peak == 0] = 1.0
    return (counts / peak[:, None, None]).astype(np.float32)


def im2col(x, kh, kw, stride):
    """Unfold (b, C, H, W) into (b, Ho*Wo, C*kh*kw) patches (no padding)."""
    b, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return np.array(win.transpose(0, 2, 3, 1, 4, 5), order="C").reshape(b, ho * wo, c * kh * kw)


def col2im(cols, c, h, w, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add patches back into (b, C, H, W)."""
    b = cols.shape[0]
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    patches = cols.reshape(b, ho, wo, c, kh, kw)
    out = np.zeros((b, c, h, w), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out
