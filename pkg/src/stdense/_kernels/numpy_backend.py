"""Pure numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable (or when
STDENSE_BACKEND=numpy). Every function here has a signature-identical twin
in ``_fast.pyx``; tests assert the two agree.

Layout conventions:
  * conv kernels work on channels-last (NHWC) inputs with zero-padding
    applied implicitly while unfolding; columns are (tap, channel)-major,
    i.e. cols[row, (i*kw + j)*C + c] for kernel tap (i, j) and channel c.
  * images elsewhere are NCHW; sample grids are [N, H, W, 2] with (u, v)
    in the align-corners normalized frame.
"""

import numpy as np


def im2col_nhwc(x, kh, kw, stride, pad, out=None):
    """Unfold NHWC input into [N*out_h*out_w, kh*kw*C] columns."""
    n, h, w, c = x.shape
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    if pad:
        xpad = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xpad[:, pad : pad + h, pad : pad + w, :] = x
    else:
        xpad = x
    if out is None:
        out = np.empty((n * out_h * out_w, kh * kw * c), dtype=x.dtype)
    cols = out.reshape(n, out_h, out_w, kh * kw, c)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i * kw + j, :] = xpad[
                :, i : i + stride * out_h : stride, j : j + stride * out_w : stride, :
            ]
    return out


def col2im_nhwc(dcols, n, h, w, c, kh, kw, stride, pad, out=None):
    """Scatter-add column gradients back onto the (unpadded) NHWC input."""
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    d5 = dcols.reshape(n, out_h, out_w, kh * kw, c)
    dxpad = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxpad[:, i : i + stride * out_h : stride, j : j + stride * out_w : stride, :] += d5[
                :, :, :, i * kw + j, :
            ]
    trimmed = dxpad[:, pad : pad + h, pad : pad + w, :] if pad else dxpad
    if out is None:
        return np.ascontiguousarray(trimmed)
    np.copyto(out, trimmed)
    return out


def relu_backward(x, g):
    """Masked gradient for relu; operates on flat 1-D views."""
    return (x > 0) * g


def avgpool2x2_forward(x):
    """2x2/stride-2 mean pool on NCHW."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2x2_backward(g):
    """Spread pooled gradients evenly over each 2x2 window."""
    n, c, oh, ow = g.shape
    g6 = np.broadcast_to((g * 0.25)[:, :, :, None, :, None], (n, c, oh, 2, ow, 2))
    return np.ascontiguousarray(g6).reshape(n, c, oh * 2, ow * 2)


def maxpool2x2_forward(x):
    """2x2 max pool on NCHW; returns (pooled, argmax) with argmax in 0..3.

    Window positions are scanned row-major, so ties resolve to the first
    (topmost, then leftmost) maximum.
    """
    n, c, h, w = x.shape
    v = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    arg = v.argmax(axis=-1).astype(np.uint8)
    out = np.ascontiguousarray(
        np.take_along_axis(v, arg[..., None], axis=-1)[..., 0]
    )
    return out, arg


def maxpool2x2_backward(g, arg, h, w):
    """Route pooled gradients to the recorded argmax positions."""
    n, c, oh, ow = g.shape
    dv = np.zeros((n, c, oh, ow, 4), dtype=g.dtype)
    np.put_along_axis(dv, arg[..., None].astype(np.intp), g[..., None], axis=-1)
    return np.ascontiguousarray(
        dv.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    )


def _grid_to_pixels(grid, h, w):
    # align-corners: u=-1 -> column 0, u=+1 -> column w-1
    cx = (grid[..., 0] + 1.0) * ((w - 1) / 2.0)
    cy = (grid[..., 1] + 1.0) * ((h - 1) / 2.0)
    return cx, cy


def _corner_gather(img_flat, lin, c):
    # img_flat: [N, C, H*W]; lin: [N, Ho, Wo] clipped linear indices
    n, oh, ow = lin.shape
    idx = np.broadcast_to(lin.reshape(n, 1, oh * ow), (n, c, oh * ow))
    return np.take_along_axis(img_flat, idx, axis=2).reshape(n, c, oh, ow)


def bilinear_forward(img, grid):
    """Sample NCHW ``img`` at grid (u, v) locations with zero padding."""
    n, c, h, w = img.shape
    cx, cy = _grid_to_pixels(grid, h, w)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    fx = (cx - x0).astype(img.dtype)
    fy = (cy - y0).astype(img.dtype)

    img_flat = img.reshape(n, c, h * w)
    out = None
    for dy in (0, 1):
        for dx in (0, 1):
            xs = x0 + dx
            ys = y0 + dy
            valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            wx = fx if dx == 1 else (1.0 - fx)
            wy = fy if dy == 1 else (1.0 - fy)
            wgt = (wx * wy * valid).astype(img.dtype)[:, None, :, :]
            lin = np.clip(ys, 0, h - 1) * w + np.clip(xs, 0, w - 1)
            vals = _corner_gather(img_flat, lin, c)
            term = wgt * vals
            out = term if out is None else out + term
    return out


def bilinear_backward(img, grid, gout):
    """Gradients of bilinear sampling w.r.t. image values and grid coords."""
    n, c, h, w = img.shape
    cx, cy = _grid_to_pixels(grid, h, w)
    x0 = np.floor(cx).astype(np.int64)
    y0 = np.floor(cy).astype(np.int64)
    fx = (cx - x0).astype(img.dtype)
    fy = (cy - y0).astype(img.dtype)

    img_flat = img.reshape(n, c, h * w)
    dcx = np.zeros(cx.shape, dtype=img.dtype)
    dcy = np.zeros(cy.shape, dtype=img.dtype)

    size = n * c * h * w
    chan_base = (np.arange(n * c, dtype=np.int64) * (h * w)).reshape(n, c, 1, 1)
    all_idx = []
    all_val = []
    for dy in (0, 1):
        for dx in (0, 1):
            xs = x0 + dx
            ys = y0 + dy
            valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            wx = fx if dx == 1 else (1.0 - fx)
            wy = fy if dy == 1 else (1.0 - fy)
            sx = 1.0 if dx == 1 else -1.0
            sy = 1.0 if dy == 1 else -1.0
            lin = np.clip(ys, 0, h - 1) * w + np.clip(xs, 0, w - 1)

            # d(input): upstream grad times the (masked) corner weight
            wgt = (wx * wy * valid).astype(img.dtype)
            all_idx.append((chan_base + lin[:, None, :, :]).ravel())
            all_val.append((gout * wgt[:, None, :, :]).ravel())

            # d(grid): corner value weighted by the partial of its weight
            vals = _corner_gather(img_flat, lin, c) * valid[:, None, :, :]
            gv = (gout * vals).sum(axis=1)
            dcx += gv * (sx * wy)
            dcy += gv * (wx * sy)

    flat = np.bincount(
        np.concatenate(all_idx),
        weights=np.concatenate(all_val).astype(np.float64),
        minlength=size,
    )
    dimg = flat.astype(img.dtype).reshape(n, c, h, w)

    dgrid = np.empty_like(grid)
    dgrid[..., 0] = dcx * ((w - 1) / 2.0)
    dgrid[..., 1] = dcy * ((h - 1) / 2.0)
    return dimg, dgrid
