"""Pure-NumPy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop by loop.
Every function is deterministic: reductions run in a fixed order.
"""

import numpy as np


def _corners(u, v, height, width):
    ys, xs = np.mgrid[0:height, 0:width]
    return _stencil(xs + u, ys + v, height, width)


def _stencil(px, py, height, width):
    """Clamped bilinear stencil for sample points ``(px, py)``.

    Returns the corner indices, fractional weights, per-axis "derivative
    alive" flags and the in-bounds validity mask.
    """
    # the image covers the pixel areas [-0.5, W - 0.5] x [-0.5, H - 0.5]
    valid = ((px >= -0.5) & (px <= width - 0.5) & (py >= -0.5) & (py <= height - 0.5)).astype(np.float64)
    cx = np.clip(px, 0, width - 1)
    cy = np.clip(py, 0, height - 1)
    dx_alive = ((px >= 0) & (px <= width - 1)).astype(np.float64)
    dy_alive = ((py >= 0) & (py <= height - 1)).astype(np.float64)
    x0 = np.minimum(np.floor(cx).astype(np.intp), max(width - 2, 0))
    y0 = np.minimum(np.floor(cy).astype(np.intp), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = cx - x0
    fy = cy - y0
    return x0, x1, y0, y1, fx, fy, dx_alive, dy_alive, valid


def warp(src, u, v):
    """Bilinear backward warp of a channel-first stack.

    ``src`` has shape (C, H, W). Returns ``(out, grad_x, grad_y, valid)`` where
    the gradients are the partial derivatives of each warped channel with
    respect to the horizontal and vertical displacement.
    """
    _, height, width = src.shape
    ys, xs = np.mgrid[0:height, 0:width]
    return sample(src, xs + u, ys + v)


def sample(src, px, py):
    """Bilinear samples of a (C, H, W) stack at arbitrary points, with gradients."""
    _, height, width = src.shape
    x0, x1, y0, y1, fx, fy, dxa, dya, valid = _stencil(px, py, height, width)
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    a = src[:, y0, x0]
    b = src[:, y0, x1]
    c = src[:, y1, x0]
    d = src[:, y1, x1]
    out = w00 * a + w01 * b + w10 * c + w11 * d
    grad_x = dxa * ((1.0 - fy) * (b - a) + fy * (d - c))
    grad_y = dya * ((1.0 - fx) * (c - a) + fx * (d - b))
    return out, grad_x, grad_y, valid


def splat(grad, u, v):
    """Adjoint of :func:`warp` with respect to the source values."""
    channels, height, width = grad.shape
    x0, x1, y0, y1, fx, fy, _, _, _ = _corners(u, v, height, width)
    n = height * width
    weights = (
        ((1.0 - fx) * (1.0 - fy), y0 * width + x0),
        (fx * (1.0 - fy), y0 * width + x1),
        ((1.0 - fx) * fy, y1 * width + x0),
        (fx * fy, y1 * width + x1),
    )
    out = np.zeros((channels, height, width))
    for ch in range(channels):
        acc = np.zeros(n)
        g = grad[ch]
        for w, idx in weights:
            acc += np.bincount(idx.ravel(), weights=(w * g).ravel(), minlength=n)
        out[ch] = acc.reshape(height, width)
    return out


def patch_offsets(radius):
    return [(dy, dx) for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1) if (dy, dx) != (0, 0)]


def census_features(lum, radius, softness):
    """Soft ternary census responses, shape (K, H, W)."""
    height, width = lum.shape
    padded = np.pad(lum, radius, mode="edge")
    offsets = patch_offsets(radius)
    feats = np.empty((len(offsets), height, width))
    for k, (dy, dx) in enumerate(offsets):
        d = padded[radius + dy:radius + dy + height, radius + dx:radius + dx + width] - lum
        feats[k] = d / np.sqrt(softness + d * d)
    return feats


def _fold_edges(gpad, radius):
    # replicate padding adjoint: pad-cell gradients belong to the edge pixel
    r = radius
    g = gpad.copy()
    g[:, r] += g[:, :r].sum(axis=1)
    g[:, -r - 1] += g[:, -r:].sum(axis=1)
    g[r, :] += g[:r, :].sum(axis=0)
    g[-r - 1, :] += g[-r:, :].sum(axis=0)
    return g[r:-r, r:-r]


def census_cost(warped, ref, mask, radius, softness, saturation, gamma, eps):
    """Masked Charbonnier census matching cost against fixed reference features.

    Returns ``(total, distance, grad)``: the masked sum of rho(distance), the
    per-pixel census distance, and d(total)/d(warped).
    """
    height, width = warped.shape
    r = radius
    padded = np.pad(warped, r, mode="edge")
    offsets = patch_offsets(r)
    ds = np.empty((len(offsets), height, width))
    es = np.empty_like(ds)
    dist = np.zeros((height, width))
    for k, (dy, dx) in enumerate(offsets):
        d = padded[r + dy:r + dy + height, r + dx:r + dx + width] - warped
        e = ref[k] - d / np.sqrt(softness + d * d)
        e2 = e * e
        dist += e2 / (saturation + e2)
        ds[k] = d
        es[k] = e
    base = dist * dist + eps * eps
    total = float(np.sum(mask * base ** gamma))
    g_dist = mask * (2.0 * gamma * dist * base ** (gamma - 1.0))
    gpad = np.zeros((height + 2 * r, width + 2 * r))
    g_center = np.zeros((height, width))
    for k, (dy, dx) in enumerate(offsets):
        d = ds[k]
        e = es[k]
        q = softness + d * d
        s2 = saturation + e * e
        g = -g_dist * (2.0 * e * saturation / (s2 * s2)) * (softness / (q * np.sqrt(q)))
        gpad[r + dy:r + dy + height, r + dx:r + dx + width] += g
        g_center -= g
    grad = _fold_edges(gpad, r) + g_center
    return total, dist, grad
