"""Grid types and bilinear sampling / resampling primitives.

Images are plain ``float64`` arrays, shape (H, W) for gray or (H, W, 3) for
RGB, with intensities in [0, 1]. Flow fields carry separate ``u`` (horizontal)
and ``v`` (vertical) displacement grids in pixels.
"""

from dataclasses import dataclass

import numpy as np

from bidiflow import _backend

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def as_image(img):
    """Validate and convert to a float64 image array."""
    arr = np.ascontiguousarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"image must be (H, W) or (H, W, 3), got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("image is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def channels_first(img):
    """(H, W[, C]) image -> contiguous (C, H, W) stack."""
    if img.ndim == 2:
        return np.ascontiguousarray(img[None])
    return np.ascontiguousarray(np.moveaxis(img, 2, 0))


def channels_last(stack, like):
    return stack[0] if like.ndim == 2 else np.moveaxis(stack, 0, 2)


def luminance(img):
    if img.ndim == 2:
        return img
    r, g, b = LUMA_WEIGHTS
    return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement field; ``u`` is horizontal, ``v`` vertical, in pixels."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be 2-D grids of equal shape, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, width, height, u, v):
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))

    @classmethod
    def from_stack(cls, stack):
        return cls(stack[0], stack[1])

    def stack(self):
        """(2, H, W) array of (u, v)."""
        return np.stack([self.u, self.v])

    def magnitude(self):
        return np.hypot(self.u, self.v)

    def __neg__(self):
        return FlowField(-self.u, -self.v)


def _points(x, y):
    px = np.asarray(x, dtype=np.float64)
    py = np.asarray(y, dtype=np.float64)
    return np.broadcast_arrays(px, py)


def bilinear_sample(img, x, y):
    """Bilinear value of ``img`` at continuous coordinates (x = column, y = row).

    Coordinates outside the image are clamped to the border. Scalar
    coordinates give a scalar for gray images and a length-3 vector for RGB.
    """
    img = as_image(img)
    px, py = _points(x, y)
    out, _, _, _ = _backend._pykernels.sample(channels_first(img), px, py)
    out = np.moveaxis(out, 0, -1)
    return out[..., 0] if img.ndim == 2 else out


def bilinear_sample_grad(img, x, y):
    """Partial derivatives of :func:`bilinear_sample` w.r.t. ``x`` and ``y``.

    Along an axis whose coordinate is clamped the derivative is zero.
    """
    img = as_image(img)
    px, py = _points(x, y)
    _, gx, gy, _ = _backend._pykernels.sample(channels_first(img), px, py)
    gx = np.moveaxis(gx, 0, -1)
    gy = np.moveaxis(gy, 0, -1)
    if img.ndim == 2:
        return gx[..., 0], gy[..., 0]
    return gx, gy


def backward_warp(img, flow):
    """Resample ``img`` at ``x + flow(x)``.

    Returns the warped image and a validity grid that is 1 where the target
    lies inside the image rectangle and 0 where it was clamped.
    """
    img = as_image(img)
    if img.shape[:2] != flow.shape:
        raise ValueError(f"image {img.shape[:2]} and flow {flow.shape} dimensions differ")
    out, _, _, valid = _backend.kernels.warp(channels_first(img), flow.u, flow.v)
    return channels_last(out, img), valid


def _box_half(arr):
    h, w = arr.shape[0] // 2, arr.shape[1] // 2
    a = arr[: 2 * h, : 2 * w]
    return 0.25 * (a[0::2, 0::2] + a[0::2, 1::2] + a[1::2, 0::2] + a[1::2, 1::2])


def downsample_half(img):
    """2x2 box average; odd trailing rows/columns are dropped."""
    img = as_image(img)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"cannot halve an image of shape {img.shape}")
    return _box_half(img)


def downsample_flow_half(flow):
    if flow.height < 2 or flow.width < 2:
        raise ValueError(f"cannot halve a flow of shape {flow.shape}")
    return FlowField(0.5 * _box_half(flow.u), 0.5 * _box_half(flow.v))


def resize_bilinear(arr, width, height):
    """Pixel-center aligned bilinear resize of a 2-D or (H, W, C) array."""
    src_h, src_w = arr.shape[:2]
    if width < 1 or height < 1:
        raise ValueError(f"invalid target size {width}x{height}")
    xs = (np.arange(width) + 0.5) * (src_w / width) - 0.5
    ys = (np.arange(height) + 0.5) * (src_h / height) - 0.5
    py, px = np.meshgrid(ys, xs, indexing="ij")
    stack = arr[None] if arr.ndim == 2 else np.moveaxis(arr, 2, 0)
    out, _, _, _ = _backend._pykernels.sample(np.ascontiguousarray(stack, dtype=np.float64), px, py)
    return out[0] if arr.ndim == 2 else np.moveaxis(out, 0, 2)


def upsample_flow_2x(flow, target_w, target_h):
    """Bilinearly upsample a flow to (target_w, target_h), rescaling displacements.

    The target must be twice the source size, give or take one pixel.
    """
    if abs(target_w - 2 * flow.width) > 1 or abs(target_h - 2 * flow.height) > 1:
        raise ValueError(
            f"target {target_w}x{target_h} is not ~2x the source {flow.width}x{flow.height}"
        )
    return resize_flow(flow, target_w, target_h)


def resize_flow(flow, width, height):
    """Resize a flow field and scale its components by the per-axis size ratio."""
    su = width / flow.width
    sv = height / flow.height
    return FlowField(su * resize_bilinear(flow.u, width, height), sv * resize_bilinear(flow.v, width, height))
