"""File codecs for flow fields and images, and the flow colour wheel."""

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from bidiflow.grid import FlowField

FLO_MAGIC = 202021.25
FLO_INVALID = 1e9
FLO_HEADER_BYTES = 12
MAX_FLO_PIXELS = 1 << 31

KITTI_OFFSET = 2 ** 15
KITTI_SCALE = 64.0

_FLO_DTYPE = np.dtype("<f4")
_INT_DTYPE = np.dtype("<i4")


class FlowFormatError(ValueError):
    """A file does not follow the expected flow or image layout."""


@dataclass(frozen=True, eq=False)
class FlowFile:
    format: str
    field: FlowField
    valid: np.ndarray


# Middlebury .flo

def write_flo(path, flow, valid=None):
    """Write ``flow`` as little-endian .flo; invalid pixels get a 1e10 sentinel."""
    u = flow.u.astype(_FLO_DTYPE)
    v = flow.v.astype(_FLO_DTYPE)
    if valid is not None:
        bad = ~np.asarray(valid, dtype=bool)
        u[bad] = 1e10
        v[bad] = 1e10
    data = np.empty((flow.height, flow.width, 2), dtype=_FLO_DTYPE)
    data[..., 0] = u
    data[..., 1] = v
    with open(path, "wb") as fh:
        fh.write(np.array([FLO_MAGIC], dtype=_FLO_DTYPE).tobytes())
        fh.write(np.array([flow.width, flow.height], dtype=_INT_DTYPE).tobytes())
        fh.write(data.tobytes())


def read_flo(path, return_valid=False):
    """Read a .flo file.

    Components that are NaN or larger than 1e9 in magnitude mark a pixel
    invalid; such pixels come back as zero flow. With ``return_valid`` the
    result is ``(flow, valid)``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < FLO_HEADER_BYTES:
        raise FlowFormatError(f"{path}: file too short for a .flo header")
    magic = np.frombuffer(raw, _FLO_DTYPE, 1, 0)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"{path}: bad .flo magic {magic!r}")
    width, height = (int(x) for x in np.frombuffer(raw, _INT_DTYPE, 2, 4))
    if width <= 0 or height <= 0 or width * height >= MAX_FLO_PIXELS:
        raise FlowFormatError(f"{path}: implausible .flo dimensions {width}x{height}")
    need = FLO_HEADER_BYTES + 8 * width * height
    if len(raw) < need:
        raise FlowFormatError(f"{path}: truncated payload ({len(raw)} of {need} bytes)")
    data = np.frombuffer(raw, _FLO_DTYPE, 2 * width * height, FLO_HEADER_BYTES).reshape(height, width, 2)
    data = data.astype(np.float64)
    bad = np.any(~np.isfinite(data) | (np.abs(data) > FLO_INVALID), axis=2)
    data[bad] = 0.0
    flow = FlowField(data[..., 0], data[..., 1])
    if return_valid:
        return flow, (~bad).astype(np.float64)
    return flow


# KITTI 16-bit PNG

def encode_kitti(flow, valid=None):
    """(H, W, 3) uint16 array in (u, v, valid) channel order."""
    valid = np.ones(flow.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if valid.shape != flow.shape:
        raise ValueError(f"valid mask shape {valid.shape} does not match flow {flow.shape}")
    out = np.empty(flow.shape + (3,), dtype=np.uint16)
    for ch, comp in enumerate((flow.u, flow.v)):
        enc = np.rint(comp * KITTI_SCALE + KITTI_OFFSET)
        enc = np.where(valid, enc, KITTI_OFFSET)
        if enc.min() < 0 or enc.max() > 65535:
            raise ValueError("flow outside the KITTI range [-512, 512) px")
        out[..., ch] = enc.astype(np.uint16)
    out[..., 2] = valid
    return out


def decode_kitti(arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint16:
        raise FlowFormatError(f"KITTI flow must be 16-bit, got {arr.dtype}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FlowFormatError(f"KITTI flow must have 3 channels, got shape {arr.shape}")
    u = (arr[..., 0].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    v = (arr[..., 1].astype(np.float64) - KITTI_OFFSET) / KITTI_SCALE
    valid = (arr[..., 2] > 0).astype(np.float64)
    return FlowField(u * valid, v * valid), valid


def write_kitti_flow(path, flow, valid=None):
    enc = encode_kitti(flow, valid)
    # OpenCV stores BGR
    if not cv2.imwrite(str(path), enc[..., ::-1].copy()):
        raise OSError(f"could not write {path}")


def read_kitti_flow(path):
    """Returns ``(flow, valid)``; invalid pixels decode to zero flow."""
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise OSError(f"could not read {path}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FlowFormatError(f"{path}: expected 3 channels, got shape {arr.shape}")
    return decode_kitti(arr[..., ::-1])


def read_flow(path):
    """Load .flo or KITTI .png by extension into a FlowFile."""
    path = Path(path)
    if path.suffix.lower() == ".flo":
        flow, valid = read_flo(path, return_valid=True)
        return FlowFile("middlebury_flo", flow, valid)
    if path.suffix.lower() == ".png":
        flow, valid = read_kitti_flow(path)
        return FlowFile("kitti_png16", flow, valid)
    raise FlowFormatError(f"unknown flow file type {path.suffix!r}")


def write_flow(path, flow, valid=None):
    path = Path(path)
    if path.suffix.lower() == ".flo":
        write_flo(path, flow, valid)
    elif path.suffix.lower() == ".png":
        write_kitti_flow(path, flow, valid)
    else:
        raise FlowFormatError(f"unknown flow file type {path.suffix!r}")


# 8-bit images

def read_image(path):
    """8-bit PNG/PPM/PGM to float64 in [0, 1]; gray stays (H, W), colour is (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise FlowFormatError(f"{path}: only 8-bit images are supported (mode {im.mode})")
        if im.mode in ("L", "1", "LA"):
            im = im.convert("L")
        else:
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0


def to_uint8(img):
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img):
    """Write a [0, 1] image (or mask) as an 8-bit PNG."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.dtype == bool:
        arr = arr.astype(np.float64)
    Image.fromarray(to_uint8(arr)).save(path, format="PNG")


# visualisation

def flow_to_color(flow, max_mag=None):
    """Colour-wheel rendering as an (H, W, 3) image in [0, 1].

    Hue follows the flow direction (0 deg for +u), saturation the magnitude
    relative to ``max_mag`` (largest magnitude when omitted); zero flow is white.
    """
    mag = flow.magnitude()
    if max_mag is None:
        max_mag = float(mag.max())
    if max_mag < 0:
        raise ValueError("max_mag must be non-negative")
    sat = np.clip(mag / max_mag, 0.0, 1.0) if max_mag > 0 else np.zeros_like(mag)
    hue = np.mod(np.arctan2(flow.v, flow.u) / (2 * np.pi), 1.0)
    hsv = np.stack([hue, sat, np.ones_like(mag)], axis=-1)
    return hsv_to_rgb(hsv)
