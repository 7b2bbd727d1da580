"""Soft ternary census transform and the two photometric data measures.

The census response of a neighbour ``n`` around centre ``c`` is
``d / sqrt(softness + d**2)`` with ``d = I(n) - I(c)``; as ``softness -> 0`` it
tends to the hard sign pattern. Two census fields are compared slot by slot
with the saturating distance ``e**2 / (saturation + e**2)``.
"""

from dataclasses import dataclass

import numpy as np

from bidiflow import _backend
from bidiflow.grid import as_image, luminance

SOFTNESS = 0.81
SATURATION = 0.1
SUPPORTED_RADII = (1, 2, 3)


@dataclass(frozen=True, eq=False)
class CensusField:
    """Per-pixel census responses stored slot-major, shape (K, H, W).

    Slot ``k`` follows the row-major order of the patch with the centre skipped.
    """

    patch_radius: int
    features: np.ndarray

    @property
    def height(self):
        return self.features.shape[1]

    @property
    def width(self):
        return self.features.shape[2]

    @property
    def n_slots(self):
        return self.features.shape[0]


def n_slots(radius):
    return (2 * radius + 1) ** 2 - 1


def check_radius(radius):
    if radius not in SUPPORTED_RADII:
        raise ValueError(f"unsupported census patch radius {radius}; expected one of {SUPPORTED_RADII}")


def census_transform(img, patch_radius, softness=SOFTNESS, scale=1.0):
    """Census responses of ``img``; RGB input is reduced to luminance first.

    Intensities are multiplied by ``scale`` before differencing, so
    ``softness`` is expressed in the scaled units (the loss uses 255).
    """
    check_radius(patch_radius)
    lum = np.ascontiguousarray(scale * luminance(as_image(img)))
    feats = _backend.kernels.census_features(lum, patch_radius, softness)
    return CensusField(patch_radius, feats)


def census_distance(a, b_warped, saturation=SATURATION):
    """Per-pixel saturated distance between two census fields."""
    if a.patch_radius != b_warped.patch_radius or a.features.shape != b_warped.features.shape:
        raise ValueError("census fields differ in shape or patch radius")
    e = a.features - b_warped.features
    e2 = e * e
    out = np.zeros(a.features.shape[1:])
    for slot in e2 / (saturation + e2):
        out += slot
    return out


def brightness_distance(i1, i2_warped):
    """Signed channel-mean intensity difference ``mean_c(I1 - I2_warped)``."""
    i1 = as_image(i1)
    i2_warped = as_image(i2_warped)
    if i1.shape != i2_warped.shape:
        raise ValueError(f"image shapes differ: {i1.shape} vs {i2_warped.shape}")
    diff = i1 - i2_warped
    return diff if diff.ndim == 2 else diff.mean(axis=2)
