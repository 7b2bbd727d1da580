"""Procedural image pairs with exact ground-truth flow and occlusion.

Scenes are a textured background under a global integer translation, plus an
optional textured rectangle with its own integer translation drawn on top.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from bidiflow.grid import FlowField, as_image

TEXTURE_RANGE = (0.1, 0.8)

PERTURBATIONS = ("gaussian_noise", "brightness_shift", "color_multiplier", "contrast", "gamma")


@dataclass(frozen=True)
class Foreground:
    x: int
    y: int
    width: int
    height: int
    translation: tuple = (0, 0)


@dataclass(frozen=True)
class SceneSpec:
    size: tuple = (128, 128)  # (width, height)
    background_texture: str = "noise"
    frequency: float = 0.5
    foreground: Optional[Foreground] = None
    global_translation: tuple = (0, 0)
    channels: int = 1
    seed: int = 0


class Scene(NamedTuple):
    i1: np.ndarray
    i2: np.ndarray
    gt_forward: FlowField
    gt_backward: FlowField
    occ_forward: np.ndarray
    occ_backward: np.ndarray


def _int_pair(t, what):
    u, v = t
    if int(u) != u or int(v) != v:
        raise ValueError(f"{what} must be integral, got {t}")
    return int(u), int(v)


def _octave_noise(frequency, height, width, rng, octaves=4):
    """Sum of smoothed white-noise octaves, the finest at ``frequency``."""
    out = np.zeros((height, width))
    for o in range(octaves):
        sigma = (2.0 ** o) / (2.0 * frequency)
        layer = gaussian_filter(rng.random((height, width)), sigma, mode="wrap")
        out += (layer - layer.mean()) / (layer.std() + 1e-12)
    return out


def _texture(kind, frequency, height, width, channels, rng):
    if kind == "noise":
        tex = np.stack([_octave_noise(frequency, height, width, rng) for _ in range(channels)], axis=-1)
        lo, hi = tex.min(), tex.max()
        tex = (tex - lo) / (hi - lo) if hi > lo else np.zeros_like(tex)
    elif kind == "checker":
        period = max(int(round(1.0 / frequency)), 1)
        ys, xs = np.mgrid[0:height, 0:width]
        tex = (((ys // period) + (xs // period)) % 2).astype(np.float64)
        shades = rng.uniform(0.6, 1.0, channels)
        tex = tex[..., None] * shades
    else:
        raise ValueError(f"unknown texture {kind!r}")
    lo, hi = TEXTURE_RANGE
    tex = lo + (hi - lo) * tex
    return tex[..., 0] if channels == 1 else tex


def _validate(spec):
    width, height = spec.size
    if width < 1 or height < 1:
        raise ValueError(f"invalid scene size {spec.size}")
    if spec.channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    if spec.frequency <= 0:
        raise ValueError("texture frequency must be positive")
    tu, tv = _int_pair(spec.global_translation, "global translation")
    if abs(tu) > width / 4 or abs(tv) > height / 4:
        raise ValueError(f"global translation {spec.global_translation} exceeds a quarter of the image size")
    fg = spec.foreground
    if fg is not None:
        if fg.width > width or fg.height > height:
            raise ValueError("foreground larger than the image")
        if fg.width < 1 or fg.height < 1:
            raise ValueError("foreground must be at least 1x1")
        fu, fv = _int_pair(fg.translation, "foreground translation")
        if abs(fu) > width / 4 or abs(fv) > height / 4:
            raise ValueError(f"foreground translation {fg.translation} exceeds a quarter of the image size")
        if not (0 <= fg.x and 0 <= fg.y and fg.x + fg.width <= width and fg.y + fg.height <= height):
            raise ValueError("foreground must lie inside frame 1")


def _rect_mask(height, width, x, y, w, h):
    m = np.zeros((height, width), dtype=bool)
    m[max(y, 0):max(min(y + h, height), 0), max(x, 0):max(min(x + w, width), 0)] = True
    return m


def _outside(height, width, tu, tv, sign):
    ys, xs = np.mgrid[0:height, 0:width]
    tx = xs + sign * tu
    ty = ys + sign * tv
    return (tx < 0) | (tx > width - 1) | (ty < 0) | (ty > height - 1)


def generate(spec):
    """Render a scene; every output is exact and deterministic per ``spec.seed``."""
    _validate(spec)
    width, height = spec.size
    rng = np.random.default_rng(spec.seed)
    tu, tv = _int_pair(spec.global_translation, "global translation")
    margin = max(abs(tu), abs(tv))
    canvas = _texture(spec.background_texture, spec.frequency,
                      height + 2 * margin, width + 2 * margin, spec.channels, rng)
    i1 = canvas[margin:margin + height, margin:margin + width].copy()
    i2 = canvas[margin - tv:margin - tv + height, margin - tu:margin - tu + width].copy()

    gtf_u = np.full((height, width), float(tu))
    gtf_v = np.full((height, width), float(tv))
    gtb_u = np.full((height, width), float(-tu))
    gtb_v = np.full((height, width), float(-tv))
    occ_f = _outside(height, width, tu, tv, +1)
    occ_b = _outside(height, width, tu, tv, -1)

    fg = spec.foreground
    if fg is not None:
        fu, fv = _int_pair(fg.translation, "foreground translation")
        tex = _texture("noise", spec.frequency, fg.height, fg.width, spec.channels, rng)
        m1 = _rect_mask(height, width, fg.x, fg.y, fg.width, fg.height)
        m2 = _rect_mask(height, width, fg.x + fu, fg.y + fv, fg.width, fg.height)
        i1[m1] = tex.reshape((-1,) + tex.shape[2:])
        # clip the moved rectangle to the frame
        ys, xs = np.nonzero(m2)
        i2[m2] = tex[ys - fg.y - fv, xs - fg.x - fu]

        gtf_u[m1], gtf_v[m1] = fu, fv
        gtb_u[m2], gtb_v[m2] = -fu, -fv
        # background pixels of frame 1 hidden by the moved rectangle in frame 2
        hidden_f = _rect_mask(height, width, fg.x + fu - tu, fg.y + fv - tv, fg.width, fg.height)
        occ_f = np.where(m1, _outside(height, width, fu, fv, +1), occ_f | hidden_f)
        # background pixels of frame 2 that were under the rectangle in frame 1
        hidden_b = _rect_mask(height, width, fg.x + tu, fg.y + tv, fg.width, fg.height)
        occ_b = np.where(m2, _outside(height, width, fu, fv, -1), occ_b | hidden_b)

    return Scene(i1, i2, FlowField(gtf_u, gtf_v), FlowField(gtb_u, gtb_v),
                 occ_f.astype(np.float64), occ_b.astype(np.float64))


def export_scene(scene, out_dir):
    """Write frames, ground-truth flows and occlusion masks for inspection."""
    from bidiflow import flowio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "frame1": out / "frame1.png",
        "frame2": out / "frame2.png",
        "flow_forward": out / "flow_forward.flo",
        "flow_backward": out / "flow_backward.flo",
        "occ_forward": out / "occ_forward.png",
        "occ_backward": out / "occ_backward.png",
    }
    flowio.write_image(paths["frame1"], scene.i1)
    flowio.write_image(paths["frame2"], scene.i2)
    flowio.write_flo(paths["flow_forward"], scene.gt_forward)
    flowio.write_flo(paths["flow_backward"], scene.gt_backward)
    flowio.write_image(paths["occ_forward"], scene.occ_forward)
    flowio.write_image(paths["occ_backward"], scene.occ_backward)
    return paths


def adjust_gamma(img, gamma):
    """Power-law intensity change, clipped to [0, 1]."""
    return np.clip(as_image(img) ** gamma, 0.0, 1.0)


def perturb(img, kind, param=None, seed=0):
    """Apply one photometric augmentation.

    ``param=None`` draws the parameter from the augmentation's range with
    ``seed``; an explicit value must lie inside that range.
    """
    img = as_image(img)
    rng = np.random.default_rng(seed)
    if kind == "gaussian_noise":
        sigma = rng.uniform(0.0, 0.04) if param is None else float(param)
        if not 0.0 <= sigma <= 0.04:
            raise ValueError(f"noise sigma {sigma} outside [0, 0.04]")
        out = img + rng.normal(0.0, 1.0, img.shape) * sigma
    elif kind == "brightness_shift":
        shift = rng.normal(0.0, 0.02) if param is None else float(param)
        if not -1.0 <= shift <= 1.0:
            raise ValueError(f"brightness shift {shift} outside [-1, 1]")
        out = img + shift
    elif kind == "color_multiplier":
        n_ch = 1 if img.ndim == 2 else img.shape[2]
        mult = rng.uniform(0.9, 1.1, n_ch) if param is None else np.broadcast_to(np.asarray(param, float), (n_ch,))
        if np.any(mult < 0.9) or np.any(mult > 1.1):
            raise ValueError(f"color multiplier {mult} outside [0.9, 1.1]")
        out = img * (mult[0] if img.ndim == 2 else mult)
    elif kind == "contrast":
        c = rng.uniform(-0.3, 0.3) if param is None else float(param)
        if not -0.3 <= c <= 0.3:
            raise ValueError(f"contrast change {c} outside [-0.3, 0.3]")
        mean = img.mean()
        out = (img - mean) * (1.0 + c) + mean
    elif kind == "gamma":
        g = rng.uniform(0.7, 1.5) if param is None else float(param)
        if not 0.7 <= g <= 1.5:
            raise ValueError(f"gamma {g} outside [0.7, 1.5]")
        out = img ** g
    else:
        raise ValueError(f"unknown perturbation {kind!r}; expected one of {PERTURBATIONS}")
    return np.clip(out, 0.0, 1.0)
