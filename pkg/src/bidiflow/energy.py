"""Occlusion-aware bidirectional flow energy with analytic gradients.

The energy of a forward/backward flow pair is

    E = E_data + lambda_s * E_smooth + lambda_c * E_consistency

where every sum runs over both flow directions and is divided by the pixel
count. Occlusion flags and warp-validity grids are recomputed from the flows
but treated as constants when differentiating.
"""

from dataclasses import dataclass, fields, replace

import numpy as np

from bidiflow import _backend
from bidiflow.census import SATURATION, SOFTNESS, check_radius
from bidiflow.grid import FlowField, as_image, channels_first, luminance

TABLE_LEVEL_WEIGHTS = (1.1, 3.4, 3.9, 4.35, 12.7)
TABLE_LEVEL_RADII = (1, 1, 2, 2, 3)

DATA_TERMS = ("census", "brightness")
SMOOTHNESS_ORDERS = ("first", "second")

# (dy, dx) axis of each second-order stencil: horizontal, vertical, both diagonals
SECOND_ORDER_AXES = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass(frozen=True)
class LossConfig:
    alpha1: float = 0.01
    alpha2: float = 0.5
    gamma: float = 0.45
    charbonnier_eps: float = 0.001
    lambda_p: float = 12.4
    lambda_s: float = 3.0
    lambda_c: float = 0.2
    data_term: str = "census"
    smoothness_order: str = "second"
    occlusion_masking: bool = True
    patch_radius: int = 3
    level_weights: tuple = TABLE_LEVEL_WEIGHTS
    level_patch_radii: tuple = TABLE_LEVEL_RADII
    census_softness: float = SOFTNESS
    census_saturation: float = SATURATION
    census_scale: float = 255.0

    def __post_init__(self):
        object.__setattr__(self, "level_weights", tuple(float(w) for w in self.level_weights))
        object.__setattr__(self, "level_patch_radii", tuple(int(r) for r in self.level_patch_radii))
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.charbonnier_eps <= 0:
            raise ValueError("charbonnier_eps must be positive")
        if min(self.lambda_p, self.lambda_s, self.lambda_c) < 0 or any(w < 0 for w in self.level_weights):
            raise ValueError("loss weights must be non-negative")
        if self.data_term not in DATA_TERMS:
            raise ValueError(f"data_term must be one of {DATA_TERMS}, got {self.data_term!r}")
        if self.smoothness_order not in SMOOTHNESS_ORDERS:
            raise ValueError(f"smoothness_order must be one of {SMOOTHNESS_ORDERS}, got {self.smoothness_order!r}")
        check_radius(self.patch_radius)
        for r in self.level_patch_radii:
            check_radius(r)
        if len(self.level_weights) != len(self.level_patch_radii):
            raise ValueError("level_weights and level_patch_radii must have the same length")

    @classmethod
    def baseline(cls):
        """Brightness constancy, first-order smoothness, no occlusion handling."""
        return cls(data_term="brightness", smoothness_order="first", occlusion_masking=False,
                   lambda_p=0.0, lambda_c=0.0)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class OcclusionMask:
    """Occlusion flags (1 = occluded) plus the warp-validity grids they came with."""

    forward: np.ndarray
    backward: np.ndarray
    forward_valid: np.ndarray = None
    backward_valid: np.ndarray = None

    def __post_init__(self):
        if self.forward_valid is None:
            object.__setattr__(self, "forward_valid", np.ones_like(self.forward))
        if self.backward_valid is None:
            object.__setattr__(self, "backward_valid", np.ones_like(self.backward))

    @property
    def forward_excluded(self):
        """Pixels left out of the forward photometric/consistency sums."""
        return np.maximum(self.forward, 1.0 - self.forward_valid)

    @property
    def backward_excluded(self):
        return np.maximum(self.backward, 1.0 - self.backward_valid)

    def swapped(self):
        return OcclusionMask(self.backward, self.forward, self.backward_valid, self.forward_valid)


@dataclass(frozen=True)
class LossBreakdown:
    data: float
    smooth: float
    consistency: float
    occlusion_penalty: float
    total: float


@dataclass(frozen=True, eq=False)
class Evaluation:
    breakdown: LossBreakdown
    grad_forward: FlowField
    grad_backward: FlowField
    masks: OcclusionMask


def rho(x, gamma, eps):
    """Elementwise generalized Charbonnier ``(x**2 + eps**2)**gamma``."""
    return (x * x + eps * eps) ** gamma


def rho_prime(x, gamma, eps):
    if eps > 0:
        return 2.0 * gamma * x * (x * x + eps * eps) ** (gamma - 1.0)
    # eps = 0: take the zero subgradient at the kink
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 0.0, 2.0 * gamma * safe * (safe * safe) ** (gamma - 1.0))


def charbonnier(x, gamma=0.45, eps=0.001):
    """Robust penalty of a scalar, or the mean componentwise penalty of a vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return float(rho(x, gamma, eps))
    return float(np.mean(rho(x, gamma, eps)))


# -- per-direction terms ------------------------------------------------------


@dataclass
class _Direction:
    data: float
    consistency: float
    excluded: float
    flags: np.ndarray
    valid: np.ndarray
    g_data: np.ndarray = None
    g_cons_own: np.ndarray = None
    g_cons_other: np.ndarray = None


def _occlusion_flags(wa, wb_at_target, cfg):
    if not cfg.occlusion_masking:
        return np.zeros(wa.shape[1:])
    s = wa + wb_at_target
    mismatch = s[0] * s[0] + s[1] * s[1]
    scale = wa[0] * wa[0] + wa[1] * wa[1] + wb_at_target[0] * wb_at_target[0] + wb_at_target[1] * wb_at_target[1]
    return (mismatch >= cfg.alpha1 * scale + cfg.alpha2).astype(np.float64)


def _direction(src_a, src_b, ref_a, wa, wb, cfg, radius, flags=None, valid=None, need_grad=True):
    """Data and consistency terms of one direction (a -> b) and their gradients.

    ``src_a``/``src_b`` are channel-first stacks (luminance for census), ``ref_a``
    the census features of ``src_a``. ``wa`` is the flow being penalised and
    ``wb`` the opposite-direction flow; both are (2, H, W).
    """
    k = _backend.kernels
    n_ch = src_b.shape[0]
    stack = np.ascontiguousarray(np.concatenate([src_b, wb]))
    out, gx, gy, valid_now = k.warp(stack, wa[0], wa[1])
    warped, wb_t = out[:n_ch], out[n_ch:]
    if valid is None:
        valid = valid_now
    if flags is None:
        flags = _occlusion_flags(wa, wb_t, cfg)
    keep = (1.0 - flags) * valid

    gam, eps = cfg.gamma, cfg.charbonnier_eps
    if cfg.data_term == "census":
        data, _, g_warp = k.census_cost(np.ascontiguousarray(warped[0]), ref_a, keep, radius,
                                        cfg.census_softness, cfg.census_saturation, gam, eps)
        g_warp = g_warp[None]
    else:
        resid = (src_a - warped).mean(axis=0)
        data = float(np.sum(keep * rho(resid, gam, eps)))
        g_warp = np.broadcast_to(-(keep * rho_prime(resid, gam, eps)) / n_ch, warped.shape)

    res = wa + wb_t
    consistency = float(np.sum(keep * 0.5 * (rho(res[0], gam, eps) + rho(res[1], gam, eps))))
    result = _Direction(data, consistency, float(np.sum(1.0 - keep)), flags, valid)
    if not need_grad:
        return result

    g_data = np.stack([(g_warp * gx[:n_ch]).sum(axis=0), (g_warp * gy[:n_ch]).sum(axis=0)])
    g_res = keep * 0.5 * rho_prime(res, gam, eps)
    ju_x, jv_x = gx[n_ch], gx[n_ch + 1]
    ju_y, jv_y = gy[n_ch], gy[n_ch + 1]
    result.g_data = g_data
    result.g_cons_own = np.stack([
        g_res[0] * (1.0 + ju_x) + g_res[1] * jv_x,
        g_res[0] * ju_y + g_res[1] * (1.0 + jv_y),
    ])
    result.g_cons_other = k.splat(np.ascontiguousarray(g_res), wa[0], wa[1])
    return result


# -- smoothness -----------------------------------------------------------------


def _smooth_second(w, gamma, eps):
    _, h, wd = w.shape
    total = 0.0
    grad = np.zeros_like(w)
    for dy, dx in SECOND_ORDER_AXES:
        ay, ax = abs(dy), abs(dx)
        if h - 2 * ay <= 0 or wd - 2 * ax <= 0:
            continue
        cy = slice(ay, h - ay)
        cx = slice(ax, wd - ax)
        sy = slice(ay - dy, h - ay - dy)
        sx = slice(ax - dx, wd - ax - dx)
        ry = slice(ay + dy, h - ay + dy)
        rx = slice(ax + dx, wd - ax + dx)
        sd = w[:, sy, sx] - 2.0 * w[:, cy, cx] + w[:, ry, rx]
        total += float(np.sum(0.5 * rho(sd, gamma, eps)))
        g = 0.5 * rho_prime(sd, gamma, eps)
        grad[:, sy, sx] += g
        grad[:, cy, cx] -= 2.0 * g
        grad[:, ry, rx] += g
    return total, grad


def _smooth_first(w, gamma, eps):
    total = 0.0
    grad = np.zeros_like(w)
    for axis in (2, 1):
        diff = np.diff(w, axis=axis)
        total += float(np.sum(0.5 * rho(diff, gamma, eps)))
        g = 0.5 * rho_prime(diff, gamma, eps)
        if axis == 2:
            grad[:, :, 1:] += g
            grad[:, :, :-1] -= g
        else:
            grad[:, 1:, :] += g
            grad[:, :-1, :] -= g
    return total, grad


def _smooth(w, cfg):
    if cfg.smoothness_order == "second":
        return _smooth_second(w, cfg.gamma, cfg.charbonnier_eps)
    return _smooth_first(w, cfg.gamma, cfg.charbonnier_eps)


def _check_smooth_size(shape, cfg):
    h, w = shape
    if cfg.smoothness_order == "second" and h < 3 and w < 3:
        raise ValueError(f"grid {w}x{h} too small for a second-order stencil")
    if cfg.smoothness_order == "first" and h < 2 and w < 2:
        raise ValueError(f"grid {w}x{h} too small for first-order differences")


# -- full evaluation -------------------------------------------------------------


class LevelInputs:
    """Images of one resolution prepared for repeated energy evaluation."""

    def __init__(self, i1, i2, cfg, radius=None):
        i1 = as_image(i1)
        i2 = as_image(i2)
        if i1.shape != i2.shape:
            raise ValueError(f"image shapes differ: {i1.shape} vs {i2.shape}")
        self.shape = i1.shape[:2]
        self.radius = cfg.patch_radius if radius is None else radius
        if cfg.data_term == "census":
            check_radius(self.radius)
            self.src1 = np.ascontiguousarray(cfg.census_scale * luminance(i1)[None])
            self.src2 = np.ascontiguousarray(cfg.census_scale * luminance(i2)[None])
            k = _backend.kernels
            self.ref1 = k.census_features(self.src1[0], self.radius, cfg.census_softness)
            self.ref2 = k.census_features(self.src2[0], self.radius, cfg.census_softness)
        else:
            self.src1 = channels_first(i1)
            self.src2 = channels_first(i2)
            self.ref1 = self.ref2 = None


def _as_arr(flow, shape):
    if flow.shape != tuple(shape):
        raise ValueError(f"flow shape {flow.shape} does not match image shape {tuple(shape)}")
    return flow.stack()


def evaluate_arrays(level, wf, wb, cfg, masks=None, need_grad=True):
    """Energy of (wf, wb) given as (2, H, W) arrays; returns ``Evaluation``."""
    _check_smooth_size(level.shape, cfg)
    mf = mb = vf = vb = None
    if masks is not None:
        mf, mb, vf, vb = masks.forward, masks.backward, masks.forward_valid, masks.backward_valid
    fwd = _direction(level.src1, level.src2, level.ref1, wf, wb, cfg, level.radius, mf, vf, need_grad)
    bwd = _direction(level.src2, level.src1, level.ref2, wb, wf, cfg, level.radius, mb, vb, need_grad)
    n = float(level.shape[0] * level.shape[1])
    s_f, gs_f = _smooth(wf, cfg)
    s_b, gs_b = _smooth(wb, cfg)

    data = (fwd.data + bwd.data) / n
    penalty = cfg.lambda_p * (fwd.excluded + bwd.excluded) / n
    smooth = (s_f + s_b) / n
    consistency = (fwd.consistency + bwd.consistency) / n
    total = data + penalty + cfg.lambda_s * smooth + cfg.lambda_c * consistency
    breakdown = LossBreakdown(data, smooth, consistency, penalty, total)
    out_masks = OcclusionMask(fwd.flags, bwd.flags, fwd.valid, bwd.valid)
    if not need_grad:
        return Evaluation(breakdown, None, None, out_masks)
    lc, ls = cfg.lambda_c, cfg.lambda_s
    g_f = (fwd.g_data + lc * (fwd.g_cons_own + bwd.g_cons_other) + ls * gs_f) / n
    g_b = (bwd.g_data + lc * (bwd.g_cons_own + fwd.g_cons_other) + ls * gs_b) / n
    return Evaluation(breakdown, FlowField.from_stack(g_f), FlowField.from_stack(g_b), out_masks)


def total_loss(i1, i2, wf, wb, cfg=None, masks=None, radius=None):
    """Full energy of a flow pair with gradients w.r.t. both flows.

    ``masks`` freezes the occlusion flags and validity grids; by default they
    are detected from the current flows.
    """
    cfg = cfg or LossConfig()
    level = LevelInputs(i1, i2, cfg, radius)
    return evaluate_arrays(level, _as_arr(wf, level.shape), _as_arr(wb, level.shape), cfg, masks)


def detect_occlusion(wf, wb, cfg=None):
    """Forward-backward consistency occlusion flags for both directions."""
    cfg = cfg or LossConfig()
    if wf.shape != wb.shape:
        raise ValueError(f"flow shapes differ: {wf.shape} vs {wb.shape}")
    a, b = wf.stack(), wb.stack()
    k = _backend.kernels
    b_at, _, _, valid_f = k.warp(np.ascontiguousarray(b), a[0], a[1])
    a_at, _, _, valid_b = k.warp(np.ascontiguousarray(a), b[0], b[1])
    return OcclusionMask(_occlusion_flags(a, b_at, cfg), _occlusion_flags(b, a_at, cfg), valid_f, valid_b)


def data_loss(i1, i2, wf, wb, occ=None, cfg=None, radius=None):
    """Occlusion-aware data term incl. the occlusion penalty; returns (value, grad_wf, grad_wb)."""
    cfg = cfg or LossConfig()
    level = LevelInputs(i1, i2, cfg, radius)
    if occ is None:
        occ = detect_occlusion(wf, wb, cfg)
    a, b = _as_arr(wf, level.shape), _as_arr(wb, level.shape)
    fwd = _direction(level.src1, level.src2, level.ref1, a, b, cfg, level.radius, occ.forward, occ.forward_valid)
    bwd = _direction(level.src2, level.src1, level.ref2, b, a, cfg, level.radius, occ.backward, occ.backward_valid)
    n = float(a.shape[1] * a.shape[2])
    value = (fwd.data + bwd.data) / n + cfg.lambda_p * (fwd.excluded + bwd.excluded) / n
    return value, FlowField.from_stack(fwd.g_data / n), FlowField.from_stack(bwd.g_data / n)


def consistency_loss(wf, wb, occ=None, cfg=None):
    """Forward-backward consistency term; returns (value, grad_wf, grad_wb)."""
    cfg = cfg or LossConfig()
    if wf.shape != wb.shape:
        raise ValueError(f"flow shapes differ: {wf.shape} vs {wb.shape}")
    if occ is None:
        occ = detect_occlusion(wf, wb, cfg)
    a, b = wf.stack(), wb.stack()
    cfg_b = cfg.replace(data_term="brightness")
    blank = np.zeros((1,) + wf.shape)
    fwd = _direction(blank, blank, None, a, b, cfg_b, 0, occ.forward, occ.forward_valid)
    bwd = _direction(blank, blank, None, b, a, cfg_b, 0, occ.backward, occ.backward_valid)
    n = float(a.shape[1] * a.shape[2])
    value = (fwd.consistency + bwd.consistency) / n
    g_f = (fwd.g_cons_own + bwd.g_cons_other) / n
    g_b = (bwd.g_cons_own + fwd.g_cons_other) / n
    return value, FlowField.from_stack(g_f), FlowField.from_stack(g_b)


def smoothness_loss(wf, wb, cfg=None):
    """Smoothness of both flows; returns (value, grad_wf, grad_wb)."""
    cfg = cfg or LossConfig()
    _check_smooth_size(wf.shape, cfg)
    s_f, g_f = _smooth(wf.stack(), cfg)
    s_b, g_b = _smooth(wb.stack(), cfg)
    n = float(wf.height * wf.width)
    return (s_f + s_b) / n, FlowField.from_stack(g_f / n), FlowField.from_stack(g_b / n)


def combine_levels(level_losses, weights):
    """Weighted sum of per-level losses, coarsest level first."""
    if len(level_losses) != len(weights):
        raise ValueError(f"{len(level_losses)} level losses for {len(weights)} weights")
    total = 0.0
    for loss, w in zip(level_losses, weights):
        total += w * loss
    return total


def multiscale_loss(levels, cfg=None):
    """Weighted sum of per-level total losses over a pyramid.

    ``levels`` is a coarsest-first sequence of ``(i1, i2, wf, wb)``; level ``i``
    uses ``cfg.level_patch_radii[i]`` and weight ``cfg.level_weights[i]``.
    """
    cfg = cfg or LossConfig()
    if len(levels) != len(cfg.level_weights):
        raise ValueError(f"got {len(levels)} levels, config has {len(cfg.level_weights)} level weights")
    losses = [
        total_loss(i1, i2, wf, wb, cfg, radius=r).breakdown.total
        for (i1, i2, wf, wb), r in zip(levels, cfg.level_patch_radii)
    ]
    return combine_levels(losses, cfg.level_weights)


def supervised_loss(wf, gt, valid, gamma=0.45, eps=0.001):
    """Sparse supervised penalty ``sum valid * rho(wf - gt)`` (not normalised).

    Returns ``(value, grad_wf)``.
    """
    if wf.shape != gt.shape or np.shape(valid) != wf.shape:
        raise ValueError("flow, ground truth and validity grid must share dimensions")
    valid = np.asarray(valid, dtype=np.float64)
    du = wf.u - gt.u
    dv = wf.v - gt.v
    value = float(np.sum(valid * 0.5 * (rho(du, gamma, eps) + rho(dv, gamma, eps))))
    grad = FlowField(valid * 0.5 * rho_prime(du, gamma, eps), valid * 0.5 * rho_prime(dv, gamma, eps))
    return value, grad
