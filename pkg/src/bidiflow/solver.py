"""Coarse-to-fine Adam minimisation of the bidirectional flow energy."""

import csv
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from bidiflow.energy import LevelInputs, LossConfig, evaluate_arrays
from bidiflow.grid import FlowField, as_image, downsample_flow_half, downsample_half, upsample_flow_2x

SCHEDULES = ("step", "cosine")

TRACE_COLUMNS = ("iteration", "level", "data", "smooth", "consistency", "occ_penalty", "total")


class SolverDivergedError(RuntimeError):
    """The energy became non-finite; ``trace`` holds the history up to that point."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    levels: int = 5
    iterations_per_level: int = 300
    lr: float = 0.2
    lr_decay: float = 0.025
    schedule: str = "step"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.init not in ("zero", "provided"):
            raise ValueError(f"init must be 'zero' or 'provided', got {self.init!r}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def learning_rate(cfg, it, iters):
    """Step size at iteration ``it`` of a level with ``iters`` iterations.

    ``step`` multiplies ``lr`` by ``lr_decay`` from the midpoint on; ``cosine``
    anneals from ``lr`` down to ``lr * lr_decay`` over the level.
    """
    if cfg.schedule == "step":
        return cfg.lr if it < iters // 2 else cfg.lr * cfg.lr_decay
    frac = it / max(iters - 1, 1)
    low = cfg.lr * cfg.lr_decay
    return low + 0.5 * (cfg.lr - low) * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Adam over a list of arrays, updated in place."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads, lr):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class LevelTrace:
    level: int
    width: int
    height: int
    patch_radius: int
    weight: float
    history: list = field(default_factory=list)
    final: object = None
    best_iteration: int = -1


@dataclass
class SolveTrace:
    levels: list = field(default_factory=list)
    wall_time: float = 0.0
    final_masks: object = None

    def rows(self):
        for lt in self.levels:
            for it, b in enumerate(lt.history):
                yield (it, lt.level, b.data, b.smooth, b.consistency, b.occlusion_penalty, b.total)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows():
                writer.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])


def level_settings(loss_cfg, n_levels):
    """(patch_radius, weight) for each solver level, coarsest first.

    The configured per-level tables are aligned at the finest level; extra
    coarse levels reuse the coarsest entry.
    """
    radii, weights = loss_cfg.level_patch_radii, loss_cfg.level_weights
    out = []
    for i in range(n_levels):
        t = max(len(radii) - n_levels + i, 0)
        out.append((radii[t], weights[t]))
    return out


def build_pyramid(img, n_levels):
    """Finest-first list of box-filtered images."""
    pyr = [img]
    for _ in range(n_levels - 1):
        pyr.append(downsample_half(pyr[-1]))
    return pyr


def solve(i1, i2, loss_cfg=None, solver_cfg=None, init=None, callback=None):
    """Estimate forward and backward flow between two images.

    ``init`` is an optional full-resolution ``(wf, wb)`` pair, used when
    ``solver_cfg.init == "provided"``. ``callback(level_trace, wf, wb)`` is
    called after each level with the level's (2, H, W) flow arrays.
    Returns ``(wf, wb, trace)``.
    """
    loss_cfg = loss_cfg or LossConfig()
    solver_cfg = solver_cfg or SolverConfig()
    i1 = as_image(i1)
    i2 = as_image(i2)
    if i1.shape != i2.shape:
        raise ValueError(f"image shapes differ: {i1.shape} vs {i2.shape}")
    n_levels = solver_cfg.levels
    h, w = i1.shape[:2]
    min_side = 2 ** (n_levels - 1)
    if h < min_side or w < min_side:
        raise ValueError(f"{w}x{h} image too small for {n_levels} pyramid levels (need >= {min_side} px per side)")
    if solver_cfg.init == "provided" and init is None:
        raise ValueError("solver init is 'provided' but no initial flows were given")

    start = time.perf_counter()
    pyr1 = build_pyramid(i1, n_levels)[::-1]
    pyr2 = build_pyramid(i2, n_levels)[::-1]
    settings = level_settings(loss_cfg, n_levels)
    trace = SolveTrace()

    if solver_cfg.init == "provided":
        wf0, wb0 = init
        for _ in range(n_levels - 1):
            wf0, wb0 = downsample_flow_half(wf0), downsample_flow_half(wb0)
        if wf0.shape != pyr1[0].shape[:2] or wb0.shape != pyr1[0].shape[:2]:
            raise ValueError("initial flows do not match the image size")
        wf, wb = wf0.stack(), wb0.stack()
    else:
        wf = np.zeros((2,) + pyr1[0].shape[:2])
        wb = np.zeros_like(wf)

    iters = solver_cfg.iterations_per_level
    for li, (img1, img2) in enumerate(zip(pyr1, pyr2)):
        lh, lw = img1.shape[:2]
        if li > 0:
            wf = upsample_flow_2x(FlowField.from_stack(wf), lw, lh).stack()
            wb = upsample_flow_2x(FlowField.from_stack(wb), lw, lh).stack()
        radius, weight = settings[li]
        level = LevelInputs(img1, img2, loss_cfg, radius)
        lt = LevelTrace(li, lw, lh, radius, weight)
        trace.levels.append(lt)
        adam = Adam(solver_cfg.beta1, solver_cfg.beta2, solver_cfg.adam_eps)
        best = None
        for it in range(iters):
            ev = evaluate_arrays(level, wf, wb, loss_cfg)
            lt.history.append(ev.breakdown)
            if not np.isfinite(ev.breakdown.total):
                trace.wall_time = time.perf_counter() - start
                raise SolverDivergedError(f"non-finite energy at level {li}, iteration {it}", trace)
            if best is None or ev.breakdown.total < best[0].breakdown.total:
                best = (ev, wf.copy(), wb.copy(), it)
            lr = learning_rate(solver_cfg, it, iters)
            adam.step([wf, wb], [weight * ev.grad_forward.stack(), weight * ev.grad_backward.stack()], lr)
        final = evaluate_arrays(level, wf, wb, loss_cfg, need_grad=False)
        if not (np.isfinite(final.breakdown.total) and np.all(np.isfinite(wf)) and np.all(np.isfinite(wb))):
            trace.wall_time = time.perf_counter() - start
            raise SolverDivergedError(f"non-finite flow or energy after level {li}", trace)
        # hand the lowest-energy iterate to the next level; flag flips make the raw curve jumpy
        if final.breakdown.total <= best[0].breakdown.total:
            best = (final, wf, wb, iters)
        final, wf, wb, lt.best_iteration = best
        lt.final = final.breakdown
        trace.final_masks = final.masks
        if callback is not None:
            callback(lt, wf, wb)

    trace.wall_time = time.perf_counter() - start
    return FlowField.from_stack(wf), FlowField.from_stack(wb), trace


@dataclass
class GradcheckReport:
    max_rel_error: float
    mean_rel_error: float
    n_probes: int
    probes: list = field(default_factory=list)

    def passed(self, tol=1e-3):
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(i1, i2, wf, wb, loss_cfg=None, n_probes=32, seed=0, step=1e-5):
    """Compare analytic flow gradients against central differences.

    Occlusion flags and validity grids are frozen at the unperturbed flows.
    Each probe records ``(direction, component, row, col, analytic, numeric, rel_error)``.
    """
    loss_cfg = loss_cfg or LossConfig()
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    level = LevelInputs(i1, i2, loss_cfg)
    a = wf.stack()
    b = wb.stack()
    base = evaluate_arrays(level, a, b, loss_cfg)
    grads = (base.grad_forward.stack(), base.grad_backward.stack())
    rng = np.random.default_rng(seed)
    h, w = level.shape
    probes = []
    for _ in range(n_probes):
        which = int(rng.integers(2))
        comp = int(rng.integers(2))
        y = int(rng.integers(h))
        x = int(rng.integers(w))
        params = [a.copy(), b.copy()]
        params[which][comp, y, x] += step
        plus = evaluate_arrays(level, params[0], params[1], loss_cfg, base.masks, need_grad=False).breakdown.total
        params[which][comp, y, x] -= 2 * step
        minus = evaluate_arrays(level, params[0], params[1], loss_cfg, base.masks, need_grad=False).breakdown.total
        numeric = (plus - minus) / (2 * step)
        analytic = float(grads[which][comp, y, x])
        probes.append(("forward" if which == 0 else "backward", "uv"[comp], y, x,
                       analytic, numeric, relative_error(analytic, numeric)))
    errs = [p[-1] for p in probes]
    return GradcheckReport(max(errs), float(np.mean(errs)), n_probes, probes)
