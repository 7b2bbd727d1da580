import csv

import numpy as np
import pytest

from bidiflow import solver as solver_mod
from bidiflow.energy import LossConfig
from bidiflow.grid import FlowField
from bidiflow.metrics import endpoint_error
from bidiflow.solver import (
    SolverConfig,
    SolverDivergedError,
    TRACE_COLUMNS,
    gradcheck,
    learning_rate,
    level_settings,
    solve,
)
from bidiflow.synth import SceneSpec, generate

QUICK = SolverConfig(levels=3, iterations_per_level=40)


def aee(flow, gt):
    return float(endpoint_error(flow, gt).mean())


@pytest.fixture(scope="module")
def shift_solve():
    scene = generate(SceneSpec(global_translation=(3, 0)))
    wf, wb, trace = solve(scene.i1, scene.i2)
    return scene, wf, wb, trace


@pytest.mark.slow
def test_global_shift_recovered(shift_solve):
    scene, wf, wb, _ = shift_solve
    assert aee(wf, scene.gt_forward) < 0.3
    assert aee(wb, scene.gt_backward) < 0.3


@pytest.mark.slow
def test_trace_shape(shift_solve):
    _, _, _, trace = shift_solve
    assert len(trace.levels) == 5
    assert [lt.width for lt in trace.levels] == [8, 16, 32, 64, 128]
    assert all(len(lt.history) == 300 for lt in trace.levels)
    assert [lt.patch_radius for lt in trace.levels] == [1, 1, 2, 2, 3]


@pytest.mark.slow
def test_tail_non_increasing(shift_solve):
    _, _, _, trace = shift_solve
    for lt in trace.levels:
        tail = [b.total for b in lt.history[-50:]] + [lt.final.total]
        for a, b in zip(tail, tail[1:]):
            assert b <= a * 1.01


@pytest.mark.slow
def test_level_energy_descends(shift_solve):
    _, _, _, trace = shift_solve
    for lt in trace.levels:
        assert lt.final.total <= lt.history[0].total


def test_identical_frames_stay_at_zero():
    img = generate(SceneSpec(size=(64, 64))).i1
    wf, wb, _ = solve(img, img, solver_cfg=SolverConfig(levels=4, iterations_per_level=100))
    zero = FlowField.zeros(64, 64)
    assert aee(wf, zero) < 0.05 and aee(wb, zero) < 0.05


def test_seeded_solves_bit_identical():
    scene = generate(SceneSpec(size=(32, 32), global_translation=(1, 0), seed=5))
    a = solve(scene.i1, scene.i2, solver_cfg=QUICK)
    b = solve(scene.i1, scene.i2, solver_cfg=QUICK)
    assert np.array_equal(a[0].stack(), b[0].stack()) and np.array_equal(a[1].stack(), b[1].stack())


def test_swapped_inputs_swap_flows():
    scene = generate(SceneSpec(size=(32, 32), foreground=None, global_translation=(2, 1), seed=7))
    wf, wb, _ = solve(scene.i1, scene.i2, solver_cfg=QUICK)
    wf2, wb2, _ = solve(scene.i2, scene.i1, solver_cfg=QUICK)
    assert np.array_equal(wf.stack(), wb2.stack()) and np.array_equal(wb.stack(), wf2.stack())


def test_provided_init_is_used():
    scene = generate(SceneSpec(size=(32, 32), global_translation=(2, 0), seed=2))
    cfg = SolverConfig(levels=2, iterations_per_level=1, init="provided")
    wf, _, _ = solve(scene.i1, scene.i2, solver_cfg=cfg, init=(scene.gt_forward, scene.gt_backward))
    assert aee(wf, scene.gt_forward) < 0.5
    with pytest.raises(ValueError):
        solve(scene.i1, scene.i2, solver_cfg=cfg)
    with pytest.raises(ValueError):
        solve(scene.i1, scene.i2, solver_cfg=cfg, init=(FlowField.zeros(8, 8), FlowField.zeros(8, 8)))


def test_callback_runs_per_level():
    img = np.random.default_rng(0).random((16, 16))
    seen = []
    solve(img, img, solver_cfg=SolverConfig(levels=3, iterations_per_level=3),
          callback=lambda lt, wf, wb: seen.append((lt.level, wf.shape)))
    assert seen == [(0, (2, 4, 4)), (1, (2, 8, 8)), (2, (2, 16, 16))]


def test_trace_csv(tmp_path):
    img = np.random.default_rng(0).random((16, 16))
    _, _, trace = solve(img, img, solver_cfg=SolverConfig(levels=2, iterations_per_level=4))
    trace.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 1 + 2 * 4


def test_too_small_image():
    img = np.zeros((15, 40))
    with pytest.raises(ValueError, match="too small"):
        solve(img, img)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve(np.zeros((32, 32)), np.zeros((32, 33)))


def test_divergence_aborts_with_trace(monkeypatch):
    real = solver_mod.evaluate_arrays
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        ev = real(*args, **kwargs)
        calls["n"] += 1
        if calls["n"] > 5:
            object.__setattr__(ev.breakdown, "total", float("nan"))
        return ev

    monkeypatch.setattr(solver_mod, "evaluate_arrays", poisoned)
    img = np.random.default_rng(0).random((16, 16))
    with pytest.raises(SolverDivergedError) as info:
        solve(img, img, solver_cfg=SolverConfig(levels=2, iterations_per_level=10))
    assert len(info.value.trace.levels[0].history) == 6


def test_config_validation():
    for bad in (dict(levels=0), dict(iterations_per_level=0), dict(lr=0), dict(beta1=1.0),
                dict(schedule="linear"), dict(init="random")):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_schedules():
    step = SolverConfig(lr=0.2, lr_decay=0.025)
    assert learning_rate(step, 0, 300) == 0.2
    assert learning_rate(step, 149, 300) == 0.2
    assert learning_rate(step, 150, 300) == pytest.approx(0.005)
    cos = SolverConfig(lr=0.2, lr_decay=0.025, schedule="cosine")
    assert learning_rate(cos, 0, 300) == pytest.approx(0.2)
    assert learning_rate(cos, 299, 300) == pytest.approx(0.005)
    lrs = [learning_rate(cos, i, 300) for i in range(300)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_level_settings_align_at_finest():
    cfg = LossConfig()
    assert level_settings(cfg, 5) == list(zip(cfg.level_patch_radii, cfg.level_weights))
    assert level_settings(cfg, 2) == [(2, 4.35), (3, 12.7)]
    assert level_settings(cfg, 6)[0] == (1, 1.1)


# -- gradcheck -------------------------------------------------------------------------


def test_gradcheck_random_instance(rng):
    i1, i2 = rng.random((16, 16)), rng.random((16, 16))
    wf = FlowField(*rng.uniform(-2, 2, (2, 16, 16)))
    wb = FlowField(*rng.uniform(-2, 2, (2, 16, 16)))
    rep = gradcheck(i1, i2, wf, wb, n_probes=32, seed=0)
    assert rep.n_probes == len(rep.probes) == 32
    assert rep.passed() and rep.max_rel_error < 1e-3
    assert rep.mean_rel_error <= rep.max_rel_error


def test_gradcheck_rejects_zero_probes(rng):
    z = FlowField.zeros(8, 8)
    with pytest.raises(ValueError):
        gradcheck(rng.random((8, 8)), rng.random((8, 8)), z, z, n_probes=0)
