import numpy as np
import pytest

from bidiflow.energy import detect_occlusion
from bidiflow.grid import backward_warp
from bidiflow.synth import Foreground, PERTURBATIONS, SceneSpec, adjust_gamma, export_scene, generate, perturb


def f1(est, gt):
    est, gt = est > 0, gt > 0
    return 2 * (est & gt).sum() / (est.sum() + gt.sum())


FG_SCENE = SceneSpec(foreground=Foreground(54, 54, 20, 20, (5, 0)))


def test_static_scene():
    s = generate(SceneSpec(size=(40, 30)))
    assert np.array_equal(s.i1, s.i2)
    assert not s.gt_forward.stack().any() and not s.gt_backward.stack().any()
    assert not s.occ_forward.any() and not s.occ_backward.any()
    assert s.i1.shape == (30, 40)


def test_global_translation():
    s = generate(SceneSpec(size=(40, 30), global_translation=(3, 0)))
    assert np.all(s.gt_forward.u == 3) and np.all(s.gt_forward.v == 0)
    assert np.all(s.gt_backward.u == -3)
    assert np.array_equal(np.nonzero(s.occ_forward.any(axis=0))[0], [37, 38, 39])
    assert np.all(s.occ_forward[:, 37:] == 1)
    assert np.array_equal(np.nonzero(s.occ_backward.any(axis=0))[0], [0, 1, 2])
    # frame 2 is frame 1 moved right by 3
    assert np.array_equal(s.i2[:, 3:], s.i1[:, :-3])


def test_foreground_occluded_band():
    s = generate(FG_SCENE)
    band = np.zeros((128, 128))
    band[54:74, 74:79] = 1
    assert np.array_equal(s.occ_forward, band)
    back = np.zeros((128, 128))
    back[54:74, 54:59] = 1
    assert np.array_equal(s.occ_backward, back)
    assert np.all(s.gt_forward.u[54:74, 54:74] == 5)
    assert np.all(s.gt_backward.u[54:74, 59:79] == -5)
    assert np.array_equal(s.i2[54:74, 59:79], s.i1[54:74, 54:74])


def test_ground_truth_is_consistent_with_frames():
    s = generate(SceneSpec(foreground=Foreground(30, 40, 20, 20, (4, -3)), global_translation=(2, 1), seed=3))
    warped, _ = backward_warp(s.i2, s.gt_forward)
    vis = s.occ_forward == 0
    assert np.array_equal(warped[vis], s.i1[vis])


@pytest.mark.parametrize("spec", [
    FG_SCENE,
    SceneSpec(foreground=Foreground(30, 40, 20, 20, (4, -3)), global_translation=(2, 1), seed=3),
    SceneSpec(foreground=Foreground(10, 10, 30, 16, (-6, 2)), seed=9),
])
def test_check_on_ground_truth_reproduces_masks(spec):
    s = generate(spec)
    m = detect_occlusion(s.gt_forward, s.gt_backward)
    assert f1(m.forward_excluded, s.occ_forward) >= 0.95
    assert f1(m.backward_excluded, s.occ_backward) >= 0.95


def test_deterministic_and_seeded():
    a, b = generate(FG_SCENE), generate(FG_SCENE)
    assert all(np.array_equal(x, y) for x, y in zip(a[:2] + a[4:], b[:2] + b[4:]))
    c = generate(SceneSpec(foreground=FG_SCENE.foreground, seed=1))
    assert not np.array_equal(a.i1, c.i1)


def test_texture_variants():
    s = generate(SceneSpec(size=(32, 32), background_texture="checker", frequency=0.25, channels=3))
    assert s.i1.shape == (32, 32, 3)
    assert 0.1 <= s.i1.min() and s.i1.max() <= 0.8
    n = generate(SceneSpec(size=(32, 32)))
    assert n.i1.min() == pytest.approx(0.1) and n.i1.max() == pytest.approx(0.8)


@pytest.mark.parametrize("bad", [
    SceneSpec(size=(20, 20), foreground=Foreground(0, 0, 30, 10)),
    SceneSpec(size=(20, 20), foreground=Foreground(15, 0, 10, 10)),
    SceneSpec(size=(20, 20), global_translation=(1.5, 0)),
    SceneSpec(size=(20, 20), global_translation=(6, 0)),
    SceneSpec(size=(20, 20), channels=2),
    SceneSpec(size=(20, 20), frequency=0),
    SceneSpec(size=(20, 20), background_texture="plasma"),
])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        generate(bad)


def test_export(tmp_path):
    paths = export_scene(generate(SceneSpec(size=(16, 12))), tmp_path)
    assert all(p.exists() for p in paths.values())


def test_perturb_identities():
    img = np.random.default_rng(0).uniform(0.1, 0.9, (8, 8))
    assert np.allclose(perturb(img, "gaussian_noise", 0.0), img)
    assert np.allclose(perturb(img, "brightness_shift", 0.0), img)
    assert np.allclose(perturb(img, "color_multiplier", 1.0), img)
    assert np.allclose(perturb(img, "contrast", 0.0), img)
    assert np.allclose(perturb(img, "gamma", 1.0), img)


def test_perturb_examples():
    gray = np.full((4, 4), 0.4)
    assert np.allclose(perturb(gray, "brightness_shift", 0.2), 0.6)
    assert adjust_gamma(np.full((2, 2), 0.5), 2.0) == pytest.approx(0.25)
    assert np.allclose(perturb(np.full((2, 2), 0.5), "gamma", 1.5), 0.5 ** 1.5)


def test_perturb_ranges():
    img = np.full((4, 4), 0.5)
    for kind, bad in (("gaussian_noise", 0.1), ("color_multiplier", 1.2), ("contrast", 0.5),
                      ("gamma", 2.0), ("brightness_shift", 1.5)):
        with pytest.raises(ValueError):
            perturb(img, kind, bad)
    with pytest.raises(ValueError):
        perturb(img, "blur")


@pytest.mark.parametrize("kind", PERTURBATIONS)
def test_random_perturbations_are_seeded_and_bounded(kind):
    img = np.random.default_rng(0).random((8, 8, 3))
    a = perturb(img, kind, seed=4)
    assert np.array_equal(a, perturb(img, kind, seed=4))
    assert a.min() >= 0 and a.max() <= 1
