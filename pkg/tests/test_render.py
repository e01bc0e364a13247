from __future__ import annotations

import numpy as np
import pytest

from conftest import sphere_scene
from mcinverse import fixtures
from mcinverse.envlight import EnvProbe
from mcinverse.imageio import MeshData
from mcinverse.render import (Scene, composite, irradiance_oracle, primary_visibility,
                              render_forward, shadow_term)


def furnace_scene():
    mats = fixtures.materials((1.0, 1.0, 1.0), size=2)
    mats.specular = False
    return Scene(fixtures.uv_sphere(16, 8), mats, EnvProbe.constant(1.0, 8, 16))


@pytest.mark.parametrize("strategy", ["cosine", "bsdf", "light", "mis"])
def test_white_furnace(strategy, small_camera):
    aov = render_forward(furnace_scene(), small_camera, 64, 1.0, 0, strategy)
    m = aov.mask
    assert m.any()
    # convex object under a constant probe: c_d == 1 everywhere
    assert np.abs(aov.c_d[m].mean() - 1.0) < 0.01
    assert np.abs(aov.final()[m] - 1.0).max() < 0.15


def test_cosine_furnace_on_flat_plane_is_exact():
    # each cosine sample contributes exactly 1 when nothing can occlude
    mats = fixtures.materials((1.0, 1.0, 1.0), size=2)
    mats.specular = False
    scene = Scene(fixtures.merge([fixtures.ground(2.0)]), mats, EnvProbe.constant(1.0, 8, 16))
    aov = render_forward(scene, fixtures.top_camera(8), 4, 1.0, 0, "cosine")
    assert aov.mask.any()
    assert np.allclose(aov.c_d[aov.mask], 1.0, atol=1e-12)


def test_empty_scene_shows_probe():
    probe = fixtures.sky_probe(8, 16)
    scene = Scene(MeshData(np.zeros((0, 3)), np.zeros((0, 3), int), np.zeros((0, 2))),
                  fixtures.materials((0.5, 0.5, 0.5)), probe)
    cam = fixtures.orbit(1, 3.0, 0.0, 8)[0]
    aov = render_forward(scene, cam, 4)
    assert not aov.mask.any()
    assert np.all(aov.c_d == 0)
    assert np.allclose(aov.final(), aov.background)
    assert aov.background.max() > 0


def test_deterministic_and_seed_sensitive(small_scene, small_camera):
    a = render_forward(small_scene, small_camera, 8, 1.0, 3).final()
    b = render_forward(small_scene, small_camera, 8, 1.0, 3).final()
    c = render_forward(small_scene, small_camera, 8, 1.0, 4).final()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_aov_shapes(small_scene, small_camera):
    aov = render_forward(small_scene, small_camera, 4)
    H, W = small_camera.height, small_camera.width
    assert aov.c_d.shape == aov.c_s.shape == aov.albedo.shape == (H, W, 3)
    assert aov.depth.shape == aov.mask.shape == (H, W)
    assert np.allclose(np.linalg.norm(aov.normal[aov.mask], axis=-1), 1.0)
    assert np.all(aov.depth[~aov.mask] == 0)


def test_composite_formula(small_scene, small_camera):
    aov = render_forward(small_scene, small_camera, 4)
    m = aov.mask[..., None]
    expect = m * (aov.albedo * aov.c_d + aov.c_s) + (~m) * aov.background
    assert np.allclose(composite(aov), expect)


def test_strategies_agree_in_expectation(small_camera):
    scene = sphere_scene(roughness=0.3, metalness=0.5)
    mask = render_forward(scene, small_camera, 1).mask
    means = {}
    for strat in ("cosine", "bsdf", "light", "mis"):
        imgs = [render_forward(scene, small_camera, 64, 1.0, s, strat).final() for s in range(4)]
        means[strat] = np.mean(imgs, axis=0)[mask].mean()
    ref = means["mis"]
    for strat, v in means.items():
        assert v == pytest.approx(ref, rel=0.03), strat


def test_tau_zero_removes_shadows():
    scene = Scene(fixtures.plane_with_blocker(), fixtures.materials((0.5, 0.5, 0.5)),
                  fixtures.sky_probe(8, 16, sun_dir=(0, 1, 0), sun_power=10, sun_width=0.3))
    cam = fixtures.top_camera(16)
    lit = render_forward(scene, cam, 32, 0.0, 0).c_d
    shadowed = render_forward(scene, cam, 32, 1.0, 0).c_d
    assert np.all(shadowed <= lit + 1e-12)
    assert (lit - shadowed).max() > 0.1


def test_shadow_term_values():
    scene = Scene(fixtures.plane_with_blocker(), fixtures.materials((0.5, 0.5, 0.5)),
                  EnvProbe.constant(1.0))
    x = np.array([[-0.25, 0.0, -0.25]])
    n = np.array([[0.0, 1.0, 0.0]])
    up = np.array([[0.0, 1.0, 0.0]])
    assert shadow_term(scene, x, n, up, 1.0)[0] == 0.0
    assert shadow_term(scene, x, n, up, 0.3)[0] == pytest.approx(0.7)
    assert shadow_term(scene, x, n, np.array([[0.7, 0.7, 0.0]]) / np.sqrt(0.98), 1.0)[0] == 1.0


def test_oracle_agrees_with_render_on_plane():
    scene = Scene(fixtures.merge([fixtures.ground(2.0)]), fixtures.materials((1, 1, 1)),
                  fixtures.sky_probe(8, 16, sun_power=3, sun_width=0.5))
    scene.materials.specular = False
    cam = fixtures.top_camera(4)
    aov = render_forward(scene, cam, 1024, 1.0, 0)
    prim = primary_visibility(scene, cam)
    p = prim.surface.position[0]
    got = aov.c_d.reshape(-1, 3)[prim.pixels[0]]
    ref = irradiance_oracle(scene, p, np.array([0, 1.0, 0]), np.array([0, 1.0, 0]), 1.0,
                            n=200_000)
    assert np.allclose(got, ref, rtol=0.03)


def test_sphere_64px_matches_oracle_on_pixel_subset():
    scene = sphere_scene(kd=(0.5, 0.5, 0.5))
    scene.materials.specular = False
    cam = fixtures.orbit(1, 3.0, 20.0, 64)[0]
    aov = render_forward(scene, cam, 512, 1.0, 0)
    prim = primary_visibility(scene, cam)
    s = prim.surface
    sign = np.where((s.face_normal * (cam.position - s.position)).sum(-1, keepdims=True) < 0, -1, 1)
    pick = np.random.default_rng(5).choice(len(prim.pixels), 8, replace=False)
    c_d = aov.c_d.reshape(-1, 3)[prim.pixels]
    for i in pick:
        ref = irradiance_oracle(scene, s.position[i:i + 1], s.normal[i] * sign[i],
                                s.face_normal[i:i + 1] * sign[i], 1.0, n=200_000, seed=i)
        assert np.abs(c_d[i] - ref).max() <= 0.05 * ref.max(), i
