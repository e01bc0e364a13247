from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcinverse import _backend, fixtures
from mcinverse.geometry import (Camera, Ray, build_bvh, camera_ray, camera_rays, intersect,
                                intersect_many, occluded, occluded_many, shadow_epsilon,
                                surface_at, tangent_frames)
from mcinverse.imageio import MeshData


def random_mesh(n, seed):
    r = np.random.default_rng(seed)
    c = r.uniform(-1, 1, (n, 1, 3))
    pos = (c + 0.2 * r.normal(size=(n, 3, 3))).reshape(-1, 3)
    return MeshData(pos, np.arange(3 * n).reshape(n, 3), r.random((3 * n, 2)))


def brute_force(mesh, org, d):
    """Independent Moller-Trumbore over every triangle."""
    p = mesh.positions[mesh.indices]
    v0, e1, e2 = p[:, 0], p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    best = np.full(len(org), np.inf)
    for i in range(len(org)):
        pv = np.cross(d[i], e2)
        det = (e1 * pv).sum(1)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = org[i] - v0
        u = (tv * pv).sum(1) * inv
        qv = np.cross(tv, e1)
        v = (d[i] * qv).sum(1) * inv
        t = (e2 * qv).sum(1) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        if hit.any():
            best[i] = t[hit].min()
    return best


def test_single_triangle_one_leaf():
    mesh = MeshData([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], np.zeros((3, 2)))
    bvh = build_bvh(mesh)
    assert bvh.num_leaves == 1


def test_ray_hits_triangle_center():
    mesh = MeshData([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], np.zeros((3, 2)))
    hit = intersect(build_bvh(mesh), Ray((1 / 3, 1 / 3, 2.0), (0, 0, -1)))
    assert hit is not None and hit.t == pytest.approx(2.0)
    assert intersect(build_bvh(mesh), Ray((5, 5, 2.0), (0, 0, -1))) is None


def test_degenerate_triangle_never_hit():
    mesh = MeshData([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]], np.zeros((3, 2)))
    bvh = build_bvh(mesh)
    assert bvh.num_leaves == 1
    h = intersect_many(bvh, [[0.5, 1, 0], [1, 0, 1]], [[0, -1, 0], [0, 0, -1]])
    assert (h.triangle < 0).all()


@pytest.mark.parametrize("backend", ["cython", "python"])
def test_bvh_matches_brute_force(backend):
    mesh = random_mesh(500, 3)
    r = np.random.default_rng(4)
    org = r.uniform(-2, 2, (1000, 3))
    d = r.normal(size=(1000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    h = intersect_many(build_bvh(mesh), org, d, kernels=_backend.kernels(backend))
    ref = brute_force(mesh, org, d)
    got = np.where(h.triangle >= 0, h.t, np.inf)
    assert np.array_equal(np.isfinite(got), np.isfinite(ref))
    assert np.allclose(got[np.isfinite(ref)], ref[np.isfinite(ref)], rtol=1e-9)
    occ = occluded_many(build_bvh(mesh), org, d, kernels=_backend.kernels(backend))
    assert np.array_equal(occ, np.isfinite(ref))


def test_backends_agree_on_grazing_rays():
    mesh = fixtures.uv_sphere()
    bvh = build_bvh(mesh)
    r = np.random.default_rng(7)
    n = 20000
    org = r.normal(size=(n, 3))
    org = 1.0 * org / np.linalg.norm(org, axis=1, keepdims=True) * 2.0
    tang = np.cross(org, r.normal(size=(n, 3)))
    d = tang / np.linalg.norm(tang, axis=1, keepdims=True) - 0.49 * org
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    a = intersect_many(bvh, org, d, kernels=_backend.kernels("cython"))
    b = intersect_many(bvh, org, d, kernels=_backend.kernels("python"))
    agree = (a.triangle == b.triangle) | np.isclose(a.t, b.t, rtol=1e-12)
    assert agree.mean() >= 0.999


def test_occluded_up_and_down():
    mesh = fixtures.merge([fixtures.ground(4.0, y=1.0)])
    bvh = build_bvh(mesh)
    assert occluded(bvh, (0, 0, 0), (0, 1, 0))
    assert not occluded(bvh, (0, 0, 0), (0, -1, 0))


@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_occluded_monotone_in_t(t1, t2):
    mesh = fixtures.merge([fixtures.ground(4.0, y=1.0)])
    bvh = build_bvh(mesh)
    lo, hi = sorted((t1, t2))
    if occluded(bvh, (0, 0, 0), (0, 1, 0), t_max=lo):
        assert occluded(bvh, (0, 0, 0), (0, 1, 0), t_max=hi)


def test_no_self_hits_on_closed_sphere():
    mesh = fixtures.uv_sphere()
    bvh = build_bvh(mesh)
    r = np.random.default_rng(5)
    n = 10000
    tri = r.integers(0, mesh.num_triangles, n)
    b = r.random((n, 2))
    b = np.where(b.sum(1, keepdims=True) > 1, 1 - b, b)
    p = mesh.positions[mesh.indices[tri]]
    x = p[:, 0] + b[:, :1] * (p[:, 1] - p[:, 0]) + b[:, 1:] * (p[:, 2] - p[:, 0])
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    fn /= np.linalg.norm(fn, axis=1, keepdims=True)
    d = r.normal(size=(n, 3))
    d = np.where((d * fn).sum(1, keepdims=True) < 0, -d, d)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    occ = occluded_many(bvh, x + shadow_epsilon(mesh) * fn, d)
    assert occ.sum() == 0


def test_camera_center_and_corner():
    cam = Camera((0, 0, 5), (0, 0, 0), math.radians(90), 2, 2)
    ray = camera_ray(cam, (1, 1), jitter=(0.0, 0.0))
    assert np.allclose(ray.direction, [0, 0, -1])
    corner = camera_ray(cam, (0, 0), jitter=(0.0, 0.0)).direction
    # fov 90 => tan(fov/2) = 1 at the image edge
    assert abs(corner[0]) == pytest.approx(abs(corner[1]))
    assert abs(corner[0] / corner[2]) == pytest.approx(1.0)


def test_camera_rays_unit_and_symmetric():
    cam = Camera((1, 2, 3), (0, 0, 0), math.radians(40), 6, 6)
    _, d = camera_rays(cam)
    assert np.allclose(np.linalg.norm(d, axis=-1), 1.0)
    local = d.reshape(6, 6, 3) @ cam.world_from_camera
    assert np.allclose(local[:, ::-1, 0], -local[:, :, 0])
    assert np.allclose(local[::-1, :, 1], -local[:, :, 1])


def test_tangent_quad_is_plus_x():
    p, i, u = fixtures.quad((0, 0, 0), (1, 0, 0), (0, 1, 0))
    mesh = MeshData(p, i, u)
    t = tangent_frames(mesh)
    assert np.allclose(t[:, :3], [1, 0, 0])


def test_tangents_orthonormal_on_sphere():
    mesh = fixtures.uv_sphere()
    t = tangent_frames(mesh)[:, :3]
    assert np.all(np.abs((t * mesh.normals).sum(1)) < 1e-5)


def test_surface_at_interpolates_uv():
    p, i, u = fixtures.quad((0, 0, 0), (2, 0, 0), (0, 0, 2))
    mesh = MeshData(p, i, u)
    bvh = build_bvh(mesh)
    hits = intersect_many(bvh, [[0.5, 1, 1.5]], [[0, -1, 0]])
    s = surface_at(mesh, hits)
    assert np.allclose(s.uv, [[0.25, 0.75]])
    assert np.allclose(s.position, [[0.5, 0, 1.5]])


def test_ray_misses_everything():
    mesh = random_mesh(50, 1)
    assert intersect(build_bvh(mesh), Ray((10, 10, 10), (1, 0, 0))) is None


def test_sphere_tangents_continuous_off_seam():
    from mcinverse import fixtures as fx
    mesh = fx.uv_sphere()
    t = tangent_frames(mesh)[:, :3]
    worst = 0.0
    for tri in mesh.indices:
        u = mesh.uvs[tri, 0]
        if u.max() - u.min() > 0.5 or np.any(np.abs(mesh.normals[tri, 1]) > 0.95):
            continue   # seam or pole
        for a, b in ((0, 1), (1, 2), (0, 2)):
            c = np.clip((t[tri[a]] * t[tri[b]]).sum(), -1, 1)
            worst = max(worst, math.degrees(math.acos(c)))
    assert worst < 30.0
