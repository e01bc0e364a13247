from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcinverse.material import (F0_DIELECTRIC, R_MIN, MaterialTextures, SurfaceGrads,
                                eval_bsdf_split, fresnel_schlick, material_backward, modulate,
                                sample_material, shade, shade_backward)


def hemisphere(n=300):
    th = (np.arange(n) + 0.5) * (math.pi / 2) / n
    ph = (np.arange(2 * n) + 0.5) * math.pi / n
    T, P = np.meshgrid(th, ph, indexing="ij")
    w = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1).reshape(-1, 3)
    dA = (np.sin(T) * (math.pi / 2 / n) * (math.pi / n)).ravel()
    return w, dA


def point(kd=(0.5, 0.5, 0.5), r=0.5, m=0.0, wo=(0.0, 0.0, 1.0), specular=True):
    mats = MaterialTextures.constant(kd, r, m, size=2)
    mats.specular = specular
    wo = np.asarray(wo, float)[None] / np.linalg.norm(wo)
    return sample_material(mats, np.array([[0.5, 0.5]]), wo=wo)


def test_lambert_white_furnace():
    sp = point(kd=(1, 1, 1), specular=False)
    w, dA = hemisphere()
    fd, fs = eval_bsdf_split(sp, w[None])
    total = (sp.a_demod[0, 0] * fd[0] * w[:, 2] * dA).sum()
    assert total == pytest.approx(1.0, abs=1e-4)
    assert np.all(fs == 0)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.0])
@pytest.mark.parametrize("theta", [0.0, 1.0, 1.4])
def test_ggx_energy_at_most_one(r, theta):
    sp = point(kd=(1, 1, 1), r=r, m=1.0, wo=(math.sin(theta), 0, math.cos(theta)))
    w, dA = hemisphere(600)
    _, fs = eval_bsdf_split(sp, w[None])
    e = (fs[0, :, 0] * w[:, 2] * dA).sum()
    assert 0.0 < e <= 1.0 + 2e-3


def test_specular_reciprocity(rng):
    a = rng.normal(size=3)
    b = rng.normal(size=3)
    a[2], b[2] = abs(a[2]), abs(b[2])
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    _, f_ab = eval_bsdf_split(point(r=0.4, m=0.5, wo=a), b[None, None])
    _, f_ba = eval_bsdf_split(point(r=0.4, m=0.5, wo=b), a[None, None])
    assert np.allclose(f_ab, f_ba)


def test_below_horizon_is_zero():
    fd, fs = eval_bsdf_split(point(), np.array([[[0.3, 0.0, -0.9]]]))
    assert fd.item() == 0 and np.all(fs == 0)


def test_fresnel_endpoints():
    f0 = np.array([F0_DIELECTRIC] * 3)
    assert np.allclose(fresnel_schlick(f0, np.array(1.0)), f0)
    assert np.allclose(fresnel_schlick(f0, np.array(0.0)), 1.0)


def test_roughness_clamped_to_minimum():
    assert point(r=0.0).r[0] == R_MIN


@given(st.floats(0.0, 1.0))
def test_metal_removes_diffuse(m):
    sp = point(kd=(0.8, 0.4, 0.2), m=m)
    assert np.allclose(sp.a_demod, np.array([[0.8, 0.4, 0.2]]) * (1 - m))


def _loss(mats, uv, wo, wi, gd, gs, galb, frame):
    sp = sample_material(mats, uv, *frame, wo=wo)
    d, s, _ = shade(sp, wi)
    return (gd * d).sum() + (gs * s).sum() + (galb * sp.a_demod).sum()


def test_material_backward_matches_fd(rng):
    size = 3
    kd = rng.uniform(0.2, 0.8, (size, size, 3))
    korm = np.stack([np.ones((size, size)), rng.uniform(0.2, 0.8, (size, size)),
                     rng.uniform(0.1, 0.9, (size, size))], -1)
    nm = np.concatenate([rng.uniform(0.35, 0.65, (size, size, 2)), np.ones((size, size, 1))], -1)
    mats = MaterialTextures(kd, korm, nm)
    P, S = 6, 4
    uv = rng.random((P, 2))
    normal = np.tile([0.0, 0.0, 1.0], (P, 1))
    frame = (np.tile([1.0, 0, 0], (P, 1)), np.tile([0.0, 1, 0], (P, 1)), normal)
    wo = rng.normal(size=(P, 3)) * [0.4, 0.4, 0.0] + [0, 0, 1]
    wo /= np.linalg.norm(wo, axis=1, keepdims=True)
    wi = rng.normal(size=(P, S, 3)) * [0.5, 0.5, 0.0] + [0, 0, 1]
    wi /= np.linalg.norm(wi, axis=-1, keepdims=True)
    gd, gs, galb = rng.normal(size=(P, S)), rng.normal(size=(P, S, 3)), rng.normal(size=(P, 3))

    sp = sample_material(mats, uv, *frame, wo=wo)
    grads = shade_backward(sp, wi, gd, gs)
    # a_demod = kd (1 - m) carries the albedo gradient
    out = material_backward(mats, sp, grads, g_albedo=galb)

    base = _loss(mats, uv, wo, wi, gd, gs, galb, frame)
    h = 1e-6
    for key, attr in (("kd", "kd"), ("korm", "korm"), ("normal", "normal_map")):
        for idx in [(0, 0, 0), (1, 1, 1), (2, 1, 2), (1, 2, 0)]:
            if key == "korm" and idx[2] == 0:
                continue
            m2 = mats.copy()
            getattr(m2, attr).data[idx] += h
            fd = (_loss(m2, uv, wo, wi, gd, gs, galb, frame) - base) / h
            assert fd == pytest.approx(out[key][idx], rel=1e-4, abs=1e-5), (key, idx)


def test_clamped_kd_has_zero_gradient():
    mats = MaterialTextures.constant(kd=(1.5, 0.5, -0.2), size=2)
    sp = sample_material(mats, np.array([[0.5, 0.5]]))
    out = material_backward(mats, sp, SurfaceGrads.zeros(1), g_albedo=np.ones((1, 3)))
    assert np.all(out["kd"][..., 0] == 0) and np.all(out["kd"][..., 2] == 0)
    assert np.any(out["kd"][..., 1] != 0)


def test_modulate():
    a = np.full((2, 2, 3), 0.5)
    assert np.allclose(modulate(a, np.ones_like(a), np.ones_like(a)), 1.5)
    with pytest.raises(ValueError, match="shape mismatch"):
        modulate(a, np.ones((2, 3, 3)), a)


def test_uniform_kd_and_flat_normal_map(rng):
    mats = MaterialTextures.constant(kd=(0.2, 0.4, 0.6), size=4)
    n = rng.normal(size=(20, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    from mcinverse.sampling import frame_from_normal
    t, b = frame_from_normal(n)
    sp = sample_material(mats, rng.random((20, 2)), t, b, n, wo=n)
    assert np.allclose(sp.kd, [0.2, 0.4, 0.6])
    assert np.allclose(sp.n_s, n)


def test_metal_has_no_diffuse_albedo():
    sp = point(kd=(0.9, 0.5, 0.1), m=1.0)
    assert np.all(sp.a_demod == 0)


def test_ggx_d_peak_alpha_one():
    from mcinverse.sampling import ggx_d
    assert ggx_d(np.array(1.0), 1.0) == pytest.approx(1 / math.pi)


def test_dielectric_f0_at_normal_incidence():
    sp = point(m=0.0)
    t = shade(sp, np.array([[[0.0, 0.0, 1.0]]]))[2]
    assert np.allclose(t.F, F0_DIELECTRIC)


def test_modulate_identities(rng):
    a = rng.random((3, 3, 3))
    one, zero = np.ones_like(a), np.zeros_like(a)
    assert np.allclose(modulate(a, one, zero), a)
    assert np.allclose(modulate(zero, rng.random(a.shape), one), one)
    c1, c2 = rng.random(a.shape), rng.random(a.shape)
    assert np.allclose(modulate(a, 2 * c1 + c2, zero), 2 * modulate(a, c1, zero)
                       + modulate(a, c2, zero))
