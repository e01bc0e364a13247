from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcinverse.imageio import Texture2D
from mcinverse.loss import (PSNR_CAP, LossWeights, decode_normal, image_loss, psnr, reg_light,
                            reg_normal_perturb, reg_smooth, srgb, tonemap, tonemap_grad,
                            total_loss)


def test_tonemap_values():
    assert tonemap(np.array(0.0)) == 0.0
    assert tonemap(np.array(math.e - 1.0)) == pytest.approx(1.0)
    assert srgb(np.array(0.0031308)) == pytest.approx(0.0031308 * 12.92)


@given(st.floats(0.0, 50.0))
def test_tonemap_grad_matches_fd(x):
    h = 1e-7 * max(1.0, x)
    fd = (tonemap(np.array(x + h)) - tonemap(np.array(max(x - h, 0.0)))) / (x + h - max(x - h, 0))
    assert tonemap_grad(np.array(x)) == pytest.approx(fd, rel=1e-3, abs=1e-3)


@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0))
def test_tonemap_monotone(a, b):
    lo, hi = sorted((a, b))
    assert tonemap(np.array(lo)) <= tonemap(np.array(hi))


def test_image_loss_zero_on_identical(rng):
    img = rng.random((4, 4, 3))
    val, g = image_loss(img, img)
    assert val == 0.0 and np.all(g == 0)


def test_image_loss_grad_matches_fd(rng):
    img, ref = rng.random((5, 5, 3)), rng.random((5, 5, 3))
    _, g = image_loss(img, ref)
    for idx in [(0, 0, 0), (2, 3, 1), (4, 4, 2)]:
        d = img.copy()
        d[idx] += 1e-7
        fd = (image_loss(d, ref)[0] - image_loss(img, ref)[0]) / 1e-7
        assert fd == pytest.approx(g[idx], rel=1e-4)


def test_image_loss_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        image_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_reg_light_grad_matches_fd(rng):
    c_d, c_s, ref = rng.random((4, 4, 3)), rng.random((4, 4, 3)), rng.random((4, 4, 3))
    mask = rng.random((4, 4)) > 0.3
    val, g = reg_light(c_d, c_s, ref, mask)
    idx = tuple(np.argwhere(mask)[0]) + (1,)
    d = c_d.copy()
    d[idx] += 1e-7
    fd = (reg_light(d, c_s, ref, mask)[0] - val) / 1e-7
    assert fd == pytest.approx(g[idx], rel=1e-4)
    assert np.all(g[~mask] == 0)


def test_reg_smooth_constant_texture_is_zero(rng):
    tex = Texture2D(np.full((8, 8, 3), 0.4))
    uv = rng.random((50, 2))
    val, g = reg_smooth(tex, uv, np.clip(uv + 0.05, 0, 1))
    assert val == pytest.approx(0.0, abs=1e-15)


def test_reg_smooth_grad_matches_fd(rng):
    data = rng.random((6, 6, 3))
    uv = rng.random((30, 2))
    uj = np.clip(uv + rng.normal(0, 0.1, uv.shape), 0, 1)
    val, g = reg_smooth(Texture2D(data), uv, uj)
    idx = (2, 3, 1)
    d = data.copy()
    d[idx] += 1e-7
    fd = (reg_smooth(Texture2D(d), uv, uj)[0] - val) / 1e-7
    assert fd == pytest.approx(g[idx], abs=1e-6)


def test_reg_normal_flat_is_zero(rng):
    tex = Texture2D(np.tile([0.5, 0.5, 1.0], (4, 4, 1)))
    uv = rng.random((20, 2))
    val, g = reg_normal_perturb(tex, uv, uv[::-1])
    assert val == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(g, 0)


def test_reg_normal_grad_matches_fd(rng):
    data = np.concatenate([rng.uniform(0.3, 0.7, (4, 4, 2)), np.ones((4, 4, 1))], -1)
    uv = rng.random((20, 2))
    uj = rng.random((20, 2))
    val, g = reg_normal_perturb(Texture2D(data), uv, uj)
    for idx in [(1, 1, 0), (2, 3, 1), (0, 2, 2)]:
        d = data.copy()
        d[idx] += 1e-7
        fd = (reg_normal_perturb(Texture2D(d), uv, uj)[0] - val) / 1e-7
        assert fd == pytest.approx(g[idx], rel=1e-3, abs=1e-7)


def test_decode_normal_unit():
    n, ln = decode_normal(np.array([[0.5, 0.5, 1.0], [1.0, 0.5, 0.5]]))
    assert np.allclose(n, [[0, 0, 1], [1, 0, 0]])
    assert np.allclose(ln[:, 0], 1.0)


def test_psnr_cap_and_value():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == PSNR_CAP
    b = np.full((4, 4, 3), 0.1)
    assert psnr(a, b, tonemapped=True) == pytest.approx(20.0)


def test_psnr_mask():
    a = np.zeros((2, 2, 3))
    b = a.copy()
    b[0, 0] = 5.0
    mask = np.array([[False, True], [True, True]])
    assert psnr(a, b, mask) == PSNR_CAP


def test_weights_and_total():
    with pytest.raises(ValueError, match="light"):
        LossWeights(light=-1.0)
    rep = total_loss(1.0, kd=2.0, light=1.0, weights=LossWeights(kd=0.5, light=0.25))
    assert rep.total == pytest.approx(2.25)
    assert rep.as_dict()["kd"] == 2.0


def test_srgb_knee_continuous():
    lo = 12.92 * 0.0031308
    hi = 1.055 * 0.0031308 ** (1 / 2.4) - 0.055
    assert lo == pytest.approx(0.04045, abs=1e-5)
    assert abs(lo - hi) < 1e-6
    assert srgb(np.array(0.0031308)) == pytest.approx(lo)


def test_image_loss_symmetric_and_hand_computed():
    a = np.array([[[0.0, 0.0, 0.0], [math.e - 1, math.e - 1, math.e - 1]]])
    b = np.zeros_like(a)
    # tonemapped values 0 and 1: mean |diff| over 2 pixels x 3 channels = 0.5
    assert image_loss(a, b)[0] == pytest.approx(0.5)
    assert image_loss(b, a)[0] == pytest.approx(0.5)


def test_reg_smooth_checker_beats_gradient_and_scales(rng):
    from mcinverse import fixtures
    check = fixtures.checker(16, 8, (1, 1, 1), (0, 0, 0))
    ramp = np.repeat(np.linspace(0, 1, 16)[None, :, None], 16, 0).repeat(3, 2)
    uv = rng.random((400, 2))
    uj = np.clip(uv + rng.normal(0, 0.05, uv.shape), 0, 1)
    vc, _ = reg_smooth(Texture2D(check), uv, uj)
    vg, _ = reg_smooth(Texture2D(ramp), uv, uj)
    assert vc > vg
    v2, _ = reg_smooth(Texture2D(0.5 * check), uv, uj)
    assert v2 == pytest.approx(0.5 * vc)


def test_reg_normal_equal_tilt_closed_form():
    a = 0.4
    n = np.array([math.sin(a), 0.0, math.cos(a)])
    tex = Texture2D(np.tile(0.5 * n + 0.5, (4, 4, 1)))
    uv = np.random.default_rng(0).random((10, 2))
    val, _ = reg_normal_perturb(tex, uv, uv[::-1])
    assert val == pytest.approx(1 - math.cos(a))


def test_reg_normal_decreases_after_blur(rng):
    data = np.concatenate([rng.uniform(0.2, 0.8, (16, 16, 2)), np.ones((16, 16, 1))], -1)
    k = np.ones(3) / 3
    blurred = data.copy()
    for ax in (0, 1):
        blurred[..., :2] = np.apply_along_axis(lambda r: np.convolve(r, k, "same"), ax,
                                               blurred[..., :2])
    uv = rng.random((500, 2))
    uj = np.clip(uv + rng.normal(0, 0.05, uv.shape), 0, 1)
    assert reg_normal_perturb(Texture2D(blurred), uv, uj)[0] < \
        reg_normal_perturb(Texture2D(data), uv, uj)[0]


def test_luminance_and_value_examples():
    from mcinverse.loss import hsv_value, luminance
    assert luminance(np.array([0.3, 0.6, 0.9])) == pytest.approx(0.6)
    assert hsv_value(np.array([1.0, 0.5, 0.2])) == 1.0


def test_reg_light_zero_on_gray():
    ref = np.full((3, 3, 3), 0.4)
    val, _ = reg_light(ref * 0.75, ref * 0.25, ref, np.ones((3, 3), bool))
    assert val == pytest.approx(0.0, abs=1e-15)


def test_total_loss_weights():
    assert total_loss(0.3, 1, 1, 1, 1, LossWeights(0, 0, 0, 0)).total == 0.3
    w = LossWeights()
    assert (w.kd, w.korm, w.normal, w.light) == (0.1, 0.05, 0.25, 0.15)
    one = total_loss(0.0, light=1.0, weights=LossWeights(light=0.15)).total
    two = total_loss(0.0, light=1.0, weights=LossWeights(light=0.30)).total
    assert two == pytest.approx(2 * one)


def test_psnr_hand_computed(rng):
    a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    mse = ((a - b) ** 2).mean()
    assert psnr(a, b, tonemapped=True) == pytest.approx(10 * math.log10(1 / mse))
