from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from mcinverse import fixtures
from mcinverse.imageio import (ImageIOError, Texture2D, bilinear_adjoint, bilinear_sample,
                               load_obj, load_pfm, save_obj, save_pfm, save_png_tonemapped)


def test_single_texel_pfm(tmp_path):
    p = tmp_path / "one.pfm"
    p.write_bytes(b"Pf\n1 1\n-1.0\n" + np.float32(0.5).tobytes())
    img = load_pfm(p)
    assert img.data.shape == (1, 1, 1)
    assert img.data[0, 0, 0] == 0.5


def test_pfm_roundtrip_bit_identical(tmp_path, rng):
    data = rng.random((8, 8, 3)).astype(np.float32)
    save_pfm(tmp_path / "a.pfm", data)
    assert np.array_equal(load_pfm(tmp_path / "a.pfm").data, data)


def test_pfm_zero_and_large(tmp_path, rng):
    for data in (np.zeros((3, 5, 3), np.float32), rng.random((256, 256, 3)).astype(np.float32)):
        save_pfm(tmp_path / "b.pfm", data)
        assert np.array_equal(load_pfm(tmp_path / "b.pfm").data, data)


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6).map(
    lambda s: (s[0], s[1], 3)), elements=st.floats(-1e6, 1e6, width=32)))
def test_pfm_roundtrip_property(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    save_pfm(p, data)
    assert np.array_equal(load_pfm(p).data, data)


def test_big_endian_pfm(tmp_path):
    vals = np.array([[1.0, 2.0]], dtype=">f4")
    (tmp_path / "be.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + vals.tobytes())
    assert load_pfm(tmp_path / "be.pfm").data[0, :, 0].tolist() == [1.0, 2.0]


def test_pfm_nan_texel_reported(tmp_path):
    data = np.ones((2, 3, 3), np.float32)
    data[1, 2, 1] = np.nan
    save_pfm(tmp_path / "nan.pfm", data)
    with pytest.raises(ImageIOError, match=r"texel 5 \(row 1, col 2\)"):
        load_pfm(tmp_path / "nan.pfm")


@pytest.mark.parametrize("blob, msg", [
    (b"P6\n1 1\n-1.0\n", "magic"),
    (b"PF\nx 1\n-1.0\n", "dimensions"),
    (b"PF\n2 2\n-1.0\n" + b"\0" * 8, "truncated"),
])
def test_pfm_malformed(tmp_path, blob, msg):
    (tmp_path / "bad.pfm").write_bytes(blob)
    with pytest.raises(ImageIOError, match=msg):
        load_pfm(tmp_path / "bad.pfm")


def test_png_tonemap_endpoints(tmp_path):
    img = np.array([[[0.0, math.e - 1.0, 100.0]]])
    save_png_tonemapped(tmp_path / "t.png", img)
    px = np.asarray(Image.open(tmp_path / "t.png"))
    assert px[0, 0].tolist() == [0, 255, 255]


def test_obj_unit_quad(tmp_path):
    (tmp_path / "q.obj").write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
        "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
        "f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n")
    mesh = load_obj(tmp_path / "q.obj")
    assert len(mesh.positions) == 4
    assert mesh.indices.size == 6
    # no vn lines: area-weighted normals
    assert np.allclose(mesh.normals, [0, 0, 1])


def test_obj_rejects_quad_face(tmp_path):
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\n"
                                    "f 1/1 2/1 3/1 4/1\n")
    with pytest.raises(ImageIOError, match="line 6"):
        load_obj(tmp_path / "q.obj")


def test_obj_sphere_roundtrip_counts(tmp_path):
    mesh = fixtures.uv_sphere()
    save_obj(tmp_path / "s.obj", mesh)
    text = (tmp_path / "s.obj").read_text().splitlines()
    assert sum(line.startswith("f ") for line in text) == 960
    back = load_obj(tmp_path / "s.obj")
    assert back.num_triangles == 960
    # unreferenced vertices are dropped, so compare per corner
    assert np.array_equal(back.positions[back.indices], mesh.positions[mesh.indices])
    assert np.array_equal(back.uvs[back.indices], mesh.uvs[mesh.indices])


def test_bilinear_center_and_texel():
    tex = Texture2D(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert bilinear_sample(tex, (0.5, 0.5))[0] == pytest.approx(0.5)
    assert bilinear_sample(tex, (0.75, 0.25))[0] == 1.0
    assert bilinear_sample(tex, (0.25, 0.25))[0] == 0.0


def test_wrap_addressing_seam_continuity(rng):
    tex = Texture2D(rng.random((4, 8, 3)), address="wrap")
    a = bilinear_sample(tex, (1.0 - 1e-9, 0.4))
    b = bilinear_sample(tex, (1e-9, 0.4))
    assert np.allclose(a, b, atol=1e-6)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinear_is_linear_in_texels(u, v, a, b):
    r = np.random.default_rng(0)
    t1, t2 = r.random((3, 4, 2)), r.random((3, 4, 2))
    lhs = bilinear_sample(Texture2D(a * t1 + b * t2), (u, v))
    rhs = a * bilinear_sample(Texture2D(t1), (u, v)) + b * bilinear_sample(Texture2D(t2), (u, v))
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(st.floats(0, 1), st.floats(0, 1))
def test_adjoint_weights_sum_to_one_on_footprint(u, v):
    tex = Texture2D(np.zeros((5, 7, 1)))
    g = bilinear_adjoint(tex, (u, v), np.ones(1))
    assert g.sum() == pytest.approx(1.0)
    assert np.count_nonzero(g) <= 4
    assert (g >= 0).all()


def test_adjoint_matches_fd(rng):
    data = rng.random((4, 4, 2))
    uv = rng.random((6, 2))
    w = rng.normal(size=(6, 2))
    g = bilinear_adjoint(Texture2D(data), uv, w)
    h = 1e-6
    for idx in np.ndindex(data.shape):
        d = data.copy()
        d[idx] += h
        fd = ((w * bilinear_sample(Texture2D(d), uv)).sum()
              - (w * bilinear_sample(Texture2D(data), uv)).sum()) / h
        assert fd == pytest.approx(g[idx], abs=1e-6)
