"""Procedural test scenes, textures and probes (no binary assets needed)."""

from __future__ import annotations

import math

import numpy as np

from .envlight import EnvProbe, uv_to_dir
from .geometry import Camera, look_at_orbit
from .imageio import MeshData, Texture2D
from .material import MaterialTextures


def uv_sphere(n_lon: int = 32, n_lat: int = 16, radius: float = 1.0,
              center=(0.0, 0.0, 0.0)) -> MeshData:
    """Latitude-longitude sphere with a UV seam; the default has 960 triangles."""
    center = np.asarray(center, dtype=np.float64)
    lat = np.linspace(0.0, math.pi, n_lat + 1)
    lon = np.linspace(0.0, 2.0 * math.pi, n_lon + 1)
    th, ph = np.meshgrid(lat, lon, indexing="ij")
    nrm = np.stack([np.sin(th) * np.cos(ph), np.cos(th), np.sin(th) * np.sin(ph)], axis=-1)
    pos = center + radius * nrm
    uvs = np.stack([ph / (2.0 * math.pi), th / math.pi], axis=-1)
    vid = np.arange((n_lat + 1) * (n_lon + 1)).reshape(n_lat + 1, n_lon + 1)
    tris = []
    for i in range(n_lat):
        for j in range(n_lon):
            a, b = vid[i, j], vid[i, j + 1]
            c, d = vid[i + 1, j], vid[i + 1, j + 1]
            if i > 0:
                tris.append((a, b, c))
            if i < n_lat - 1:
                tris.append((b, d, c))
    return MeshData(pos.reshape(-1, 3), np.array(tris, dtype=np.int64),
                    uvs.reshape(-1, 2), nrm.reshape(-1, 3))


def quad(corner, edge_u, edge_v, uv0=(0.0, 0.0), uv1=(1.0, 1.0)):
    """Two triangles spanning ``corner + s*edge_u + t*edge_v``; normal = edge_v x edge_u."""
    c = np.asarray(corner, dtype=np.float64)
    eu = np.asarray(edge_u, dtype=np.float64)
    ev = np.asarray(edge_v, dtype=np.float64)
    pos = np.array([c, c + eu, c + eu + ev, c + ev])
    uvs = np.array([[uv0[0], uv0[1]], [uv1[0], uv0[1]], [uv1[0], uv1[1]], [uv0[0], uv1[1]]])
    idx = np.array([[0, 2, 1], [0, 3, 2]])
    return pos, idx, uvs


def merge(parts) -> MeshData:
    pos, idx, uvs = [], [], []
    base = 0
    for p, i, u in parts:
        pos.append(p)
        idx.append(i + base)
        uvs.append(u)
        base += len(p)
    return MeshData(np.concatenate(pos), np.concatenate(idx), np.concatenate(uvs))


def ground(size: float = 2.0, y: float = 0.0):
    h = 0.5 * size
    return quad((-h, y, -h), (size, 0.0, 0.0), (0.0, 0.0, size))


def box(lo, hi, uv_box=((0.0, 0.0), (1.0, 1.0))):
    """Closed axis-aligned box with outward normals; every face maps to ``uv_box``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    dx, dy, dz = hi - lo
    X, Y, Z = np.eye(3)
    faces = [
        quad(lo, dx * X, dz * Z),                         # bottom (-y)
        quad((lo[0], hi[1], lo[2]), dz * Z, dx * X),      # top (+y)
        quad(lo, dy * Y, dx * X),                         # -z
        quad((lo[0], lo[1], hi[2]), dx * X, dy * Y),      # +z
        quad(lo, dz * Z, dy * Y),                         # -x
        quad((hi[0], lo[1], lo[2]), dy * Y, dz * Z),      # +x
    ]
    uv_lo = np.asarray(uv_box[0], dtype=np.float64)
    uv_hi = np.asarray(uv_box[1], dtype=np.float64)
    return [(p, i, uv_lo + u * (uv_hi - uv_lo)) for p, i, u in faces]


def plane_with_blocker() -> MeshData:
    """2x2 ground plane with a floating square occluder above one corner."""
    blk = quad((-0.6, 0.5, -0.6), (0.0, 0.0, 0.7), (0.7, 0.0, 0.0))
    return merge([ground(2.0), blk])


def two_box_scene() -> MeshData:
    """Ground plane (uv [0,1]^2) plus two boxes sharing a small uv corner."""
    g = ground(2.0)
    corner = ((0.0, 0.0), (0.02, 0.02))
    return merge([g] + box((-0.55, 0.0, -0.35), (-0.15, 0.6, 0.05), corner)
                 + box((0.15, 0.0, 0.05), (0.55, 0.45, 0.45), corner))


# ------------------------------------------------------------------ textures

def checker(size: int, cells: int, a, b) -> np.ndarray:
    ij = np.indices((size, size)) * cells // size
    sel = ((ij[0] + ij[1]) % 2 == 0)[..., None]
    return np.where(sel, np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def constant_texture(size: int, value) -> np.ndarray:
    return np.tile(np.asarray(value, dtype=np.float64), (size, size, 1))


def random_texture(size: int, lo, hi, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return lo + (hi - lo) * rng.random((size, size, 3))


def materials(kd, roughness=0.5, metalness=0.0, size: int | None = None) -> MaterialTextures:
    """Material set from a kd array (or RGB triple) and scalar roughness/metalness."""
    kd = np.asarray(kd, dtype=np.float64)
    if kd.ndim == 1:
        kd = constant_texture(size or 8, kd)
    n = kd.shape[0]
    korm = constant_texture(n, (1.0, roughness, metalness))
    nm = constant_texture(n, (0.5, 0.5, 1.0))
    return MaterialTextures(Texture2D(kd), Texture2D(korm), Texture2D(nm))


# -------------------------------------------------------------------- probes

def sky_probe(height: int = 16, width: int = 32, sun_dir=(0.4, 0.8, 0.3),
              sun_power: float = 40.0, sun_width: float = 0.15, sky=(0.3, 0.35, 0.45),
              ground_color=(0.1, 0.08, 0.06)) -> EnvProbe:
    """Smooth sky gradient plus a Gaussian sun lobe."""
    v, u = (np.indices((height, width)) + 0.5) / np.array([height, width])[:, None, None]
    d = uv_to_dir(np.stack([u, v], axis=-1))
    s = np.asarray(sun_dir, dtype=np.float64)
    s /= np.linalg.norm(s)
    ang = np.arccos(np.clip(d @ s, -1.0, 1.0))
    up = np.clip(d[..., 1], 0.0, 1.0)[..., None]
    base = np.where(d[..., 1:2] > 0.0, np.asarray(sky) * (0.6 + 0.4 * up), ground_color)
    sun = sun_power * np.exp(-0.5 * (ang / sun_width) ** 2)[..., None] * np.array([1.0, 0.95, 0.85])
    return EnvProbe(Texture2D(base + sun, address="wrap"))


def random_probe(height: int, width: int, seed: int, scale: float = 1.0) -> EnvProbe:
    rng = np.random.default_rng(seed)
    return EnvProbe(Texture2D(scale * rng.random((height, width, 3)), address="wrap"))


def orbit(count: int = 16, radius: float = 3.5, elevation=25.0, size: int = 32,
          fov_deg: float = 40.0, target=(0.0, 0.0, 0.0), offset: float = 0.0) -> list[Camera]:
    return look_at_orbit(count, radius, elevation, target, fov_deg, size, size, offset)


def top_camera(size: int = 32, height: float = 3.0, fov_deg: float = 45.0) -> Camera:
    return Camera((0.0, height, 0.0), (0.0, 0.0, 0.0), math.radians(fov_deg), size, size,
                  up=(0.0, 0.0, -1.0))


def depth_step_guides(size: int = 32, z_near: float = 1.0, z_far: float = 3.0):
    """Two fronto-parallel planes split down the middle column: (depth, normal, mask)."""
    depth = np.full((size, size), z_near)
    depth[:, size // 2:] = z_far
    normal = np.zeros((size, size, 3))
    normal[..., 2] = 1.0
    return depth, normal, np.ones((size, size), dtype=bool)
