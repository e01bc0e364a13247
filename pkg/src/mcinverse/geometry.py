"""Median-split BVH, ray queries, pinhole camera, tangent frames."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .imageio import MeshData

LEAF_SIZE = 4


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        self.direction = d / np.linalg.norm(d)
        if not self.t_min < self.t_max:
            raise ValueError("ray needs t_min < t_max")


@dataclass
class Hit:
    t: float
    triangle: int
    barycentrics: np.ndarray  # (w0, w1, w2), weights of vertices 0, 1, 2
    position: np.ndarray
    uv: np.ndarray
    normal: np.ndarray        # interpolated vertex normal
    tangent: np.ndarray
    bitangent: np.ndarray


@dataclass
class BVH:
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray   # BVH slot -> original triangle id
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.left)

    @property
    def num_leaves(self) -> int:
        return int((self.left < 0).sum())


def build_bvh(mesh: MeshData, leaf_size: int = LEAF_SIZE) -> BVH:
    if mesh.num_triangles == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    tri = mesh.positions[mesh.indices]
    tlo = tri.min(axis=1)
    thi = tri.max(axis=1)
    cen = tri.mean(axis=1)

    order = np.arange(mesh.num_triangles)
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        for arr in (lo, hi):
            arr.append(np.zeros(3))
        for arr in (left, right, start, count):
            arr.append(-1)
        return len(left) - 1

    root = new_node()
    stack = [(root, 0, mesh.num_triangles)]
    while stack:
        node, a, b = stack.pop()
        ids = order[a:b]
        lo[node] = tlo[ids].min(axis=0)
        hi[node] = thi[ids].max(axis=0)
        c = cen[ids]
        extent = c.max(axis=0) - c.min(axis=0)
        axis = int(np.argmax(extent))
        if b - a <= leaf_size or extent[axis] <= 0.0:
            start[node] = a
            count[node] = b - a
            continue
        mid = (b - a) // 2
        part = np.argpartition(c[:, axis], mid)
        order[a:b] = ids[part]
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((r_node, a + mid, b))
        stack.append((l_node, a, a + mid))

    tri = tri[order]
    as_i64 = lambda x: np.ascontiguousarray(x, dtype=np.int64)  # noqa: E731
    return BVH(
        lo=np.ascontiguousarray(lo), hi=np.ascontiguousarray(hi),
        left=as_i64(left), right=as_i64(right), start=as_i64(start), count=as_i64(count),
        order=order,
        v0=np.ascontiguousarray(tri[:, 0]),
        e1=np.ascontiguousarray(tri[:, 1] - tri[:, 0]),
        e2=np.ascontiguousarray(tri[:, 2] - tri[:, 0]),
    )


@dataclass
class Hits:
    """Batch result of :func:`intersect_many`; ``triangle == -1`` is a miss."""

    t: np.ndarray
    triangle: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.triangle >= 0


def _ray_arrays(origins, dirs, t_min, t_max):
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    tmin = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)))
    tmax = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
    return origins, dirs, tmin, tmax


def intersect_many(bvh: BVH, origins, dirs, t_min=0.0, t_max=math.inf, kernels=None) -> Hits:
    origins, dirs, tmin, tmax = _ray_arrays(origins, dirs, t_min, t_max)
    n = len(origins)
    t = np.empty(n)
    prim = np.empty(n, dtype=np.int64)
    bu = np.empty(n)
    bv = np.empty(n)
    mod = kernels or _backend.kernels()
    _backend.run_chunked(
        mod.intersect_closest, n, origins, dirs, tmin, tmax, bvh.lo, bvh.hi, bvh.left,
        bvh.right, bvh.start, bvh.count, bvh.v0, bvh.e1, bvh.e2, t, prim, bu, bv, module=mod)
    tri = np.where(prim >= 0, bvh.order[np.maximum(prim, 0)], -1)
    return Hits(t=t, triangle=tri, b1=bu, b2=bv)


def occluded_many(bvh: BVH, origins, dirs, t_min=0.0, t_max=math.inf, kernels=None) -> np.ndarray:
    origins, dirs, tmin, tmax = _ray_arrays(origins, dirs, t_min, t_max)
    n = len(origins)
    out = np.zeros(n, dtype=np.uint8)
    mod = kernels or _backend.kernels()
    _backend.run_chunked(
        mod.intersect_any, n, origins, dirs, tmin, tmax, bvh.lo, bvh.hi, bvh.left, bvh.right,
        bvh.start, bvh.count, bvh.v0, bvh.e1, bvh.e2, out, module=mod)
    return out.astype(bool)


def intersect(bvh: BVH, ray: Ray, mesh: MeshData | None = None,
              tangents: np.ndarray | None = None) -> Hit | None:
    """Nearest hit for one ray; surface attributes need ``mesh``."""
    hits = intersect_many(bvh, ray.origin[None], ray.direction[None], ray.t_min, ray.t_max)
    if hits.triangle[0] < 0:
        return None
    k = int(hits.triangle[0])
    bary = np.array([1.0 - hits.b1[0] - hits.b2[0], hits.b1[0], hits.b2[0]])
    t = float(hits.t[0])
    position = ray.origin + t * ray.direction
    uv = normal = tangent = bitangent = None
    if mesh is not None:
        surf = surface_at(mesh, hits, tangents)
        position, uv = surf.position[0], surf.uv[0]
        normal, tangent, bitangent = surf.normal[0], surf.tangent[0], surf.bitangent[0]
    return Hit(t, k, bary, position, uv, normal, tangent, bitangent)


def occluded(bvh: BVH, origin, direction, t_max=math.inf, eps: float = 0.0) -> bool:
    """Any intersection with ``t`` in ``(eps, t_max)``."""
    return bool(occluded_many(bvh, np.asarray(origin)[None], np.asarray(direction)[None],
                              eps, t_max)[0])


def scene_diagonal(mesh: MeshData) -> float:
    return float(np.linalg.norm(mesh.positions.max(axis=0) - mesh.positions.min(axis=0)))


def shadow_epsilon(mesh: MeshData) -> float:
    return 1e-3 * scene_diagonal(mesh)


# ------------------------------------------------------------------- tangents

def _orthonormal_tangent(n: np.ndarray) -> np.ndarray:
    """Any unit vector perpendicular to each row of ``n``."""
    a = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t = a - n * np.einsum("ij,ij->i", a, n)[:, None]
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def tangent_frames(mesh: MeshData) -> np.ndarray:
    """Per-vertex unit tangents along dP/du, orthogonal to the vertex normal."""
    p = mesh.positions[mesh.indices]
    t = mesh.uvs[mesh.indices]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    du1 = t[:, 1, 0] - t[:, 0, 0]
    dv1 = t[:, 1, 1] - t[:, 0, 1]
    du2 = t[:, 2, 0] - t[:, 0, 0]
    dv2 = t[:, 2, 1] - t[:, 0, 1]
    det = du1 * dv2 - du2 * dv1
    ok = np.abs(det) > 1e-20
    r = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    ft = (e1 * dv2[:, None] - e2 * dv1[:, None]) * r[:, None]
    acc = np.zeros_like(mesh.positions)
    for k in range(3):
        np.add.at(acc, mesh.indices[:, k], ft)
    n = mesh.normals
    acc -= n * np.einsum("ij,ij->i", acc, n)[:, None]
    length = np.linalg.norm(acc, axis=1)
    good = length > 1e-12
    out = _orthonormal_tangent(n)
    out[good] = acc[good] / length[good, None]
    return out


# ------------------------------------------------------------------- surface

@dataclass
class SurfaceBatch:
    triangle: np.ndarray
    position: np.ndarray
    uv: np.ndarray
    normal: np.ndarray       # interpolated, unit
    face_normal: np.ndarray  # unit, winding order
    tangent: np.ndarray
    bitangent: np.ndarray
    duv_dp: np.ndarray       # (N, 2, 3): uv change per world displacement in the triangle plane


def surface_at(mesh: MeshData, hits: Hits, tangents: np.ndarray | None = None) -> SurfaceBatch:
    """Interpolated attributes at the hit rows of ``hits`` (misses dropped)."""
    sel = hits.triangle >= 0
    tri = hits.triangle[sel]
    b1, b2 = hits.b1[sel], hits.b2[sel]
    b0 = 1.0 - b1 - b2
    idx = mesh.indices[tri]
    w = np.stack([b0, b1, b2], axis=1)[..., None]
    p = mesh.positions[idx]
    position = (w * p).sum(axis=1)
    uv = (w * mesh.uvs[idx]).sum(axis=1)
    n = (w * mesh.normals[idx]).sum(axis=1)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    fn = np.cross(e1, e2)
    fl = np.linalg.norm(fn, axis=1, keepdims=True)
    fn = np.where(fl > 0, fn / np.where(fl > 0, fl, 1.0), n)
    if tangents is None:
        tangents = tangent_frames(mesh)
    t = (w * tangents[idx]).sum(axis=1)
    t -= n * np.einsum("ij,ij->i", t, n)[:, None]
    tl = np.linalg.norm(t, axis=1)
    bad = tl < 1e-12
    t[~bad] /= tl[~bad, None]
    if bad.any():
        t[bad] = _orthonormal_tangent(n[bad])
    b = np.cross(n, t)
    return SurfaceBatch(tri, position, uv, n, fn, t, b, _duv_dp(mesh, idx, e1, e2))


def _duv_dp(mesh: MeshData, idx, e1, e2) -> np.ndarray:
    """Linear map world displacement -> uv displacement for each triangle.

    Displacements are first projected onto the triangle plane.
    """
    t = mesh.uvs[idx]
    duv = np.stack([t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]], axis=2)  # (N, 2, 2)
    g = np.stack([e1, e2], axis=2)                                    # (N, 3, 2)
    gram = np.einsum("nki,nkj->nij", g, g)
    det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] * gram[:, 1, 0]
    ok = np.abs(det) > 1e-30
    inv = np.zeros_like(gram)
    inv[:, 0, 0] = gram[:, 1, 1]
    inv[:, 1, 1] = gram[:, 0, 0]
    inv[:, 0, 1] = -gram[:, 0, 1]
    inv[:, 1, 0] = -gram[:, 1, 0]
    inv /= np.where(ok, det, 1.0)[:, None, None]
    inv[~ok] = 0.0
    pinv = np.einsum("nij,nkj->nik", inv, g)  # (N, 2, 3): barycentric coords of a displacement
    return np.einsum("nij,njk->nik", duv, pinv)


# -------------------------------------------------------------------- camera

@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    fov_y: float                  # radians
    width: int
    height: int
    up: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        if not 0.0 < self.fov_y < math.pi:
            raise ValueError("fov_y must lie in (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")

    @property
    def world_from_camera(self) -> np.ndarray:
        """3x3 rotation whose columns are the camera x, y, z axes (camera looks down -z)."""
        f = self.look_at - self.position
        f /= np.linalg.norm(f)
        up = np.asarray(self.up, dtype=np.float64)
        x = np.cross(f, up)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(f, [0.0, 0.0, 1.0])
        x /= np.linalg.norm(x)
        y = np.cross(x, f)
        return np.stack([x, y, -f], axis=1)


def camera_directions(camera: Camera, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Unit world directions through film positions (pixel units, y down)."""
    tan_half = math.tan(0.5 * camera.fov_y)
    aspect = camera.width / camera.height
    sx = (2.0 * px / camera.width - 1.0) * tan_half * aspect
    sy = (1.0 - 2.0 * py / camera.height) * tan_half
    d = np.stack([sx, sy, -np.ones_like(sx)], axis=-1)
    d = d @ camera.world_from_camera.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def camera_ray(camera: Camera, pixel, jitter=(0.5, 0.5)) -> Ray:
    """Pinhole ray through ``pixel = (row, col)`` at sub-pixel offset ``jitter``.

    ``jitter = (0.5, 0.5)`` is the pixel center.
    """
    row, col = pixel
    if not (0 <= row < camera.height and 0 <= col < camera.width):
        raise ValueError(f"pixel {pixel} outside {camera.height}x{camera.width}")
    d = camera_directions(camera, np.array(col + jitter[0], dtype=np.float64),
                          np.array(row + jitter[1], dtype=np.float64))
    return Ray(camera.position.copy(), d)


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Center rays for every pixel, row-major; returns (origins, dirs) of shape (H*W, 3)."""
    rows, cols = np.mgrid[0:camera.height, 0:camera.width]
    d = camera_directions(camera, cols.reshape(-1) + 0.5, rows.reshape(-1) + 0.5)
    o = np.broadcast_to(camera.position, d.shape).copy()
    return o, d


def look_at_orbit(count: int, radius: float, elevation_deg, target=(0.0, 0.0, 0.0),
                  fov_deg: float = 40.0, width: int = 32, height: int = 32,
                  azimuth_offset_deg: float = 0.0) -> list[Camera]:
    """Cameras evenly spaced in azimuth; ``elevation_deg`` may be a scalar or per-camera list."""
    if count < 1:
        raise ValueError("orbit needs at least one camera")
    elev = np.broadcast_to(np.asarray(elevation_deg, dtype=np.float64), (count,))
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for i in range(count):
        az = math.radians(azimuth_offset_deg + 360.0 * i / count)
        el = math.radians(elev[i])
        pos = target + radius * np.array([math.cos(el) * math.cos(az), math.sin(el),
                                          math.cos(el) * math.sin(az)])
        cams.append(Camera(pos, target, math.radians(fov_deg), width, height))
    return cams
