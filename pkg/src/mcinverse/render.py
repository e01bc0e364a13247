"""Monte Carlo direct illumination from an environment probe.

Shading happens at the pixel-center primary hit.  Each pixel draws a fixed
number of samples from each technique (probe, cosine lobe, GGX visible
normals; see :class:`~mcinverse.sampling.MisConfig`) and weights every
sample by ``1 / sum_k n_k p_k``, the balance heuristic folded into the
estimator.

Directions, pdfs and visibility are computed once and recorded on a
:class:`Tape`; the adjoint differentiates only the probe radiance and the
cosine-weighted BSDF along those fixed directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import envlight, geometry, sampling
from .envlight import EnvProbe, LightDistribution
from .geometry import BVH, Camera
from .imageio import MeshData
from .material import MaterialTextures, SurfacePoint, sample_material, shade
from .sampling import MisConfig, StreamKey

PDF_EPS = 1e-8
SAMPLES_PER_CHUNK = 1 << 16


@dataclass
class Scene:
    """Fixed geometry plus the optimizable materials and probe."""

    mesh: MeshData
    materials: MaterialTextures
    probe: EnvProbe
    bvh: BVH | None = None
    tangents: np.ndarray | None = None
    _primary: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.bvh is None and self.mesh.num_triangles > 0:
            self.bvh = geometry.build_bvh(self.mesh)
        if self.tangents is None and self.mesh.num_triangles > 0:
            self.tangents = geometry.tangent_frames(self.mesh)

    @property
    def empty(self) -> bool:
        return self.mesh.num_triangles == 0

    @property
    def shadow_eps(self) -> float:
        return 0.0 if self.empty else geometry.shadow_epsilon(self.mesh)

    def with_params(self, materials: MaterialTextures | None = None,
                    probe: EnvProbe | None = None) -> "Scene":
        """Same geometry (and cached acceleration data), other parameters."""
        return Scene(self.mesh, materials or self.materials, probe or self.probe,
                     self.bvh, self.tangents, self._primary)


@dataclass
class Primary:
    """Pixel-center visibility for one camera; geometry is fixed so this is cached."""

    pixels: np.ndarray           # flat indices of covered pixels
    surface: geometry.SurfaceBatch | None
    wo: np.ndarray
    depth: np.ndarray            # (H*W,), 0 on misses
    dirs: np.ndarray             # (H*W, 3) camera ray directions
    mask: np.ndarray             # (H*W,) bool


def _camera_key(camera: Camera) -> tuple:
    return (tuple(camera.position), tuple(camera.look_at), camera.fov_y, camera.width,
            camera.height, tuple(camera.up))


def primary_visibility(scene: Scene, camera: Camera) -> Primary:
    key = _camera_key(camera)
    hit = scene._primary.get(key)
    if hit is not None:
        return hit
    org, dirs = geometry.camera_rays(camera)
    n = len(dirs)
    if scene.empty:
        prim = Primary(np.zeros(0, dtype=np.int64), None, np.zeros((0, 3)), np.zeros(n),
                       dirs, np.zeros(n, dtype=bool))
    else:
        hits = geometry.intersect_many(scene.bvh, org, dirs)
        mask = hits.mask
        surf = geometry.surface_at(scene.mesh, hits, scene.tangents)
        depth = np.where(mask, hits.t, 0.0)
        prim = Primary(np.flatnonzero(mask), surf, -dirs[mask], depth, dirs, mask)
    scene._primary[key] = prim
    return prim


@dataclass
class AOVSet:
    """Per-pixel render outputs, all ``(H, W, C)``."""

    c_d: np.ndarray
    c_s: np.ndarray
    albedo: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    background: np.ndarray
    tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape[:2]

    def final(self, c_d: np.ndarray | None = None, c_s: np.ndarray | None = None) -> np.ndarray:
        return composite(self, c_d, c_s)


def composite(aovs: AOVSet, c_d: np.ndarray | None = None,
              c_s: np.ndarray | None = None) -> np.ndarray:
    """``mask * (albedo * c_d + c_s) + (1 - mask) * background``."""
    c_d = aovs.c_d if c_d is None else c_d
    c_s = aovs.c_s if c_s is None else c_s
    m = aovs.mask[..., None]
    return np.where(m, aovs.albedo * c_d + c_s, aovs.background)


@dataclass
class ShadowConfig:
    tau: float = 1.0

    def __post_init__(self):
        self.tau = float(min(1.0, max(0.0, self.tau)))


def shadow_term(scene: Scene, x: np.ndarray, n_face: np.ndarray, w: np.ndarray,
                tau: float) -> np.ndarray:
    """``1 - tau`` where the ray from ``x`` (offset along the face normal) is blocked, else 1."""
    tau = ShadowConfig(tau).tau
    w = np.asarray(w, dtype=np.float64).reshape(-1, 3)
    x = np.broadcast_to(np.asarray(x, dtype=np.float64).reshape(-1, 3), w.shape)
    n_face = np.broadcast_to(np.asarray(n_face, dtype=np.float64).reshape(-1, 3), w.shape)
    out = np.ones(len(w))
    if tau == 0.0 or scene.empty or len(w) == 0:
        return out
    side = np.where((w * n_face).sum(-1) >= 0.0, 1.0, -1.0)
    org = x + (scene.shadow_eps * side)[:, None] * n_face
    blocked = geometry.occluded_many(scene.bvh, org, w)
    out[blocked] = 1.0 - tau
    return out


@dataclass
class ChunkRecord:
    """Everything the adjoint needs for one pixel chunk."""

    sel: slice                   # rows into the covered-pixel arrays
    wi: np.ndarray               # (P, S, 3)
    weight: np.ndarray           # (P, S) H / (sum_k n_k p_k), 0 for dead samples
    radiance: np.ndarray         # (P, S, 3) probe radiance along wi
    fd_cos: np.ndarray           # (P, S)
    fs_cos: np.ndarray           # (P, S, 3)
    terms: object = None         # shading intermediates reused by the adjoint


@dataclass
class Tape:
    camera: Camera
    primary: Primary
    sp: SurfacePoint | None
    chunks: list
    materials: MaterialTextures
    probe: EnvProbe


def _sample_directions(ssp: SurfacePoint, dist: LightDistribution, mis: MisConfig,
                       key: StreamKey, pix: np.ndarray, stratified: bool):
    """Directions ``(P, spp, 3)`` and balance-heuristic weights for one chunk.

    Slots are laid out light first, then cosine, then GGX; the cosine/GGX
    boundary varies per pixel with metalness.  A sample's weight is
    ``1 / sum_k n_k p_k(w)`` over all three techniques.
    """
    P = len(pix)
    n_l, n_d, n_g = mis.counts(ssp.m)
    nL, nB = mis.n_light, mis.n_bsdf
    n = ssp.n_s[:, None, :]
    t, b = sampling.frame_from_normal(ssp.n_s)
    t, b = t[:, None, :], b[:, None, :]
    wo_l = sampling.to_local(ssp.wo[:, None, :], t, b, n)
    alpha = ssp.alpha[:, None]

    wi = np.empty((P, mis.spp, 3))
    own = np.ones((P, mis.spp), dtype=bool)
    if nL:
        u = sampling.sample_set_2d(key, pix, nL, sampling.TECH_LIGHT, stratified)
        wi[:, :nL], _ = envlight.sample_light(dist, u)
    if nB:
        slot = np.arange(nB)[None, :]
        is_cos = slot < n_d[:, None]
        uc = sampling.sample_set_2d_counts(key, pix, n_d, nB, sampling.TECH_COSINE, stratified)
        wc, _ = sampling.sample_cosine(uc)
        wb = wc
        if n_g.any():
            # GGX slot j uses the technique's sample index j - n_d
            ug = sampling.sample_set_2d_counts(key, pix, n_g, nB, sampling.TECH_GGX, stratified)
            shift = (slot - n_d[:, None]) % nB
            ug = np.take_along_axis(ug, shift[..., None], axis=1)
            wg, pg = sampling.sample_ggx(np.broadcast_to(wo_l, wc.shape), alpha, ug)
            wb = np.where(is_cos[..., None], wc, wg)
            own[:, nL:] = is_cos | (pg > 0.0)
        wb = sampling.to_world(wb, t, b, n)
        wi[:, nL:] = wb / np.maximum(np.linalg.norm(wb, axis=-1, keepdims=True), 1e-300)

    wl = sampling.to_local(wi, t, b, n)
    denom = np.zeros((P, mis.spp))
    if nL:
        denom += n_l[:, None] * envlight.pdf_light(dist, wi)
    if nB:
        denom += n_d[:, None] * sampling.pdf_cosine(wl)
        if n_g.any():
            denom += n_g[:, None] * sampling.pdf_ggx(np.broadcast_to(wo_l, wl.shape), wl, alpha,
                                                     below_horizon=True)
    alive = own & (denom > PDF_EPS)
    weight = np.where(alive, 1.0 / np.where(alive, denom, 1.0), 0.0)
    return wi, weight


def estimate_direct(scene: Scene, surf_sel, sp: SurfacePoint, ssp: SurfacePoint,
                    dist: LightDistribution, mis: MisConfig, tau: float, key: StreamKey,
                    pix: np.ndarray, stratified: bool = True,
                    sel: slice = slice(None)) -> tuple[np.ndarray, np.ndarray, ChunkRecord]:
    """Estimate demodulated diffuse and specular lighting at P points.

    ``sp`` supplies the shaded (differentiated) material, ``ssp`` the
    material that drives sampling.  They are the same object except in
    finite-difference checks, where the sample set must stay fixed.
    """
    wi, weight = _sample_directions(ssp, dist, mis, key, pix, stratified)
    fd_cos, fs_cos, terms = shade(sp, wi)
    live = (weight > 0.0) & ((fd_cos > 0.0) | (fs_cos.max(-1) > 0.0))
    if tau > 0.0:
        P, S = weight.shape
        pos = np.broadcast_to(surf_sel.position[:, None, :], (P, S, 3))
        fn = np.broadcast_to(surf_sel.face_normal[:, None, :], (P, S, 3))
        h = np.ones((P, S))
        h[live] = shadow_term(scene, pos[live], fn[live], wi[live], tau)
        weight = weight * h
    weight = np.where(live, weight, 0.0)
    radiance = np.zeros(wi.shape)
    radiance[live] = envlight.probe_eval(scene.probe, wi[live])
    wl = weight[..., None] * radiance
    c_d = (wl * fd_cos[..., None]).sum(1)
    c_s = (wl * fs_cos).sum(1)
    return c_d, c_s, ChunkRecord(sel, wi, weight, radiance, fd_cos, fs_cos, terms)


def _slice_surface(surf: geometry.SurfaceBatch, sel: slice):
    return geometry.SurfaceBatch(*(getattr(surf, f)[sel] for f in
                                   ("triangle", "position", "uv", "normal", "face_normal",
                                    "tangent", "bitangent", "duv_dp")))


def _slice_sp(sp: SurfacePoint, sel: slice) -> SurfacePoint:
    return SurfacePoint(sp.n_s[sel], sp.n_g[sel], sp.wo[sel], sp.kd[sel], sp.r[sel], sp.m[sel],
                        sp.a_demod[sel], sp.specular)


def render_forward(scene: Scene, camera: Camera, spp: int = 32, tau: float = 1.0, seed: int = 0,
                   strategy: str = "mis", *, iteration: int = 0, view: int = 0,
                   stratified: bool = True, distribution: LightDistribution | None = None,
                   sampling_materials: MaterialTextures | None = None,
                   keep_tape: bool = False, key: StreamKey | None = None) -> AOVSet:
    """Render AOVs for one camera.

    ``distribution`` and ``sampling_materials`` override what drives
    importance sampling (default: the scene's own probe and materials).
    """
    mis = MisConfig(strategy, int(spp))
    tau = ShadowConfig(tau).tau
    key = key or StreamKey(int(seed), int(iteration), int(view))
    H, W = camera.height, camera.width
    prim = primary_visibility(scene, camera)
    dist = distribution or envlight.build_distribution(scene.probe)

    c_d = np.zeros((H * W, 3))
    c_s = np.zeros((H * W, 3))
    albedo = np.zeros((H * W, 3))
    normal = np.zeros((H * W, 3))
    sp = None
    chunks = []
    P = len(prim.pixels)
    if P:
        surf = prim.surface
        sp = sample_material(scene.materials, surf.uv, surf.tangent, surf.bitangent,
                             surf.normal, prim.wo)
        ssp = sp if sampling_materials is None else sample_material(
            sampling_materials, surf.uv, surf.tangent, surf.bitangent, surf.normal, prim.wo)
        step = max(1, SAMPLES_PER_CHUNK // mis.spp)
        for lo in range(0, P, step):
            sel = slice(lo, min(P, lo + step))
            d, s, rec = estimate_direct(scene, _slice_surface(surf, sel), _slice_sp(sp, sel),
                                        _slice_sp(ssp, sel), dist, mis, tau, key,
                                        prim.pixels[sel], stratified, sel)
            c_d[prim.pixels[sel]] = d
            c_s[prim.pixels[sel]] = s
            if keep_tape:
                chunks.append(rec)
        albedo[prim.pixels] = sp.a_demod
        normal[prim.pixels] = sp.n_s

    background = np.zeros((H * W, 3))
    miss = ~prim.mask
    background[miss] = envlight.probe_eval(scene.probe, prim.dirs[miss])
    aov = AOVSet(c_d.reshape(H, W, 3), c_s.reshape(H, W, 3), albedo.reshape(H, W, 3),
                 normal.reshape(H, W, 3), prim.depth.reshape(H, W), prim.mask.reshape(H, W),
                 background.reshape(H, W, 3))
    if keep_tape:
        aov.tape = Tape(camera, prim, sp, chunks, scene.materials, scene.probe)
    return aov


def irradiance_oracle(scene: Scene, position: np.ndarray, normal: np.ndarray,
                      face_normal: np.ndarray, tau: float, n: int = 1_000_000,
                      seed: int = 12345, batch: int = 1 << 17) -> np.ndarray:
    """Uniform-hemisphere quadrature of (1/pi) * L * H * cos at one point.

    Independent of the renderer's samplers: plain numpy RNG, uniform
    directions, brute-force shadow rays.  Returns RGB ``c_d``.
    """
    rng = np.random.default_rng(seed)
    t, b = sampling.frame_from_normal(np.asarray(normal, dtype=np.float64)[None])
    acc = np.zeros(3)
    done = 0
    while done < n:
        k = min(batch, n - done)
        u = rng.random((k, 2))
        z = u[:, 0]
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * u[:, 1]
        loc = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        w = sampling.to_world(loc, t, b, np.asarray(normal)[None])
        vis = shadow_term(scene, position, face_normal, w, tau)
        val = envlight.probe_eval(scene.probe, w) * (vis * z / math.pi)[:, None]
        acc += val.sum(0)
        done += k
    return acc * (2.0 * math.pi) / n
