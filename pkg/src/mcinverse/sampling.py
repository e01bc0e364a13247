"""Counter-based random streams, hemisphere samplers, and MIS weights.

Randomness is a pure function of a key ``(seed, iteration, view, pixel,
sample, technique, dimension)``, so a backward pass that rebuilds the same
keys sees exactly the forward pass's samples.  Local shading frames have
the normal on +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# technique ids used in keys
TECH_LIGHT = 0
TECH_GGX = 1
TECH_COSINE = 2

STRATEGIES = ("cosine", "bsdf", "light", "mis")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)


def _u64(x) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x))
    if a.dtype.kind == "i":
        return a.astype(np.int64).view(np.uint64)
    return a.astype(np.uint64)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def hash_key(*parts) -> np.ndarray:
    """Hash broadcastable integer arrays into one uint64 array."""
    h = np.zeros(1, dtype=np.uint64)
    for p in parts:
        h = _splitmix(h ^ _u64(p))
    return h


def to_unit(h: np.ndarray) -> np.ndarray:
    """uint64 -> float64 in [0, 1) using the top 53 bits."""
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def uniforms(key, count: int) -> np.ndarray:
    """``count`` replayable uniforms in [0, 1) for an integer key tuple."""
    return to_unit(hash_key(*key, np.arange(count)))


@dataclass(frozen=True)
class StreamKey:
    """Key prefix shared by every sample of one render call."""

    seed: int
    iteration: int = 0
    view: int = 0

    def salted(self, salt: int) -> "StreamKey":
        return StreamKey(int(hash_key(self.seed, salt, 0x5A17)[0] >> np.uint64(1)),
                         self.iteration, self.view)

    def uniform(self, pixel, sample, technique, dim) -> np.ndarray:
        """iid uniforms broadcast over ``pixel[:, None]`` and ``sample[None, :]``."""
        return to_unit(hash_key(self.seed, self.iteration, self.view,
                                pixel, sample, technique, dim))


TECH_CELLS = 15


def grid_shape(n: int) -> tuple[int, int]:
    """Grid ``a x b`` with ``a * b >= n`` for stratifying ``n`` samples.

    An exact factorization is used when its aspect ratio is at most 4;
    otherwise a near-square grid with fewer than ``a`` spare cells.
    """
    r = max(1, math.isqrt(n))
    for a in range(r, 0, -1):
        if n % a == 0:
            if n // a <= 4 * a:
                return a, n // a
            break
    return r, -(-n // r)


def _stratify(key: StreamKey, pix: np.ndarray, u0: np.ndarray, u1: np.ndarray, n: int,
              technique: int) -> tuple[np.ndarray, np.ndarray]:
    """Jitter ``n`` samples (columns of ``u0``/``u1``) into distinct grid cells.

    When the grid has spare cells, each pixel keeps a random subset of ``n``
    cells, so every sample stays uniform on the unit square.
    """
    a, b = grid_shape(n)
    cells = a * b
    if cells == n:
        cell = np.broadcast_to(np.arange(n)[None, :], u0.shape)
    else:
        order = key.uniform(pix, np.arange(cells)[None, :], TECH_CELLS, technique)
        cell = np.argsort(order, axis=1)[:, :n]
    return (cell % b + u0) / b, (cell // b + u1) / a


def sample_set_2d(key: StreamKey, pixels: np.ndarray, n: int, technique: int,
                  stratified: bool = True) -> np.ndarray:
    """``(P, n, 2)`` uniforms for a direction sampler.

    With ``stratified`` the samples of each pixel are jittered into distinct
    cells of a near-square grid (:func:`grid_shape`), which keeps each one
    uniform while spreading the set evenly.
    """
    pix = pixels[:, None]
    j = np.arange(n)[None, :]
    u0 = key.uniform(pix, j, technique, 0)
    u1 = key.uniform(pix, j, technique, 1)
    if stratified and n > 1:
        u0, u1 = _stratify(key, pix, u0, u1, n, technique)
    out = np.stack([u0, u1], axis=-1)
    return np.minimum(out, np.nextafter(1.0, 0.0))


def sample_set_2d_counts(key: StreamKey, pixels: np.ndarray, counts: np.ndarray, width: int,
                         technique: int, stratified: bool = True) -> np.ndarray:
    """``(P, width, 2)`` uniforms where pixel ``p`` uses its first ``counts[p]`` slots.

    Each pixel's used slots form the same stratified set that
    :func:`sample_set_2d` would draw for ``counts[p]`` samples.
    """
    pix = pixels[:, None]
    j = np.arange(width)[None, :]
    u0 = key.uniform(pix, j, technique, 0)
    u1 = key.uniform(pix, j, technique, 1)
    counts = np.asarray(counts, dtype=np.int64)
    if stratified:
        for n in np.unique(counts):
            if n <= 1:
                continue
            rows = counts == n
            u0[rows, :n], u1[rows, :n] = _stratify(key, pix[rows], u0[rows, :n], u1[rows, :n],
                                                   int(n), technique)
    out = np.stack([u0, u1], axis=-1)
    return np.minimum(out, np.nextafter(1.0, 0.0))


# ------------------------------------------------------------------ frames

def to_local(v: np.ndarray, t: np.ndarray, b: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.stack([(v * t).sum(-1), (v * b).sum(-1), (v * n).sum(-1)], axis=-1)


def to_world(v: np.ndarray, t: np.ndarray, b: np.ndarray, n: np.ndarray) -> np.ndarray:
    return v[..., :1] * t + v[..., 1:2] * b + v[..., 2:3] * n


def frame_from_normal(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (t, b) completing ``n`` (Duff et al. branchless basis)."""
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    bb = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * bb, -sign * n[..., 0]], axis=-1)
    b = np.stack([bb, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, b


# ---------------------------------------------------------------- cosine

def sample_cosine(u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u2 = np.asarray(u2, dtype=np.float64)
    r = np.sqrt(u2[..., 0])
    phi = 2.0 * math.pi * u2[..., 1]
    z = np.sqrt(np.maximum(0.0, 1.0 - u2[..., 0]))
    w = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return w, z / math.pi


def pdf_cosine(w: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(w)[..., 2], 0.0) / math.pi


# ------------------------------------------------------------------- GGX

def ggx_d(cos_h: np.ndarray, alpha) -> np.ndarray:
    a2 = np.asarray(alpha) ** 2
    d = cos_h * cos_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * d * d)


def smith_lambda(cos_t: np.ndarray, alpha) -> np.ndarray:
    c2 = np.maximum(cos_t * cos_t, 1e-12)
    tan2 = np.maximum(1.0 - c2, 0.0) / c2
    return 0.5 * (np.sqrt(1.0 + np.asarray(alpha) ** 2 * tan2) - 1.0)


def smith_g1(cos_t: np.ndarray, alpha) -> np.ndarray:
    return 1.0 / (1.0 + smith_lambda(cos_t, alpha))


def sample_ggx(wo: np.ndarray, alpha, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Visible-normal sampling (Heitz 2018) then mirror ``wo`` about the normal.

    ``wo`` is local with ``wo.z > 0``; returns ``(wi, pdf)`` where ``pdf`` is the
    density of the reflected direction (``wi`` may fall below the horizon).
    """
    wo = np.asarray(wo, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    vh = np.stack([alpha * wo[..., 0], alpha * wo[..., 1], wo[..., 2]], axis=-1)
    vh /= np.linalg.norm(vh, axis=-1, keepdims=True)
    lensq = vh[..., 0] ** 2 + vh[..., 1] ** 2
    inv = np.where(lensq > 0.0, 1.0 / np.sqrt(np.where(lensq > 0.0, lensq, 1.0)), 0.0)
    t1 = np.where((lensq > 0.0)[..., None],
                  np.stack([-vh[..., 1] * inv, vh[..., 0] * inv, np.zeros_like(inv)], axis=-1),
                  np.array([1.0, 0.0, 0.0]))
    t2 = np.cross(vh, t1)
    r = np.sqrt(u2[..., 0])
    phi = 2.0 * math.pi * u2[..., 1]
    p1 = r * np.cos(phi)
    p2 = r * np.sin(phi)
    s = 0.5 * (1.0 + vh[..., 2])
    p2 = (1.0 - s) * np.sqrt(np.maximum(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = np.sqrt(np.maximum(0.0, 1.0 - p1 * p1 - p2 * p2))
    nh = p1[..., None] * t1 + p2[..., None] * t2 + p3[..., None] * vh
    h = np.stack([alpha * nh[..., 0], alpha * nh[..., 1], np.maximum(0.0, nh[..., 2])], axis=-1)
    h /= np.linalg.norm(h, axis=-1, keepdims=True)
    wi = 2.0 * (wo * h).sum(-1, keepdims=True) * h - wo
    return wi, pdf_ggx(wo, wi, alpha, below_horizon=True)


def pdf_ggx(wo: np.ndarray, wi: np.ndarray, alpha, below_horizon: bool = False) -> np.ndarray:
    """Density of :func:`sample_ggx` at ``wi``: D(h) G1(wo) / (4 wo.z).

    Zero when ``wo`` is below the horizon, and (unless ``below_horizon``)
    when ``wi`` is.
    """
    wo = np.asarray(wo, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    h = wo + wi
    hl = np.linalg.norm(h, axis=-1, keepdims=True)
    h = h / np.where(hl > 0.0, hl, 1.0)
    coso = wo[..., 2]
    ok = (coso > 0.0) & (hl[..., 0] > 0.0) & (h[..., 2] > 0.0) & ((wo * h).sum(-1) > 0.0)
    if not below_horizon:
        ok &= wi[..., 2] > 0.0
    val = ggx_d(h[..., 2], alpha) * smith_g1(coso, alpha) / (4.0 * np.where(ok, coso, 1.0))
    return np.where(ok, val, 0.0)


# ------------------------------------------------------------------- MIS

def mis_weight(pdfs, counts, k: int):
    """Balance heuristic ``n_k p_k / sum_i n_i p_i`` (0 where the sum is 0).

    ``pdfs`` and ``counts`` are sequences over techniques; entries may be
    scalars or broadcastable arrays.
    """
    terms = [np.asarray(n, dtype=np.float64) * np.asarray(p, dtype=np.float64)
             for p, n in zip(pdfs, counts)]
    denom = sum(terms)
    w = np.where(denom > 0.0, terms[k] / np.where(denom > 0.0, denom, 1.0), 0.0)
    return w if np.ndim(w) else float(w)


def diffuse_fraction(metalness: np.ndarray) -> np.ndarray:
    """Share of the BSDF budget given to the cosine lobe."""
    return np.maximum(0.1, 1.0 - np.asarray(metalness, dtype=np.float64))


@dataclass(frozen=True)
class MisConfig:
    """Per-pixel sample budget over the light, cosine and GGX techniques.

    ``mis`` gives half the budget to the light; the BSDF half is split
    between cosine and GGX in proportion ``max(0.1, 1 - m)``, rounded, with
    at least one cosine sample.  ``bsdf`` uses that split for the whole
    budget; ``cosine`` and ``light`` use a single technique.
    """

    strategy: str = "mis"
    spp: int = 32

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}; "
                             f"expected one of {STRATEGIES}")
        if self.spp < 1:
            raise ValueError("spp must be >= 1")

    @property
    def n_light(self) -> int:
        if self.strategy == "light":
            return self.spp
        if self.strategy == "mis":
            return self.spp // 2
        return 0

    @property
    def n_bsdf(self) -> int:
        return self.spp - self.n_light

    def counts(self, metalness) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer (n_light, n_diffuse, n_specular) per pixel; they sum to ``spp``."""
        m = np.asarray(metalness, dtype=np.float64)
        nb = self.n_bsdf
        n_light = np.full(m.shape, self.n_light, dtype=np.int64)
        if self.strategy == "cosine" or nb == 0:
            return n_light, np.full(m.shape, nb, dtype=np.int64), np.zeros(m.shape, dtype=np.int64)
        n_diff = np.clip(np.rint(diffuse_fraction(m) * nb).astype(np.int64), 1, nb)
        return n_light, n_diff, nb - n_diff
