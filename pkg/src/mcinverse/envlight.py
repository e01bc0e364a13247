"""Equirectangular HDR probe and its importance-sampling distribution.

Layout: row 0 is the zenith (+y), ``v = theta / pi``; ``u = phi / 2pi`` with
``phi = atan2(z, x)``.  Probe lookups wrap in u and clamp in v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imageio import Texture2D


def dir_to_uv(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.arctan2(d[..., 2], d[..., 0])
    u = np.mod(phi / (2.0 * math.pi), 1.0)
    u = np.where(u >= 1.0, 0.0, u)
    return np.stack([u, theta / math.pi], axis=-1)


def uv_to_dir(uv: np.ndarray) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    phi = 2.0 * math.pi * uv[..., 0]
    theta = math.pi * uv[..., 1]
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), np.cos(theta), st * np.sin(phi)], axis=-1)


@dataclass
class EnvProbe:
    """HDR radiance on a lat-long grid (H rows by W columns, RGB)."""

    radiance: Texture2D

    def __post_init__(self):
        if not isinstance(self.radiance, Texture2D):
            self.radiance = Texture2D(self.radiance, address="wrap")
        self.radiance.address = "wrap"
        data = self.radiance.data
        if data.shape[2] != 3:
            raise ValueError(f"probe must be RGB, got {data.shape[2]} channels")
        if not np.all(np.isfinite(data)) or np.any(data < 0.0):
            raise ValueError("probe texels must be finite and >= 0")

    @classmethod
    def constant(cls, value, height: int = 16, width: int = 32) -> "EnvProbe":
        rgb = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls(Texture2D(np.tile(rgb, (height, width, 1)), address="wrap"))

    @property
    def data(self) -> np.ndarray:
        return self.radiance.data

    @property
    def shape(self) -> tuple[int, int]:
        return self.radiance.data.shape[:2]


def probe_eval(probe: EnvProbe, dirs: np.ndarray) -> np.ndarray:
    """Bilinear radiance lookup along unit directions ``(..., 3)``."""
    dirs = np.asarray(dirs, dtype=np.float64)
    out = probe.radiance.sample(dir_to_uv(dirs).reshape(-1, 2))
    return out.reshape(dirs.shape[:-1] + (3,))


def probe_taps(probe: EnvProbe, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Texel indices and weights of :func:`probe_eval` (for the adjoint)."""
    return probe.radiance.taps(dir_to_uv(np.asarray(dirs)).reshape(-1, 2))


def probe_adjoint(probe: EnvProbe, dirs: np.ndarray, grad: np.ndarray,
                  out: np.ndarray | None = None) -> np.ndarray:
    idx, w = probe_taps(probe, dirs)
    return probe.radiance.scatter(idx, w, np.asarray(grad).reshape(-1, 3), out=out)


@dataclass
class LightDistribution:
    """Piecewise-constant density over probe cells.

    A cell is sampled with probability ``cell_prob[i, j]`` and a direction
    inside it is uniform in solid angle, so the density is
    ``cell_prob / cell_solid_angle``.
    """

    row_cdf: np.ndarray       # (H + 1,)
    col_cdf: np.ndarray       # (H, W + 1)
    cell_prob: np.ndarray     # (H, W)
    cos_edges: np.ndarray     # (H + 1,) cos(theta) at row boundaries
    solid_angle: np.ndarray   # (H,) per cell in the row
    uniform: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.cell_prob.shape


def _cdf(w: np.ndarray) -> np.ndarray:
    c = np.concatenate([np.zeros(w.shape[:-1] + (1,)), np.cumsum(w, axis=-1)], axis=-1)
    total = c[..., -1:]
    n = w.shape[-1]
    flat = np.broadcast_to(np.arange(n + 1) / n, c.shape)
    return np.where(total > 0.0, c / np.where(total > 0.0, total, 1.0), flat)


def build_distribution(probe: EnvProbe | np.ndarray) -> LightDistribution:
    """Cell weights are luminance times sin(theta) at the row center.

    An all-black probe falls back to weights proportional to cell solid
    angle, i.e. uniform over the sphere.
    """
    data = probe.data if isinstance(probe, EnvProbe) else np.asarray(probe, dtype=np.float64)
    H, W = data.shape[:2]
    lum = np.maximum(data[..., :3].mean(axis=-1), 0.0)
    theta_c = math.pi * (np.arange(H) + 0.5) / H
    weights = lum * np.sin(theta_c)[:, None]
    cos_edges = np.cos(math.pi * np.arange(H + 1) / H)
    solid = (2.0 * math.pi / W) * (cos_edges[:-1] - cos_edges[1:])
    uniform = not weights.sum() > 0.0
    if uniform:
        weights = np.broadcast_to(solid[:, None], (H, W)).copy()
    rows = weights.sum(axis=1)
    cell_prob = weights / weights.sum()
    return LightDistribution(_cdf(rows), _cdf(weights), cell_prob, cos_edges, solid, uniform)


def _pick(cdf: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse CDF on a (..., n+1) table; returns (bin, remapped remainder)."""
    n = cdf.shape[-1] - 1
    if cdf.ndim == 1:
        k = np.searchsorted(cdf, u, side="right") - 1
    else:
        k = (cdf <= u[:, None]).sum(axis=1) - 1
    k = np.clip(k, 0, n - 1)
    # skip zero-width bins landed on by u == cdf[k]
    if cdf.ndim == 1:
        lo, hi = cdf[k], cdf[k + 1]
    else:
        rows = np.arange(len(u))
        lo, hi = cdf[rows, k], cdf[rows, k + 1]
    width = hi - lo
    rem = np.where(width > 0.0, (u - lo) / np.where(width > 0.0, width, 1.0), 0.5)
    return k, np.clip(rem, 0.0, np.nextafter(1.0, 0.0))


def sample_light(dist: LightDistribution, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map uniforms ``(..., 2)`` to world directions and solid-angle pdfs."""
    u2 = np.asarray(u2, dtype=np.float64)
    shape = u2.shape[:-1]
    u = u2.reshape(-1, 2)
    H, W = dist.shape
    row, du = _pick(dist.row_cdf, u[:, 0])
    col, dv = _pick(dist.col_cdf[row], u[:, 1])
    cos_t = dist.cos_edges[row] + du * (dist.cos_edges[row + 1] - dist.cos_edges[row])
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = 2.0 * math.pi * (col + dv) / W
    d = np.stack([sin_t * np.cos(phi), cos_t, sin_t * np.sin(phi)], axis=-1)
    pdf = dist.cell_prob[row, col] / dist.solid_angle[row]
    return d.reshape(shape + (3,)), pdf.reshape(shape)


def _cell_of(dist: LightDistribution, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    H, W = dist.shape
    uv = dir_to_uv(d)
    col = np.clip((uv[..., 0] * W).astype(np.int64), 0, W - 1)
    # row from cos(theta) so that sampled directions map back to their own row
    cos_t = np.clip(d[..., 1], -1.0, 1.0)
    row = np.searchsorted(-dist.cos_edges, -cos_t, side="right") - 1
    return np.clip(row, 0, H - 1), col


def pdf_light(dist: LightDistribution, dirs: np.ndarray) -> np.ndarray:
    d = np.asarray(dirs, dtype=np.float64)
    row, col = _cell_of(dist, d)
    return dist.cell_prob[row, col] / dist.solid_angle[row]
