"""Cross-bilateral filter on demodulated lighting, plus its transpose.

Weights depend only on the guides (depth, normal, depth gradient, mask),
so the filter is linear in color and its backward pass is the transposed
weight matrix.  Kernels live in ``_core`` (or ``_fallback``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend

MAX_RADIUS = 8
MAX_CHANNELS = 16


@dataclass
class DenoiseGuides:
    depth: np.ndarray    # (H, W)
    normal: np.ndarray   # (H, W, 3)
    dz: np.ndarray       # (H, W, 2): d depth / d x, d depth / d y in pixels
    mask: np.ndarray     # (H, W) uint8


@dataclass
class DenoiseParams:
    sigma: float = 2.0
    sigma_z: float = 1.0
    sigma_n: float = 128.0

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")

    @property
    def radius(self) -> int:
        return int(min(MAX_RADIUS, max(1, math.ceil(3.0 * self.sigma))))


def depth_gradient(depth: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Screen-space depth slope per pixel.

    One-sided differences: of the forward and backward difference, the one
    with the smaller magnitude is kept, so a pixel beside a depth step takes
    the slope of its own surface.  Neighbors off the image or uncovered are
    skipped; with neither available the slope is 0.
    """
    depth = np.asarray(depth, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    out = np.zeros(depth.shape + (2,))
    for axis, k in ((1, 0), (0, 1)):
        fwd = np.zeros_like(depth)
        bwd = np.zeros_like(depth)
        fok = np.zeros_like(m)
        bok = np.zeros_like(m)
        n = depth.shape[axis]
        a = [slice(None)] * 2
        b = [slice(None)] * 2
        a[axis], b[axis] = slice(0, n - 1), slice(1, n)
        a, b = tuple(a), tuple(b)
        fwd[a] = depth[b] - depth[a]
        fok[a] = m[a] & m[b]
        bwd[b] = depth[b] - depth[a]
        bok[b] = m[a] & m[b]
        both = fok & bok
        pick = np.where(np.abs(fwd) <= np.abs(bwd), fwd, bwd)
        out[..., k] = np.where(both, pick, np.where(fok, fwd, np.where(bok, bwd, 0.0)))
    return out


def make_guides(depth: np.ndarray, normal: np.ndarray, mask: np.ndarray) -> DenoiseGuides:
    m = np.asarray(mask, dtype=bool)
    depth = np.ascontiguousarray(np.where(m, depth, 0.0), dtype=np.float64)
    normal = np.ascontiguousarray(np.where(m[..., None], normal, 0.0), dtype=np.float64)
    return DenoiseGuides(depth, normal, np.ascontiguousarray(depth_gradient(depth, m)),
                         np.ascontiguousarray(m, dtype=np.uint8))


def guides_from_aovs(aovs) -> DenoiseGuides:
    return make_guides(aovs.depth, aovs.normal, aovs.mask)


def _channels(color: np.ndarray) -> np.ndarray:
    color = np.ascontiguousarray(color, dtype=np.float64)
    if color.ndim == 2:
        color = color[..., None]
    if color.shape[2] > MAX_CHANNELS:
        raise ValueError(f"at most {MAX_CHANNELS} channels per call")
    return color


def bilateral_filter(color: np.ndarray, guides: DenoiseGuides, params: DenoiseParams,
                     kernels=None) -> np.ndarray:
    """Normalized cross-bilateral filter; uncovered pixels pass through."""
    color = _channels(color)
    mod = kernels or _backend.kernels()
    out = np.empty_like(color)
    _backend.run_chunked(mod.bilateral_forward, color.shape[0], color, guides.depth,
                         guides.normal, guides.dz, guides.mask, float(params.sigma),
                         float(params.sigma_z), float(params.sigma_n), params.radius, out,
                         module=mod)
    return out


def bilateral_backward(grad_out: np.ndarray, guides: DenoiseGuides, params: DenoiseParams,
                       kernels=None) -> np.ndarray:
    """Transpose of :func:`bilateral_filter` applied to ``grad_out``."""
    grad_out = _channels(grad_out)
    mod = kernels or _backend.kernels()
    grad_in = np.zeros_like(grad_out)
    mod.bilateral_backward(grad_out, guides.depth, guides.normal, guides.dz, guides.mask,
                           float(params.sigma), float(params.sigma_z), float(params.sigma_n),
                           params.radius, grad_in)
    return grad_in


def denoise_aovs(aovs, params: DenoiseParams, blend: float = 1.0,
                 guides: DenoiseGuides | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``blend * filter(c) + (1 - blend) * c`` for both lighting buffers."""
    if not 0.0 <= blend <= 1.0:
        raise ValueError(f"blend must lie in [0, 1], got {blend}")
    if blend == 0.0:
        return aovs.c_d.copy(), aovs.c_s.copy()
    guides = guides or guides_from_aovs(aovs)
    stacked = np.concatenate([aovs.c_d, aovs.c_s], axis=-1)
    filt = bilateral_filter(stacked, guides, params)
    out = blend * filt + (1.0 - blend) * stacked
    return out[..., :3], out[..., 3:]


def denoise_backward(g_cd: np.ndarray, g_cs: np.ndarray, guides: DenoiseGuides,
                     params: DenoiseParams, blend: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients on the raw buffers given gradients on the denoised ones."""
    g = np.concatenate([g_cd, g_cs], axis=-1)
    if blend == 0.0:
        return g_cd.copy(), g_cs.copy()
    gin = blend * bilateral_backward(g, guides, params) + (1.0 - blend) * g
    return gin[..., :3], gin[..., 3:]
