"""Tonemapped image loss, regularizers and PSNR.

Every loss comes with its gradient, computed by hand: each function returns
``(value, grad...)`` or has a ``*_grad`` twin.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .imageio import Texture2D

SRGB_A = 0.055
SRGB_KNEE = 0.0031308
SRGB_SLOPE = 12.92
PSNR_CAP = 99.0


def srgb(y: np.ndarray) -> np.ndarray:
    """sRGB transfer function on linear values (negative inputs clamp to 0)."""
    y = np.maximum(np.asarray(y, dtype=np.float64), 0.0)
    hi = (1.0 + SRGB_A) * np.power(np.maximum(y, SRGB_KNEE), 1.0 / 2.4) - SRGB_A
    return np.where(y <= SRGB_KNEE, SRGB_SLOPE * y, hi)


def srgb_grad(y: np.ndarray) -> np.ndarray:
    y = np.maximum(np.asarray(y, dtype=np.float64), 0.0)
    hi = (1.0 + SRGB_A) / 2.4 * np.power(np.maximum(y, SRGB_KNEE), 1.0 / 2.4 - 1.0)
    return np.where(y <= SRGB_KNEE, SRGB_SLOPE, hi)


def tonemap(x: np.ndarray) -> np.ndarray:
    """T(x) = srgb(log(x + 1)); negative radiance is treated as 0."""
    return srgb(np.log1p(np.maximum(np.asarray(x, dtype=np.float64), 0.0)))


def tonemap_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    xp = np.maximum(x, 0.0)
    return np.where(x >= 0.0, srgb_grad(np.log1p(xp)) / (1.0 + xp), 0.0)


def _masked_mean_weights(shape, mask):
    if mask is None:
        return np.full(shape[:2], 1.0 / (shape[0] * shape[1]))
    m = np.asarray(mask, dtype=np.float64).reshape(shape[:2])
    n = m.sum()
    return m / n if n > 0 else m


def image_loss(img: np.ndarray, ref: np.ndarray, mask=None) -> tuple[float, np.ndarray]:
    """Mean L1 distance of tonemapped colors; returns ``(loss, d loss / d img)``.

    ``mask`` (H, W) restricts the mean to selected pixels; by default every
    pixel counts, including background.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"image shape {img.shape} does not match reference {ref.shape}")
    w = _masked_mean_weights(img.shape, mask)[..., None] / img.shape[-1]
    diff = tonemap(img) - tonemap(ref)
    loss = float((w * np.abs(diff)).sum())
    return loss, w * np.sign(diff) * tonemap_grad(img)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Simple luminance: channel mean."""
    return np.asarray(rgb).mean(axis=-1)


def hsv_value(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb).max(axis=-1)


def reg_light(c_d: np.ndarray, c_s: np.ndarray, ref: np.ndarray,
              mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Monochrome loss |Y(T(c_d + c_s)) - V(T(ref))| over covered pixels.

    Returns ``(value, grad)``; the gradient is the same for ``c_d`` and ``c_s``.
    """
    light = np.asarray(c_d, dtype=np.float64) + np.asarray(c_s, dtype=np.float64)
    w = _masked_mean_weights(light.shape, mask)
    diff = luminance(tonemap(light)) - hsv_value(tonemap(ref))
    val = float((w * np.abs(diff)).sum())
    g = (w * np.sign(diff))[..., None] * tonemap_grad(light) / light.shape[-1]
    return val, g


def jitter_uv(uv: np.ndarray, duv_dp: np.ndarray, rng: np.random.Generator,
              sigma: float = 0.01) -> np.ndarray:
    """Offset surface points by N(0, sigma) in world space and map the offset to UV."""
    eps = rng.normal(0.0, sigma, size=(uv.shape[0], 3))
    return uv + np.einsum("nij,nj->ni", duv_dp, eps)


def reg_smooth(tex: Texture2D, uv: np.ndarray, uv_jit: np.ndarray,
               channels=None) -> tuple[float, np.ndarray]:
    """Mean |k(x) - k(x + eps)| over points and channels, with texel gradient."""
    idx0, w0 = tex.taps(uv)
    idx1, w1 = tex.taps(uv_jit)
    a = tex.gather(idx0, w0)
    b = tex.gather(idx1, w1)
    sel = slice(None) if channels is None else list(channels)
    diff = a[:, sel] - b[:, sel]
    n = max(diff.size, 1)
    val = float(np.abs(diff).sum() / n)
    g = np.zeros_like(a)
    g[:, sel] = np.sign(diff) / n
    grad = tex.scatter(idx0, w0, g)
    tex.scatter(idx1, w1, -g, out=grad)
    return val, grad


def decode_normal(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map texel values in [0,1]^3 to unit tangent-space normals; also return |2t-1|."""
    raw = 2.0 * np.asarray(t, dtype=np.float64) - 1.0
    ln = np.linalg.norm(raw, axis=-1, keepdims=True)
    ln = np.maximum(ln, 1e-12)
    return raw / ln, ln


def decode_normal_vjp(n: np.ndarray, length: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient on the decoded normal back to the texel values."""
    return 2.0 * (g - n * (g * n).sum(-1, keepdims=True)) / length


def reg_normal_perturb(normal_map: Texture2D, uv: np.ndarray,
                       uv_jit: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of 1 - normalize(n'(x) + n'(x + eps)).z with texel gradient.

    Antiparallel pairs contribute 1 and no gradient.
    """
    idx0, w0 = normal_map.taps(uv)
    idx1, w1 = normal_map.taps(uv_jit)
    n0, l0 = decode_normal(normal_map.gather(idx0, w0))
    n1, l1 = decode_normal(normal_map.gather(idx1, w1))
    s = n0 + n1
    ls = np.linalg.norm(s, axis=-1, keepdims=True)
    ok = ls[:, 0] > 1e-12
    h = s / np.where(ok[:, None], ls, 1.0)
    count = max(len(uv), 1)
    val = float(np.where(ok, 1.0 - h[:, 2], 1.0).sum() / count)
    # d(-h_z)/ds = -(e_z - h h_z) / |s|
    ez = np.array([0.0, 0.0, 1.0])
    gs = -(ez - h * h[:, 2:3]) / np.where(ok[:, None], ls, 1.0)
    gs = np.where(ok[:, None], gs, 0.0) / count
    grad = normal_map.scatter(idx0, w0, decode_normal_vjp(n0, l0, gs))
    normal_map.scatter(idx1, w1, decode_normal_vjp(n1, l1, gs), out=grad)
    return val, grad


@dataclass
class LossWeights:
    kd: float = 0.1
    korm: float = 0.05
    normal: float = 0.25
    light: float = 0.15

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    total: float
    image: float
    kd: float = 0.0
    korm: float = 0.0
    normal: float = 0.0
    light: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def total_loss(image: float, kd: float = 0.0, korm: float = 0.0, normal: float = 0.0,
               light: float = 0.0, weights: LossWeights | None = None) -> LossReport:
    w = weights or LossWeights()
    total = image + w.kd * kd + w.korm * korm + w.normal * normal + w.light * light
    return LossReport(total=float(total), image=float(image), kd=float(kd), korm=float(korm),
                      normal=float(normal), light=float(light))


def psnr(img: np.ndarray, ref: np.ndarray, mask=None, tonemapped: bool = False) -> float:
    """PSNR in dB of tonemapped, [0,1]-clipped images (peak 1), capped at 99.

    Pass ``tonemapped=True`` when both inputs are already display values.
    """
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape {a.shape} does not match reference {b.shape}")
    if not tonemapped:
        a, b = tonemap(a), tonemap(b)
    a, b = np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        sq = sq[m]
    mse = float(sq.mean()) if sq.size else 0.0
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
