"""Lambert + GGX metalness BSDF in split (demodulated diffuse, specular) form.

The diffuse lobe is returned without albedo; the ``kd * (1 - m)`` factor
lives in the albedo AOV and is applied at composite time.  Shading
quantities are batched: surface fields are ``(P, ...)`` and incoming
directions ``(P, S, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imageio import Texture2D
from .loss import decode_normal, decode_normal_vjp
from .sampling import ggx_d, smith_lambda

R_MIN = 0.04
F0_DIELECTRIC = 0.04
COS_EPS = 1e-6
INV_PI = 1.0 / math.pi


@dataclass
class MaterialTextures:
    kd: Texture2D
    korm: Texture2D
    normal_map: Texture2D
    specular: bool = True   # False gives a pure Lambertian material

    def __post_init__(self):
        for name in ("kd", "korm", "normal_map"):
            t = getattr(self, name)
            if not isinstance(t, Texture2D):
                t = Texture2D(t)
                setattr(self, name, t)
            if t.data.shape[2] != 3:
                raise ValueError(f"{name} texture must have 3 channels, got {t.data.shape[2]}")

    @classmethod
    def constant(cls, kd=(0.5, 0.5, 0.5), roughness=0.5, metalness=0.0,
                 size: int = 8) -> "MaterialTextures":
        kd_t = np.tile(np.asarray(kd, dtype=np.float64), (size, size, 1))
        korm = np.tile(np.array([1.0, roughness, metalness]), (size, size, 1))
        nm = np.tile(np.array([0.5, 0.5, 1.0]), (size, size, 1))
        return cls(Texture2D(kd_t), Texture2D(korm), Texture2D(nm))

    def copy(self) -> "MaterialTextures":
        return MaterialTextures(self.kd.copy(), self.korm.copy(), self.normal_map.copy(),
                                self.specular)

    def arrays(self) -> dict:
        return {"kd": self.kd.data, "korm": self.korm.data, "normal": self.normal_map.data}


@dataclass
class SurfacePoint:
    """Material inputs at P shading points plus what the adjoint needs."""

    n_s: np.ndarray        # shading normal
    n_g: np.ndarray        # interpolated normal after back-face flip
    wo: np.ndarray
    kd: np.ndarray
    r: np.ndarray
    m: np.ndarray
    a_demod: np.ndarray
    specular: bool = True
    # adjoint records
    kd_taps: tuple = None
    korm_taps: tuple = None
    nm_taps: tuple = None
    kd_free: np.ndarray = None   # (P, 3) True where kd is not clamped
    r_free: np.ndarray = None
    m_free: np.ndarray = None
    n_prime: np.ndarray = None
    n_prime_len: np.ndarray = None
    frame: tuple = None          # (t, b, n) used to lift n_prime
    q_len: np.ndarray = None

    @property
    def alpha(self) -> np.ndarray:
        return self.r * self.r

    @property
    def f0(self) -> np.ndarray:
        m = self.m[:, None]
        return F0_DIELECTRIC * (1.0 - m) + self.kd * m

    def __len__(self) -> int:
        return len(self.n_s)


def sample_material(mats: MaterialTextures, uv: np.ndarray, tangent=None, bitangent=None,
                    normal=None, wo=None) -> SurfacePoint:
    """Bilinear material lookups at ``uv`` with the normal map applied.

    The frame defaults to the identity (tangent space = world), and ``wo``
    to +z.  When ``wo`` lies below the interpolated normal the normal is
    flipped so the point is shaded as seen.
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    P = len(uv)
    if normal is None:
        normal = np.tile([0.0, 0.0, 1.0], (P, 1))
    if tangent is None or bitangent is None:
        tangent = np.tile([1.0, 0.0, 0.0], (P, 1))
        bitangent = np.tile([0.0, 1.0, 0.0], (P, 1))
    wo = normal.copy() if wo is None else np.asarray(wo, dtype=np.float64)
    flip = (wo * normal).sum(-1) < 0.0
    n_g = np.where(flip[:, None], -normal, normal)

    kd_taps = mats.kd.taps(uv)
    kd_raw = mats.kd.gather(*kd_taps)
    korm_taps = mats.korm.taps(uv)
    korm = mats.korm.gather(*korm_taps)
    nm_taps = mats.normal_map.taps(uv)
    n_prime, n_len = decode_normal(mats.normal_map.gather(*nm_taps))

    kd = np.clip(kd_raw, 0.0, 1.0)
    r = np.clip(korm[:, 1], R_MIN, 1.0)
    m = np.clip(korm[:, 2], 0.0, 1.0)
    q = n_prime[:, :1] * tangent + n_prime[:, 1:2] * bitangent + n_prime[:, 2:3] * n_g
    q_len = np.maximum(np.linalg.norm(q, axis=-1, keepdims=True), 1e-12)
    return SurfacePoint(
        n_s=q / q_len, n_g=n_g, wo=wo, kd=kd, r=r, m=m, a_demod=kd * (1.0 - m)[:, None],
        specular=mats.specular, kd_taps=kd_taps, korm_taps=korm_taps, nm_taps=nm_taps,
        kd_free=(kd_raw >= 0.0) & (kd_raw <= 1.0),
        r_free=(korm[:, 1] >= R_MIN) & (korm[:, 1] <= 1.0),
        m_free=(korm[:, 2] >= 0.0) & (korm[:, 2] <= 1.0),
        n_prime=n_prime, n_prime_len=n_len, frame=(tangent, bitangent, n_g), q_len=q_len)


def fresnel_schlick(f0: np.ndarray, cos_d: np.ndarray) -> np.ndarray:
    k = (1.0 - np.clip(cos_d, 0.0, 1.0)) ** 5
    return f0 + (1.0 - f0) * k[..., None]


@dataclass
class _SpecTerms:
    ci: np.ndarray
    co: np.ndarray
    x: np.ndarray
    h: np.ndarray
    a2: np.ndarray
    D: np.ndarray
    G: np.ndarray
    S: np.ndarray       # D G / (4 co): specular times cosine, before Fresnel
    schlick: np.ndarray  # (1 - wo.h)^5
    F: np.ndarray
    diff_on: np.ndarray
    spec_on: np.ndarray


def _terms(sp: SurfacePoint, wi: np.ndarray) -> _SpecTerms:
    wi = np.asarray(wi, dtype=np.float64)
    squeeze = wi.ndim == 2
    if squeeze:
        wi = wi[:, None, :]
    n = sp.n_s[:, None, :]
    wo = sp.wo[:, None, :]
    ci = (wi * n).sum(-1)
    co = (wo * n).sum(-1) * np.ones_like(ci)
    geo = (wi * sp.n_g[:, None, :]).sum(-1) > 0.0
    diff_on = geo & (ci > 0.0)
    spec_on = diff_on & (co > 0.0) & sp.specular
    h = wi + wo
    h /= np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
    x = (h * n).sum(-1)
    a2 = (sp.alpha ** 2)[:, None] * np.ones_like(ci)
    coc = np.maximum(co, COS_EPS)
    cic = np.maximum(ci, COS_EPS)
    D = ggx_d(x, np.sqrt(a2))
    G = 1.0 / (1.0 + smith_lambda(coc, np.sqrt(a2)) + smith_lambda(cic, np.sqrt(a2)))
    S = np.where(spec_on, D * G / (4.0 * coc), 0.0)
    schlick = (1.0 - np.clip((wo * h).sum(-1), 0.0, 1.0)) ** 5
    f0 = sp.f0[:, None, :]
    F = f0 + (1.0 - f0) * schlick[..., None]
    return _SpecTerms(ci, co, x, h, a2, D, G, S, schlick, F, diff_on, spec_on)


def eval_bsdf_split(sp: SurfacePoint, wi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """BSDF values ``(f_d_demod, f_s)`` for directions ``wi``.

    ``f_d_demod`` is 1/pi (albedo and the metal factor sit in ``a_demod``);
    ``f_s`` is the GGX lobe with height-correlated Smith G and Schlick F.
    """
    squeeze = np.asarray(wi).ndim == 2
    t = _terms(sp, wi)
    fd = np.where(t.diff_on, INV_PI, 0.0)
    fs = (t.S / np.maximum(t.ci, COS_EPS))[..., None] * t.F
    fs = np.where(t.spec_on[..., None], fs, 0.0)
    if squeeze:
        return fd[:, 0], fs[:, 0]
    return fd, fs


def shade(sp: SurfacePoint, wi: np.ndarray) -> tuple[np.ndarray, np.ndarray, _SpecTerms]:
    """Cosine-weighted lobes ``f_d * cos`` (P, S) and ``f_s * cos`` (P, S, 3)."""
    t = _terms(sp, wi)
    d = np.where(t.diff_on, t.ci * INV_PI, 0.0)
    s = t.S[..., None] * t.F
    return d, s, t


@dataclass
class SurfaceGrads:
    """Gradients on the per-point material inputs."""

    n_s: np.ndarray
    kd: np.ndarray
    r: np.ndarray
    m: np.ndarray

    @classmethod
    def zeros(cls, P: int) -> "SurfaceGrads":
        return cls(np.zeros((P, 3)), np.zeros((P, 3)), np.zeros(P), np.zeros(P))


def shade_backward(sp: SurfacePoint, wi: np.ndarray, g_d: np.ndarray, g_s: np.ndarray,
                   terms: _SpecTerms | None = None, out: SurfaceGrads | None = None) -> SurfaceGrads:
    """Adjoint of :func:`shade` w.r.t. n_s, kd, r, m; ``wi`` is held fixed.

    ``g_d`` (P, S) and ``g_s`` (P, S, 3) are upstream gradients on the two
    outputs.  Results are summed over samples.
    """
    wi = np.asarray(wi, dtype=np.float64)
    if wi.ndim == 2:
        wi, g_d, g_s = wi[:, None], np.asarray(g_d)[:, None], np.asarray(g_s)[:, None]
    t = terms if terms is not None else _terms(sp, wi)
    out = out if out is not None else SurfaceGrads.zeros(len(sp))
    wo = sp.wo[:, None, :]

    # diffuse: d(ci/pi)/dn = wi/pi
    gd = np.where(t.diff_on, g_d, 0.0) * INV_PI
    out.n_s += (gd[..., None] * wi).sum(1)

    # specular: value_c = S * F_c with ln S = ln D(x) + ln G(ci, co) - ln co
    on = t.spec_on
    A = np.where(on, (g_s * t.F).sum(-1), 0.0) * t.S
    a2 = t.a2
    x = t.x
    dd = x * x * (a2 - 1.0) + 1.0
    dlnD_dx = -4.0 * x * (a2 - 1.0) / dd
    dlnD_da2 = 1.0 / a2 - 2.0 * x * x / dd

    def lam_parts(c):
        c = np.maximum(c, COS_EPS)
        tan2 = np.maximum(1.0 - c * c, 0.0) / (c * c)
        root = np.sqrt(1.0 + a2 * tan2)
        return -a2 / (2.0 * c ** 3 * root), tan2 / (4.0 * root)

    dli_dc, dli_da2 = lam_parts(t.ci)
    dlo_dc, dlo_da2 = lam_parts(t.co)
    dlnG_dci = np.where(t.ci > COS_EPS, -t.G * dli_dc, 0.0)
    co_free = t.co > COS_EPS
    dlnG_dco = np.where(co_free, -t.G * dlo_dc, 0.0)
    dln_co = np.where(co_free, 1.0 / np.maximum(t.co, COS_EPS), 0.0)
    dlnS_da2 = dlnD_da2 - t.G * (dli_da2 + dlo_da2)

    gn = (A * dlnD_dx)[..., None] * t.h + (A * dlnG_dci)[..., None] * wi \
        + (A * (dlnG_dco - dln_co))[..., None] * wo
    out.n_s += gn.sum(1)
    g_a2 = (A * dlnS_da2).sum(1)
    out.r += g_a2 * 4.0 * sp.r ** 3

    gf0 = (np.where(on[..., None], g_s, 0.0) * t.S[..., None] * (1.0 - t.schlick)[..., None]).sum(1)
    m = sp.m[:, None]
    out.kd += gf0 * m
    out.m += (gf0 * (sp.kd - F0_DIELECTRIC)).sum(-1)
    return out


def material_backward(mats: MaterialTextures, sp: SurfacePoint, g: SurfaceGrads,
                      g_albedo: np.ndarray | None = None,
                      out: dict | None = None) -> dict:
    """Push per-point gradients (plus the albedo AOV's) onto texels.

    Returns ``{"kd", "korm", "normal"}`` texel gradients, accumulating into
    ``out`` when given.
    """
    g_kd = g.kd.copy()
    g_m = g.m.copy()
    if g_albedo is not None:
        g_kd += g_albedo * (1.0 - sp.m)[:, None]
        g_m -= (g_albedo * sp.kd).sum(-1)
    g_kd = np.where(sp.kd_free, g_kd, 0.0)
    g_korm = np.zeros((len(sp), 3))
    g_korm[:, 1] = np.where(sp.r_free, g.r, 0.0)
    g_korm[:, 2] = np.where(sp.m_free, g_m, 0.0)

    # n_s = normalize(q), q = T a + B b + N c, (a, b, c) = decode(texel)
    ns = sp.n_s
    gq = (g.n_s - ns * (g.n_s * ns).sum(-1, keepdims=True)) / sp.q_len
    t, b, n = sp.frame
    gnp = np.stack([(gq * t).sum(-1), (gq * b).sum(-1), (gq * n).sum(-1)], axis=-1)
    g_tex = decode_normal_vjp(sp.n_prime, sp.n_prime_len, gnp)

    if out is None:
        out = {"kd": None, "korm": None, "normal": None}
    out["kd"] = mats.kd.scatter(*sp.kd_taps, g_kd, out=out["kd"])
    out["korm"] = mats.korm.scatter(*sp.korm_taps, g_korm, out=out["korm"])
    out["normal"] = mats.normal_map.scatter(*sp.nm_taps, g_tex, out=out["normal"])
    return out


def modulate(albedo: np.ndarray, c_d: np.ndarray, c_s: np.ndarray) -> np.ndarray:
    """Recombine demodulated lighting: ``albedo * c_d + c_s``."""
    albedo, c_d, c_s = (np.asarray(a, dtype=np.float64) for a in (albedo, c_d, c_s))
    if not (albedo.shape == c_d.shape == c_s.shape):
        raise ValueError(f"shape mismatch {albedo.shape}, {c_d.shape}, {c_s.shape}")
    return albedo * c_d + c_s
