"""Reverse-mode gradients of rendered AOVs w.r.t. texels.

The backward pass walks a forward :class:`~mcinverse.render.Tape`.  In
correlated mode that tape is rebuilt with the forward keys (same samples);
in decorrelated mode with salted keys.  Only the integrand is
differentiated: probe radiance along each fixed direction and the
cosine-weighted BSDF.  Pdfs, directions and visibility are constants.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import envlight, render
from .geometry import Camera
from .material import SurfaceGrads, material_backward, shade_backward
from .render import Scene, Tape
from .sampling import StreamKey

DECORRELATE_SALT = 0xDEC0


class SeedMode(str, enum.Enum):
    CORRELATED = "correlated"
    DECORRELATED = "decorrelated"


PARAM_CLASSES = ("kd", "korm", "normal", "probe")


@dataclass
class GradientSet:
    kd: np.ndarray
    korm: np.ndarray
    normal: np.ndarray
    probe: np.ndarray

    @classmethod
    def zeros_like(cls, scene: Scene) -> "GradientSet":
        m = scene.materials
        return cls(np.zeros_like(m.kd.data), np.zeros_like(m.korm.data),
                   np.zeros_like(m.normal_map.data), np.zeros_like(scene.probe.data))

    def items(self):
        return ((k, getattr(self, k)) for k in PARAM_CLASSES)

    def __iadd__(self, other: "GradientSet") -> "GradientSet":
        for k, v in other.items():
            getattr(self, k)[...] += v
        return self

    def scale(self, s: float) -> "GradientSet":
        for _, v in self.items():
            v *= s
        return self

    def copy(self) -> "GradientSet":
        return GradientSet(*(v.copy() for _, v in self.items()))

    def flat(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for _, v in self.items()])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for _, v in self.items())


@dataclass
class AOVGrads:
    """Upstream gradients on the render outputs, each ``(H, W, 3)`` or None.

    ``final`` is the gradient on the composited image, kept so a decorrelated
    backward pass can rebuild the albedo term from its own ``c_d`` samples.
    """

    c_d: np.ndarray | None = None
    c_s: np.ndarray | None = None
    albedo: np.ndarray | None = None
    background: np.ndarray | None = None
    final: np.ndarray | None = None

    def check_finite(self) -> None:
        for name in ("c_d", "c_s", "albedo", "background"):
            g = getattr(self, name)
            if g is None:
                continue
            bad = ~np.isfinite(g)
            if bad.any():
                row, col = np.argwhere(bad)[0][:2]
                raise ValueError(f"non-finite gradient on {name} at pixel (row={row}, col={col})")


def composite_backward(aovs: render.AOVSet, g_final: np.ndarray, c_d=None) -> AOVGrads:
    """Split a gradient on the composited image into AOV gradients.

    ``c_d`` is the (possibly denoised) diffuse buffer that was composited;
    the returned ``c_d``/``c_s`` gradients refer to those composited buffers.
    """
    c_d = aovs.c_d if c_d is None else c_d
    m = aovs.mask[..., None]
    g = np.asarray(g_final, dtype=np.float64)
    return AOVGrads(c_d=np.where(m, g * aovs.albedo, 0.0), c_s=np.where(m, g, 0.0),
                    albedo=np.where(m, g * c_d, 0.0), background=np.where(m, 0.0, g),
                    final=g)


def backward_from_tape(scene: Scene, tape: Tape, grads: AOVGrads,
                       out: GradientSet | None = None) -> GradientSet:
    """Accumulate texel gradients of the recorded render into ``out``."""
    grads.check_finite()
    out = out if out is not None else GradientSet.zeros_like(scene)
    prim = tape.primary
    H, W = tape.camera.height, tape.camera.width

    def flat(g):
        return np.zeros((H * W, 3)) if g is None else np.asarray(g, dtype=np.float64).reshape(-1, 3)

    gcd, gcs = flat(grads.c_d)[prim.pixels], flat(grads.c_s)[prim.pixels]
    probe = tape.probe
    sp = tape.sp
    if sp is not None and len(sp):
        sg = SurfaceGrads.zeros(len(sp))
        for rec in tape.chunks:
            sel = rec.sel
            a = gcd[sel][:, None, :]
            b = gcs[sel][:, None, :]
            k = rec.weight[..., None]
            g_rad = k * (rec.fd_cos[..., None] * a + rec.fs_cos * b)
            live = rec.weight > 0.0
            if live.any():
                envlight.probe_adjoint(probe, rec.wi[live], g_rad[live], out=out.probe)
            kl = k * rec.radiance
            part = shade_backward(render._slice_sp(sp, sel), rec.wi, (kl * a).sum(-1), kl * b,
                                  terms=rec.terms)
            sg.n_s[sel] += part.n_s
            sg.kd[sel] += part.kd
            sg.r[sel] += part.r
            sg.m[sel] += part.m
        g_alb = flat(grads.albedo)[prim.pixels]
        tex = material_backward(tape.materials, sp, sg, g_alb,
                                {"kd": out.kd, "korm": out.korm, "normal": out.normal})
        out.kd, out.korm, out.normal = tex["kd"], tex["korm"], tex["normal"]
    miss = ~prim.mask
    if grads.background is not None and miss.any():
        envlight.probe_adjoint(probe, prim.dirs[miss], flat(grads.background)[miss], out=out.probe)
    return out


def stream_key(seed: int, iteration: int, view: int, mode) -> StreamKey:
    key = StreamKey(int(seed), int(iteration), int(view))
    if SeedMode(mode) is SeedMode.DECORRELATED:
        key = key.salted(DECORRELATE_SALT)
    return key


def render_backward(scene: Scene, camera: Camera, spp: int, tau: float, seed: int,
                    mode, dL_dAOV: AOVGrads, *, strategy: str = "mis", iteration: int = 0,
                    view: int = 0, stratified: bool = True, distribution=None,
                    out: GradientSet | None = None, c_d_filter=None) -> GradientSet:
    """Replay the estimator (same or fresh keys) and pull ``dL_dAOV`` back to texels.

    In decorrelated mode, when ``dL_dAOV.final`` is set, the albedo gradient
    is recomputed as ``final * c_d`` with the replayed ``c_d`` (passed through
    ``c_d_filter`` when the forward pass composited a denoised buffer), so no
    sampled factor of the gradient shares samples with the loss.
    """
    dL_dAOV.check_finite()
    key = stream_key(seed, iteration, view, mode)
    aov = render.render_forward(scene, camera, spp, tau, seed, strategy, iteration=iteration,
                                view=view, stratified=stratified, distribution=distribution,
                                keep_tape=True, key=key)
    if SeedMode(mode) is SeedMode.DECORRELATED and dL_dAOV.final is not None:
        c_d = aov.c_d if c_d_filter is None else c_d_filter(aov.c_d)
        albedo = np.where(aov.mask[..., None], dL_dAOV.final * c_d, 0.0)
        dL_dAOV = replace(dL_dAOV, albedo=albedo)
    return backward_from_tape(scene, aov.tape, dL_dAOV, out)


# ------------------------------------------------------------------ checks

GRADCHECK_CLASSES = ("kd", "roughness", "metalness", "normal", "probe")
_CLASS_ARRAY = {"kd": ("kd", None), "roughness": ("korm", 1), "metalness": ("korm", 2),
                "normal": ("normal", None), "probe": ("probe", None)}


@dataclass
class GradcheckRow:
    param: str
    index: tuple
    adjoint: float
    fd: float

    @property
    def rel_error(self) -> float:
        return abs(self.adjoint - self.fd) / max(abs(self.fd), 1e-300)


def _param_views(scene: Scene) -> dict:
    m = scene.materials
    return {"kd": m.kd.data, "korm": m.korm.data, "normal": m.normal_map.data,
            "probe": scene.probe.data}


def gradcheck(scene: Scene, camera: Camera, spp: int = 8, params=GRADCHECK_CLASSES,
              count: int = 20, seed: int = 0, step: float = 1e-4, min_fd: float = 1e-6,
              strategy: str = "mis", max_tries: int = 2000) -> list:
    """Compare correlated adjoint gradients with central differences.

    The loss is ``sum(g * final)`` for a fixed random ``g``.  Both FD
    evaluations reuse the forward seed, the light distribution and the
    sampling materials, so only the integrand moves.  ``count`` texels per
    class with ``|FD| > min_fd`` are checked; the step is ``step`` times
    ``max(1, |x|)``.
    """
    rng = np.random.default_rng([seed, 0x6C4])
    dist = envlight.build_distribution(scene.probe)
    smat = scene.materials.copy()
    g_img = rng.normal(size=(camera.height, camera.width, 3))

    def run(s, tape=False):
        return render.render_forward(s, camera, spp, 1.0, seed, strategy, distribution=dist,
                                     sampling_materials=smat, keep_tape=tape)

    aov = run(scene, True)
    grads = backward_from_tape(scene, aov.tape, composite_backward(aov, g_img))
    adj = {"kd": grads.kd, "korm": grads.korm, "normal": grads.normal, "probe": grads.probe}
    rows = []
    for cls in params:
        name, channel = _CLASS_ARRAY[cls]
        target = _param_views(scene)[name]
        found = 0
        for _ in range(max_tries):
            if found >= count:
                break
            idx = tuple(int(rng.integers(n)) for n in target.shape[:-1])
            idx += (int(rng.integers(target.shape[-1])) if channel is None else channel,)
            x0 = target[idx]
            h = step * max(1.0, abs(x0))
            vals = []
            for d in (h, -h):
                target[idx] = x0 + d
                vals.append(float((g_img * run(scene).final()).sum()))
            target[idx] = x0
            fd = (vals[0] - vals[1]) / (2.0 * h)
            if abs(fd) > min_fd:
                rows.append(GradcheckRow(cls, idx, float(adj[name][idx]), fd))
                found += 1
    return rows


@dataclass
class VarianceSummary:
    mode: str
    trials: int
    mean: np.ndarray
    variance: np.ndarray

    def median_variance(self, mask=None) -> float:
        v = self.variance if mask is None else self.variance[mask]
        return float(np.median(v))


def gradient_variance_probe(scene: Scene, views: list, spp: int, mode, trials: int = 100,
                            loss_fn=None, seed: int = 0, strategy: str = "mis",
                            params=PARAM_CLASSES) -> VarianceSummary:
    """Gradient statistics over ``trials`` independent global seeds.

    ``views`` is a list of ``(camera, reference)``.  ``loss_fn(img, ref)``
    returns ``(loss, d loss / d img)``; the default is the L1 loss on
    tonemapped images.  The gradient is taken on the composited image only
    (no regularizers, no denoiser, tau = 1).
    """
    from . import loss as _loss

    if trials < 30:
        raise ValueError(f"need at least 30 trials, got {trials}")
    mode = SeedMode(mode)
    loss_fn = loss_fn or _loss.image_loss
    dist = envlight.build_distribution(scene.probe)
    samples = []
    for trial in range(trials):
        s = seed * 1_000_003 + trial
        g = GradientSet.zeros_like(scene)
        for v, (cam, ref) in enumerate(views):
            aov = render.render_forward(scene, cam, spp, 1.0, s, strategy, view=v,
                                        distribution=dist,
                                        keep_tape=mode is SeedMode.CORRELATED)
            _, g_img = loss_fn(aov.final(), ref)
            up = composite_backward(aov, g_img)
            if mode is SeedMode.CORRELATED:
                backward_from_tape(scene, aov.tape, up, g)
            else:
                render_backward(scene, cam, spp, 1.0, s, mode, up, strategy=strategy, view=v,
                                distribution=dist, out=g)
        samples.append(np.concatenate([getattr(g, k).reshape(-1) for k in params]))
    arr = np.asarray(samples)
    return VarianceSummary(mode.value, trials, arr.mean(0), arr.var(0, ddof=1))
