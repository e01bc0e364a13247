"""Adam over material textures and the probe, with shadow and denoiser ramps."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adjoint, denoise, envlight, loss, render
from .adjoint import GradientSet, SeedMode
from .geometry import Camera
from .imageio import save_pfm, save_png_tonemapped
from .material import R_MIN
from .render import Scene

log = logging.getLogger(__name__)

RAMP = 1750
SIGMA_MIN = 1e-4
SIGMA_MAX = 2.0
PROBE_MIN = 1e-5
NORMAL_Z_MIN = 0.5 + 1e-3   # texel value; decoded z stays > 0
PARAMS = ("kd", "korm", "normal", "probe")
LOG_FIELDS = ("iteration", "total", "image", "kd", "korm", "normal", "light", "tau", "sigma")


def tau_schedule(t: int, ramp: int = RAMP) -> float:
    return min(1.0, max(0.0, t / ramp)) if ramp > 0 else 1.0


def sigma_schedule(t: int, ramp: int = RAMP) -> float:
    frac = min(1.0, max(0.0, t / ramp)) if ramp > 0 else 1.0
    return SIGMA_MIN + frac * (SIGMA_MAX - SIGMA_MIN)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, x: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(x), np.zeros_like(x))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One bias-corrected Adam update in place; non-finite gradients skip the step."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        log.warning("non-finite gradient; skipping update of a %s tensor", param.shape)
        return param
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1 ** state.t)
    vhat = state.v / (1.0 - beta2 ** state.t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
    return param


def project_kd(x: np.ndarray) -> np.ndarray:
    np.clip(x, 0.0, 1.0, out=x)
    return x


def project_korm(x: np.ndarray) -> np.ndarray:
    np.clip(x[..., 0], 0.0, 1.0, out=x[..., 0])
    np.clip(x[..., 1], R_MIN, 1.0, out=x[..., 1])
    np.clip(x[..., 2], 0.0, 1.0, out=x[..., 2])
    return x


def project_normal(x: np.ndarray) -> np.ndarray:
    np.clip(x, 0.0, 1.0, out=x)
    np.maximum(x[..., 2], NORMAL_Z_MIN, out=x[..., 2])
    return x


def project_probe(x: np.ndarray) -> np.ndarray:
    np.maximum(x, PROBE_MIN, out=x)
    return x


PROJECT = {"kd": project_kd, "korm": project_korm, "normal": project_normal,
           "probe": project_probe}


def param_arrays(scene: Scene) -> dict:
    m = scene.materials
    return {"kd": m.kd.data, "korm": m.korm.data, "normal": m.normal_map.data,
            "probe": scene.probe.data}


@dataclass
class OptimConfig:
    iterations: int = 1000
    batch: int = 4
    spp: int = 32
    lr_material: float = 0.003
    lr_probe: float = 0.03
    seed: int = 0
    strategy: str = "mis"
    denoiser: str = "none"
    sigma: float | None = None        # fixed sigma instead of the ramp
    seed_mode: str = "correlated"
    ramp: int = RAMP
    optimize: tuple = PARAMS
    weights: loss.LossWeights = field(default_factory=loss.LossWeights)
    checkpoint_every: int = 0
    eval_spp: int = 256

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch < 1 or self.spp < 1:
            raise ValueError("batch and spp must be >= 1")
        if not (self.lr_material > 0.0 and self.lr_probe > 0.0):
            raise ValueError("learning rates must be > 0")
        if self.denoiser not in ("none", "bilateral"):
            raise ValueError(f"unknown denoiser {self.denoiser!r}")
        SeedMode(self.seed_mode)
        self.optimize = tuple(self.optimize)
        for p in self.optimize:
            if p not in PARAMS:
                raise ValueError(f"unknown parameter class {p!r}; expected {PARAMS}")
        if isinstance(self.weights, dict):
            self.weights = loss.LossWeights(**self.weights)

    def lr(self, name: str) -> float:
        return self.lr_probe if name == "probe" else self.lr_material


@dataclass
class View:
    camera: Camera
    reference: np.ndarray


@dataclass
class OptimResult:
    scene: Scene
    log: list
    diverged: bool = False

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow([r["iteration"]] + [repr(float(r[k])) for k in LOG_FIELDS[1:]])
    return buf.getvalue()


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0xE90C]).permutation(n)


def batch_indices(n_views: int, batch: int, t: int, seed: int) -> list:
    """Round-robin over shuffled epochs; iteration ``t`` takes slots ``t*batch ...``."""
    out = []
    for slot in range(t * batch, (t + 1) * batch):
        epoch, k = divmod(slot, n_views)
        out.append(int(_epoch_order(n_views, seed, epoch)[k]))
    return out


def view_loss_and_grads(scene: Scene, view: View, view_id: int, t: int, cfg: OptimConfig,
                        dist, grads: GradientSet) -> loss.LossReport:
    """Loss for one view; accumulates its gradient into ``grads``."""
    tau = tau_schedule(t, cfg.ramp)
    correlated = SeedMode(cfg.seed_mode) is SeedMode.CORRELATED
    aov = render.render_forward(scene, view.camera, cfg.spp, tau, cfg.seed, cfg.strategy,
                                iteration=t, view=view_id, distribution=dist,
                                keep_tape=correlated)
    w = cfg.weights
    if cfg.denoiser == "bilateral":
        sigma = cfg.sigma if cfg.sigma is not None else sigma_schedule(t, cfg.ramp)
        params = denoise.DenoiseParams(sigma)
        guides = denoise.guides_from_aovs(aov)
        c_d, c_s = denoise.denoise_aovs(aov, params, 1.0, guides)
    else:
        c_d, c_s = aov.c_d, aov.c_s
    c_d_filter = None
    if cfg.denoiser == "bilateral":
        c_d_filter = lambda c: denoise.bilateral_filter(c, guides, params)  # noqa: E731
    img = render.composite(aov, c_d, c_s)
    l_img, g_img = loss.image_loss(img, view.reference)
    g = adjoint.composite_backward(aov, g_img, c_d)
    l_light = 0.0
    if w.light > 0.0 and aov.mask.any():
        l_light, g_light = loss.reg_light(c_d, c_s, view.reference, aov.mask)
        g.c_d = g.c_d + w.light * g_light
        g.c_s = g.c_s + w.light * g_light
    if cfg.denoiser == "bilateral":
        g.c_d, g.c_s = denoise.denoise_backward(g.c_d, g.c_s, guides, params, 1.0)

    if correlated:
        adjoint.backward_from_tape(scene, aov.tape, g, grads)
    else:
        adjoint.render_backward(scene, view.camera, cfg.spp, tau, cfg.seed, SeedMode.DECORRELATED,
                                g, strategy=cfg.strategy, iteration=t, view=view_id,
                                distribution=dist, out=grads, c_d_filter=c_d_filter)

    l_kd = l_korm = l_n = 0.0
    prim = render.primary_visibility(scene, view.camera)
    if len(prim.pixels) and (w.kd > 0 or w.korm > 0 or w.normal > 0):
        surf = prim.surface
        rng = np.random.default_rng([cfg.seed, t, view_id, 0x5E6])
        uv_j = loss.jitter_uv(surf.uv, surf.duv_dp, rng)
        m = scene.materials
        if w.kd > 0 and "kd" in cfg.optimize:
            l_kd, gk = loss.reg_smooth(m.kd, surf.uv, uv_j)
            grads.kd += w.kd * gk
        if w.korm > 0 and "korm" in cfg.optimize:
            l_korm, gk = loss.reg_smooth(m.korm, surf.uv, uv_j, channels=(1, 2))
            grads.korm += w.korm * gk
        if w.normal > 0 and "normal" in cfg.optimize:
            l_n, gk = loss.reg_normal_perturb(m.normal_map, surf.uv, uv_j)
            grads.normal += w.normal * gk
    return loss.total_loss(l_img, l_kd, l_korm, l_n, l_light, w)


def _snapshot(scene: Scene) -> dict:
    return {k: v.copy() for k, v in param_arrays(scene).items()}


def _restore(scene: Scene, snap: dict) -> None:
    for k, v in param_arrays(scene).items():
        v[...] = snap[k]


def save_params(scene: Scene, out_dir: Path, prefix: str = "") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, arr in param_arrays(scene).items():
        save_pfm(out_dir / f"{prefix}{name}.pfm", arr)


def optimize(scene: Scene, views: list, config: OptimConfig, out_dir=None,
             callback=None) -> OptimResult:
    """Fit the scene's textures and probe to the reference views (in place)."""
    if not views:
        raise ValueError("need at least one training view")
    cfg = config
    out_dir = Path(out_dir) if out_dir is not None else None
    arrays = param_arrays(scene)
    states = {k: AdamState.like(arrays[k]) for k in cfg.optimize}
    lr_scale = 1.0
    halved = False
    checkpoint = (_snapshot(scene), {k: (s.m.copy(), s.v.copy(), s.t) for k, s in states.items()})
    rows = []
    t = 0
    while t < cfg.iterations:
        dist = envlight.build_distribution(scene.probe)
        grads = GradientSet.zeros_like(scene)
        ids = batch_indices(len(views), cfg.batch, t, cfg.seed)
        reports = [view_loss_and_grads(scene, views[i], i, t, cfg, dist, grads) for i in ids]
        rep = {k: float(np.mean([r.as_dict()[k] for r in reports]))
               for k in ("total", "image", "kd", "korm", "normal", "light")}
        if not (math.isfinite(rep["total"]) and grads.all_finite()):
            if halved:
                raise RuntimeError(f"optimization diverged again at iteration {t}")
            log.warning("non-finite loss at iteration %d; restoring checkpoint, halving lr", t)
            halved = True
            lr_scale *= 0.5
            _restore(scene, checkpoint[0])
            for k, s in states.items():
                s.m[...], s.v[...], s.t = checkpoint[1][k][0].copy(), checkpoint[1][k][1].copy(), checkpoint[1][k][2]
            continue
        grads.scale(1.0 / len(ids))
        for k in cfg.optimize:
            adam_step(arrays[k], getattr(grads, k), states[k], cfg.lr(k) * lr_scale)
            PROJECT[k](arrays[k])
        row = {"iteration": t, **rep, "tau": tau_schedule(t, cfg.ramp),
               "sigma": (cfg.sigma if cfg.sigma is not None else sigma_schedule(t, cfg.ramp))
               if cfg.denoiser == "bilateral" else 0.0}
        rows.append(row)
        if callback is not None:
            callback(t, row, scene)
        t += 1
        if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
            checkpoint = (_snapshot(scene),
                          {k: (s.m.copy(), s.v.copy(), s.t) for k, s in states.items()})
            if out_dir is not None:
                img = render.render_forward(scene, views[0].camera, cfg.spp, 1.0, cfg.seed,
                                            cfg.strategy).final()
                out_dir.mkdir(parents=True, exist_ok=True)
                save_png_tonemapped(out_dir / f"iter_{t}_final.png", img)
    if out_dir is not None:
        save_params(scene, out_dir)
        (out_dir / "log.csv").write_text(format_log(rows))
    return OptimResult(scene, rows, halved)


def render_views(scene: Scene, cameras: list, spp: int, seed: int = 0, strategy: str = "mis",
                 tau: float = 1.0, view_offset: int = 0) -> list:
    """Undenoised final images (references or evaluations)."""
    return [render.render_forward(scene, cam, spp, tau, seed, strategy,
                                  view=view_offset + i).final()
            for i, cam in enumerate(cameras)]


def evaluate_psnr(scene: Scene, cameras: list, references: list, spp: int, seed: int = 1,
                  strategy: str = "mis", masked: bool = False) -> float:
    """Mean PSNR over views of a high-spp render of the current parameters.

    With ``masked`` only pixels covered by geometry count.
    """
    imgs = render_views(scene, cameras, spp, seed, strategy, view_offset=1000)
    out = []
    for cam, a, b in zip(cameras, imgs, references):
        mask = None
        if masked:
            mask = render.primary_visibility(scene, cam).mask.reshape(cam.height, cam.width)
        out.append(loss.psnr(a, b, mask))
    return float(np.mean(out))
