"""Inverse-rendering fixtures and the ablation suites built on them.

Every suite returns a list of row dicts and can write them as CSV.  All
randomness flows from the ``seed`` argument, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import adjoint, fixtures, render
from .envlight import EnvProbe
from .imageio import Texture2D
from .optimize import OptimConfig, View, evaluate_psnr, optimize, render_views
from .render import Scene

REF_SPP = 2048
EVAL_SPP = 256

CHECKER_A = (0.8, 0.7, 0.3)
CHECKER_B = (0.2, 0.3, 0.6)


@dataclass
class Problem:
    """Ground truth, a starting point and the views to fit."""

    name: str
    truth: Scene
    init: Scene
    train: list
    held_cameras: list
    held_refs: list
    optimize: tuple

    def fresh(self) -> Scene:
        """Copy of the initial scene that a run may modify in place."""
        m = self.init.materials.copy()
        return self.init.with_params(m, EnvProbe(Texture2D(self.init.probe.data.copy(),
                                                           address="wrap")))


def _views(scene: Scene, cameras: list, spp: int, seed: int) -> list:
    refs = render_views(scene, cameras, spp, seed=seed)
    return [View(c, r) for c, r in zip(cameras, refs)]


def _sphere_cameras(n_views: int, size: int):
    train = fixtures.orbit(n_views, 3.2, ([30.0, -30.0] * n_views)[:n_views], size)
    held = fixtures.orbit(4, 3.2, [10.0, -10.0, 45.0, -45.0], size, offset=11.25)
    return train, held


def kd_problem(size: int = 32, n_views: int = 16, ref_spp: int = REF_SPP,
               seed: int = 0) -> Problem:
    """Diffuse sphere, 8x8 checker kd, known sky probe; kd starts at gray."""
    gt = fixtures.checker(8, 8, CHECKER_A, CHECKER_B)
    probe = fixtures.sky_probe(16, 32)
    truth = Scene(fixtures.uv_sphere(), fixtures.materials(gt, 0.5, 0.0), probe)
    init = truth.with_params(fixtures.materials((0.5, 0.5, 0.5), 0.5, 0.0, size=8))
    train, held = _sphere_cameras(n_views, size)
    return Problem("kd", truth, init, _views(truth, train, ref_spp, seed + 100), held,
                   render_views(truth, held, ref_spp, seed=seed + 200), ("kd",))


def probe_problem(size: int = 32, n_views: int = 16, ref_spp: int = REF_SPP,
                  seed: int = 0, sun_power: float = 10.0, sun_width: float = 0.3) -> Problem:
    """Fixed diffuse checker sphere; a 32x16 probe starts constant."""
    gt = fixtures.checker(8, 8, CHECKER_A, CHECKER_B)
    mats = fixtures.materials(gt, 0.8, 0.0)
    probe = fixtures.sky_probe(16, 32, sun_power=sun_power, sun_width=sun_width)
    truth = Scene(fixtures.uv_sphere(), mats, probe)
    init = truth.with_params(probe=EnvProbe.constant((0.5, 0.5, 0.5), 16, 32))
    train, held = _sphere_cameras(n_views, size)
    return Problem("probe", truth, init, _views(truth, train, ref_spp, seed + 100), held,
                   render_views(truth, held, ref_spp, seed=seed + 200), ("probe",))


def shadow_problem(size: int = 32, n_views: int = 8, ref_spp: int = REF_SPP,
                   seed: int = 0) -> Problem:
    """Two boxes casting sun shadows on a checker ground; kd and probe are free."""
    gt = fixtures.checker(16, 4, (0.7, 0.6, 0.5), (0.4, 0.5, 0.6))
    gt[:1, :1] = (0.5, 0.5, 0.5)   # the texel the box faces share
    probe = fixtures.sky_probe(16, 32, sun_dir=(0.5, 0.7, 0.2), sun_power=20.0, sun_width=0.2)
    truth = Scene(fixtures.two_box_scene(), fixtures.materials(gt, 0.8, 0.0), probe)
    init = truth.with_params(fixtures.materials((0.5, 0.5, 0.5), 0.8, 0.0, size=16),
                             EnvProbe.constant((1.0, 1.0, 1.0), 16, 32))
    cams = fixtures.orbit(n_views, 3.5, 55.0, size, fov_deg=45.0)
    held = fixtures.orbit(2, 3.5, 70.0, size, fov_deg=45.0, offset=22.5)
    return Problem("shadow", truth, init, _views(truth, cams, ref_spp, seed + 100), held,
                   render_views(truth, held, ref_spp, seed=seed + 200), ("kd", "probe"))


def kd_mae(scene: Scene, truth: Scene) -> float:
    return float(np.abs(scene.materials.kd.data - truth.materials.kd.data).mean())


def run_problem(problem: Problem, config: OptimConfig, out_dir=None,
                eval_spp: int = EVAL_SPP, masked: bool = False) -> dict:
    """Optimize a fresh copy of the problem; report kd MAE and held-out PSNR."""
    scene = problem.fresh()
    cfg = replace(config, optimize=problem.optimize)
    res = optimize(scene, problem.train, cfg, out_dir)
    return {"kd_mae": kd_mae(scene, problem.truth),
            "psnr": evaluate_psnr(scene, problem.held_cameras, problem.held_refs, eval_spp,
                                  seed=cfg.seed + 1, masked=masked),
            "final_loss": res.log[-1]["total"], "scene": scene}


# ------------------------------------------------------------------ suites

MIS_MATERIALS = {"diffuse": (0.5, 0.0), "plastic": (0.3, 0.0), "metallic": (0.05, 1.0)}


def mis_variance(roughness: float = 0.05, metalness: float = 1.0, spp: int = 32,
                 trials: int = 40, size: int = 32, seed: int = 0) -> dict:
    """Per-pixel variance of each strategy over ``trials`` seeds (covered pixels)."""
    probe = fixtures.sky_probe(16, 32)
    scene = Scene(fixtures.uv_sphere(), fixtures.materials((0.9, 0.9, 0.9), roughness,
                                                           metalness), probe)
    cam = fixtures.orbit(1, 3.2, 20.0, size)[0]
    mask = render.primary_visibility(scene, cam).mask.reshape(size, size)
    out = {}
    for strat in ("cosine", "bsdf", "light", "mis"):
        imgs = np.array([render.render_forward(scene, cam, spp, 1.0, seed * 1000 + s,
                                               strat).final() for s in range(trials)])
        out[strat] = imgs.var(0, ddof=1).mean(-1)[mask]
    return out


def run_mis_ablation(spp: int = 32, iterations: int = 200, size: int = 32, n_views: int = 8,
                     seed: int = 0, ref_spp: int = 1024, strategies=("cosine", "bsdf", "light", "mis"),
                     materials=tuple(MIS_MATERIALS)) -> list:
    """Optimize probe and material per strategy; held-out PSNR at high spp."""
    rows = []
    train_cams, held = _sphere_cameras(n_views, size)
    for name in materials:
        r, m = MIS_MATERIALS[name]
        truth = Scene(fixtures.uv_sphere(), fixtures.materials(
            fixtures.checker(8, 4, CHECKER_A, CHECKER_B), r, m), fixtures.sky_probe(16, 32))
        views = _views(truth, train_cams, ref_spp, seed + 100)
        held_refs = render_views(truth, held, ref_spp, seed=seed + 200)
        for strat in strategies:
            scene = truth.with_params(fixtures.materials((0.5, 0.5, 0.5), 0.5, 0.5, size=8),
                                      EnvProbe.constant((0.5, 0.5, 0.5), 16, 32))
            cfg = OptimConfig(iterations=iterations, spp=spp, strategy=strat, seed=seed,
                              ramp=max(1, iterations // 2), optimize=("kd", "korm", "probe"))
            optimize(scene, views, cfg)
            rows.append({"material": name, "strategy": strat, "spp": spp,
                         "psnr": evaluate_psnr(scene, held, held_refs, EVAL_SPP, seed=seed + 1)})
    return rows


def correlation_problem(base: Problem | None = None, seed: int = 0) -> Problem:
    """The probe problem with kd, korm and the probe all free."""
    p = base or probe_problem(seed=seed)
    init = p.init.with_params(fixtures.materials((0.5, 0.5, 0.5), 0.5, 0.2, size=8),
                              p.init.probe)
    return replace(p, name="correlation", init=init, optimize=("kd", "korm", "probe"))


def _object_psnr(scene: Scene, problem: Problem, seed: int) -> float:
    return evaluate_psnr(scene, problem.held_cameras, problem.held_refs, EVAL_SPP,
                         seed=seed + 1, masked=True)


def lambertian_start(problem: Problem) -> Scene:
    """Gray Lambertian material with the problem's initial probe."""
    mats = fixtures.materials((0.5, 0.5, 0.5), 1.0, 0.0, size=8)
    mats.specular = False
    return problem.init.with_params(mats, problem.init.probe)


def variance_study(scene: Scene, views: list, spp: int = 4, trials: int = 100,
                   seed: int = 0, params=("kd", "probe")) -> dict:
    """Gradient variance summaries for both seed modes, keyed by mode name."""
    pairs = [(v.camera, v.reference) for v in views]
    return {mode.value: adjoint.gradient_variance_probe(scene, pairs, spp, mode, trials,
                                                        seed=seed, params=params)
            for mode in adjoint.SeedMode}


def run_correlation_study(problem: Problem | None = None, spp_grid=(2, 4, 8, 32),
                          iterations: int = 300, seed: int = 0, batch: int = 2) -> list:
    """Final held-out PSNR per (spp, seed mode)."""
    problem = problem or correlation_problem(seed=seed)
    rows = []
    for spp in spp_grid:
        for mode in adjoint.SeedMode:
            cfg = OptimConfig(iterations=iterations, batch=batch, spp=spp, seed=seed,
                              seed_mode=mode.value, ramp=max(1, iterations // 2))
            r = run_problem(problem, cfg)
            rows.append({"spp": spp, "seed_mode": mode.value, "psnr": r["psnr"],
                         "psnr_object": _object_psnr(r["scene"], problem, cfg.seed)})
    return rows


def run_denoise_ablation(problem: Problem | None = None, spp_grid=(8, 18, 32, 128),
                         iterations: int = 200, seed: int = 0, batch: int = 2,
                         denoisers=("none", "bilateral")) -> list:
    """Held-out PSNR of light-only recovery per (denoiser, spp)."""
    problem = problem or probe_problem(seed=seed)
    rows = []
    for den in denoisers:
        for spp in spp_grid:
            cfg = OptimConfig(iterations=iterations, batch=batch, spp=spp, seed=seed,
                              denoiser=den, ramp=max(1, iterations // 2))
            r = run_problem(problem, cfg)
            rows.append({"denoiser": den, "spp": spp, "psnr": r["psnr"],
                         "psnr_object": _object_psnr(r["scene"], problem, cfg.seed)})
    return rows


def run_gradcheck_suite(spp: int = 8, count: int = 20, seed: int = 0, size: int = 16,
                        tolerance: float = 1e-3) -> list:
    """Adjoint vs central differences on a randomized textured sphere."""
    rows = []
    for r in adjoint.gradcheck(gradcheck_scene(seed), fixtures.orbit(1, 3.0, 20.0, size)[0],
                               spp, count=count, seed=seed):
        rows.append({"param": r.param, "index": "/".join(map(str, r.index)),
                     "adjoint": r.adjoint, "fd": r.fd, "rel_error": r.rel_error,
                     "pass": int(r.rel_error <= tolerance)})
    return rows


def gradcheck_scene(seed: int = 0, n: int = 8) -> Scene:
    """Sphere with random kd, roughness, metalness and a tilted normal map."""
    from .material import MaterialTextures

    rng = np.random.default_rng([seed, 0x6C5])
    kd = rng.uniform(0.2, 0.8, (n, n, 3))
    korm = np.dstack([np.ones((n, n)), rng.uniform(0.3, 0.8, (n, n)),
                      rng.uniform(0.1, 0.9, (n, n))])
    nm = rng.normal(size=(n, n, 3)) * 0.15
    nm[..., 2] = 1.0
    nm /= np.linalg.norm(nm, axis=-1, keepdims=True)
    mats = MaterialTextures(Texture2D(kd), Texture2D(korm), Texture2D(nm * 0.5 + 0.5))
    return Scene(fixtures.uv_sphere(), mats, fixtures.sky_probe(8, 16, sun_power=5.0,
                                                                sun_width=0.4))


def rows_to_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def write_csv(rows: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


__all__ = ["Problem", "kd_problem", "probe_problem", "shadow_problem", "correlation_problem",
           "run_problem", "kd_mae", "mis_variance", "run_mis_ablation", "variance_study",
           "run_correlation_study", "run_denoise_ablation", "run_gradcheck_suite",
           "gradcheck_scene", "rows_to_csv", "write_csv"]
