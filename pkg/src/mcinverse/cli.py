"""Command-line entry point: ``mcinverse {render,optimize,gradcheck,experiment}``.

Exit codes: 0 success, 2 invalid input or config, 3 a checked threshold
was not met.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _backend, adjoint, config, experiments, fixtures, optimize, render
from .imageio import ImageIOError, load_pfm, save_pfm, save_png_tonemapped

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_THRESHOLD = 3

log = logging.getLogger("mcinverse")


def _load(path) -> config.RunConfig:
    return config.parse_config(path) if path else config.RunConfig()


def cmd_render(args) -> int:
    cfg = _load(args.scene)
    scene = cfg.build_scene()
    cams = cfg.cameras()
    if not 0 <= args.view < len(cams):
        raise config.ConfigError(f"--view {args.view} out of range (have {len(cams)} cameras)")
    aov = render.render_forward(scene, cams[args.view], args.spp, args.tau, args.seed,
                                args.sampling)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    final = aov.final()
    bufs = {"cd": aov.c_d, "cs": aov.c_s, "albedo": aov.albedo, "normal": aov.normal,
            "depth": aov.depth, "final": final}
    for name, arr in bufs.items():
        save_pfm(f"{prefix}_{name}.pfm", arr)
    save_png_tonemapped(f"{prefix}_final.png", final)
    print(f"wrote {prefix}_{{{','.join(bufs)}}}.pfm and {prefix}_final.png")
    return EXIT_OK


def _references(cfg: config.RunConfig, scene, cams, seed: int) -> list:
    if cfg.references:
        if len(cfg.references) != len(cams):
            raise config.ConfigError(f"{len(cfg.references)} references for {len(cams)} cameras")
        refs = [load_pfm(cfg.base_dir / p).data.astype(np.float64) for p in cfg.references]
        for r, c in zip(refs, cams):
            if r.shape[:2] != (c.height, c.width):
                raise config.ConfigError(f"reference shape {r.shape[:2]} does not match "
                                         f"camera {c.height}x{c.width}")
        return refs
    target = cfg.build_target(scene)
    return optimize.render_views(target, cams, cfg.ref_spp, seed=seed + 100)


def cmd_optimize(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out)
    scene = cfg.build_scene()
    cams = cfg.cameras()
    oc = replace(cfg.optim, seed=args.seed) if args.seed is not None else cfg.optim
    refs = _references(cfg, scene, cams, oc.seed)
    views = [optimize.View(c, r) for c, r in zip(cams, refs)]
    res = optimize.optimize(scene, views, oc, out)
    last = res.log[-1]
    print(f"iterations={len(res.log)} total={last['total']:.6g} image={last['image']:.6g} "
          f"-> {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.scene:
        cfg = _load(args.scene)
        scene, cam = cfg.build_scene(), cfg.cameras()[0]
    else:
        scene = experiments.gradcheck_scene(args.seed)
        cam = fixtures.orbit(1, 3.0, 20.0, 16)[0]
    classes = adjoint.GRADCHECK_CLASSES
    if args.params != "all":
        classes = {"korm": ("roughness", "metalness")}.get(args.params, (args.params,))
    rows = adjoint.gradcheck(scene, cam, args.spp, classes, count=args.count, seed=args.seed)
    worst = 0.0
    print(f"{'param':<10} {'index':<14} {'adjoint':>14} {'fd':>14} {'rel_err':>10}")
    for r in rows:
        worst = max(worst, r.rel_error)
        print(f"{r.param:<10} {'/'.join(map(str, r.index)):<14} {r.adjoint:>14.6e} "
              f"{r.fd:>14.6e} {r.rel_error:>10.2e}")
    if args.out:
        experiments.write_csv([{"param": r.param, "index": "/".join(map(str, r.index)),
                                "adjoint": r.adjoint, "fd": r.fd, "rel_error": r.rel_error}
                               for r in rows], Path(args.out) / "gradcheck.csv")
    ok = bool(rows) and worst <= args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: {len(rows)} parameters, max relative error {worst:.3e} "
          f"(tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_THRESHOLD


def _check_trends(kind: str, rows: list) -> list:
    """Trend checks from the ablation descriptions; returns failure messages."""
    bad = []
    if kind == "mis":
        met = {r["strategy"]: r["psnr"] for r in rows if r["material"] == "metallic"}
        if met and max(met, key=met.get) != "mis":
            bad.append("MIS is not the best strategy on the metallic sphere")
    elif kind == "correlation":
        by = {(r["spp"], r["seed_mode"]): r["psnr"] for r in rows}
        for spp in (2, 4):
            c, d = by.get((spp, "correlated")), by.get((spp, "decorrelated"))
            if c is not None and d is not None and c < d:
                bad.append(f"correlated < decorrelated at {spp} spp")
    elif kind == "denoise":
        by = {(r["denoiser"], r["spp"]): r["psnr_object"] for r in rows}
        lo, hi = by.get(("bilateral", 8)), by.get(("none", 8))
        if lo is not None and hi is not None and lo - hi < 3.0:
            bad.append("bilateral does not beat none by 3 dB at 8 spp")
    return bad


def cmd_experiment(args) -> int:
    cfg = _load(args.config)
    spec = cfg.experiment or config.ExperimentSpec()
    iters = args.iterations or spec.iterations
    seed = args.seed
    if args.kind == "mis":
        rows = experiments.run_mis_ablation(spp=int(spec.spp[0]), iterations=iters, seed=seed)
    elif args.kind == "correlation":
        grid = tuple(int(s) for s in (args.spp or spec.spp))
        rows = experiments.run_correlation_study(spp_grid=grid, iterations=iters, seed=seed)
    elif args.kind == "denoise":
        grid = tuple(int(s) for s in (args.spp or spec.spp))
        rows = experiments.run_denoise_ablation(spp_grid=grid, iterations=iters, seed=seed)
    else:
        rows = experiments.run_gradcheck_suite(seed=seed)
    path = Path(args.out) / (Path(spec.output).name if cfg.experiment else f"{args.kind}.csv")
    experiments.write_csv(rows, path)
    print(experiments.rows_to_csv(rows), end="")
    print(f"wrote {path}")
    bad = _check_trends(args.kind, rows) if args.check else []
    for msg in bad:
        print(f"FAIL: {msg}")
    return EXIT_THRESHOLD if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcinverse", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None,
                   help="global seed (default 0, or optim.seed from the config)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for the compiled ray and filter kernels")
    p.add_argument("--out", default="out", help="output directory or file prefix")
    p.add_argument("-v", "--verbose", action="store_true")
    # the global flags are also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", parents=[common], help="render one camera of a scene config")
    r.add_argument("--scene", help="TOML config (default: built-in sphere)")
    r.add_argument("--spp", type=int, default=64)
    r.add_argument("--tau", type=float, default=1.0)
    r.add_argument("--sampling", choices=("cosine", "bsdf", "light", "mis"), default="mis")
    r.add_argument("--view", type=int, default=0)
    r.set_defaults(func=cmd_render)

    o = sub.add_parser("optimize", parents=[common],
                       help="fit textures and probe to reference views")
    o.add_argument("--config", required=True)
    o.set_defaults(func=cmd_optimize)

    g = sub.add_parser("gradcheck", parents=[common], help="adjoint vs central finite differences")
    g.add_argument("--scene", help="TOML config (default: randomized sphere)")
    g.add_argument("--spp", type=int, default=8)
    g.add_argument("--params", choices=("kd", "korm", "roughness", "metalness", "normal",
                                        "probe", "all"), default="all")
    g.add_argument("--count", type=int, default=20, help="parameters per class")
    g.add_argument("--tolerance", type=float, default=1e-3)
    g.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("experiment", parents=[common], help="ablation suites writing CSV tables")
    e.add_argument("kind", choices=("mis", "correlation", "denoise", "gradcheck"))
    e.add_argument("--config", help="TOML config with an [experiment] table")
    e.add_argument("--spp", type=int, nargs="+", help="spp grid override")
    e.add_argument("--iterations", type=int)
    e.add_argument("--check", action="store_true", help="exit 3 when a trend check fails")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse exits 2 on bad usage already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    _backend.set_threads(args.threads)
    if args.command != "optimize" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (config.ConfigError, ImageIOError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
