"""Time the compiled and numpy kernels on the same inputs.

    python3 benchmarks/bench_backends.py [--repeat 5]

Prints one line per kernel with the best-of-N time of each backend and the
speedup.  Both backends are also checked to agree on the results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mcinverse import _backend, denoise, fixtures, geometry


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def ray_inputs(n: int, seed: int = 0):
    s = fixtures.uv_sphere(48, 24)
    mesh = fixtures.merge([(s.positions, s.indices, s.uvs)]
                          + fixtures.box((-2, -1.2, -2), (2, -1.0, 2)))
    bvh = geometry.build_bvh(mesh)
    rng = np.random.default_rng(seed)
    org = rng.normal(size=(n, 3))
    org = 3.0 * org / np.linalg.norm(org, axis=1, keepdims=True)
    d = -org + 0.5 * rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return bvh, org, d


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rays", type=int, default=50_000)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)

    try:
        core = _backend.kernels("cython")
    except ImportError:
        print("compiled core not built; run `python3 setup.py build_ext --inplace`")
        return
    py = _backend.kernels("python")

    bvh, org, d = ray_inputs(args.rays)
    cases = {
        "closest hit": lambda k: geometry.intersect_many(bvh, org, d, kernels=k).t,
        "any hit": lambda k: geometry.occluded_many(bvh, org, d, kernels=k),
    }
    depth, normal, mask = fixtures.depth_step_guides(args.size)
    guides = denoise.make_guides(depth, normal, mask)
    color = np.random.default_rng(1).random((args.size, args.size, 6))
    params = denoise.DenoiseParams(2.0)
    cases["bilateral forward"] = lambda k: denoise.bilateral_filter(color, guides, params, k)
    cases["bilateral backward"] = lambda k: denoise.bilateral_backward(color, guides, params, k)

    print(f"{'kernel':<20} {'cython s':>10} {'python s':>10} {'speedup':>8}")
    for name, fn in cases.items():
        a, b = fn(core), fn(py)
        same = np.allclose(np.where(np.isfinite(a), a, 0), np.where(np.isfinite(b), b, 0),
                           rtol=1e-10, atol=1e-10)
        tc = best_of(lambda: fn(core), args.repeat)
        tp = best_of(lambda: fn(py), args.repeat)
        print(f"{name:<20} {tc:>10.4f} {tp:>10.4f} {tp / tc:>7.1f}x"
              + ("" if same else "  MISMATCH"))


if __name__ == "__main__":
    main()
