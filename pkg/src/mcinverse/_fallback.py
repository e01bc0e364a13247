"""Pure numpy versions of the ``_core`` kernels.

Same signatures and output conventions as the Cython module.  Traversal is
breadth-first over (ray, node) pairs so that every step is a vectorized
numpy operation; the bilateral filter loops over footprint offsets instead
of pixels.
"""

from __future__ import annotations

import numpy as np


def _slab(org, inv, t0, t1, lo, hi):
    with np.errstate(invalid="ignore"):
        ta = (lo - org) * inv
        tb = (hi - org) * inv
    tmin = np.fmin(ta, tb)
    tmax = np.fmax(ta, tb)
    near = np.fmax(np.fmax(tmin[:, 0], tmin[:, 1]), np.fmax(tmin[:, 2], t0))
    far = np.fmin(np.fmin(tmax[:, 0], tmax[:, 1]), np.fmin(tmax[:, 2], t1))
    return near <= far


def _tri(org, d, v0, e1, e2, tmin, tmax):
    """Vectorized Moller-Trumbore over matched (ray, triangle) rows."""
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = det != 0.0
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = org - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > tmin) & (t < tmax)
    return ok, t, u, v


def _expand_leaves(rays, nodes, start, count):
    n = count[nodes]
    ray_rep = np.repeat(rays, n)
    first = np.repeat(start[nodes], n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    return ray_rep, first + offs


def intersect_closest(org, dirs, tmin, tmax, lo, hi, left, right, start, count,
                      v0, e1, e2, t_out, prim_out, bu_out, bv_out, r0, r1):
    org = np.asarray(org)[r0:r1]
    dirs = np.asarray(dirs)[r0:r1]
    t0 = np.asarray(tmin)[r0:r1]
    best_t = np.array(tmax[r0:r1], dtype=np.float64)
    best_k = np.full(r1 - r0, -1, dtype=np.int64)
    best_u = np.zeros(r1 - r0)
    best_v = np.zeros(r1 - r0)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs

    rays = np.arange(r1 - r0)
    nodes = np.zeros(r1 - r0, dtype=np.int64)
    while rays.size:
        keep = _slab(org[rays], inv[rays], t0[rays], best_t[rays], lo[nodes], hi[nodes])
        rays, nodes = rays[keep], nodes[keep]
        leaf = left[nodes] < 0
        if leaf.any():
            rr, kk = _expand_leaves(rays[leaf], nodes[leaf], start, count)
            ok, t, u, v = _tri(org[rr], dirs[rr], v0[kk], e1[kk], e2[kk], t0[rr], best_t[rr])
            rr, kk, t, u, v = rr[ok], kk[ok], t[ok], u[ok], v[ok]
            if rr.size:
                # nearest per ray; ties resolved toward the lower triangle index
                order = np.lexsort((kk, t, rr))
                rr, kk, t, u, v = rr[order], kk[order], t[order], u[order], v[order]
                first = np.ones(rr.size, dtype=bool)
                first[1:] = rr[1:] != rr[:-1]
                rr, kk, t, u, v = rr[first], kk[first], t[first], u[first], v[first]
                better = t < best_t[rr]
                rr = rr[better]
                best_t[rr] = t[better]
                best_k[rr] = kk[better]
                best_u[rr] = u[better]
                best_v[rr] = v[better]
        inner = ~leaf
        rays = np.concatenate([rays[inner], rays[inner]])
        nodes = np.concatenate([left[nodes[inner]], right[nodes[inner]]])

    hit = best_k >= 0
    t_out[r0:r1] = np.where(hit, best_t, np.inf)
    prim_out[r0:r1] = best_k
    bu_out[r0:r1] = np.where(hit, best_u, 0.0)
    bv_out[r0:r1] = np.where(hit, best_v, 0.0)


def intersect_any(org, dirs, tmin, tmax, lo, hi, left, right, start, count,
                  v0, e1, e2, hit_out, r0, r1):
    org = np.asarray(org)[r0:r1]
    dirs = np.asarray(dirs)[r0:r1]
    t0 = np.asarray(tmin)[r0:r1]
    t1 = np.asarray(tmax)[r0:r1]
    found = np.zeros(r1 - r0, dtype=bool)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs

    rays = np.arange(r1 - r0)
    nodes = np.zeros(r1 - r0, dtype=np.int64)
    while rays.size:
        keep = _slab(org[rays], inv[rays], t0[rays], t1[rays], lo[nodes], hi[nodes])
        keep &= ~found[rays]
        rays, nodes = rays[keep], nodes[keep]
        leaf = left[nodes] < 0
        if leaf.any():
            rr, kk = _expand_leaves(rays[leaf], nodes[leaf], start, count)
            ok, _, _, _ = _tri(org[rr], dirs[rr], v0[kk], e1[kk], e2[kk], t0[rr], t1[rr])
            found[rr[ok]] = True
        inner = ~leaf
        rays = np.concatenate([rays[inner], rays[inner]])
        nodes = np.concatenate([left[nodes[inner]], right[nodes[inner]]])
    hit_out[r0:r1] = found.astype(np.uint8)


def _offset_weights(depth, normal, dz, mask, sigma, sigma_z, sigma_n, radius):
    """Yield (dy, dx, valid_p, weight) for every footprint offset."""
    H, W = depth.shape
    pad = radius
    dpad = np.pad(depth, pad, mode="edge")
    npad = np.pad(normal, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    mpad = np.pad(mask.astype(bool), pad, mode="constant", constant_values=False)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ws = np.exp(-(dx * dx + dy * dy) * inv2s2)
            if ws == 0.0:
                continue
            sl = (slice(pad + dy, pad + dy + H), slice(pad + dx, pad + dx + W))
            mq = mpad[sl]
            pred = np.abs(dz[..., 0] * dx + dz[..., 1] * dy)
            wz = np.exp(-np.abs(depth - dpad[sl]) / (sigma_z * pred + 1e-6))
            nd = np.einsum("ijk,ijk->ij", normal, npad[sl])
            wn = np.where(nd > 0.0, np.maximum(nd, 0.0) ** sigma_n, 0.0)
            w = np.where(mq, ws * wz * wn, 0.0)
            yield dy, dx, w


def _shift_add(dst, src, dy, dx):
    """dst[y, x] += src[y + dy, x + dx] where in bounds."""
    H, W = src.shape[:2]
    ys, yd = (slice(dy, H), slice(0, H - dy)) if dy >= 0 else (slice(0, H + dy), slice(-dy, H))
    xs, xd = (slice(dx, W), slice(0, W - dx)) if dx >= 0 else (slice(0, W + dx), slice(-dx, W))
    dst[yd, xd] += src[ys, xs]


def _shift_scatter(dst, src, dy, dx):
    """dst[y + dy, x + dx] += src[y, x] where in bounds."""
    H, W = src.shape[:2]
    ys, yd = (slice(dy, H), slice(0, H - dy)) if dy >= 0 else (slice(0, H + dy), slice(-dy, H))
    xs, xd = (slice(dx, W), slice(0, W - dx)) if dx >= 0 else (slice(0, W + dx), slice(-dx, W))
    dst[ys, xs] += src[yd, xd]


def _in_bounds(H, W, dy, dx):
    ok = np.zeros((H, W), dtype=bool)
    ok[max(0, -dy):min(H, H - dy), max(0, -dx):min(W, W - dx)] = True
    return ok


def bilateral_forward(color, depth, normal, dz, mask, sigma, sigma_z, sigma_n, radius,
                      out, y0, y1):
    color = np.asarray(color)
    H, W, _ = color.shape
    acc = np.zeros_like(color)
    wsum = np.zeros((H, W))
    for dy, dx, w in _offset_weights(depth, normal, dz, mask, sigma, sigma_z, sigma_n, radius):
        w = w * _in_bounds(H, W, dy, dx)
        wsum += w
        shifted = np.zeros_like(color)
        _shift_add(shifted, color, dy, dx)
        acc += w[..., None] * shifted
    m = np.asarray(mask).astype(bool) & (wsum > 0.0)
    res = np.where(m[..., None], acc / np.where(wsum > 0.0, wsum, 1.0)[..., None], color)
    out[y0:y1] = res[y0:y1]


def bilateral_backward(grad_out, depth, normal, dz, mask, sigma, sigma_z, sigma_n, radius,
                       grad_in):
    grad_out = np.asarray(grad_out)
    H, W, _ = grad_out.shape
    weights = []
    wsum = np.zeros((H, W))
    for dy, dx, w in _offset_weights(depth, normal, dz, mask, sigma, sigma_z, sigma_n, radius):
        w = w * _in_bounds(H, W, dy, dx)
        wsum += w
        weights.append((dy, dx, w))
    m = np.asarray(mask).astype(bool) & (wsum > 0.0)
    g = np.where(m[..., None], grad_out / np.where(wsum > 0.0, wsum, 1.0)[..., None], 0.0)
    for dy, dx, w in weights:
        _shift_scatter(grad_in, w[..., None] * g, dy, dx)
    grad_in += np.where(m[..., None], 0.0, grad_out)
