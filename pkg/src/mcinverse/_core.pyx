# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: BVH ray traversal and the cross-bilateral filter.

Every function writes into caller-provided output arrays and works on the
half-open ray/pixel range it is given, so callers can split work across
threads without sharing mutable state.  ``_fallback`` mirrors these
signatures exactly.
"""

from libc.math cimport exp, fabs, pow, sqrt, fmin, fmax, INFINITY

DEF STACK_SIZE = 64


cdef inline bint _slab(double ox, double oy, double oz,
                       double ix, double iy, double iz,
                       double t0, double t1,
                       const double[:, ::1] lo, const double[:, ::1] hi,
                       long long node) noexcept nogil:
    cdef double tx0 = (lo[node, 0] - ox) * ix
    cdef double tx1 = (hi[node, 0] - ox) * ix
    cdef double ty0 = (lo[node, 1] - oy) * iy
    cdef double ty1 = (hi[node, 1] - oy) * iy
    cdef double tz0 = (lo[node, 2] - oz) * iz
    cdef double tz1 = (hi[node, 2] - oz) * iz
    # fmin/fmax drop the NaN produced by 0 * inf on slab boundaries
    cdef double tnear = fmax(fmax(fmin(tx0, tx1), fmin(ty0, ty1)), fmax(fmin(tz0, tz1), t0))
    cdef double tfar = fmin(fmin(fmax(tx0, tx1), fmax(ty0, ty1)), fmin(fmax(tz0, tz1), t1))
    return tnear <= tfar


cdef inline double _tri(double ox, double oy, double oz,
                        double dx, double dy, double dz,
                        const double[:, ::1] v0, const double[:, ::1] e1,
                        const double[:, ::1] e2, long long k,
                        double tmin, double tmax,
                        double* bu, double* bv) noexcept nogil:
    """Moller-Trumbore; returns t or -1 on miss."""
    cdef double e1x = e1[k, 0], e1y = e1[k, 1], e1z = e1[k, 2]
    cdef double e2x = e2[k, 0], e2y = e2[k, 1], e2z = e2[k, 2]
    cdef double px = dy * e2z - dz * e2y
    cdef double py = dz * e2x - dx * e2z
    cdef double pz = dx * e2y - dy * e2x
    cdef double det = e1x * px + e1y * py + e1z * pz
    if det == 0.0:
        return -1.0
    cdef double inv = 1.0 / det
    cdef double sx = ox - v0[k, 0], sy = oy - v0[k, 1], sz = oz - v0[k, 2]
    cdef double u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0
    cdef double qx = sy * e1z - sz * e1y
    cdef double qy = sz * e1x - sx * e1z
    cdef double qz = sx * e1y - sy * e1x
    cdef double v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0
    cdef double t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= tmin or t >= tmax:
        return -1.0
    bu[0] = u
    bv[0] = v
    return t


def intersect_closest(const double[:, ::1] org, const double[:, ::1] dirs,
                      const double[::1] tmin, const double[::1] tmax,
                      const double[:, ::1] lo, const double[:, ::1] hi,
                      const long long[::1] left, const long long[::1] right,
                      const long long[::1] start, const long long[::1] count,
                      const double[:, ::1] v0, const double[:, ::1] e1,
                      const double[:, ::1] e2,
                      double[::1] t_out, long long[::1] prim_out,
                      double[::1] bu_out, double[::1] bv_out,
                      Py_ssize_t r0, Py_ssize_t r1):
    cdef long long stack[STACK_SIZE]
    cdef Py_ssize_t r
    cdef int sp
    cdef long long node, k, best
    cdef double ox, oy, oz, dx, dy, dz, ix, iy, iz, t0, tbest, t, u, v, bu, bv
    with nogil:
        for r in range(r0, r1):
            ox = org[r, 0]; oy = org[r, 1]; oz = org[r, 2]
            dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
            ix = 1.0 / dx; iy = 1.0 / dy; iz = 1.0 / dz
            t0 = tmin[r]
            tbest = tmax[r]
            best = -1
            bu = 0.0; bv = 0.0
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if not _slab(ox, oy, oz, ix, iy, iz, t0, tbest, lo, hi, node):
                    continue
                if left[node] < 0:
                    for k in range(start[node], start[node] + count[node]):
                        t = _tri(ox, oy, oz, dx, dy, dz, v0, e1, e2, k, t0, tbest, &u, &v)
                        if t > 0.0:
                            tbest = t
                            best = k
                            bu = u; bv = v
                else:
                    if sp + 2 > STACK_SIZE:
                        continue
                    stack[sp] = right[node]
                    stack[sp + 1] = left[node]
                    sp += 2
            prim_out[r] = best
            if best >= 0:
                t_out[r] = tbest
                bu_out[r] = bu
                bv_out[r] = bv
            else:
                t_out[r] = INFINITY
                bu_out[r] = 0.0
                bv_out[r] = 0.0


def intersect_any(const double[:, ::1] org, const double[:, ::1] dirs,
                  const double[::1] tmin, const double[::1] tmax,
                  const double[:, ::1] lo, const double[:, ::1] hi,
                  const long long[::1] left, const long long[::1] right,
                  const long long[::1] start, const long long[::1] count,
                  const double[:, ::1] v0, const double[:, ::1] e1,
                  const double[:, ::1] e2,
                  unsigned char[::1] hit_out,
                  Py_ssize_t r0, Py_ssize_t r1):
    cdef long long stack[STACK_SIZE]
    cdef Py_ssize_t r
    cdef int sp
    cdef long long node, k
    cdef bint found
    cdef double ox, oy, oz, dx, dy, dz, ix, iy, iz, t0, t1, u, v
    with nogil:
        for r in range(r0, r1):
            ox = org[r, 0]; oy = org[r, 1]; oz = org[r, 2]
            dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
            ix = 1.0 / dx; iy = 1.0 / dy; iz = 1.0 / dz
            t0 = tmin[r]
            t1 = tmax[r]
            found = False
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0 and not found:
                sp -= 1
                node = stack[sp]
                if not _slab(ox, oy, oz, ix, iy, iz, t0, t1, lo, hi, node):
                    continue
                if left[node] < 0:
                    for k in range(start[node], start[node] + count[node]):
                        if _tri(ox, oy, oz, dx, dy, dz, v0, e1, e2, k, t0, t1, &u, &v) > 0.0:
                            found = True
                            break
                else:
                    if sp + 2 > STACK_SIZE:
                        continue
                    stack[sp] = right[node]
                    stack[sp + 1] = left[node]
                    sp += 2
            hit_out[r] = 1 if found else 0


cdef inline double _weight(Py_ssize_t y, Py_ssize_t x, Py_ssize_t qy, Py_ssize_t qx,
                           const double[:, ::1] depth, const double[:, :, ::1] normal,
                           const double[:, :, ::1] dz, double inv2s2, double sigma_z,
                           double sigma_n) noexcept nogil:
    cdef double ddx = <double>(qx - x)
    cdef double ddy = <double>(qy - y)
    cdef double ws = exp(-(ddx * ddx + ddy * ddy) * inv2s2)
    if ws == 0.0:
        return 0.0
    cdef double pred = fabs(dz[y, x, 0] * ddx + dz[y, x, 1] * ddy)
    cdef double wz = exp(-fabs(depth[y, x] - depth[qy, qx]) / (sigma_z * pred + 1e-6))
    cdef double nd = (normal[y, x, 0] * normal[qy, qx, 0]
                      + normal[y, x, 1] * normal[qy, qx, 1]
                      + normal[y, x, 2] * normal[qy, qx, 2])
    if nd <= 0.0:
        return 0.0
    return ws * wz * pow(nd, sigma_n)


def bilateral_forward(const double[:, :, ::1] color, const double[:, ::1] depth,
                      const double[:, :, ::1] normal, const double[:, :, ::1] dz,
                      const unsigned char[:, ::1] mask, double sigma, double sigma_z,
                      double sigma_n, int radius, double[:, :, ::1] out,
                      Py_ssize_t y0, Py_ssize_t y1):
    cdef Py_ssize_t H = color.shape[0], W = color.shape[1], C = color.shape[2]
    cdef Py_ssize_t y, x, qy, qx, c
    cdef double w, wsum
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double acc[16]
    with nogil:
        for y in range(y0, y1):
            for x in range(W):
                if not mask[y, x]:
                    for c in range(C):
                        out[y, x, c] = color[y, x, c]
                    continue
                wsum = 0.0
                for c in range(C):
                    acc[c] = 0.0
                for qy in range(max(0, y - radius), min(H, y + radius + 1)):
                    for qx in range(max(0, x - radius), min(W, x + radius + 1)):
                        if not mask[qy, qx]:
                            continue
                        w = _weight(y, x, qy, qx, depth, normal, dz, inv2s2, sigma_z, sigma_n)
                        if w == 0.0:
                            continue
                        wsum += w
                        for c in range(C):
                            acc[c] += w * color[qy, qx, c]
                for c in range(C):
                    out[y, x, c] = acc[c] / wsum if wsum > 0.0 else color[y, x, c]


def bilateral_backward(const double[:, :, ::1] grad_out, const double[:, ::1] depth,
                       const double[:, :, ::1] normal, const double[:, :, ::1] dz,
                       const unsigned char[:, ::1] mask, double sigma, double sigma_z,
                       double sigma_n, int radius, double[:, :, ::1] grad_in):
    """Transpose of :func:`bilateral_forward`; ``grad_in`` must be zeroed."""
    cdef Py_ssize_t H = grad_out.shape[0], W = grad_out.shape[1], C = grad_out.shape[2]
    cdef Py_ssize_t y, x, qy, qx, c, k
    cdef double w, wsum, s
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double wbuf[289]   # (2 * 8 + 1) ** 2 footprint weights
    with nogil:
        for y in range(H):
            for x in range(W):
                if not mask[y, x]:
                    for c in range(C):
                        grad_in[y, x, c] += grad_out[y, x, c]
                    continue
                wsum = 0.0
                k = 0
                for qy in range(max(0, y - radius), min(H, y + radius + 1)):
                    for qx in range(max(0, x - radius), min(W, x + radius + 1)):
                        w = 0.0
                        if mask[qy, qx]:
                            w = _weight(y, x, qy, qx, depth, normal, dz, inv2s2, sigma_z, sigma_n)
                        wbuf[k] = w
                        wsum += w
                        k += 1
                if wsum <= 0.0:
                    for c in range(C):
                        grad_in[y, x, c] += grad_out[y, x, c]
                    continue
                k = 0
                for qy in range(max(0, y - radius), min(H, y + radius + 1)):
                    for qx in range(max(0, x - radius), min(W, x + radius + 1)):
                        w = wbuf[k]
                        k += 1
                        if w == 0.0:
                            continue
                        s = w / wsum
                        for c in range(C):
                            grad_in[qy, qx, c] += s * grad_out[y, x, c]
