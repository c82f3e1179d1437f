# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-marching kernels.

Same contract as the NumPy backend (see _python.py): equidistant sampling,
trilinear interpolation from the eight nearest voxel centers, ReLU/logistic
activations, front-to-back compositing with density skipping and early
termination. Adds a coarse-block empty-space DDA that only ever skips samples
whose interpolated density is exactly zero, so outputs are unchanged.

The per-ray loops run without the GIL so callers may fan ray ranges out to
Python threads.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, floor

cnp.import_array()

ctypedef fused real:
    float
    double

NAME = "native"

cdef double INF = float("inf")


cdef inline bint _slab(double o, double d, double lo, double hi,
                       double* t0, double* t1) nogil:
    cdef double ta, tb, tmp
    if fabs(d) < 1e-300:
        return lo <= o <= hi
    ta = (lo - o) / d
    tb = (hi - o) / d
    if ta > tb:
        tmp = ta
        ta = tb
        tb = tmp
    if ta > t0[0]:
        t0[0] = ta
    if tb < t1[0]:
        t1[0] = tb
    return True


cdef inline double _block_exit(double ox, double oy, double oz,
                               double dx, double dy, double dz,
                               double lx, double ly, double lz,
                               double bw, int bx, int by, int bz) nogil:
    """Exit parameter of the ray from block (bx,by,bz) of world width bw."""
    cdef double te = INF
    cdef double f
    if dx > 1e-300:
        f = (lx + (bx + 1) * bw - ox) / dx
        if f < te:
            te = f
    elif dx < -1e-300:
        f = (lx + bx * bw - ox) / dx
        if f < te:
            te = f
    if dy > 1e-300:
        f = (ly + (by + 1) * bw - oy) / dy
        if f < te:
            te = f
    elif dy < -1e-300:
        f = (ly + by * bw - oy) / dy
        if f < te:
            te = f
    if dz > 1e-300:
        f = (lz + (bz + 1) * bw - oz) / dz
        if f < te:
            te = f
    elif dz < -1e-300:
        f = (lz + bz * bw - oz) / dz
        if f < te:
            te = f
    return te


cdef inline int _gather(int res, const int* slot, const real* dens,
                        double ux, double uy, double uz,
                        double* sig_raw, int* rows, double* wts) nogil:
    """Collect occupied neighbors with trilinear weights; returns count."""
    sig_raw[0] = 0.0
    if fabs(ux) > 2.0 * res + 4.0 or fabs(uy) > 2.0 * res + 4.0 \
            or fabs(uz) > 2.0 * res + 4.0:
        return 0
    cdef long bx = <long>floor(ux)
    cdef long by = <long>floor(uy)
    cdef long bz = <long>floor(uz)
    cdef double fx = ux - bx
    cdef double fy = uy - by
    cdef double fz = uz - bz
    cdef double wx[2]
    cdef double wy[2]
    cdef double wz[2]
    wx[0] = 1.0 - fx
    wx[1] = fx
    wy[0] = 1.0 - fy
    wy[1] = fy
    wz[0] = 1.0 - fz
    wz[1] = fz
    cdef int cnt = 0
    cdef double s = 0.0
    cdef long ix, iy, iz, f0, f1
    cdef int a, b, c, row
    cdef double w
    if 0 <= bx and bx + 1 < res and 0 <= by and by + 1 < res \
            and 0 <= bz and bz + 1 < res:
        f0 = (bx * res + by) * res + bz
        for a in range(2):
            for b in range(2):
                f1 = f0 + (a * res + b) * res
                for c in range(2):
                    row = slot[f1 + c]
                    if row >= 0:
                        w = wx[a] * wy[b] * wz[c]
                        s += w * <double>dens[row]
                        rows[cnt] = row
                        wts[cnt] = w
                        cnt += 1
    else:
        for a in range(2):
            ix = bx + a
            if ix < 0 or ix >= res:
                continue
            for b in range(2):
                iy = by + b
                if iy < 0 or iy >= res:
                    continue
                for c in range(2):
                    iz = bz + c
                    if iz < 0 or iz >= res:
                        continue
                    row = slot[(ix * res + iy) * res + iz]
                    if row >= 0:
                        w = wx[a] * wy[b] * wz[c]
                        s += w * <double>dens[row]
                        rows[cnt] = row
                        wts[cnt] = w
                        cnt += 1
    sig_raw[0] = s
    return cnt


cdef void _forward_range(
        int res, double lx, double ly, double lz, double voxel,
        const int* slot, const real* dens, const real* sh,
        const unsigned char* blocks, int bsz, int nb,
        const double* origins, const double* dirs,
        long r_lo, long r_hi,
        double step, double sigma_skip, double t_stop,
        double* out_color, double* out_alpha,
        double* out_depth, double* out_var,
        long* out_neval, unsigned char* out_stop) nogil:
    cdef double hx = lx + res * voxel
    cdef double hy = ly + res * voxel
    cdef double hz = lz + res * voxel
    cdef double inv_vox = 1.0 / voxel
    cdef double bw = bsz * voxel
    cdef long r, ns, j, jn
    cdef double ox, oy, oz, dx, dy, dz, t0, t1, q, t
    cdef double px, py, pz, gx, gy, gz
    cdef double sig_raw, sig, alpha, w, te
    cdef double trans, acc_c0, acc_c1, acc_c2, acc_a, m1, m2, zref, s
    cdef double x0, x1, x2, d0, zhat
    cdef int cx, cy, cz, bix, cnt, k, row
    cdef bint haveref
    cdef long neval
    cdef int rows[8]
    cdef double wts[8]

    for r in range(r_lo, r_hi):
        ox = origins[3 * r]
        oy = origins[3 * r + 1]
        oz = origins[3 * r + 2]
        dx = dirs[3 * r]
        dy = dirs[3 * r + 1]
        dz = dirs[3 * r + 2]
        t0 = 0.0
        t1 = INF
        if not (_slab(ox, dx, lx, hx, &t0, &t1)
                and _slab(oy, dy, ly, hy, &t0, &t1)
                and _slab(oz, dz, lz, hz, &t0, &t1)):
            continue
        if t1 <= t0:
            continue
        q = (t1 - t0) / step - 0.5
        if q <= 0.0:
            continue
        ns = <long>ceil(q)

        trans = 1.0
        acc_c0 = acc_c1 = acc_c2 = 0.0
        acc_a = m1 = m2 = 0.0
        zref = 0.0
        haveref = False
        neval = 0
        j = 0
        while j < ns:
            t = t0 + (j + 0.5) * step
            px = ox + t * dx
            py = oy + t * dy
            pz = oz + t * dz
            gx = (px - lx) * inv_vox
            gy = (py - ly) * inv_vox
            gz = (pz - lz) * inv_vox
            if bsz > 0:
                cx = <int>gx
                cy = <int>gy
                cz = <int>gz
                if cx < 0: cx = 0
                elif cx >= res: cx = res - 1
                if cy < 0: cy = 0
                elif cy >= res: cy = res - 1
                if cz < 0: cz = 0
                elif cz >= res: cz = res - 1
                bix = ((cx // bsz) * nb + (cy // bsz)) * nb + (cz // bsz)
                if not blocks[bix]:
                    te = _block_exit(ox, oy, oz, dx, dy, dz, lx, ly, lz,
                                     bw, cx // bsz, cy // bsz, cz // bsz)
                    jn = <long>ceil((te - t0) / step - 0.5)
                    j = jn if jn > j else j + 1
                    continue
            cnt = _gather(res, slot, dens, gx - 0.5, gy - 0.5, gz - 0.5,
                          &sig_raw, rows, wts)
            neval += 1
            sig = sig_raw if sig_raw > 0.0 else 0.0
            if sigma_skip > 0.0 and sig < sigma_skip:
                j += 1
                continue
            alpha = 1.0 - exp(-sig * step)
            if alpha > 0.0:
                x0 = x1 = x2 = 0.0
                for k in range(cnt):
                    row = rows[k]
                    w = wts[k]
                    x0 += w * <double>sh[3 * row]
                    x1 += w * <double>sh[3 * row + 1]
                    x2 += w * <double>sh[3 * row + 2]
                w = trans * alpha
                acc_c0 += w / (1.0 + exp(-x0))
                acc_c1 += w / (1.0 + exp(-x1))
                acc_c2 += w / (1.0 + exp(-x2))
                acc_a += w
                if not haveref:
                    zref = t
                    haveref = True
                s = t - zref
                m1 += w * s
                m2 += w * s * s
                trans *= 1.0 - alpha
                if t_stop > 0.0 and trans < t_stop:
                    out_stop[r] = 1
                    j += 1
                    break
            j += 1

        out_color[3 * r] = acc_c0
        out_color[3 * r + 1] = acc_c1
        out_color[3 * r + 2] = acc_c2
        out_alpha[r] = acc_a
        out_neval[r] = neval
        zhat = m1 + acc_a * zref
        out_depth[r] = zhat
        if acc_a > 0.0:
            d0 = zhat - zref
            s = (m2 - 2.0 * d0 * m1 + d0 * d0 * acc_a) / acc_a
            out_var[r] = s if s > 0.0 else 0.0


def render_rays(int res, lo, double voxel,
                int[::1] slot, real[::1] density, real[:, ::1] sh0,
                blocks, int block_size,
                double[:, ::1] origins, double[:, ::1] dirs,
                double step, double sigma_skip, double t_stop):
    cdef long n = origins.shape[0]
    color = np.zeros((n, 3), dtype=np.float64)
    alpha = np.zeros(n, dtype=np.float64)
    depth = np.zeros(n, dtype=np.float64)
    var = np.zeros(n, dtype=np.float64)
    neval = np.zeros(n, dtype=np.int64)
    stopped = np.zeros(n, dtype=np.uint8)

    cdef double[:, ::1] color_v = color
    cdef double[::1] alpha_v = alpha
    cdef double[::1] depth_v = depth
    cdef double[::1] var_v = var
    cdef long[::1] neval_v = neval
    cdef unsigned char[::1] stop_v = stopped
    cdef double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)

    cdef unsigned char[::1] blocks_v
    cdef int bsz = 0, nb = 0
    if blocks is not None and block_size > 0:
        blocks_v = blocks
        bsz = block_size
        nb = (res + block_size - 1) // block_size
    else:
        blocks_v = np.zeros(1, dtype=np.uint8)

    with nogil:
        _forward_range(res, lo_v[0], lo_v[1], lo_v[2], voxel,
                       &slot[0], &density[0] if density.shape[0] else NULL,
                       &sh0[0, 0] if sh0.shape[0] else NULL,
                       &blocks_v[0], bsz, nb,
                       &origins[0, 0] if n else NULL, &dirs[0, 0] if n else NULL,
                       0, n, step, sigma_skip, t_stop,
                       &color_v[0, 0] if n else NULL, &alpha_v[0] if n else NULL,
                       &depth_v[0] if n else NULL, &var_v[0] if n else NULL,
                       &neval_v[0] if n else NULL, &stop_v[0] if n else NULL)
    return {"color": color, "alpha": alpha, "depth": depth, "depth_var": var,
            "n_eval": neval, "stopped": stopped}


cdef void _backward_range(
        int res, double lx, double ly, double lz, double voxel,
        const int* slot, const real* dens, const real* sh,
        const unsigned char* blocks, int bsz, int nb,
        const double* origins, const double* dirs,
        long r_lo, long r_hi,
        double step, double sigma_skip, double t_stop,
        const double* tot_c, const double* tot_a,
        const double* tot_z, const double* tot_v,
        const double* g_color, const double* g_alpha,
        const double* g_depth, const double* g_var,
        double* g_dens, double* g_sh) nogil:
    cdef double hx = lx + res * voxel
    cdef double hy = ly + res * voxel
    cdef double hz = lz + res * voxel
    cdef double inv_vox = 1.0 / voxel
    cdef double bw = bsz * voxel
    cdef long r, ns, j, jn
    cdef double ox, oy, oz, dx, dy, dz, t0, t1, q, t
    cdef double px, py, pz, gx, gy, gz
    cdef double sig_raw, sig, alpha, w, te, wgt
    cdef double trans, te_c
    cdef double c0, c1, c2, x0, x1, x2, zd
    cdef double pc0, pc1, pc2, pa, pz_, pq
    cdef double ca, cz, cq, cv
    cdef double dc0, dc1, dc2, da, dzv, dq, dv
    cdef double gc0, gc1, gc2, ga, gz_, gv
    cdef double gsig, gx0, gx1, gx2
    cdef int cx, cy, cz_i, bix, cnt, k, row
    cdef int rows[8]
    cdef double wts[8]

    for r in range(r_lo, r_hi):
        ox = origins[3 * r]
        oy = origins[3 * r + 1]
        oz = origins[3 * r + 2]
        dx = dirs[3 * r]
        dy = dirs[3 * r + 1]
        dz = dirs[3 * r + 2]
        t0 = 0.0
        t1 = INF
        if not (_slab(ox, dx, lx, hx, &t0, &t1)
                and _slab(oy, dy, ly, hy, &t0, &t1)
                and _slab(oz, dz, lz, hz, &t0, &t1)):
            continue
        if t1 <= t0:
            continue
        q = (t1 - t0) / step - 0.5
        if q <= 0.0:
            continue
        ns = <long>ceil(q)

        gc0 = g_color[3 * r]
        gc1 = g_color[3 * r + 1]
        gc2 = g_color[3 * r + 2]
        ga = g_alpha[r]
        gz_ = g_depth[r]
        gv = g_var[r]
        ca = tot_a[r]
        cz = tot_z[r]
        cq = tot_v[r] * ca
        cv = tot_v[r]

        trans = 1.0
        pc0 = pc1 = pc2 = pa = pz_ = pq = 0.0
        j = 0
        while j < ns:
            t = t0 + (j + 0.5) * step
            px = ox + t * dx
            py = oy + t * dy
            pz = oz + t * dz
            gx = (px - lx) * inv_vox
            gy = (py - ly) * inv_vox
            gz = (pz - lz) * inv_vox
            if bsz > 0:
                cx = <int>gx
                cy = <int>gy
                cz_i = <int>gz
                if cx < 0: cx = 0
                elif cx >= res: cx = res - 1
                if cy < 0: cy = 0
                elif cy >= res: cy = res - 1
                if cz_i < 0: cz_i = 0
                elif cz_i >= res: cz_i = res - 1
                bix = ((cx // bsz) * nb + (cy // bsz)) * nb + (cz_i // bsz)
                if not blocks[bix]:
                    te = _block_exit(ox, oy, oz, dx, dy, dz, lx, ly, lz,
                                     bw, cx // bsz, cy // bsz, cz_i // bsz)
                    jn = <long>ceil((te - t0) / step - 0.5)
                    j = jn if jn > j else j + 1
                    continue
            cnt = _gather(res, slot, dens, gx - 0.5, gy - 0.5, gz - 0.5,
                          &sig_raw, rows, wts)
            sig = sig_raw if sig_raw > 0.0 else 0.0
            if sigma_skip > 0.0 and sig < sigma_skip:
                j += 1
                continue
            if sig > 0.0:
                alpha = 1.0 - exp(-sig * step)
                x0 = x1 = x2 = 0.0
                for k in range(cnt):
                    row = rows[k]
                    w = wts[k]
                    x0 += w * <double>sh[3 * row]
                    x1 += w * <double>sh[3 * row + 1]
                    x2 += w * <double>sh[3 * row + 2]
                c0 = 1.0 / (1.0 + exp(-x0))
                c1 = 1.0 / (1.0 + exp(-x1))
                c2 = 1.0 / (1.0 + exp(-x2))
                wgt = trans * alpha
                zd = (t - cz) * (t - cz)

                dc0 = step * (c0 * trans - (tot_c[3 * r] - pc0))
                dc1 = step * (c1 * trans - (tot_c[3 * r + 1] - pc1))
                dc2 = step * (c2 * trans - (tot_c[3 * r + 2] - pc2))
                da = step * (trans - (ca - pa))
                dzv = step * (t * trans - (cz - pz_))
                dq = step * (zd * trans - (cq - pq)) \
                    - 2.0 * dzv * (cz - ca * cz)
                gsig = gc0 * dc0 + gc1 * dc1 + gc2 * dc2 + ga * da + gz_ * dzv
                if gv != 0.0 and ca > 0.0:
                    dv = (dq - cv * da) / ca
                    gsig += gv * dv

                gx0 = gc0 * wgt * c0 * (1.0 - c0)
                gx1 = gc1 * wgt * c1 * (1.0 - c1)
                gx2 = gc2 * wgt * c2 * (1.0 - c2)
                for k in range(cnt):
                    row = rows[k]
                    w = wts[k]
                    g_dens[row] += w * gsig
                    g_sh[3 * row] += w * gx0
                    g_sh[3 * row + 1] += w * gx1
                    g_sh[3 * row + 2] += w * gx2

                pc0 += wgt * c0
                pc1 += wgt * c1
                pc2 += wgt * c2
                pa += wgt
                pz_ += wgt * t
                pq += wgt * zd
                trans *= 1.0 - alpha
                if t_stop > 0.0 and trans < t_stop:
                    break
            j += 1


def render_rays_backward(int res, lo, double voxel,
                         int[::1] slot, real[::1] density, real[:, ::1] sh0,
                         blocks, int block_size,
                         double[:, ::1] origins, double[:, ::1] dirs,
                         double step, double sigma_skip, double t_stop,
                         double[:, ::1] color, double[::1] alpha,
                         double[::1] depth, double[::1] depth_var,
                         double[:, ::1] g_color, double[::1] g_alpha,
                         double[::1] g_depth, double[::1] g_var):
    cdef long n = origins.shape[0]
    g_density = np.zeros(density.shape[0], dtype=np.float64)
    g_sh0 = np.zeros((density.shape[0], 3), dtype=np.float64)
    cdef double[::1] gd_v = g_density
    cdef double[:, ::1] gs_v = g_sh0
    cdef double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)

    cdef unsigned char[::1] blocks_v
    cdef int bsz = 0, nb = 0
    if blocks is not None and block_size > 0:
        blocks_v = blocks
        bsz = block_size
        nb = (res + block_size - 1) // block_size
    else:
        blocks_v = np.zeros(1, dtype=np.uint8)

    if n == 0 or density.shape[0] == 0:
        return g_density, g_sh0

    with nogil:
        _backward_range(res, lo_v[0], lo_v[1], lo_v[2], voxel,
                        &slot[0], &density[0], &sh0[0, 0],
                        &blocks_v[0], bsz, nb,
                        &origins[0, 0], &dirs[0, 0], 0, n,
                        step, sigma_skip, t_stop,
                        &color[0, 0], &alpha[0], &depth[0], &depth_var[0],
                        &g_color[0, 0], &g_alpha[0], &g_depth[0], &g_var[0],
                        &gd_v[0], &gs_v[0, 0])
    return g_density, g_sh0


cdef void _visit_range(
        int res, double lx, double ly, double lz, double voxel,
        const int* slot, const real* dens,
        const unsigned char* blocks, int bsz, int nb,
        const double* origins, const double* dirs,
        long r_lo, long r_hi,
        double step, double tau_t, double tau_sigma,
        double sigma_skip, double t_stop, bint mark_neighbors,
        unsigned char* visited) nogil:
    cdef double hx = lx + res * voxel
    cdef double hy = ly + res * voxel
    cdef double hz = lz + res * voxel
    cdef double inv_vox = 1.0 / voxel
    cdef double bw = bsz * voxel
    cdef long r, ns, j, jn
    cdef double ox, oy, oz, dx, dy, dz, t0, t1, q, t
    cdef double px, py, pz, gx, gy, gz
    cdef double sig_raw, sig, alpha, te, trans
    cdef long bx, by, bz, ix, iy, iz
    cdef int cx, cy, cz, bix, cnt, a, b, c
    cdef int rows[8]
    cdef double wts[8]

    for r in range(r_lo, r_hi):
        ox = origins[3 * r]
        oy = origins[3 * r + 1]
        oz = origins[3 * r + 2]
        dx = dirs[3 * r]
        dy = dirs[3 * r + 1]
        dz = dirs[3 * r + 2]
        t0 = 0.0
        t1 = INF
        if not (_slab(ox, dx, lx, hx, &t0, &t1)
                and _slab(oy, dy, ly, hy, &t0, &t1)
                and _slab(oz, dz, lz, hz, &t0, &t1)):
            continue
        if t1 <= t0:
            continue
        q = (t1 - t0) / step - 0.5
        if q <= 0.0:
            continue
        ns = <long>ceil(q)

        trans = 1.0
        j = 0
        while j < ns:
            t = t0 + (j + 0.5) * step
            px = ox + t * dx
            py = oy + t * dy
            pz = oz + t * dz
            gx = (px - lx) * inv_vox
            gy = (py - ly) * inv_vox
            gz = (pz - lz) * inv_vox
            cx = <int>gx
            cy = <int>gy
            cz = <int>gz
            if cx < 0: cx = 0
            elif cx >= res: cx = res - 1
            if cy < 0: cy = 0
            elif cy >= res: cy = res - 1
            if cz < 0: cz = 0
            elif cz >= res: cz = res - 1
            if bsz > 0:
                bix = ((cx // bsz) * nb + (cy // bsz)) * nb + (cz // bsz)
                if not blocks[bix]:
                    te = _block_exit(ox, oy, oz, dx, dy, dz, lx, ly, lz,
                                     bw, cx // bsz, cy // bsz, cz // bsz)
                    jn = <long>ceil((te - t0) / step - 0.5)
                    j = jn if jn > j else j + 1
                    continue
            _gather(res, slot, dens, gx - 0.5, gy - 0.5, gz - 0.5,
                    &sig_raw, rows, wts)
            sig = sig_raw if sig_raw > 0.0 else 0.0
            if trans > tau_t and sig > tau_sigma:
                if mark_neighbors:
                    bx = <long>floor(gx - 0.5)
                    by = <long>floor(gy - 0.5)
                    bz = <long>floor(gz - 0.5)
                    for a in range(2):
                        ix = bx + a
                        if ix < 0 or ix >= res:
                            continue
                        for b in range(2):
                            iy = by + b
                            if iy < 0 or iy >= res:
                                continue
                            for c in range(2):
                                iz = bz + c
                                if 0 <= iz < res:
                                    visited[(ix * res + iy) * res + iz] = 1
                else:
                    visited[(cx * res + cy) * res + cz] = 1
            if not (sigma_skip > 0.0 and sig < sigma_skip):
                alpha = 1.0 - exp(-sig * step)
                trans *= 1.0 - alpha
                if trans <= tau_t:
                    break
                if t_stop > 0.0 and trans < t_stop:
                    break
            j += 1


def visit_mask(int res, lo, double voxel,
               int[::1] slot, real[::1] density,
               blocks, int block_size,
               double[:, ::1] origins, double[:, ::1] dirs,
               double step, double tau_t, double tau_sigma,
               double sigma_skip, double t_stop, bint mark_neighbors):
    visited = np.zeros(res**3, dtype=np.uint8)
    cdef unsigned char[::1] vis_v = visited
    cdef double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef long n = origins.shape[0]

    cdef unsigned char[::1] blocks_v
    cdef int bsz = 0, nb = 0
    if blocks is not None and block_size > 0:
        blocks_v = blocks
        bsz = block_size
        nb = (res + block_size - 1) // block_size
    else:
        blocks_v = np.zeros(1, dtype=np.uint8)

    if n == 0:
        return visited
    with nogil:
        _visit_range(res, lo_v[0], lo_v[1], lo_v[2], voxel,
                     &slot[0], &density[0] if density.shape[0] else NULL,
                     &blocks_v[0], bsz, nb,
                     &origins[0, 0], &dirs[0, 0], 0, n,
                     step, tau_t, tau_sigma, sigma_skip, t_stop,
                     mark_neighbors, &vis_v[0])
    return visited


def sample_trilinear(int res, lo, double voxel,
                     int[::1] slot, real[::1] density, real[:, ::1] sh0,
                     double[:, ::1] points):
    cdef long n = points.shape[0]
    sigma = np.zeros(n, dtype=np.float64)
    color = np.zeros((n, 3), dtype=np.float64)
    cdef double[::1] sig_v = sigma
    cdef double[:, ::1] col_v = color
    cdef double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double inv_vox = 1.0 / voxel
    cdef long i
    cdef int cnt, k, row
    cdef double sig_raw, w, x0, x1, x2
    cdef int rows[8]
    cdef double wts[8]
    if density.shape[0] == 0:
        return sigma, color
    with nogil:
        for i in range(n):
            cnt = _gather(res, &slot[0], &density[0],
                          (points[i, 0] - lo_v[0]) * inv_vox - 0.5,
                          (points[i, 1] - lo_v[1]) * inv_vox - 0.5,
                          (points[i, 2] - lo_v[2]) * inv_vox - 0.5,
                          &sig_raw, rows, wts)
            sig_v[i] = sig_raw
            x0 = x1 = x2 = 0.0
            for k in range(cnt):
                row = rows[k]
                w = wts[k]
                x0 += w * <double>sh0[row, 0]
                x1 += w * <double>sh0[row, 1]
                x2 += w * <double>sh0[row, 2]
            col_v[i, 0] = x0
            col_v[i, 1] = x1
            col_v[i, 2] = x2
    return sigma, color
