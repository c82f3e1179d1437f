"""Pure-NumPy backend for the ray-marching kernels.

Semantics are identical to the compiled backend: equidistant samples at
t = t_near + (j + 0.5) * step, trilinear interpolation of raw values from the
eight nearest voxel centers (unoccupied or out-of-lattice neighbors contribute
zero), ReLU density / logistic color activations, front-to-back compositing
with optional low-density skipping and early ray termination.

Rays are marched in lockstep chunks with compaction of finished rays, so early
termination saves real work here too, just with NumPy-level granularity. The
coarse block mask is ignored: it only ever skips exactly-zero samples, so
outputs are unchanged.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_CHUNK = 64

_CORNERS = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def _ray_spans(origins, dirs, lo, hi, step):
    """Entry t (clamped >= 0) and per-ray sample count from the slab test."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (lo[None, :] - origins) / dirs
        t_b = (hi[None, :] - origins) / dirs
    t_min = np.minimum(t_a, t_b)
    t_max = np.maximum(t_a, t_b)
    par = np.abs(dirs) < 1e-300
    if np.any(par):
        inside = (origins >= lo[None, :]) & (origins <= hi[None, :])
        t_min = np.where(par, np.where(inside, -np.inf, np.inf), t_min)
        t_max = np.where(par, np.where(inside, np.inf, -np.inf), t_max)
    t0 = np.maximum(t_min.max(axis=1), 0.0)
    t1 = t_max.min(axis=1)
    q = (t1 - t0) / step - 0.5
    ns = np.zeros(origins.shape[0], dtype=np.int64)
    hit = t1 > t0
    ns[hit] = np.maximum(np.ceil(q[hit]), 0.0).astype(np.int64)
    return t0, ns


def _interp(res, lo, voxel, slot, density, sh0, pts, want_color):
    """Trilinear raw sigma (and optionally raw sh0) at world points."""
    g = (pts - lo[None, :]) * (1.0 / voxel) - 0.5
    inb = np.all(np.abs(g) < 2.0 * res + 4.0, axis=1)  # guard int cast overflow
    base = np.zeros((pts.shape[0], 3), dtype=np.int64)
    base[inb] = np.floor(g[inb]).astype(np.int64)
    frac = np.where(inb[:, None], g - base, 0.0)

    sig = np.zeros(pts.shape[0], dtype=np.float64)
    col = np.zeros((pts.shape[0], 3), dtype=np.float64) if want_color else None
    dens64 = density.astype(np.float64, copy=False)
    for a, b, c in _CORNERS:
        ix = base[:, 0] + a
        iy = base[:, 1] + b
        iz = base[:, 2] + c
        valid = inb & (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res) \
            & (iz >= 0) & (iz < res)
        if not np.any(valid):
            continue
        rows = slot[(ix[valid] * res + iy[valid]) * res + iz[valid]]
        occ = rows >= 0
        sel = np.flatnonzero(valid)[occ]
        if sel.size == 0:
            continue
        rows = rows[occ]
        wx = frac[sel, 0] if a else 1.0 - frac[sel, 0]
        wy = frac[sel, 1] if b else 1.0 - frac[sel, 1]
        wz = frac[sel, 2] if c else 1.0 - frac[sel, 2]
        w = wx * wy * wz
        sig[sel] += w * dens64[rows]
        if want_color:
            col[sel] += w[:, None] * sh0[rows].astype(np.float64, copy=False)
    return sig, col


def sample_trilinear(res, lo, voxel, slot, density, sh0, points):
    return _interp(res, lo, voxel, slot, density, sh0, points, want_color=True)


def render_rays(res, lo, voxel, slot, density, sh0, blocks, block_size,
                origins, dirs, step, sigma_skip, t_stop):
    n = origins.shape[0]
    out_color = np.zeros((n, 3), dtype=np.float64)
    acc_a = np.zeros(n, dtype=np.float64)
    acc_m1 = np.zeros(n, dtype=np.float64)
    acc_m2 = np.zeros(n, dtype=np.float64)
    n_eval = np.zeros(n, dtype=np.int64)
    stopped = np.zeros(n, dtype=np.uint8)

    hi = lo + res * voxel
    t0, ns = _ray_spans(origins, dirs, lo, hi, step)
    active = np.flatnonzero(ns > 0)
    trans = np.ones(active.size, dtype=np.float64)
    j0 = 0
    while active.size:
        chunk = int(min(_CHUNK, ns[active].max() - j0))
        j = j0 + np.arange(chunk)
        valid = j[None, :] < ns[active][:, None]
        t = t0[active][:, None] + (j[None, :] + 0.5) * step
        pos = origins[active][:, None, :] + dirs[active][:, None, :] * t[:, :, None]

        sig_raw, col_raw = _interp(res, lo, voxel, slot, density, sh0,
                                   pos.reshape(-1, 3), want_color=True)
        sig = np.maximum(sig_raw.reshape(t.shape), 0.0)
        contrib = valid & (sig >= sigma_skip) if sigma_skip > 0 else valid
        sig_eff = np.where(contrib, sig, 0.0)
        alpha = 1.0 - np.exp(-sig_eff * step)

        cp = np.cumprod(1.0 - alpha, axis=1)
        t_in = trans[:, None] * np.concatenate(
            [np.ones((alpha.shape[0], 1)), cp[:, :-1]], axis=1)
        t_out = trans[:, None] * cp
        if t_stop > 0:
            trig = (t_out < t_stop) & valid
            seen = np.cumsum(trig, axis=1)
            processed = np.concatenate(
                [np.zeros((alpha.shape[0], 1), dtype=np.int64), seen[:, :-1]],
                axis=1) == 0
            processed &= valid
        else:
            trig = np.zeros_like(valid)
            processed = valid

        w = t_in * alpha * processed
        col = 1.0 / (1.0 + np.exp(-col_raw.reshape(t.shape + (3,))))
        out_color[active] += (w[:, :, None] * col).sum(axis=1)
        acc_a[active] += w.sum(axis=1)
        acc_m1[active] += (w * t).sum(axis=1)
        acc_m2[active] += (w * t * t).sum(axis=1)
        n_eval[active] += processed.sum(axis=1)

        hit_stop = (trig & processed).any(axis=1)
        stopped[active[hit_stop]] = 1
        cont = ~hit_stop & (ns[active] > j0 + chunk)
        trans = t_out[cont, -1]
        active = active[cont]
        j0 += chunk

    depth = acc_m1
    var = np.zeros(n, dtype=np.float64)
    pos_a = acc_a > 0
    var[pos_a] = np.maximum(
        (acc_m2[pos_a] - 2.0 * depth[pos_a] * acc_m1[pos_a]
         + depth[pos_a] ** 2 * acc_a[pos_a]) / acc_a[pos_a], 0.0)
    return {
        "color": out_color, "alpha": acc_a, "depth": depth, "depth_var": var,
        "n_eval": n_eval, "stopped": stopped,
    }


def render_rays_backward(res, lo, voxel, slot, density, sh0, blocks, block_size,
                         origins, dirs, step, sigma_skip, t_stop,
                         color, alpha, depth, depth_var,
                         g_color, g_alpha, g_depth, g_var):
    """Adjoint of render_rays; re-marches the rays using the forward totals.

    Per-sample weight derivatives follow the suffix form
    d(sum_k w_k f_k)/d sigma_i = step * (f_i T_i - sum_{k>=i} w_k f_k),
    evaluated with running prefixes so occluded samples stay numerically dead.
    """
    n = origins.shape[0]
    g_density = np.zeros(density.shape[0], dtype=np.float64)
    g_sh0 = np.zeros((density.shape[0], 3), dtype=np.float64)

    tot_q = depth_var * alpha  # unnormalized depth second moment about z-hat

    hi = lo + res * voxel
    t0, ns = _ray_spans(origins, dirs, lo, hi, step)
    active = np.flatnonzero(ns > 0)
    trans = np.ones(active.size, dtype=np.float64)
    pre_c = np.zeros((active.size, 3), dtype=np.float64)
    pre_a = np.zeros(active.size, dtype=np.float64)
    pre_z = np.zeros(active.size, dtype=np.float64)
    pre_q = np.zeros(active.size, dtype=np.float64)
    j0 = 0
    while active.size:
        chunk = int(min(_CHUNK, ns[active].max() - j0))
        j = j0 + np.arange(chunk)
        valid = j[None, :] < ns[active][:, None]
        t = t0[active][:, None] + (j[None, :] + 0.5) * step
        pos = (origins[active][:, None, :]
               + dirs[active][:, None, :] * t[:, :, None]).reshape(-1, 3)

        sig_raw, col_raw = _interp(res, lo, voxel, slot, density, sh0,
                                   pos, want_color=True)
        sig = np.maximum(sig_raw.reshape(t.shape), 0.0)
        contrib = valid & (sig >= sigma_skip) if sigma_skip > 0 else valid
        sig_eff = np.where(contrib, sig, 0.0)
        a_s = 1.0 - np.exp(-sig_eff * step)

        cp = np.cumprod(1.0 - a_s, axis=1)
        t_in = trans[:, None] * np.concatenate(
            [np.ones((a_s.shape[0], 1)), cp[:, :-1]], axis=1)
        t_out = trans[:, None] * cp
        if t_stop > 0:
            trig = (t_out < t_stop) & valid
            seen = np.cumsum(trig, axis=1)
            processed = np.concatenate(
                [np.zeros((a_s.shape[0], 1), dtype=np.int64), seen[:, :-1]],
                axis=1) == 0
            processed &= valid
        else:
            trig = np.zeros_like(valid)
            processed = valid

        w = t_in * a_s * processed
        col = 1.0 / (1.0 + np.exp(-col_raw.reshape(t.shape + (3,))))

        a_tot = alpha[active][:, None]
        z_tot = depth[active][:, None]
        q_tot = tot_q[active][:, None]
        c_tot = color[active][:, None, :]

        zd = (t - z_tot) ** 2
        # prefixes exclusive of sample i (carry + within-chunk shifted cumsum)
        def _prefix(carry, vals):
            cs = np.cumsum(vals, axis=1)
            return carry[:, None] + cs - vals

        p_a = _prefix(pre_a, w)
        p_z = _prefix(pre_z, w * t)
        p_q = _prefix(pre_q, w * zd)
        p_c = np.concatenate(
            [_prefix(pre_c[:, ch], w * col[:, :, ch])[:, :, None] for ch in range(3)],
            axis=2)

        d_c = step * (col * t_in[:, :, None] - (c_tot - p_c))
        d_a = step * (t_in - (a_tot - p_a))
        d_z = step * (t * t_in - (z_tot - p_z))
        d_q = step * (zd * t_in - (q_tot - p_q)) \
            - 2.0 * d_z * (z_tot - a_tot * z_tot)
        with np.errstate(divide="ignore", invalid="ignore"):
            d_v = np.where(a_tot > 0,
                           (d_q - (depth_var[active][:, None]) * d_a) / a_tot, 0.0)

        g_c_up = g_color[active][:, None, :]
        g_sig = (g_c_up * d_c).sum(axis=2) \
            + g_alpha[active][:, None] * d_a \
            + g_depth[active][:, None] * d_z \
            + g_var[active][:, None] * d_v
        # only strictly positive interpolated densities pass the ReLU
        live = contrib & (sig > 0.0) & processed
        g_sig = np.where(live, g_sig, 0.0)
        g_col = np.where(processed[:, :, None], g_c_up * w[:, :, None], 0.0)
        g_x = g_col * col * (1.0 - col)

        _scatter(res, lo, voxel, slot, pos,
                 g_sig.reshape(-1), g_x.reshape(-1, 3), g_density, g_sh0)

        pre_a += w.sum(axis=1)
        pre_z += (w * t).sum(axis=1)
        pre_q += (w * zd).sum(axis=1)
        pre_c += (w[:, :, None] * col).sum(axis=1)

        hit_stop = (trig & processed).any(axis=1)
        cont = ~hit_stop & (ns[active] > j0 + chunk)
        trans = t_out[cont, -1]
        active = active[cont]
        pre_a, pre_z, pre_q, pre_c = pre_a[cont], pre_z[cont], pre_q[cont], pre_c[cont]
        j0 += chunk

    return g_density.astype(density.dtype), g_sh0.astype(density.dtype)


def _scatter(res, lo, voxel, slot, pts, g_sig, g_x, g_density, g_sh0):
    """Distribute per-sample gradients to the 8 occupied neighbor voxels."""
    nz = np.flatnonzero((g_sig != 0.0) | np.any(g_x != 0.0, axis=1))
    if nz.size == 0:
        return
    pts = pts[nz]
    g_sig = g_sig[nz]
    g_x = g_x[nz]
    g = (pts - lo[None, :]) * (1.0 / voxel) - 0.5
    base = np.floor(g).astype(np.int64)
    frac = g - base
    for a, b, c in _CORNERS:
        ix = base[:, 0] + a
        iy = base[:, 1] + b
        iz = base[:, 2] + c
        valid = (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res) \
            & (iz >= 0) & (iz < res)
        if not np.any(valid):
            continue
        rows = slot[(ix[valid] * res + iy[valid]) * res + iz[valid]]
        occ = rows >= 0
        sel = np.flatnonzero(valid)[occ]
        if sel.size == 0:
            continue
        rows = rows[occ]
        wx = frac[sel, 0] if a else 1.0 - frac[sel, 0]
        wy = frac[sel, 1] if b else 1.0 - frac[sel, 1]
        wz = frac[sel, 2] if c else 1.0 - frac[sel, 2]
        w = wx * wy * wz
        np.add.at(g_density, rows, w * g_sig[sel])
        np.add.at(g_sh0, rows, w[:, None] * g_x[sel])


def visit_mask(res, lo, voxel, slot, density, blocks, block_size,
               origins, dirs, step, tau_t, tau_sigma, sigma_skip, t_stop,
               mark_neighbors):
    """Mark voxels holding a sample with transmittance > tau_t and sigma > tau_sigma.

    Samples are attributed to the lattice cell containing their position, or to
    all 8 interpolation neighbors when ``mark_neighbors`` is set. Marching stops
    once no later sample can qualify (T <= tau_t) or at the renderer's early
    termination threshold when that is enabled.
    """
    visited = np.zeros(res**3, dtype=np.uint8)
    hi = lo + res * voxel
    t0, ns = _ray_spans(origins, dirs, lo, hi, step)
    active = np.flatnonzero(ns > 0)
    trans = np.ones(active.size, dtype=np.float64)
    j0 = 0
    while active.size:
        chunk = int(min(_CHUNK, ns[active].max() - j0))
        j = j0 + np.arange(chunk)
        valid = j[None, :] < ns[active][:, None]
        t = t0[active][:, None] + (j[None, :] + 0.5) * step
        pos = (origins[active][:, None, :]
               + dirs[active][:, None, :] * t[:, :, None]).reshape(-1, 3)

        sig_raw, _ = _interp(res, lo, voxel, slot, density, None,
                             pos, want_color=False)
        sig = np.maximum(sig_raw.reshape(t.shape), 0.0)
        contrib = valid & (sig >= sigma_skip) if sigma_skip > 0 else valid
        sig_eff = np.where(contrib, sig, 0.0)
        a_s = 1.0 - np.exp(-sig_eff * step)

        cp = np.cumprod(1.0 - a_s, axis=1)
        t_in = trans[:, None] * np.concatenate(
            [np.ones((a_s.shape[0], 1)), cp[:, :-1]], axis=1)
        t_out = trans[:, None] * cp
        done = (t_out <= tau_t) | ((t_out < t_stop) if t_stop > 0 else False)
        done &= valid
        seen = np.cumsum(done, axis=1)
        processed = np.concatenate(
            [np.zeros((a_s.shape[0], 1), dtype=np.int64), seen[:, :-1]],
            axis=1) == 0
        processed &= valid

        qualify = processed & (t_in > tau_t) & (sig > tau_sigma)
        qsel = np.flatnonzero(qualify.reshape(-1))
        if qsel.size:
            qpos = pos[qsel]
            if mark_neighbors:
                g = (qpos - lo[None, :]) * (1.0 / voxel) - 0.5
                base = np.floor(g).astype(np.int64)
                for a, b, c in _CORNERS:
                    ijk = base + np.array([a, b, c])
                    ok = np.all((ijk >= 0) & (ijk < res), axis=1)
                    cells = (ijk[ok, 0] * res + ijk[ok, 1]) * res + ijk[ok, 2]
                    visited[cells] = 1
            else:
                ijk = np.floor((qpos - lo[None, :]) * (1.0 / voxel)).astype(np.int64)
                ijk = np.clip(ijk, 0, res - 1)
                cells = (ijk[:, 0] * res + ijk[:, 1]) * res + ijk[:, 2]
                visited[cells] = 1

        hit_stop = (done & processed).any(axis=1)
        cont = ~hit_stop & (ns[active] > j0 + chunk)
        trans = t_out[cont, -1]
        active = active[cont]
        j0 += chunk
    return visited
