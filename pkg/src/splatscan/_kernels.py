"""Sequential numba kernels: tiled splat compositing (forward/backward) and voxel DDA.

Kernels are deliberately single-threaded — pixel loops carry an order-dependent
transmittance product and run-to-run determinism is a hard requirement — and
compiled with ``cache=True`` so repeated CLI invocations skip recompilation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Per-splat alpha ceiling: keeps 1 - f strictly positive so the backward pass can
# reconstruct transmittance by division. Only reachable for hand-built opacity-1
# splats; training opacities are sigmoid-bounded below 1.
F_MAX = 1.0 - 1e-12


@njit(cache=True)
def bin_splats(u, v, r2d, width, height, tile, support):
    """CSR tile lists of splat indices, depth order preserved within each tile."""
    m = u.shape[0]
    n_tx = (width + tile - 1) // tile
    n_ty = (height + tile - 1) // tile
    x0 = np.empty(m, np.int64)
    x1 = np.empty(m, np.int64)
    y0 = np.empty(m, np.int64)
    y1 = np.empty(m, np.int64)
    for k in range(m):
        s = support * r2d[k]
        x0[k] = max(0, int(np.ceil(u[k] - s)))
        x1[k] = min(width - 1, int(np.floor(u[k] + s)))
        y0[k] = max(0, int(np.ceil(v[k] - s)))
        y1[k] = min(height - 1, int(np.floor(v[k] + s)))

    offsets = np.zeros(n_tx * n_ty + 1, np.int64)
    for k in range(m):
        if x1[k] < x0[k] or y1[k] < y0[k]:
            continue
        for ty in range(y0[k] // tile, y1[k] // tile + 1):
            for tx in range(x0[k] // tile, x1[k] // tile + 1):
                offsets[ty * n_tx + tx + 1] += 1
    for i in range(1, offsets.shape[0]):
        offsets[i] += offsets[i - 1]

    lists = np.empty(offsets[-1], np.int64)
    fill = offsets[:-1].copy()
    for k in range(m):
        if x1[k] < x0[k] or y1[k] < y0[k]:
            continue
        for ty in range(y0[k] // tile, y1[k] // tile + 1):
            for tx in range(x0[k] // tile, x1[k] // tile + 1):
                tid = ty * n_tx + tx
                lists[fill[tid]] = k
                fill[tid] += 1
    return offsets, lists


@njit(cache=True)
def composite_forward(u, v, r2d, depth, opa, col, height, width, tile, support,
                      eps_t, offsets, lists):
    """Front-to-back alpha compositing of projected isotropic splats.

    Returns (color, depth, silhouette, count); count is the number of splats
    actually composited per pixel (diagnostics).
    """
    color = np.zeros((height, width, 3))
    dep = np.zeros((height, width))
    sil = np.zeros((height, width))
    cnt = np.zeros((height, width), np.int32)
    n_tx = (width + tile - 1) // tile
    n_ty = (height + tile - 1) // tile
    for ty in range(n_ty):
        py_hi = min((ty + 1) * tile, height)
        for tx in range(n_tx):
            tid = ty * n_tx + tx
            lo = offsets[tid]
            hi = offsets[tid + 1]
            if hi == lo:
                continue
            px_hi = min((tx + 1) * tile, width)
            for py in range(ty * tile, py_hi):
                for px in range(tx * tile, px_hi):
                    t = 1.0
                    for n in range(lo, hi):
                        k = lists[n]
                        dx = px - u[k]
                        dy = py - v[k]
                        q = dx * dx + dy * dy
                        sr = support * r2d[k]
                        if q > sr * sr:
                            continue
                        f = opa[k] * np.exp(-q / (2.0 * r2d[k] * r2d[k]))
                        if f > F_MAX:
                            f = F_MAX
                        w = f * t
                        color[py, px, 0] += w * col[k, 0]
                        color[py, px, 1] += w * col[k, 1]
                        color[py, px, 2] += w * col[k, 2]
                        dep[py, px] += w * depth[k]
                        sil[py, px] += w
                        cnt[py, px] += 1
                        t *= 1.0 - f
                        if t < eps_t:
                            break
    return color, dep, sil, cnt


@njit(cache=True)
def composite_backward(u, v, r2d, depth, opa, col, height, width, tile, support,
                       eps_t, offsets, lists, g_color, g_depth):
    """Analytic gradients of the forward compositing pass.

    For pixel loss gradients g_color/g_depth, accumulates per-splat gradients
    w.r.t. the projected parameters (u, v, r2d, depth, opacity, color).  Each
    pixel is swept forward to find its termination point, then backward with a
    suffix accumulator; transmittance before splat k is reconstructed as
    T_after / (1 - f_k), valid because f is clamped below 1.
    """
    m = u.shape[0]
    g_u = np.zeros(m)
    g_v = np.zeros(m)
    g_r = np.zeros(m)
    g_d = np.zeros(m)
    g_o = np.zeros(m)
    g_c = np.zeros((m, 3))
    n_tx = (width + tile - 1) // tile
    n_ty = (height + tile - 1) // tile
    for ty in range(n_ty):
        py_hi = min((ty + 1) * tile, height)
        for tx in range(n_tx):
            tid = ty * n_tx + tx
            lo = offsets[tid]
            hi = offsets[tid + 1]
            if hi == lo:
                continue
            px_hi = min((tx + 1) * tile, width)
            for py in range(ty * tile, py_hi):
                for px in range(tx * tile, px_hi):
                    gc0 = g_color[py, px, 0]
                    gc1 = g_color[py, px, 1]
                    gc2 = g_color[py, px, 2]
                    gd = g_depth[py, px]
                    if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 and gd == 0.0:
                        continue
                    # forward sweep: mirror the forward pass termination exactly
                    t = 1.0
                    last = -1
                    for n in range(lo, hi):
                        k = lists[n]
                        dx = px - u[k]
                        dy = py - v[k]
                        q = dx * dx + dy * dy
                        sr = support * r2d[k]
                        if q > sr * sr:
                            continue
                        f = opa[k] * np.exp(-q / (2.0 * r2d[k] * r2d[k]))
                        if f > F_MAX:
                            f = F_MAX
                        t *= 1.0 - f
                        last = n
                        if t < eps_t:
                            break
                    if last < 0:
                        continue
                    # reverse sweep with suffix accumulator
                    t_after = t
                    acc = 0.0
                    for n in range(last, lo - 1, -1):
                        k = lists[n]
                        dx = px - u[k]
                        dy = py - v[k]
                        q = dx * dx + dy * dy
                        sr = support * r2d[k]
                        if q > sr * sr:
                            continue
                        gauss = np.exp(-q / (2.0 * r2d[k] * r2d[k]))
                        f = opa[k] * gauss
                        clamped = f > F_MAX
                        if clamped:
                            f = F_MAX
                        om = 1.0 - f
                        t_before = t_after / om
                        w = f * t_before
                        g_c[k, 0] += gc0 * w
                        g_c[k, 1] += gc1 * w
                        g_c[k, 2] += gc2 * w
                        g_d[k] += gd * w
                        dot = gc0 * col[k, 0] + gc1 * col[k, 1] + gc2 * col[k, 2] + gd * depth[k]
                        df = dot * t_before - acc / om
                        acc += dot * w
                        if not clamped:
                            g_o[k] += df * gauss
                            coef = df * opa[k] * gauss
                            inv_r2 = 1.0 / (r2d[k] * r2d[k])
                            g_u[k] += coef * dx * inv_r2
                            g_v[k] += coef * dy * inv_r2
                            g_r[k] += coef * q / (r2d[k] * r2d[k] * r2d[k])
                        t_after = t_before
    return g_u, g_v, g_r, g_d, g_o, g_c


@njit(cache=True)
def dda_traverse(origin, endpoint, has_hit, grid_origin, voxel, dims, free_hits, occ_hits):
    """Amanatides-Woo voxel walk from origin to endpoint (both inside the grid).

    Increments free_hits for every traversed voxel before the endpoint voxel;
    the endpoint voxel goes to occ_hits when has_hit, else to free_hits.
    Accumulators are flat int64 arrays of size prod(dims).
    """
    ix = int(np.floor((origin[0] - grid_origin[0]) / voxel))
    iy = int(np.floor((origin[1] - grid_origin[1]) / voxel))
    iz = int(np.floor((origin[2] - grid_origin[2]) / voxel))
    ex = int(np.floor((endpoint[0] - grid_origin[0]) / voxel))
    ey = int(np.floor((endpoint[1] - grid_origin[1]) / voxel))
    ez = int(np.floor((endpoint[2] - grid_origin[2]) / voxel))
    ix = min(max(ix, 0), dims[0] - 1)
    iy = min(max(iy, 0), dims[1] - 1)
    iz = min(max(iz, 0), dims[2] - 1)
    ex = min(max(ex, 0), dims[0] - 1)
    ey = min(max(ey, 0), dims[1] - 1)
    ez = min(max(ez, 0), dims[2] - 1)

    dx = endpoint[0] - origin[0]
    dy = endpoint[1] - origin[1]
    dz = endpoint[2] - origin[2]

    step_x = 1 if dx > 0.0 else -1
    step_y = 1 if dy > 0.0 else -1
    step_z = 1 if dz > 0.0 else -1

    big = 1.0e300
    if dx != 0.0:
        nx = grid_origin[0] + (ix + (1 if step_x > 0 else 0)) * voxel
        t_max_x = (nx - origin[0]) / dx
        t_delta_x = voxel / abs(dx)
    else:
        t_max_x = big
        t_delta_x = big
    if dy != 0.0:
        ny = grid_origin[1] + (iy + (1 if step_y > 0 else 0)) * voxel
        t_max_y = (ny - origin[1]) / dy
        t_delta_y = voxel / abs(dy)
    else:
        t_max_y = big
        t_delta_y = big
    if dz != 0.0:
        nz = grid_origin[2] + (iz + (1 if step_z > 0 else 0)) * voxel
        t_max_z = (nz - origin[2]) / dz
        t_delta_z = voxel / abs(dz)
    else:
        t_max_z = big
        t_delta_z = big

    max_steps = dims[0] + dims[1] + dims[2] + 4
    for _ in range(max_steps):
        if ix == ex and iy == ey and iz == ez:
            break
        flat = (ix * dims[1] + iy) * dims[2] + iz
        free_hits[flat] += 1
        if t_max_x <= t_max_y and t_max_x <= t_max_z:
            ix += step_x
            t_max_x += t_delta_x
        elif t_max_y <= t_max_z:
            iy += step_y
            t_max_y += t_delta_y
        else:
            iz += step_z
            t_max_z += t_delta_z
        if ix < 0 or iy < 0 or iz < 0 or ix >= dims[0] or iy >= dims[1] or iz >= dims[2]:
            return
    flat = (ex * dims[1] + ey) * dims[2] + ez
    if has_hit:
        occ_hits[flat] += 1
    else:
        free_hits[flat] += 1


@njit(cache=True)
def integrate_rays(origin, endpoints, hit_flags, grid_origin, voxel, dims):
    """Run dda_traverse for a batch of rays sharing one origin."""
    total = dims[0] * dims[1] * dims[2]
    free_hits = np.zeros(total, np.int64)
    occ_hits = np.zeros(total, np.int64)
    for i in range(endpoints.shape[0]):
        dda_traverse(origin, endpoints[i], hit_flags[i], grid_origin, voxel, dims,
                     free_hits, occ_hits)
    return free_hits, occ_hits
