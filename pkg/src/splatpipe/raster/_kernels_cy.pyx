# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tile compositing kernels; semantics match _kernels_py exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

DEF TILE = 16
DEF ALPHA_CLAMP = 0.99
DEF MIN_CONTRIB = 0.00392156862745098  # 1/255
DEF T_EARLY_OUT = 1e-4


cdef inline double _eff_alpha(double raw) nogil:
    # Clamp at ALPHA_CLAMP; smoothstep fade over [MIN_CONTRIB, 2*MIN_CONTRIB]
    # keeps the image C^1 in the splat parameters near the skip threshold.
    cdef double xf
    if raw >= 2.0 * MIN_CONTRIB:
        return raw if raw < ALPHA_CLAMP else ALPHA_CLAMP
    xf = (raw - MIN_CONTRIB) / MIN_CONTRIB
    return raw * xf * xf * (3.0 - 2.0 * xf)


cdef inline double _eff_alpha_grad(double raw) nogil:
    # d eff / d raw (zero where the 0.99 clamp is active).
    cdef double xf, fade
    if raw >= ALPHA_CLAMP:
        return 0.0
    if raw >= 2.0 * MIN_CONTRIB:
        return 1.0
    xf = (raw - MIN_CONTRIB) / MIN_CONTRIB
    fade = xf * xf * (3.0 - 2.0 * xf)
    return fade + raw * 6.0 * xf * (1.0 - xf) / MIN_CONTRIB


def forward(
    int height,
    int width,
    int tiles_x,
    int tiles_y,
    cnp.int64_t[::1] tile_ranges,
    cnp.int64_t[::1] point_list,
    double[:, ::1] means,
    double[:, ::1] conics,
    double[:, ::1] colors,
    double[::1] alphas,
    double[::1] background,
):
    image_arr = np.empty((height, width, 4), dtype=np.float64)
    final_t_arr = np.ones((height, width), dtype=np.float64)
    n_contrib_arr = np.zeros((height, width), dtype=np.int32)
    cdef double[:, :, ::1] image = image_arr
    cdef double[:, ::1] final_t = final_t_arr
    cdef cnp.int32_t[:, ::1] n_contrib = n_contrib_arr

    cdef int ty, tx, py, px, y0, y1, x0, x1
    cdef Py_ssize_t t, r0, r1, r, sid
    cdef double T, test, dx, dy, power, g, raw, eff
    cdef double cr, cg, cb
    cdef int k, stop, nk

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            r0 = tile_ranges[t]
            r1 = tile_ranges[t + 1]
            nk = <int> (r1 - r0)
            y0 = ty * TILE
            y1 = min((ty + 1) * TILE, height)
            x0 = tx * TILE
            x1 = min((tx + 1) * TILE, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    T = 1.0
                    cr = 0.0
                    cg = 0.0
                    cb = 0.0
                    stop = nk
                    for k in range(nk):
                        sid = point_list[r0 + k]
                        dx = px - means[sid, 0]
                        dy = py - means[sid, 1]
                        power = (
                            -0.5 * (conics[sid, 0] * dx * dx + conics[sid, 2] * dy * dy)
                            - conics[sid, 1] * dx * dy
                        )
                        g = exp(power)
                        raw = alphas[sid] * g
                        if raw < MIN_CONTRIB:
                            continue
                        eff = _eff_alpha(raw)
                        test = T * (1.0 - eff)
                        if test < T_EARLY_OUT:
                            stop = k
                            break
                        cr += colors[sid, 0] * eff * T
                        cg += colors[sid, 1] * eff * T
                        cb += colors[sid, 2] * eff * T
                        T = test
                    image[py, px, 0] = cr + T * background[0]
                    image[py, px, 1] = cg + T * background[1]
                    image[py, px, 2] = cb + T * background[2]
                    image[py, px, 3] = 1.0 - T
                    final_t[py, px] = T
                    n_contrib[py, px] = stop
    return image_arr, final_t_arr, n_contrib_arr


def backward(
    int height,
    int width,
    int tiles_x,
    int tiles_y,
    cnp.int64_t[::1] tile_ranges,
    cnp.int64_t[::1] point_list,
    double[:, ::1] means,
    double[:, ::1] conics,
    double[:, ::1] colors,
    double[::1] alphas,
    double[::1] background,
    double[:, :, ::1] upstream,
):
    cdef Py_ssize_t m = means.shape[0]
    d_means_arr = np.zeros((m, 2), dtype=np.float64)
    d_conics_arr = np.zeros((m, 3), dtype=np.float64)
    d_colors_arr = np.zeros((m, 3), dtype=np.float64)
    d_alphas_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] d_means = d_means_arr
    cdef double[:, ::1] d_conics = d_conics_arr
    cdef double[:, ::1] d_colors = d_colors_arr
    cdef double[::1] d_alphas = d_alphas_arr

    cdef int ty, tx, py, px, y0, y1, x0, x1
    cdef Py_ssize_t t, r0, r1, sid
    cdef double T, test, dx, dy, power, g, raw, eff, om
    cdef double sr, sg, sb, ti, w, d_eff, d_raw, d_g, d_power, d_dx, d_dy
    cdef double u0, u1, u2
    cdef int k, stop, nk

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            r0 = tile_ranges[t]
            r1 = tile_ranges[t + 1]
            nk = <int> (r1 - r0)
            if nk == 0:
                continue
            y0 = ty * TILE
            y1 = min((ty + 1) * TILE, height)
            x0 = tx * TILE
            x1 = min((tx + 1) * TILE, width)
            for py in range(y0, y1):
                for px in range(x0, x1):
                    u0 = upstream[py, px, 0]
                    u1 = upstream[py, px, 1]
                    u2 = upstream[py, px, 2]
                    # Forward sweep: recover final transmittance and stop index.
                    T = 1.0
                    stop = nk
                    for k in range(nk):
                        sid = point_list[r0 + k]
                        dx = px - means[sid, 0]
                        dy = py - means[sid, 1]
                        power = (
                            -0.5 * (conics[sid, 0] * dx * dx + conics[sid, 2] * dy * dy)
                            - conics[sid, 1] * dx * dy
                        )
                        raw = alphas[sid] * exp(power)
                        if raw < MIN_CONTRIB:
                            continue
                        eff = _eff_alpha(raw)
                        test = T * (1.0 - eff)
                        if test < T_EARLY_OUT:
                            stop = k
                            break
                        T = test
                    # Reverse sweep: accumulate gradients.
                    sr = T * background[0]
                    sg = T * background[1]
                    sb = T * background[2]
                    for k in range(stop - 1, -1, -1):
                        sid = point_list[r0 + k]
                        dx = px - means[sid, 0]
                        dy = py - means[sid, 1]
                        power = (
                            -0.5 * (conics[sid, 0] * dx * dx + conics[sid, 2] * dy * dy)
                            - conics[sid, 1] * dx * dy
                        )
                        g = exp(power)
                        raw = alphas[sid] * g
                        if raw < MIN_CONTRIB:
                            continue
                        eff = _eff_alpha(raw)
                        om = 1.0 - eff
                        ti = T / om  # transmittance in front of splat k
                        w = eff * ti

                        d_colors[sid, 0] += u0 * w
                        d_colors[sid, 1] += u1 * w
                        d_colors[sid, 2] += u2 * w

                        d_eff = (
                            u0 * (colors[sid, 0] * ti - sr / om)
                            + u1 * (colors[sid, 1] * ti - sg / om)
                            + u2 * (colors[sid, 2] * ti - sb / om)
                        )
                        d_raw = d_eff * _eff_alpha_grad(raw)
                        if d_raw != 0.0:
                            d_g = d_raw * alphas[sid]
                            d_alphas[sid] += d_raw * g
                            d_power = d_g * g
                            d_conics[sid, 0] += -0.5 * d_power * dx * dx
                            d_conics[sid, 1] += -d_power * dx * dy
                            d_conics[sid, 2] += -0.5 * d_power * dy * dy
                            d_dx = d_power * (-(conics[sid, 0] * dx + conics[sid, 1] * dy))
                            d_dy = d_power * (-(conics[sid, 1] * dx + conics[sid, 2] * dy))
                            d_means[sid, 0] += -d_dx
                            d_means[sid, 1] += -d_dy

                        sr += colors[sid, 0] * w
                        sg += colors[sid, 1] * w
                        sb += colors[sid, 2] * w
                        T = ti
    return d_means_arr, d_conics_arr, d_colors_arr, d_alphas_arr
