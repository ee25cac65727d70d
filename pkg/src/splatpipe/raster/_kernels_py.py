"""Pure-numpy tile compositing kernels (fallback for the Cython extension).

Semantics are identical to the compiled kernels: front-to-back alpha
compositing per pixel, per-splat alpha clamped at ALPHA_CLAMP, contributions
below MIN_CONTRIB skipped, and the pixel terminated once transmittance would
drop below T_EARLY_OUT (the terminating splat is not composited).

Contributions just above the skip threshold are faded in with a smoothstep
over [MIN_CONTRIB, 2 * MIN_CONTRIB] so the rendered image is C^1 in the splat
parameters; a hard cutoff would make finite-difference gradient checks fail
on whichever pixel happens to straddle the threshold.
"""

from __future__ import annotations

import numpy as np

from .tiles import TILE_SIZE

ALPHA_CLAMP = 0.99
MIN_CONTRIB = 1.0 / 255.0
T_EARLY_OUT = 1e-4


def _tile_pixels(ty: int, tx: int, height: int, width: int):
    y0, y1 = ty * TILE_SIZE, min((ty + 1) * TILE_SIZE, height)
    x0, x1 = tx * TILE_SIZE, min((tx + 1) * TILE_SIZE, width)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return y0, y1, x0, x1, xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)


def _fade(raw):
    """Cutoff factor in [0, 1] and its derivative w.r.t. raw alpha."""
    x = np.clip((raw - MIN_CONTRIB) / MIN_CONTRIB, 0.0, 1.0)
    fade = x * x * (3.0 - 2.0 * x)
    dfade = np.where((raw > MIN_CONTRIB) & (raw < 2 * MIN_CONTRIB), 6.0 * x * (1.0 - x) / MIN_CONTRIB, 0.0)
    return fade, dfade


def _tile_alphas(ids, means, conics, alphas, px, py):
    """Per-pixel effective alphas (Np, K) after clamp and cutoff, plus raw alpha*G."""
    dx = px[:, None] - means[ids, 0][None, :]
    dy = py[:, None] - means[ids, 1][None, :]
    A = conics[ids, 0][None, :]
    B = conics[ids, 1][None, :]
    C = conics[ids, 2][None, :]
    power = -0.5 * (A * dx * dx + C * dy * dy) - B * dx * dy
    G = np.exp(power)
    raw = alphas[ids][None, :] * G
    fade, _ = _fade(raw)
    eff = np.minimum(ALPHA_CLAMP, raw) * fade
    return dx, dy, G, raw, eff


def _composite_masks(eff):
    """Transmittance before each splat, contribution mask, stop index per pixel."""
    one_minus = 1.0 - eff
    t_before = np.cumprod(one_minus, axis=1)
    t_before = np.concatenate([np.ones((eff.shape[0], 1)), t_before], axis=1)
    t_after = t_before[:, :-1] * one_minus
    # A non-skipped splat whose compositing would push T below the cutoff
    # terminates the pixel and is itself not composited.
    trigger = (eff > 0.0) & (t_after < T_EARLY_OUT)
    k = eff.shape[1]
    stop = np.where(trigger.any(axis=1), trigger.argmax(axis=1), k)
    contrib = (eff > 0.0) & (np.arange(k)[None, :] < stop[:, None])
    weights = np.where(contrib, eff * t_before[:, :-1], 0.0)
    final_t = t_before[np.arange(eff.shape[0]), stop]
    return t_before[:, :-1], contrib, weights, stop, final_t


def forward(
    height: int,
    width: int,
    tiles_x: int,
    tiles_y: int,
    tile_ranges: np.ndarray,
    point_list: np.ndarray,
    means: np.ndarray,
    conics: np.ndarray,
    colors: np.ndarray,
    alphas: np.ndarray,
    background: np.ndarray,
):
    image = np.empty((height, width, 4), dtype=np.float64)
    image[..., :3] = background
    image[..., 3] = 0.0
    final_t = np.ones((height, width), dtype=np.float64)
    n_contrib = np.zeros((height, width), dtype=np.int32)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            ids = point_list[tile_ranges[t] : tile_ranges[t + 1]]
            if len(ids) == 0:
                continue
            y0, y1, x0, x1, px, py = _tile_pixels(ty, tx, height, width)
            _, _, _, _, eff = _tile_alphas(ids, means, conics, alphas, px, py)
            _, _, weights, stop, ft = _composite_masks(eff)
            rgb = weights @ colors[ids] + ft[:, None] * background[None, :]
            shape = (y1 - y0, x1 - x0)
            image[y0:y1, x0:x1, :3] = rgb.reshape(shape + (3,))
            image[y0:y1, x0:x1, 3] = (1.0 - ft).reshape(shape)
            final_t[y0:y1, x0:x1] = ft.reshape(shape)
            n_contrib[y0:y1, x0:x1] = stop.reshape(shape)
    return image, final_t, n_contrib


def backward(
    height: int,
    width: int,
    tiles_x: int,
    tiles_y: int,
    tile_ranges: np.ndarray,
    point_list: np.ndarray,
    means: np.ndarray,
    conics: np.ndarray,
    colors: np.ndarray,
    alphas: np.ndarray,
    background: np.ndarray,
    upstream: np.ndarray,
):
    m = len(means)
    d_means = np.zeros((m, 2), dtype=np.float64)
    d_conics = np.zeros((m, 3), dtype=np.float64)
    d_colors = np.zeros((m, 3), dtype=np.float64)
    d_alphas = np.zeros(m, dtype=np.float64)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            ids = point_list[tile_ranges[t] : tile_ranges[t + 1]]
            if len(ids) == 0:
                continue
            y0, y1, x0, x1, px, py = _tile_pixels(ty, tx, height, width)
            up = upstream[y0:y1, x0:x1, :].reshape(-1, 3)
            dx, dy, G, raw, eff = _tile_alphas(ids, means, conics, alphas, px, py)
            t_before, contrib, weights, stop, ft = _composite_masks(eff)

            col = colors[ids]  # (K, 3)
            # Suffix color behind each splat, background included:
            # S[:, k] = sum_{j>k} c_j w_j + final_T * bg.
            wc = weights[:, :, None] * col[None, :, :]
            suffix = np.cumsum(wc[:, ::-1, :], axis=1)[:, ::-1, :]
            suffix = np.concatenate(
                [suffix[:, 1:, :], np.zeros((len(up), 1, 3))], axis=1
            ) + ft[:, None, None] * background[None, None, :]

            # d L / d eff_alpha for composited splats.
            one_minus = 1.0 - eff
            d_eff = np.einsum(
                "pc,pkc->pk",
                up,
                t_before[:, :, None] * col[None, :, :] - suffix / one_minus[:, :, None],
            )
            d_eff = np.where(contrib, d_eff, 0.0)

            # Through the 0.99 clamp (zero gradient when clamped) and the
            # smoothstep fade near the contribution cutoff.
            fade, dfade = _fade(raw)
            unclamped = raw < ALPHA_CLAMP
            d_raw = np.where(unclamped, d_eff * (fade + raw * dfade), 0.0)
            d_g = d_raw * alphas[ids][None, :]
            d_alpha_act = d_raw * G

            d_power = d_g * G
            A = conics[ids, 0][None, :]
            B = conics[ids, 1][None, :]
            C = conics[ids, 2][None, :]
            d_dx = d_power * (-(A * dx + B * dy))
            d_dy = d_power * (-(B * dx + C * dy))

            np.add.at(d_colors, ids, np.einsum("pk,pc->kc", weights, up))
            np.add.at(d_alphas, ids, d_alpha_act.sum(axis=0))
            np.add.at(d_means, ids, np.stack([-d_dx.sum(axis=0), -d_dy.sum(axis=0)], axis=1))
            np.add.at(
                d_conics,
                ids,
                np.stack(
                    [
                        (-0.5 * d_power * dx * dx).sum(axis=0),
                        (-d_power * dx * dy).sum(axis=0),
                        (-0.5 * d_power * dy * dy).sum(axis=0),
                    ],
                    axis=1,
                ),
            )
    return d_means, d_conics, d_colors, d_alphas
