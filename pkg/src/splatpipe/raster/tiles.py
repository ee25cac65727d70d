"""16x16 tile binning of projected splats, depth-sorted with index tie-break."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TILE_SIZE = 16


@dataclass
class TileBinning:
    """Per-tile, depth-sorted splat lists in flattened form.

    `point_list[tile_ranges[t]:tile_ranges[t+1]]` are the indices (into the
    projection-state arrays) of the splats overlapping tile t, sorted by
    ascending depth with ties broken by splat index.
    """

    tiles_x: int
    tiles_y: int
    tile_ranges: np.ndarray  # (tiles_x * tiles_y + 1,) int64
    point_list: np.ndarray  # (P,) int64


def bin_splats(
    mean2d: np.ndarray,
    radius: np.ndarray,
    depth: np.ndarray,
    splat_index: np.ndarray,
    width: int,
    height: int,
) -> TileBinning:
    """Assign each splat to every tile its 3-sigma bounding box touches."""
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    n_tiles = tiles_x * tiles_y
    m = len(mean2d)

    # Process splats in (depth, original index) order so that a stable sort
    # by tile id below yields depth-sorted per-tile lists.
    order = np.lexsort((splat_index, depth))

    x0 = np.clip(((mean2d[:, 0] - radius) // TILE_SIZE).astype(np.int64), 0, tiles_x - 1)
    x1 = np.clip(((mean2d[:, 0] + radius) // TILE_SIZE).astype(np.int64), 0, tiles_x - 1)
    y0 = np.clip(((mean2d[:, 1] - radius) // TILE_SIZE).astype(np.int64), 0, tiles_y - 1)
    y1 = np.clip(((mean2d[:, 1] + radius) // TILE_SIZE).astype(np.int64), 0, tiles_y - 1)

    x0, x1, y0, y1 = x0[order], x1[order], y0[order], y1[order]
    counts = (x1 - x0 + 1) * (y1 - y0 + 1)
    total = int(counts.sum())
    tile_ids = np.empty(total, dtype=np.int64)
    entries = np.empty(total, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for k in range(m):
        tx = np.arange(x0[k], x1[k] + 1)
        ty = np.arange(y0[k], y1[k] + 1)
        ids = (ty[:, None] * tiles_x + tx[None, :]).ravel()
        tile_ids[offsets[k] : offsets[k + 1]] = ids
        entries[offsets[k] : offsets[k + 1]] = order[k]

    sort = np.argsort(tile_ids, kind="stable")
    point_list = entries[sort]
    tile_ids = tile_ids[sort]
    tile_ranges = np.searchsorted(tile_ids, np.arange(n_tiles + 1))
    return TileBinning(
        tiles_x=tiles_x,
        tiles_y=tiles_y,
        tile_ranges=tile_ranges.astype(np.int64),
        point_list=point_list,
    )
