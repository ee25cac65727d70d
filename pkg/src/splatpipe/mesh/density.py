"""Block-partitioned opacity-weighted density field over a Gaussian scene.

The scene's bounding cube is split into 16^3 blocks, each sampled on an
8^3 lattice (128^3 points globally). The density at a point is the sum of
activated opacity times the Gaussian falloff over the splats assigned to
the point's block, which prunes far-away splats from every query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Scene, quat_to_rotmat

N_BLOCKS = 16
BLOCK_RES = 8
REACH_SIGMA = 3.0
EXTENT_MARGIN = 1.1


def scene_bounding_cube(scene: Scene) -> tuple[np.ndarray, float]:
    """(center, side) of a cube covering the 3-sigma extent of all splats."""
    reach = REACH_SIGMA * scene.activated_scales().max(axis=1, keepdims=True)
    lo = (scene.positions - reach).min(axis=0)
    hi = (scene.positions + reach).max(axis=0)
    center = 0.5 * (lo + hi)
    side = EXTENT_MARGIN * float((hi - lo).max())
    return center, max(side, 1e-6)


def _splat_inverse_covariances(scene: Scene) -> np.ndarray:
    rot = quat_to_rotmat(scene.rotations)
    inv_s2 = 1.0 / scene.activated_scales() ** 2
    return np.einsum("nik,nk,njk->nij", rot, inv_s2, rot)


@dataclass
class DensityGrid:
    """Sampled density lattice plus the per-block splat assignment.

    `mode` selects the assignment rule: "center" keeps only splats whose
    center lies inside a block; "reach" assigns a splat to every block its
    3-sigma bounding box touches, so lattice values near block boundaries
    keep their dominant contributors.
    """

    lo: np.ndarray  # (3,) cube corner
    side: float
    values: np.ndarray  # (R, R, R) density at lattice points, R = 128
    block_splats: list  # 16^3 lists of splat indices, x-major flat order
    mode: str

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return self.side / (self.resolution - 1)

    def lattice_points(self) -> np.ndarray:
        r = self.resolution
        xs = self.lo[0] + np.arange(r) * self.spacing
        ys = self.lo[1] + np.arange(r) * self.spacing
        zs = self.lo[2] + np.arange(r) * self.spacing
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def block_index_of(self, x: np.ndarray) -> tuple[int, int, int]:
        rel = (np.asarray(x, dtype=np.float64) - self.lo) / self.side
        idx = np.clip((rel * N_BLOCKS).astype(int), 0, N_BLOCKS - 1)
        return tuple(int(i) for i in idx)

    def to_world(self, lattice_coords: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(lattice_coords, dtype=np.float64) * self.spacing


def _assign_blocks(scene: Scene, lo: np.ndarray, side: float, mode: str) -> list:
    block_splats = [[] for _ in range(N_BLOCKS**3)]
    block_w = side / N_BLOCKS
    if mode == "center":
        rel = (scene.positions - lo) / block_w
        cells = np.clip(rel.astype(int), 0, N_BLOCKS - 1)
        for i, (bx, by, bz) in enumerate(cells):
            block_splats[(bx * N_BLOCKS + by) * N_BLOCKS + bz].append(i)
    elif mode == "reach":
        reach = REACH_SIGMA * scene.activated_scales().max(axis=1)
        lo_cell = np.clip(
            ((scene.positions - reach[:, None] - lo) / block_w).astype(int),
            0,
            N_BLOCKS - 1,
        )
        hi_cell = np.clip(
            ((scene.positions + reach[:, None] - lo) / block_w).astype(int),
            0,
            N_BLOCKS - 1,
        )
        for i in range(len(scene)):
            for bx in range(lo_cell[i, 0], hi_cell[i, 0] + 1):
                for by in range(lo_cell[i, 1], hi_cell[i, 1] + 1):
                    for bz in range(lo_cell[i, 2], hi_cell[i, 2] + 1):
                        block_splats[(bx * N_BLOCKS + by) * N_BLOCKS + bz].append(i)
    else:
        raise ValueError(f"unknown block assignment mode {mode!r}")
    return [np.asarray(b, dtype=np.int64) for b in block_splats]


def build_density_grid(scene: Scene, mode: str = "reach") -> DensityGrid:
    """Sample the density field on the global 128^3 lattice."""
    if len(scene) == 0:
        raise ValueError("scene is empty")
    center, side = scene_bounding_cube(scene)
    lo = center - 0.5 * side
    block_splats = _assign_blocks(scene, lo, side, mode)

    r = N_BLOCKS * BLOCK_RES
    values = np.zeros((r, r, r), dtype=np.float64)
    spacing = side / (r - 1)
    alphas = scene.activated_opacities()
    inv_cov = _splat_inverse_covariances(scene)
    reach = REACH_SIGMA * scene.activated_scales().max(axis=1)

    # Accumulate each splat over the lattice points of the blocks it is
    # assigned to, further restricted to its own 3-sigma box.
    per_splat_blocks = [[] for _ in range(len(scene))]
    for b, ids in enumerate(block_splats):
        for i in ids:
            per_splat_blocks[i].append(b)

    axes = np.arange(r) * spacing
    for i, blocks in enumerate(per_splat_blocks):
        if not blocks:
            continue
        blocks = np.asarray(blocks)
        bx = blocks // (N_BLOCKS * N_BLOCKS)
        by = (blocks // N_BLOCKS) % N_BLOCKS
        bz = blocks % N_BLOCKS
        cell_lo = np.stack([bx, by, bz], axis=1) * BLOCK_RES
        lo_idx = np.maximum(
            cell_lo.min(axis=0),
            np.floor((scene.positions[i] - reach[i] - lo) / spacing).astype(int),
        )
        hi_idx = np.minimum(
            cell_lo.max(axis=0) + BLOCK_RES - 1,
            np.ceil((scene.positions[i] + reach[i] - lo) / spacing).astype(int),
        )
        lo_idx = np.clip(lo_idx, 0, r - 1)
        hi_idx = np.clip(hi_idx, 0, r - 1)
        if np.any(hi_idx < lo_idx):
            continue
        xs = lo[0] + axes[lo_idx[0] : hi_idx[0] + 1]
        ys = lo[1] + axes[lo_idx[1] : hi_idx[1] + 1]
        zs = lo[2] + axes[lo_idx[2] : hi_idx[2] + 1]
        dx = xs - scene.positions[i, 0]
        dy = ys - scene.positions[i, 1]
        dz = zs - scene.positions[i, 2]
        a = inv_cov[i]
        quad = (
            a[0, 0] * dx[:, None, None] ** 2
            + a[1, 1] * dy[None, :, None] ** 2
            + a[2, 2] * dz[None, None, :] ** 2
            + 2 * a[0, 1] * dx[:, None, None] * dy[None, :, None]
            + 2 * a[0, 2] * dx[:, None, None] * dz[None, None, :]
            + 2 * a[1, 2] * dy[None, :, None] * dz[None, None, :]
        )
        contrib = alphas[i] * np.exp(-0.5 * quad)

        # Zero out lattice points of blocks this splat is not assigned to
        # (only matters in center mode, where the box may cross blocks).
        if mode == "center":
            mask = np.zeros(
                (hi_idx[0] - lo_idx[0] + 1, hi_idx[1] - lo_idx[1] + 1, hi_idx[2] - lo_idx[2] + 1),
                dtype=bool,
            )
            for b0, b1, b2 in zip(bx, by, bz):
                sl = []
                for d, bb in enumerate((b0, b1, b2)):
                    s = max(bb * BLOCK_RES, lo_idx[d]) - lo_idx[d]
                    e = min((bb + 1) * BLOCK_RES - 1, hi_idx[d]) - lo_idx[d]
                    sl.append(slice(s, e + 1))
                mask[tuple(sl)] = True
            contrib = np.where(mask, contrib, 0.0)

        values[
            lo_idx[0] : hi_idx[0] + 1,
            lo_idx[1] : hi_idx[1] + 1,
            lo_idx[2] : hi_idx[2] + 1,
        ] += contrib

    return DensityGrid(lo=lo, side=side, values=values, block_splats=block_splats, mode=mode)


def query_density(scene: Scene, x, block_index, grid: DensityGrid | None = None) -> float:
    """Density at `x` restricted to one block's splat list.

    `block_index` is an (bx, by, bz) triple; the block lists follow the
    center rule (a splat belongs to the block containing its center)
    unless a grid built with another mode is supplied.
    """
    x = np.asarray(x, dtype=np.float64).reshape(3)
    if grid is None:
        center, side = scene_bounding_cube(scene)
        lo = center - 0.5 * side
        block_splats = _assign_blocks(scene, lo, side, "center")
    else:
        block_splats = grid.block_splats
    bx, by, bz = (int(v) for v in block_index)
    ids = block_splats[(bx * N_BLOCKS + by) * N_BLOCKS + bz]
    if len(ids) == 0:
        return 0.0
    alphas = scene.activated_opacities()[ids]
    inv_cov = _splat_inverse_covariances(scene)[ids]
    d = x[None, :] - scene.positions[ids]
    quad = np.einsum("ni,nij,nj->n", d, inv_cov, d)
    return float(np.sum(alphas * np.exp(-0.5 * quad)))


def global_density(scene: Scene, points: np.ndarray) -> np.ndarray:
    """Unpruned density (sum over all splats) at arbitrary points; reference
    for the block approximation."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    alphas = scene.activated_opacities()
    inv_cov = _splat_inverse_covariances(scene)
    out = np.zeros(len(pts))
    for i in range(len(scene)):
        d = pts - scene.positions[i]
        quad = np.einsum("ni,ij,nj->n", d, inv_cov[i], d)
        out += alphas[i] * np.exp(-0.5 * quad)
    return out
