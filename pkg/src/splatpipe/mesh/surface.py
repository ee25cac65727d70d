"""Isosurface extraction from the density grid via Marching Cubes."""

from __future__ import annotations

import warnings

import numpy as np
from skimage import measure

from ..core import Scene
from .density import build_density_grid
from .types import Mesh


def extract_surface(
    scene: Scene, threshold: float = 1.0, grid_resolution: int = 128
) -> Mesh:
    """Mesh the density field at the given iso level.

    The grid resolution is fixed by the 16^3 x 8^3 block lattice; a
    differing request is rejected rather than silently resampled.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    grid = build_density_grid(scene, mode="reach")
    if grid_resolution != grid.resolution:
        raise ValueError(
            f"grid resolution is fixed at {grid.resolution} by the block layout"
        )
    if grid.values.max() <= threshold:
        warnings.warn("isosurface is empty: threshold above the maximum density")
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(grid.values, level=threshold)
    return Mesh(grid.to_world(verts), faces)


def _edge_counts(mesh: Mesh) -> dict:
    edges = {}
    for tri in mesh.faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return edges


def is_watertight(mesh: Mesh) -> bool:
    """Every edge shared by exactly two triangles."""
    if mesh.is_empty:
        return False
    return all(c == 2 for c in _edge_counts(mesh).values())


def connected_components(mesh: Mesh) -> list[np.ndarray]:
    """Face-index arrays of the edge-connected components, largest first."""
    if mesh.is_empty:
        return []
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components as cc

    # Faces are connected when they share a vertex.
    f = np.arange(len(mesh.faces))
    rows = np.repeat(f, 3)
    cols = mesh.faces.ravel()
    incidence = coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(len(mesh.faces), len(mesh.vertices))
    )
    adj = incidence @ incidence.T
    n, labels = cc(adj, directed=False)
    comps = [np.flatnonzero(labels == i) for i in range(n)]
    comps.sort(key=len, reverse=True)
    return comps
