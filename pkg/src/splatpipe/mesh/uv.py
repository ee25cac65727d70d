"""Planar-projection UV atlas: normal-binned charts packed on a shelf."""

from __future__ import annotations

import numpy as np

from .types import Mesh, TexturedMesh

MAX_CHARTS = 64
GUTTER_TEXELS = 2

# The six axis-aligned projection directions and, per direction, the two
# in-plane axes (right-handed so textures are not mirrored).
_AXES = {
    0: (1, 2),  # +x
    1: (1, 2),  # -x
    2: (0, 2),  # +y
    3: (0, 2),  # -y
    4: (0, 1),  # +z
    5: (0, 1),  # -z
}


def _face_bins(mesh: Mesh) -> np.ndarray:
    n = mesh.face_normals()
    axis = np.abs(n).argmax(axis=1)
    sign = np.take_along_axis(n, axis[:, None], axis=1)[:, 0] < 0
    return axis * 2 + sign.astype(np.int64)


def _face_components(faces: np.ndarray, n_vertices: int) -> np.ndarray:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components as cc

    rows = np.repeat(np.arange(len(faces)), 3)
    inc = coo_matrix(
        (np.ones(rows.size), (rows, faces.ravel())), shape=(len(faces), n_vertices)
    )
    _, labels = cc(inc @ inc.T, directed=False)
    return labels


def unwrap_uv(mesh: Mesh, texture_size: int = 1024) -> TexturedMesh:
    """Cluster faces by normal direction, project each chart onto its plane,
    and shelf-pack the charts into the unit square with 2-texel gutters.

    Vertices on chart boundaries are duplicated so each vertex carries a
    single UV coordinate.
    """
    if mesh.is_empty:
        raise ValueError("cannot unwrap an empty mesh")
    bins = _face_bins(mesh)

    # A chart is a connected component within a normal bin; if that exceeds
    # the chart budget, whole bins become single (possibly disconnected)
    # charts, which stays overlap-free across charts because every chart
    # gets its own packed rectangle.
    charts: list[np.ndarray] = []
    for b in range(6):
        fidx = np.flatnonzero(bins == b)
        if len(fidx) == 0:
            continue
        labels = _face_components(mesh.faces[fidx], len(mesh.vertices))
        for c in range(labels.max() + 1):
            charts.append(fidx[labels == c])
    if len(charts) > MAX_CHARTS:
        charts = []
        for b in range(6):
            fidx = np.flatnonzero(bins == b)
            if len(fidx):
                charts.append(fidx)

    # Per chart: duplicate vertices, project to the two in-plane axes.
    new_verts, new_uv_raw, new_faces, face_chart = [], [], [], []
    offset = 0
    rects = []
    for ci, fidx in enumerate(charts):
        faces = mesh.faces[fidx]
        used = np.unique(faces)
        remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used)) + offset
        chart_verts = mesh.vertices[used]
        bin_id = bins[fidx[0]]
        u_ax, v_ax = _AXES[bin_id]
        uv = chart_verts[:, [u_ax, v_ax]].copy()
        if bin_id % 2 == 1:  # flip one axis for back-facing bins
            uv[:, 0] = -uv[:, 0]
        lo = uv.min(axis=0)
        uv -= lo
        rects.append(uv.max(axis=0))
        new_verts.append(chart_verts)
        new_uv_raw.append(uv)
        new_faces.append(remap[faces])
        face_chart.append(np.full(len(fidx), ci, dtype=np.int64))
        offset += len(used)

    vertices = np.concatenate(new_verts)
    faces = np.concatenate(new_faces)
    chart_ids = np.concatenate(face_chart)
    sizes = np.array([np.maximum(r, 1e-9) for r in rects])  # (C, 2) world units

    gutter = GUTTER_TEXELS / texture_size
    scale = _fit_scale(sizes, gutter)
    placements = _shelf_pack(sizes * scale, gutter)

    uvs = np.empty((len(vertices), 2))
    for ci, uv in enumerate(new_uv_raw):
        ox, oy = placements[ci]
        first = faces[chart_ids == ci].min()
        n = len(uv)
        uvs[first : first + n] = uv * scale + (ox, oy)

    uvs = np.clip(uvs, 0.0, 1.0)
    return TexturedMesh(vertices, faces, uvs=uvs, chart_ids=chart_ids)


def _shelf_pack(sizes: np.ndarray, gutter: float):
    """Place rectangles row by row (tallest first); assumes they fit."""
    order = np.argsort(-sizes[:, 1])
    placements = [None] * len(sizes)
    x = y = shelf_h = 0.0
    for i in order:
        w, h = sizes[i]
        if x + w + gutter > 1.0 and x > 0.0:
            y += shelf_h + gutter
            x = 0.0
            shelf_h = 0.0
        placements[i] = (x + gutter / 2, y + gutter / 2)
        x += w + gutter
        shelf_h = max(shelf_h, h)
    return placements


def _pack_fits(sizes: np.ndarray, gutter: float) -> bool:
    order = np.argsort(-sizes[:, 1])
    x = y = shelf_h = 0.0
    for i in order:
        w, h = sizes[i] + gutter
        if w > 1.0 or y + h > 1.0:
            return False
        if x + w > 1.0 and x > 0.0:
            y += shelf_h + gutter
            x = 0.0
            shelf_h = 0.0
        if y + h > 1.0:
            return False
        x += w
        shelf_h = max(shelf_h, h)
    return True


def _fit_scale(sizes: np.ndarray, gutter: float) -> float:
    """Largest uniform scale (via bisection) at which the shelf pack fits."""
    total = (sizes.prod(axis=1)).sum()
    hi = 1.0 / np.sqrt(max(total, 1e-30))
    while not _pack_fits(sizes * hi, gutter):
        hi *= 0.5
        if hi < 1e-9:
            raise RuntimeError("UV packing failed")
    lo = hi
    up = hi * 2
    for _ in range(40):
        mid = 0.5 * (lo + up)
        if _pack_fits(sizes * mid, gutter):
            lo = mid
        else:
            up = mid
    return lo
