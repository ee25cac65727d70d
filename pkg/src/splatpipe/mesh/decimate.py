"""Mesh post-processing: QEM decimation, Laplacian smoothing, dust removal."""

from __future__ import annotations

import heapq

import numpy as np

from .types import Mesh

DUST_AREA_FRACTION = 1e-3
LAPLACIAN_LAMBDA = 0.5
MIN_TRIANGLE_AREA = 1e-12


def _vertex_quadrics(mesh: Mesh) -> np.ndarray:
    """Per-vertex 4x4 error quadrics summed from incident face planes."""
    v = mesh.vertices
    f = mesh.faces
    n = mesh.face_normals()
    d = -np.einsum("fi,fi->f", n, v[f[:, 0]])
    planes = np.concatenate([n, d[:, None]], axis=1)  # (F, 4)
    kp = planes[:, :, None] * planes[:, None, :]  # (F, 4, 4)
    q = np.zeros((len(v), 4, 4))
    for k in range(3):
        np.add.at(q, f[:, k], kp)
    return q


def _collapse_cost(q: np.ndarray, va: np.ndarray, vb: np.ndarray):
    """Optimal collapse position and quadric error for a combined quadric."""
    a = q[:3, :3]
    b = -q[:3, 3]
    mid = 0.5 * (va + vb)
    try:
        pos = np.linalg.solve(a, b)
        if not np.all(np.isfinite(pos)):
            raise np.linalg.LinAlgError
        # An ill-conditioned quadric can put the minimizer far away; keep
        # the collapse local to the edge.
        if np.linalg.norm(pos - mid) > 2.0 * np.linalg.norm(va - vb):
            pos = mid
    except np.linalg.LinAlgError:
        pos = mid
    h = np.append(pos, 1.0)
    return pos, float(h @ q @ h)


def qem_decimate(mesh: Mesh, target_faces: int) -> Mesh:
    """Quadric-error edge-collapse decimation down to <= target_faces."""
    if len(mesh.faces) <= target_faces:
        return mesh.copy()

    verts = mesh.vertices.copy()
    quadrics = _vertex_quadrics(mesh)
    faces = {i: tuple(tri) for i, tri in enumerate(mesh.faces)}
    vert_faces: dict[int, set] = {i: set() for i in range(len(verts))}
    for fi, tri in faces.items():
        for vi in tri:
            vert_faces[vi].add(fi)

    alive = np.ones(len(verts), dtype=bool)
    version = np.zeros(len(verts), dtype=np.int64)

    def push_edge(heap, a, b):
        if a == b:
            return
        a, b = (a, b) if a < b else (b, a)
        pos, cost = _collapse_cost(quadrics[a] + quadrics[b], verts[a], verts[b])
        heapq.heappush(heap, (cost, a, b, version[a], version[b], pos))

    heap: list = []
    edges = set()
    for tri in faces.values():
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            if key not in edges:
                edges.add(key)
                push_edge(heap, *key)

    n_faces = len(faces)
    while n_faces > target_faces and heap:
        cost, a, b, va, vb, pos = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        shared = vert_faces[a] & vert_faces[b]
        if not shared:
            continue
        # Reject collapses that would flip surviving triangles.
        moved = (vert_faces[a] | vert_faces[b]) - shared
        old_a = verts[a].copy()
        flip = False
        for fi in moved:
            tri = faces[fi]
            p = [pos if v in (a, b) else verts[v] for v in tri]
            old = [verts[a] if v == b else verts[v] for v in tri]
            n_new = np.cross(p[1] - p[0], p[2] - p[0])
            n_old = np.cross(old[1] - old[0], old[2] - old[0])
            if np.dot(n_new, n_old) <= 0 or np.linalg.norm(n_new) < 2 * MIN_TRIANGLE_AREA:
                flip = True
                break
        if flip:
            continue

        # Collapse b into a.
        verts[a] = pos
        quadrics[a] = quadrics[a] + quadrics[b]
        alive[b] = False
        for fi in shared:
            for vi in faces[fi]:
                if vi != a and vi != b:
                    vert_faces[vi].discard(fi)
            del faces[fi]
            n_faces -= 1
        for fi in vert_faces[b] - shared:
            tri = faces[fi]
            faces[fi] = tuple(a if v == b else v for v in tri)
            vert_faces[a].add(fi)
        vert_faces[a] -= shared
        vert_faces[b] = set()
        version[a] += 1
        version[b] += 1

        neighbors = set()
        for fi in vert_faces[a]:
            neighbors.update(faces[fi])
        neighbors.discard(a)
        for nb in neighbors:
            push_edge(heap, a, nb)

    new_faces = np.array([faces[k] for k in sorted(faces)], dtype=np.int64)
    used = np.unique(new_faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(verts[used], remap[new_faces])


def laplacian_smooth(mesh: Mesh, lam: float = LAPLACIAN_LAMBDA, iterations: int = 1) -> Mesh:
    """Move each vertex a fraction lam toward the mean of its neighbors."""
    verts = mesh.vertices.copy()
    f = mesh.faces
    for _ in range(iterations):
        acc = np.zeros_like(verts)
        cnt = np.zeros(len(verts))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            np.add.at(acc, f[:, a], verts[f[:, b]])
            np.add.at(acc, f[:, b], verts[f[:, a]])
            np.add.at(cnt, f[:, a], 1)
            np.add.at(cnt, f[:, b], 1)
        has = cnt > 0
        mean = acc[has] / cnt[has, None]
        verts[has] += lam * (mean - verts[has])
    return Mesh(verts, f.copy())


def remove_dust(mesh: Mesh, area_fraction: float = DUST_AREA_FRACTION) -> Mesh:
    """Drop connected components with less than the given fraction of total area."""
    from .surface import connected_components

    comps = connected_components(mesh)
    if len(comps) <= 1:
        return mesh.copy()
    areas = mesh.face_areas()
    total = areas.sum()
    keep_faces = np.concatenate(
        [c for c in comps if areas[c].sum() >= area_fraction * total]
    )
    keep_faces.sort()
    faces = mesh.faces[keep_faces]
    used = np.unique(faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(mesh.vertices[used], remap[faces])


def postprocess_mesh(mesh: Mesh, target_faces: int = 5000) -> Mesh:
    """Decimate to the target budget, smooth once, and drop dust components."""
    if mesh.is_empty:
        return mesh.copy()
    out = qem_decimate(mesh, target_faces)
    out = laplacian_smooth(out, LAPLACIAN_LAMBDA, iterations=1)
    out = remove_dust(out)
    return out
