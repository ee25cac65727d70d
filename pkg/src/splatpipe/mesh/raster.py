"""Z-buffered textured-triangle rasterizer for meshes.

Used to render textured meshes for texture refinement and to produce
ground-truth views from mesh inputs. Perspective-correct barycentric
interpolation, nearest-texel sampling, white background by default.
"""

from __future__ import annotations

import numpy as np

from ..cameras import Camera
from ..core import ImageBuffer
from .types import Mesh, TexturedMesh


def render_mesh(
    mesh: Mesh,
    camera: Camera,
    background=(1.0, 1.0, 1.0),
    vertex_colors: np.ndarray | None = None,
    return_aux: bool = False,
):
    """Rasterize the mesh; returns an RGBA ImageBuffer.

    Color comes from the mesh texture (via per-vertex UVs) when present,
    else from `vertex_colors`, else mid-gray. With `return_aux`, also
    returns the depth buffer and the per-pixel nearest-texel indices
    (-1 where background or untextured).
    """
    h, w = camera.height, camera.width
    color = np.empty((h, w, 3))
    color[:] = np.asarray(background, dtype=np.float64)
    depth = np.full((h, w), np.inf)
    alpha = np.zeros((h, w))
    texel_idx = np.full((h, w), -1, dtype=np.int64)

    textured = isinstance(mesh, TexturedMesh) and mesh.texture is not None
    tex = mesh.texture.rgb() if textured else None
    th, tw = (tex.shape[0], tex.shape[1]) if textured else (0, 0)
    if vertex_colors is None:
        vertex_colors = np.full((len(mesh.vertices), 3), 0.5)

    cam_pts = camera.world_to_camera(mesh.vertices)
    z = cam_pts[:, 2]
    pix = camera.project(np.where(z[:, None] > 1e-9, cam_pts, [0.0, 0.0, 1.0]))

    for tri in range(len(mesh.faces)):
        i0, i1, i2 = mesh.faces[tri]
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= 1e-6 or z1 <= 1e-6 or z2 <= 1e-6:
            continue
        p0, p1, p2 = pix[i0], pix[i1], pix[i2]
        xmin = max(int(np.floor(min(p0[0], p1[0], p2[0]))), 0)
        xmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]))), w - 1)
        ymin = max(int(np.floor(min(p0[1], p1[1], p2[1]))), 0)
        ymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]))), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
        if abs(area) < 1e-12:
            continue
        xs = np.arange(xmin, xmax + 1)
        ys = np.arange(ymin, ymax + 1)
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((p1[0] - gx) * (p2[1] - gy) - (p2[0] - gx) * (p1[1] - gy)) / area
        w1 = ((p2[0] - gx) * (p0[1] - gy) - (p0[0] - gx) * (p2[1] - gy)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        # Perspective-correct interpolation in 1/z.
        iz = w0 / z0 + w1 / z1 + w2 / z2
        zi = 1.0 / np.maximum(iz, 1e-12)
        closer = inside & (zi < depth[ymin : ymax + 1, xmin : xmax + 1])
        if not closer.any():
            continue
        b0 = (w0 / z0) * zi
        b1 = (w1 / z1) * zi
        b2 = (w2 / z2) * zi

        if textured:
            uv0, uv1, uv2 = mesh.uvs[i0], mesh.uvs[i1], mesh.uvs[i2]
            u = b0 * uv0[0] + b1 * uv1[0] + b2 * uv2[0]
            v = b0 * uv0[1] + b1 * uv1[1] + b2 * uv2[1]
            tx = np.clip((u * tw).astype(np.int64), 0, tw - 1)
            ty = np.clip(((1.0 - v) * th).astype(np.int64), 0, th - 1)
            rgb = tex[ty, tx]
            tidx = ty * tw + tx
        else:
            c0, c1, c2 = vertex_colors[i0], vertex_colors[i1], vertex_colors[i2]
            rgb = (
                b0[..., None] * c0[None, None]
                + b1[..., None] * c1[None, None]
                + b2[..., None] * c2[None, None]
            )
            tidx = np.full(gx.shape, -1, dtype=np.int64)

        sub_c = color[ymin : ymax + 1, xmin : xmax + 1]
        sub_d = depth[ymin : ymax + 1, xmin : xmax + 1]
        sub_a = alpha[ymin : ymax + 1, xmin : xmax + 1]
        sub_t = texel_idx[ymin : ymax + 1, xmin : xmax + 1]
        sub_c[closer] = rgb[closer]
        sub_d[closer] = zi[closer]
        sub_a[closer] = 1.0
        sub_t[closer] = tidx[closer]

    image = ImageBuffer(np.concatenate([color, alpha[..., None]], axis=2))
    if return_aux:
        return image, depth, texel_idx
    return image
