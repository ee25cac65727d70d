"""Mesh pipeline: density field, surface extraction, post-processing,
UV atlas, back-projection, and texture refinement."""

import warnings

import numpy as np
import pytest

from conftest import make_sphere_scene
from splatpipe.cameras import Camera, build_camera_rig
from splatpipe.core import ImageBuffer, Scene, inverse_sigmoid, rgb_to_dc
from splatpipe.mesh import (
    IdentityRefiner,
    Mesh,
    StylizeRefiner,
    TexturedMesh,
    backproject_colors,
    build_density_grid,
    builtin_refiners,
    connected_components,
    extract_surface,
    global_density,
    is_watertight,
    laplacian_smooth,
    postprocess_mesh,
    qem_decimate,
    query_density,
    refine_texture,
    remove_dust,
    render_mesh,
    unwrap_uv,
)
from splatpipe.mesh.texture import FixedTargetRefiner
from splatpipe.raster import render


def single_splat_scene(alpha=1.0 - 1e-9, sigma=0.2, position=(0, 0, 0)):
    return Scene(
        positions=np.asarray(position, dtype=np.float64).reshape(1, 3),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), np.log(sigma)),
        opacity_logits=np.array([inverse_sigmoid(alpha)]),
        sh=np.zeros((1, 3, 1)),
    )


def icosphere(subdivisions=3):
    """Unit icosphere built by midpoint subdivision."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = 0.5 * (verts[a] + verts[b])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int64))


class TestDensity:
    def test_lone_splat_center(self):
        scene = single_splat_scene(alpha=0.7)
        grid = build_density_grid(scene, mode="center")
        block = grid.block_index_of(np.zeros(3))
        assert query_density(scene, np.zeros(3), block, grid) == pytest.approx(0.7)

    def test_empty_block_zero(self):
        scene = single_splat_scene(alpha=0.7)
        grid = build_density_grid(scene, mode="center")
        corner = grid.lo + 0.01 * grid.side
        block = grid.block_index_of(corner)
        assert query_density(scene, corner, block, grid) == 0.0

    def test_two_overlapping_splats_sum(self):
        one = single_splat_scene(alpha=0.5)
        scene = Scene(
            positions=np.zeros((2, 3)),
            rotations=np.array([[1.0, 0, 0, 0]] * 2),
            log_scales=np.full((2, 3), np.log(0.2)),
            opacity_logits=np.full(2, inverse_sigmoid(0.5)),
            sh=np.zeros((2, 3, 1)),
        )
        grid = build_density_grid(scene, mode="center")
        block = grid.block_index_of(np.zeros(3))
        assert query_density(scene, np.zeros(3), block, grid) == pytest.approx(1.0)

    def test_density_nonnegative_everywhere(self):
        scene = make_sphere_scene(50, radius=0.5, seed=0)
        grid = build_density_grid(scene)
        assert grid.values.min() >= 0.0

    def test_block_approximation_vs_global(self):
        # For splats whose 3-sigma reach fits inside one block width, the
        # reach-mode lattice matches the unpruned global sum within 5%.
        scene = make_sphere_scene(30, radius=0.6, log_scale=-3.5)
        grid = build_density_grid(scene, mode="reach")
        pts = grid.lattice_points().reshape(-1, 3)
        exact = global_density(scene, pts).reshape(grid.values.shape)
        # Below ~1e-2 the value is pure >3-sigma tail mass, which reach
        # assignment deliberately prunes; gate on meaningful densities.
        meaningful = exact > 1e-2
        rel = np.abs(grid.values[meaningful] - exact[meaningful]) / exact[meaningful]
        assert rel.max() <= 0.05

    def test_grid_shape(self):
        grid = build_density_grid(single_splat_scene())
        assert grid.values.shape == (128, 128, 128)
        assert len(grid.block_splats) == 16**3


class TestSurface:
    def test_single_splat_radius(self):
        scene = single_splat_scene(alpha=1.0 - 1e-12, sigma=0.2)
        mesh = extract_surface(scene, threshold=0.5)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        expected = 0.2 * np.sqrt(2.0 * np.log(2.0))
        assert np.all(np.abs(radii - expected) <= 0.03 * expected)

    def test_watertight(self):
        mesh = extract_surface(single_splat_scene(), threshold=0.5)
        assert is_watertight(mesh)

    def test_threshold_above_max_warns_empty(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            mesh = extract_surface(single_splat_scene(alpha=0.5), threshold=10.0)
        assert mesh.is_empty
        assert any("empty" in str(w.message) for w in caught)

    def test_two_separated_splats_two_components(self):
        scene = Scene(
            positions=np.array([[-0.5, 0, 0], [0.5, 0, 0]]),
            rotations=np.array([[1.0, 0, 0, 0]] * 2),
            log_scales=np.full((2, 3), np.log(0.08)),
            opacity_logits=np.full(2, inverse_sigmoid(1.0 - 1e-9)),
            sh=np.zeros((2, 3, 1)),
        )
        mesh = extract_surface(scene, threshold=0.5)
        assert len(connected_components(mesh)) == 2

    def test_fixed_resolution_enforced(self):
        with pytest.raises(ValueError):
            extract_surface(single_splat_scene(), threshold=0.5, grid_resolution=64)
        with pytest.raises(ValueError):
            extract_surface(single_splat_scene(), threshold=-1.0)


class TestPostprocess:
    def test_decimation_reaches_target(self):
        mesh = icosphere(3)  # 1280 faces
        out = qem_decimate(mesh, 400)
        assert len(out.faces) <= 400
        assert is_watertight(out)

    def test_decimation_preserves_shape(self):
        mesh = icosphere(3)
        out = qem_decimate(mesh, 320)
        # Hausdorff via dense sampling; bound relative to bbox diagonal (=2).
        rng = np.random.default_rng(0)

        def sample(m, n):
            areas = m.face_areas()
            tri = rng.choice(len(m.faces), size=n, p=areas / areas.sum())
            u, v = rng.uniform(size=(2, n))
            flip = u + v > 1
            u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
            a, b, c = (m.vertices[m.faces[tri, k]] for k in range(3))
            return a + u[:, None] * (b - a) + v[:, None] * (c - a)

        from scipy.spatial import cKDTree

        ref = sample(mesh, 200_000)
        probe = sample(out, 20_000)
        d1 = cKDTree(ref).query(probe)[0].max()
        d2 = cKDTree(probe).query(ref)[0].max()
        diagonal = np.linalg.norm(mesh.vertices.max(0) - mesh.vertices.min(0))
        assert max(d1, d2) <= 0.02 * diagonal

    def test_under_target_untouched_by_decimation(self):
        mesh = icosphere(1)
        out = qem_decimate(mesh, 10_000)
        assert len(out.faces) == len(mesh.faces)

    def test_laplacian_shrinks_sphere(self):
        mesh = icosphere(2)
        out = laplacian_smooth(mesh, 0.5)
        assert np.linalg.norm(out.vertices, axis=1).mean() < 1.0

    def test_dust_removed(self):
        body = icosphere(2)
        n = len(body.vertices)
        dust_verts = body.vertices * 1e-3 + 3.0  # tiny far-away copy
        mesh = Mesh(
            np.concatenate([body.vertices, dust_verts]),
            np.concatenate([body.faces, body.faces + n]),
        )
        out = remove_dust(mesh)
        assert len(connected_components(out)) == 1
        assert len(out.faces) == len(body.faces)

    def test_postprocess_pipeline(self):
        out = postprocess_mesh(icosphere(3), target_faces=500)
        assert 0 < len(out.faces) <= 500


class TestUv:
    def test_uvs_in_unit_square(self):
        tex = unwrap_uv(icosphere(2), texture_size=256)
        assert np.all((tex.uvs >= 0.0) & (tex.uvs <= 1.0))
        assert tex.chart_ids.max() < 64

    def test_single_triangle_single_chart(self):
        mesh = Mesh(
            np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64),
            np.array([[0, 1, 2]]),
        )
        tex = unwrap_uv(mesh, texture_size=64)
        assert len(np.unique(tex.chart_ids)) == 1

    def test_cube_charts_disjoint_occupancy(self):
        # Rasterize each chart's triangles into an occupancy mask; charts
        # must not overlap anywhere.
        v = np.array(
            [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
            dtype=np.float64,
        )
        faces = []
        for axis in range(3):
            for side in (0, 1):
                ids = [i for i in range(8) if (i >> (2 - axis)) & 1 == side]
                a, b, c, d = ids
                faces += [[a, b, c], [b, d, c]] if side == 0 else [[a, c, b], [b, c, d]]
        mesh = Mesh(v, np.asarray(faces, dtype=np.int64))
        size = 128
        tex = unwrap_uv(mesh, texture_size=size)
        occupancy = np.zeros((size, size), dtype=int)
        for chart in np.unique(tex.chart_ids):
            mask = np.zeros((size, size), dtype=bool)
            for tri in tex.faces[tex.chart_ids == chart]:
                uv = tex.uvs[tri] * size
                lo = np.floor(uv.min(axis=0)).astype(int)
                hi = np.ceil(uv.max(axis=0)).astype(int)
                mask[lo[1] : hi[1], lo[0] : hi[0]] = True
            occupancy += mask
        assert occupancy.max() <= 1

    def test_empty_mesh_rejected(self):
        with pytest.raises(ValueError):
            unwrap_uv(Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)))


class TestMeshRender:
    def test_background_and_coverage(self):
        mesh = icosphere(2)
        tex = unwrap_uv(mesh, texture_size=64)
        tex.texture = ImageBuffer(np.full((64, 64, 3), 0.2))
        cam = Camera(azimuth_deg=0, elevation_deg=0, width=48, height=48)
        img = render_mesh(tex, cam)
        assert img.alpha()[24, 24] == 1.0  # sphere center covered
        assert img.alpha()[0, 0] == 0.0  # corner is background
        assert np.allclose(img.rgb()[24, 24], 0.2)

    def test_vertex_color_render(self):
        mesh = icosphere(1)
        colors = np.tile([0.9, 0.1, 0.1], (len(mesh.vertices), 1))
        cam = Camera(azimuth_deg=0, elevation_deg=0, width=32, height=32)
        img = render_mesh(mesh, cam, vertex_colors=colors)
        assert np.allclose(img.rgb()[16, 16], [0.9, 0.1, 0.1], atol=1e-6)

    def test_z_buffer_nearest_wins(self):
        # Two stacked triangles; the nearer (red) one must win the overlap.
        verts = np.array(
            [
                [-1, -1, 0.5], [1, -1, 0.5], [0, 1, 0.5],   # nearer to camera
                [-1, -1, -0.5], [1, -1, -0.5], [0, 1, -0.5],
            ],
            dtype=np.float64,
        )
        faces = np.array([[0, 1, 2], [3, 4, 5]])
        colors = np.array([[1, 0, 0]] * 3 + [[0, 0, 1]] * 3, dtype=np.float64)
        cam = Camera(azimuth_deg=0, elevation_deg=0, width=32, height=32)
        img = render_mesh(Mesh(verts, faces), cam, vertex_colors=colors)
        assert img.rgb()[20, 16, 0] > img.rgb()[20, 16, 2]


class TestBackprojection:
    def _textured_sphere(self, scene, texture_size=128):
        mesh = postprocess_mesh(extract_surface(scene, threshold=0.5), 2000)
        tex = unwrap_uv(mesh, texture_size=texture_size)
        rig = build_camera_rig(6, [20.0, -20.0], 2.5, 49.0, (64, 64))
        tex.texture = backproject_colors(tex, scene, rig, texture_size=texture_size)
        return tex, rig

    def test_uniform_color_scene(self):
        scene = make_sphere_scene(
            200, radius=0.5, color=(0.8, 0.2, 0.2), opacity=0.99, log_scale=-2.3
        )
        tex, _ = self._textured_sphere(scene)
        # Most texels carry the object color (everything is covered by the
        # splat shell; tone varies slightly with compositing).
        err = np.abs(tex.texture.data - [0.8, 0.2, 0.2]).mean()
        assert err < 0.1

    def test_hemisphere_colors_land_correctly(self):
        n = 400
        scene = make_sphere_scene(n, radius=0.5, opacity=0.99, log_scale=-2.3)
        top = scene.positions[:, 1] > 0
        scene.sh[top, :, 0] = rgb_to_dc([0.9, 0.1, 0.1])
        scene.sh[~top, :, 0] = rgb_to_dc([0.1, 0.1, 0.9])
        tex, _ = self._textured_sphere(scene)
        from splatpipe.mesh.texture import texel_geometry

        pos, _, seen = texel_geometry(tex, 128)
        # Rendered colors blend across the equator (the splat shell is
        # translucent), so judge texels away from the blend band.
        margin = 0.3
        top_mask = seen & (pos[..., 1] > margin)
        bot_mask = seen & (pos[..., 1] < -margin)
        top_red = tex.texture.data[top_mask][:, 0] > tex.texture.data[top_mask][:, 2]
        bot_blue = tex.texture.data[bot_mask][:, 2] > tex.texture.data[bot_mask][:, 0]
        assert top_red.mean() >= 0.95
        assert bot_blue.mean() >= 0.95


class TestRefinement:
    def _textured_quad(self, size=32):
        verts = np.array(
            [[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], dtype=np.float64
        )
        faces = np.array([[0, 1, 2], [0, 2, 3]])
        uvs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
        rng = np.random.default_rng(0)
        return TexturedMesh(
            verts, faces, uvs=uvs, texture=ImageBuffer(rng.uniform(0, 1, (size, size, 3)))
        )

    def test_identity_refiner_bitwise_noop(self):
        mesh = self._textured_quad()
        rig = build_camera_rig(3, [10.0], 2.5, 49.0, (32, 32))
        out = refine_texture(mesh, IdentityRefiner(), "", n_steps=20, rig=rig)
        assert np.array_equal(out.texture.data, mesh.texture.data)

    def test_zero_steps_noop(self):
        mesh = self._textured_quad()
        rig = build_camera_rig(2, [0.0], 2.5, 49.0, (32, 32))
        out = refine_texture(mesh, StylizeRefiner(), "", n_steps=0, rig=rig)
        assert np.array_equal(out.texture.data, mesh.texture.data)

    def test_fixed_target_converges(self):
        mesh = self._textured_quad(16)
        cam = Camera(azimuth_deg=0, elevation_deg=0, width=64, height=64)
        target = np.full((64, 64, 3), 0.25)
        out = refine_texture(
            mesh, FixedTargetRefiner(target), "", n_steps=200,
            cameras=[cam], step_size=0.5,
        )
        image, _, texel_idx = render_mesh(out, cam, return_aux=True)
        hit = texel_idx >= 0
        err = np.abs(image.rgb()[hit] - 0.25)
        assert err.max() < 2.0 / 255.0

    def test_builtin_refiners(self):
        assert isinstance(builtin_refiners("identity"), IdentityRefiner)
        assert isinstance(builtin_refiners("stylize"), StylizeRefiner)
        with pytest.raises(ValueError):
            builtin_refiners("nope")


class TestMeshTypes:
    def test_face_index_validation(self):
        with pytest.raises(ValueError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 5]]))

    def test_textured_mesh_requires_uv_per_vertex(self):
        with pytest.raises(ValueError):
            TexturedMesh(
                np.zeros((3, 3)),
                np.array([[0, 1, 2]]),
                uvs=np.zeros((2, 2)),
                texture=None,
            )
