"""Orbit cameras: pose construction, intrinsics, projection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatpipe.cameras import Camera, build_camera_rig


class TestPose:
    def test_looks_at_origin(self):
        cam = Camera(azimuth_deg=33.0, elevation_deg=21.0)
        origin_cam = cam.world_to_camera(np.zeros(3))
        # The origin sits straight ahead at distance = radius.
        assert np.allclose(origin_cam, [0.0, 0.0, cam.radius], atol=1e-12)

    def test_position_on_sphere(self):
        cam = Camera(azimuth_deg=120.0, elevation_deg=-40.0, radius=3.0)
        assert np.linalg.norm(cam.position) == pytest.approx(3.0)

    @given(st.floats(-180, 180), st.floats(-80, 80))
    @settings(max_examples=25, deadline=None)
    def test_rotation_orthonormal(self, az, el):
        cam = Camera(azimuth_deg=az, elevation_deg=el)
        assert np.allclose(cam.rotation @ cam.rotation.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(cam.rotation) == pytest.approx(1.0)

    def test_y_down_camera_frame(self):
        # A point above the origin (world +y) lands at negative camera y.
        cam = Camera(azimuth_deg=0.0, elevation_deg=0.0)
        p = cam.world_to_camera(np.array([0.0, 0.5, 0.0]))
        assert p[1] < 0

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            Camera(azimuth_deg=0.0, elevation_deg=0.0, radius=0.0)


class TestIntrinsics:
    def test_focal_from_fov(self):
        cam = Camera(azimuth_deg=0, elevation_deg=0, fov_y_deg=90.0, width=64, height=64)
        assert cam.focal == pytest.approx(32.0)

    def test_principal_point_centered(self):
        cam = Camera(azimuth_deg=0, elevation_deg=0, width=33, height=65)
        assert cam.principal_point == (16.0, 32.0)

    def test_center_projects_to_principal_point(self):
        cam = Camera(azimuth_deg=77.0, elevation_deg=-12.0)
        pix = cam.project(cam.world_to_camera(np.zeros(3)))
        assert np.allclose(pix, cam.principal_point, atol=1e-9)


class TestRig:
    def test_camera_count(self):
        rig = build_camera_rig(10, [15.0, -15.0])
        assert len(rig) == 20

    def test_azimuths_exclude_full_turn(self):
        rig = build_camera_rig(4, [0.0])
        azimuths = [c.azimuth_deg for c in rig]
        assert azimuths == [0.0, 90.0, 180.0, 270.0]

    def test_empty_configs_rejected(self):
        with pytest.raises(ValueError):
            build_camera_rig(0, [0.0])
        with pytest.raises(ValueError):
            build_camera_rig(4, [])
