"""Spherical capture cameras: every camera orbits and looks at the origin."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORLD_UP = np.array([0.0, 1.0, 0.0])

DEFAULT_RADIUS = 2.5
DEFAULT_FOV_Y = 49.0
DEFAULT_IMAGE_SIZE = (128, 128)


@dataclass
class Camera:
    """Pinhole camera on a sphere around the origin.

    Camera space is x-right, y-down, z-forward; the +z axis points from
    the camera position toward the scene origin.
    """

    azimuth_deg: float
    elevation_deg: float
    radius: float = DEFAULT_RADIUS
    fov_y_deg: float = DEFAULT_FOV_Y
    width: int = DEFAULT_IMAGE_SIZE[0]
    height: int = DEFAULT_IMAGE_SIZE[1]

    rotation: np.ndarray = field(init=False, repr=False)  # world-to-camera, (3, 3)
    translation: np.ndarray = field(init=False, repr=False)  # (3,)
    position: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("camera radius must be positive")
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        self.position = self.radius * np.array(
            [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
        )
        forward = -self.position / np.linalg.norm(self.position)
        up = WORLD_UP
        if abs(float(forward @ up)) > 1.0 - 1e-8:
            up = np.array([0.0, 0.0, 1.0])  # looking straight up/down
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        self.rotation = np.stack([right, down, forward])
        self.translation = -self.rotation @ self.position

    @property
    def focal(self) -> float:
        return 0.5 * self.height / math.tan(0.5 * math.radians(self.fov_y_deg))

    @property
    def principal_point(self) -> tuple[float, float]:
        # Pixel centers sit at integer coordinates 0..W-1 / 0..H-1.
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-space points -> pixel (u, v). Callers must cull z <= 0 first."""
        cx, cy = self.principal_point
        f = self.focal
        z = points_cam[..., 2]
        return np.stack(
            [f * points_cam[..., 0] / z + cx, f * points_cam[..., 1] / z + cy], axis=-1
        )


@dataclass
class CameraRig:
    """The multi-ring spherical capture setup, ordered by (elevation, azimuth)."""

    cameras: list[Camera]

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]


def build_camera_rig(
    n_per_ring: int = 10,
    elevations=(0.0, 30.0),
    radius: float = DEFAULT_RADIUS,
    fov_y_deg: float = DEFAULT_FOV_Y,
    image_size=DEFAULT_IMAGE_SIZE,
) -> CameraRig:
    """Cameras on rings of constant elevation, azimuths k*360/n (last step excluded)."""
    if n_per_ring < 1:
        raise ValueError("n_per_ring must be >= 1")
    elevations = list(elevations)
    if not elevations:
        raise ValueError("at least one elevation ring is required")
    width, height = image_size
    cameras = [
        Camera(
            azimuth_deg=k * 360.0 / n_per_ring,
            elevation_deg=el,
            radius=radius,
            fov_y_deg=fov_y_deg,
            width=width,
            height=height,
        )
        for el in elevations
        for k in range(n_per_ring)
    ]
    return CameraRig(cameras)
