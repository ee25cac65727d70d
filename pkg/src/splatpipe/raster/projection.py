"""EWA perspective projection of 3D Gaussians to screen-space ellipses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cameras import Camera
from ..core import (
    GaussianSplat,
    Scene,
    eval_sh,
    quat_to_rotmat,
    sh_basis,
    sigmoid,
)

NEAR_PLANE = 0.01
# Screen-space low-pass: dilate every 2D covariance by 0.3 px^2 so each
# splat covers at least a pixel.
COV2D_DILATION = 0.3
BOUNDING_SIGMA = 3.0


@dataclass
class ProjectedSplat:
    """One splat after projection: screen ellipse, depth, activated color/opacity."""

    mean2d: np.ndarray  # (2,) pixel coordinates
    cov2d: np.ndarray  # (2, 2) symmetric, after low-pass dilation
    depth: float
    alpha: float
    rgb: np.ndarray  # (3,)


@dataclass
class ProjectionState:
    """Batched projection of the retained (non-culled) splats of a scene.

    Keeps every intermediate the analytic backward pass needs.
    """

    idx: np.ndarray  # (M,) indices into the scene
    n_total: int
    p_cam: np.ndarray  # (M, 3)
    depth: np.ndarray  # (M,)
    mean2d: np.ndarray  # (M, 2)
    cov2d: np.ndarray  # (M, 2, 2)
    conic: np.ndarray  # (M, 3) packed (A, B, C) of inverse cov2d
    radius: np.ndarray  # (M,) 3-sigma pixel radius
    alpha: np.ndarray  # (M,) activated opacity
    rgb: np.ndarray  # (M, 3) evaluated color, clamped to [0, 1]
    # Backward caches.
    quat_unit: np.ndarray  # (M, 4) normalized quaternions
    quat_norm: np.ndarray  # (M,) norms of the stored quaternions
    rot3: np.ndarray  # (M, 3, 3) splat rotation matrices
    scales: np.ndarray  # (M, 3) activated (clamped) scales
    scale_free: np.ndarray  # (M, 3) bool, True where the clamp is inactive
    cov3d: np.ndarray  # (M, 3, 3)
    U: np.ndarray  # (M, 2, 3)  J @ R_world_to_cam
    J: np.ndarray  # (M, 2, 3) projection Jacobian
    viewdir: np.ndarray  # (M, 3) unit direction splat <- camera
    viewvec_norm: np.ndarray  # (M,)
    basis: np.ndarray  # (M, K) SH basis values
    rgb_free: np.ndarray  # (M, 3) bool, True where the [0,1] clamp is inactive


def projection_jacobians(p_cam: np.ndarray, focal: float) -> np.ndarray:
    """Jacobian of the pinhole map (x, y, z) -> (u, v) for each camera-space point."""
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    J = np.zeros((len(p_cam), 2, 3), dtype=np.float64)
    J[:, 0, 0] = focal / z
    J[:, 0, 2] = -focal * x / z**2
    J[:, 1, 1] = focal / z
    J[:, 1, 2] = -focal * y / z**2
    return J


def project_scene(scene: Scene, camera: Camera, near: float = NEAR_PLANE) -> ProjectionState:
    n = len(scene)
    p_cam_all = camera.world_to_camera(scene.positions)
    keep = p_cam_all[:, 2] > near

    idx = np.flatnonzero(keep)
    p_cam = p_cam_all[idx]
    depth = p_cam[:, 2]
    mean2d = camera.project(p_cam)

    quat = scene.rotations[idx]
    quat_norm = np.linalg.norm(quat, axis=1)
    quat_unit = quat / quat_norm[:, None]
    rot3 = quat_to_rotmat(quat_unit)
    scales_raw = np.exp(scene.log_scales[idx])
    scales = np.clip(scales_raw, 1e-6, 10.0)
    scale_free = (scales_raw > 1e-6) & (scales_raw < 10.0)
    M = rot3 * scales[:, None, :]
    cov3d = M @ np.swapaxes(M, 1, 2)

    J = projection_jacobians(p_cam, camera.focal)
    U = J @ camera.rotation
    cov2d = U @ cov3d @ np.swapaxes(U, 1, 2)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))

    alpha = sigmoid(scene.opacity_logits[idx])
    # Bounding radius: at least the 3-sigma ellipse, widened for opaque
    # splats so every pixel above the 1/255 contribution cutoff is binned.
    n_sigma = np.maximum(
        BOUNDING_SIGMA, np.sqrt(2.0 * np.log(np.maximum(255.0 * alpha, 1.0)))
    )
    radius = n_sigma * np.sqrt(lam_max)

    viewvec = scene.positions[idx] - camera.position
    viewvec_norm = np.linalg.norm(viewvec, axis=1)
    viewdir = viewvec / viewvec_norm[:, None]
    basis = sh_basis(viewdir, scene.sh_degree)
    rgb_raw = np.einsum("mck,mk->mc", scene.sh[idx], basis) + 0.5
    rgb_free = (rgb_raw > 0.0) & (rgb_raw < 1.0)
    rgb = np.clip(rgb_raw, 0.0, 1.0)

    # Cull splats whose 3-sigma box misses the viewport entirely.
    visible = (
        (mean2d[:, 0] + radius >= 0)
        & (mean2d[:, 0] - radius <= camera.width - 1)
        & (mean2d[:, 1] + radius >= 0)
        & (mean2d[:, 1] - radius <= camera.height - 1)
    )
    sel = np.flatnonzero(visible)

    return ProjectionState(
        idx=idx[sel],
        n_total=n,
        p_cam=p_cam[sel],
        depth=depth[sel],
        mean2d=mean2d[sel],
        cov2d=cov2d[sel],
        conic=conic[sel],
        radius=radius[sel],
        alpha=alpha[sel],
        rgb=rgb[sel],
        quat_unit=quat_unit[sel],
        quat_norm=quat_norm[sel],
        rot3=rot3[sel],
        scales=scales[sel],
        scale_free=scale_free[sel],
        cov3d=cov3d[sel],
        U=U[sel],
        J=J[sel],
        viewdir=viewdir[sel],
        viewvec_norm=viewvec_norm[sel],
        basis=basis[sel],
        rgb_free=rgb_free[sel],
    )


def project_splat(splat: GaussianSplat, camera: Camera) -> ProjectedSplat | None:
    """Project a single splat; returns None when culled."""
    scene = Scene.from_splats([splat], sh_degree=splat.sh_degree)
    state = project_scene(scene, camera)
    if len(state.idx) == 0:
        return None
    return ProjectedSplat(
        mean2d=state.mean2d[0],
        cov2d=state.cov2d[0],
        depth=float(state.depth[0]),
        alpha=float(state.alpha[0]),
        rgb=state.rgb[0],
    )
