"""Tile-based differentiable rasterizer for Gaussian-splat scenes.

The per-pixel compositing loops run in a compiled Cython kernel when the
extension is available; otherwise a vectorized numpy fallback with identical
semantics is used. `KERNEL_BACKEND` reports which one was selected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cameras import Camera
from ..core import ImageBuffer, Scene, sh_basis_grad
from . import _kernels_py
from .projection import (
    COV2D_DILATION,
    NEAR_PLANE,
    ProjectedSplat,
    ProjectionState,
    project_scene,
    project_splat,
)
from .tiles import TILE_SIZE, TileBinning, bin_splats

try:
    from . import _kernels_cy as _kernels

    KERNEL_BACKEND = "cython"
except ImportError:  # pragma: no cover - depends on the build
    _kernels = _kernels_py
    KERNEL_BACKEND = "python"

__all__ = [
    "KERNEL_BACKEND",
    "ProjectedSplat",
    "ProjectionState",
    "RenderContext",
    "RenderGradients",
    "TileBinning",
    "TILE_SIZE",
    "project_scene",
    "project_splat",
    "render",
    "render_forward",
    "render_backward",
    "backward_from_context",
]


@dataclass
class RenderGradients:
    """Per-splat parameter gradients, aligned with scene splat order."""

    positions: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4)
    log_scales: np.ndarray  # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray  # (N, 3, K)
    mean2d: np.ndarray  # (N, 2) screen-space mean gradient (densification signal)

    @classmethod
    def zeros_like(cls, scene: Scene) -> "RenderGradients":
        n = len(scene)
        return cls(
            positions=np.zeros_like(scene.positions),
            rotations=np.zeros_like(scene.rotations),
            log_scales=np.zeros_like(scene.log_scales),
            opacity_logits=np.zeros_like(scene.opacity_logits),
            sh=np.zeros_like(scene.sh),
            mean2d=np.zeros((n, 2), dtype=np.float64),
        )

    def scaled(self, factor: float) -> "RenderGradients":
        return RenderGradients(
            positions=self.positions * factor,
            rotations=self.rotations * factor,
            log_scales=self.log_scales * factor,
            opacity_logits=self.opacity_logits * factor,
            sh=self.sh * factor,
            mean2d=self.mean2d * factor,
        )


@dataclass
class RenderContext:
    """Forward-pass state retained for the backward pass."""

    scene: Scene
    camera: Camera
    state: ProjectionState
    binning: TileBinning
    final_t: np.ndarray
    n_contrib: np.ndarray


def render_forward(scene: Scene, camera: Camera) -> tuple[ImageBuffer, RenderContext]:
    state = project_scene(scene, camera)
    binning = bin_splats(
        state.mean2d, state.radius, state.depth, state.idx, camera.width, camera.height
    )
    image, final_t, n_contrib = _kernels.forward(
        camera.height,
        camera.width,
        binning.tiles_x,
        binning.tiles_y,
        binning.tile_ranges,
        binning.point_list,
        state.mean2d,
        state.conic,
        state.rgb,
        state.alpha,
        scene.background_color,
    )
    ctx = RenderContext(
        scene=scene,
        camera=camera,
        state=state,
        binning=binning,
        final_t=final_t,
        n_contrib=n_contrib,
    )
    return ImageBuffer(image), ctx


def render(scene: Scene, camera: Camera) -> ImageBuffer:
    """Forward rasterization: RGBA image with front-to-back alpha compositing."""
    image, _ = render_forward(scene, camera)
    return image


def backward_from_context(ctx: RenderContext, upstream: np.ndarray) -> RenderGradients:
    """Analytic gradients of sum(upstream * rendered_rgb) w.r.t. all splat parameters."""
    upstream = np.asarray(upstream, dtype=np.float64)
    camera = ctx.camera
    if upstream.shape != (camera.height, camera.width, 3):
        raise ValueError(
            f"upstream gradient shape {upstream.shape} does not match "
            f"render size ({camera.height}, {camera.width}, 3)"
        )
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream gradient contains non-finite values")

    state = ctx.state
    scene = ctx.scene
    grads = RenderGradients.zeros_like(scene)
    m = len(state.idx)
    if m == 0:
        return grads

    d_mean2d, d_conic, d_color, d_alpha = _kernels.backward(
        camera.height,
        camera.width,
        ctx.binning.tiles_x,
        ctx.binning.tiles_y,
        ctx.binning.tile_ranges,
        ctx.binning.point_list,
        state.mean2d,
        state.conic,
        state.rgb,
        state.alpha,
        scene.background_color,
        upstream,
    )

    # Opacity: alpha = sigmoid(logit).
    d_logit = d_alpha * state.alpha * (1.0 - state.alpha)

    # Color: rgb = clip(sh_eval + 0.5); clamped channels stop the gradient.
    d_rgb_raw = np.where(state.rgb_free, d_color, 0.0)
    d_sh = d_rgb_raw[:, :, None] * state.basis[:, None, :]

    d_pos = np.zeros((m, 3), dtype=np.float64)
    if scene.sh_degree >= 1:
        coeffs = scene.sh[state.idx]
        d_basis = np.einsum("mck,mc->mk", coeffs, d_rgb_raw)
        bgrad = sh_basis_grad(state.viewdir, scene.sh_degree)  # (M, K, 3)
        d_dir = np.einsum("mk,mki->mi", d_basis, bgrad)
        # viewdir = v / |v| with v = mu - camera_position.
        proj = d_dir - state.viewdir * np.sum(state.viewdir * d_dir, axis=1, keepdims=True)
        d_pos += proj / state.viewvec_norm[:, None]

    # Conic -> 2D covariance: A = C2d^-1 so dC2d = -A dA A.
    conic_mat = np.empty((m, 2, 2), dtype=np.float64)
    conic_mat[:, 0, 0] = state.conic[:, 0]
    conic_mat[:, 0, 1] = conic_mat[:, 1, 0] = state.conic[:, 1]
    conic_mat[:, 1, 1] = state.conic[:, 2]
    d_amat = np.empty((m, 2, 2), dtype=np.float64)
    d_amat[:, 0, 0] = d_conic[:, 0]
    d_amat[:, 0, 1] = d_amat[:, 1, 0] = 0.5 * d_conic[:, 1]
    d_amat[:, 1, 1] = d_conic[:, 2]
    d_cov2d = -conic_mat @ d_amat @ conic_mat

    # 2D covariance = U Sigma U^T (+ constant dilation).
    U = state.U
    d_u = 2.0 * d_cov2d @ U @ state.cov3d
    d_cov3d = np.swapaxes(U, 1, 2) @ d_cov2d @ U
    d_j = d_u @ ctx.camera.rotation.T

    # Sigma = M M^T with M = R diag(s).
    m_mat = state.rot3 * state.scales[:, None, :]
    d_m = 2.0 * d_cov3d @ m_mat
    d_rot3 = d_m * state.scales[:, None, :]
    d_scales = np.einsum("mik,mik->mk", state.rot3, d_m)
    d_log_scales = np.where(state.scale_free, d_scales * state.scales, 0.0)

    d_quat = _rotmat_backward(state.quat_unit, d_rot3)
    # Through quaternion normalization.
    d_quat -= state.quat_unit * np.sum(state.quat_unit * d_quat, axis=1, keepdims=True)
    d_quat /= state.quat_norm[:, None]

    # Pixel mean and Jacobian -> camera-space position.
    f = camera.focal
    x, y, z = state.p_cam[:, 0], state.p_cam[:, 1], state.p_cam[:, 2]
    d_pcam = np.empty((m, 3), dtype=np.float64)
    d_pcam[:, 0] = d_mean2d[:, 0] * f / z - d_j[:, 0, 2] * f / z**2
    d_pcam[:, 1] = d_mean2d[:, 1] * f / z - d_j[:, 1, 2] * f / z**2
    d_pcam[:, 2] = (
        -d_mean2d[:, 0] * f * x / z**2
        - d_mean2d[:, 1] * f * y / z**2
        - d_j[:, 0, 0] * f / z**2
        - d_j[:, 1, 1] * f / z**2
        + d_j[:, 0, 2] * 2.0 * f * x / z**3
        + d_j[:, 1, 2] * 2.0 * f * y / z**3
    )
    d_pos += d_pcam @ camera.rotation

    grads.positions[state.idx] = d_pos
    grads.rotations[state.idx] = d_quat
    grads.log_scales[state.idx] = d_log_scales
    grads.opacity_logits[state.idx] = d_logit
    grads.sh[state.idx] = d_sh
    grads.mean2d[state.idx] = d_mean2d
    return grads


def render_backward(scene: Scene, camera: Camera, upstream: np.ndarray) -> RenderGradients:
    """Forward + backward in one call when the forward context is not kept around."""
    _, ctx = render_forward(scene, camera)
    return backward_from_context(ctx, upstream)


def _rotmat_backward(q_unit: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Chain d L / d R -> d L / d q_hat for the unit-quaternion rotation matrix."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    g = d_rot
    d_w = 2.0 * (
        -z * g[:, 0, 1]
        + y * g[:, 0, 2]
        + z * g[:, 1, 0]
        - x * g[:, 1, 2]
        - y * g[:, 2, 0]
        + x * g[:, 2, 1]
    )
    d_x = 2.0 * (
        y * g[:, 0, 1]
        + z * g[:, 0, 2]
        + y * g[:, 1, 0]
        - 2 * x * g[:, 1, 1]
        - w * g[:, 1, 2]
        + z * g[:, 2, 0]
        + w * g[:, 2, 1]
        - 2 * x * g[:, 2, 2]
    )
    d_y = 2.0 * (
        -2 * y * g[:, 0, 0]
        + x * g[:, 0, 1]
        + w * g[:, 0, 2]
        + x * g[:, 1, 0]
        + z * g[:, 1, 2]
        - w * g[:, 2, 0]
        + z * g[:, 2, 1]
        - 2 * y * g[:, 2, 2]
    )
    d_z = 2.0 * (
        -2 * z * g[:, 0, 0]
        - w * g[:, 0, 1]
        + x * g[:, 0, 2]
        + w * g[:, 1, 0]
        - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2]
        + x * g[:, 2, 0]
        + y * g[:, 2, 1]
    )
    return np.stack([d_w, d_x, d_y, d_z], axis=1)
