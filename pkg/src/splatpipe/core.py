"""Domain types and closed-form math for Gaussian-splat scenes.

Everything here is pure computation over value types: splats, scenes and
images. Rendering, optimization and I/O live in their own modules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Degree-0 real spherical harmonics basis constant.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

SCALE_FLOOR = 1e-6
# Scales are clamped to 10x the nominal scene extent (objects are
# normalized to the unit sphere) to keep covariances invertible and
# screen-space footprints bounded.
SCALE_CEILING = 10.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def inverse_sigmoid(y):
    y = np.asarray(y, dtype=np.float64)
    out = np.log(y) - np.log1p(-y)
    if out.ndim == 0:
        return float(out)
    return out


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Unit-normalize quaternions of shape (..., 4)."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("degenerate (near-zero) quaternion")
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions (w, x, y, z), shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance_from_rotation_scale(r: np.ndarray, s: np.ndarray) -> np.ndarray:
    """3x3 covariance of an anisotropic Gaussian from unit quaternion and per-axis stddev.

    Sigma = R S S^T R^T where S = diag(s); symmetric PSD with eigenvalues s^2.
    """
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(s))):
        raise ValueError("non-finite rotation or scale")
    if np.any(s <= 0):
        raise ValueError("scale components must be positive")
    R = quat_to_rotmat(normalize_quaternions(r))
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


@dataclass
class GaussianSplat:
    """A single anisotropic 3D Gaussian primitive.

    Scale is stored in log-space and opacity in logit-space so that
    unconstrained gradient steps keep s > 0 and alpha in (0, 1).
    `color` holds SH coefficients with shape (3, (degree+1)^2).
    """

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.color = np.atleast_2d(np.asarray(self.color, dtype=np.float64))
        if self.color.shape[0] != 3:
            raise ValueError("color must have shape (3, n_coeffs)")

    @property
    def sh_degree(self) -> int:
        n = self.color.shape[1]
        degree = int(round(np.sqrt(n))) - 1
        if (degree + 1) ** 2 != n:
            raise ValueError(f"invalid SH coefficient count {n}")
        return degree


def activate(splat: GaussianSplat) -> tuple[float, np.ndarray]:
    """(alpha, scale) with alpha = sigmoid(logit) and s = clamp(exp(log_scale))."""
    alpha = sigmoid(splat.opacity_logit)
    s = np.clip(np.exp(splat.log_scale), SCALE_FLOOR, SCALE_CEILING)
    return float(alpha), s


def eval_gaussian(splat: GaussianSplat, x: np.ndarray) -> float:
    """exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)), in (0, 1], equal to 1 iff x == mu."""
    x = np.asarray(x, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite query point")
    _, s = activate(splat)
    cov = covariance_from_rotation_scale(splat.rotation, s)
    d = x - splat.position
    quad = d @ np.linalg.solve(cov, d)
    return float(np.exp(-0.5 * quad))


def eval_sh(coeffs: np.ndarray, direction: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate real SH bands (degree <= 3) and return raw (pre-shift) RGB.

    `coeffs` has shape (..., 3, (degree+1)^2); direction is a unit 3-vector
    or batch of unit vectors broadcastable over leading dims.
    """
    basis = sh_basis(direction, degree)
    return np.einsum("...ck,...k->...c", coeffs, basis)


def sh_basis(direction: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for the given unit direction(s), shape (..., (degree+1)^2)."""
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + ((degree + 1) ** 2,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    if degree > 3:
        raise ValueError("SH degrees above 3 are not supported")
    return out


def sh_basis_grad(direction: np.ndarray, degree: int) -> np.ndarray:
    """Derivative of each SH basis value w.r.t. the direction components.

    Returns shape (..., (degree+1)^2, 3); the direction components are
    treated as free variables (normalization is chained by the caller).
    """
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    k = (degree + 1) ** 2
    out = np.zeros(d.shape[:-1] + (k, 3), dtype=np.float64)
    if degree >= 1:
        out[..., 1, 1] = -SH_C1
        out[..., 2, 2] = SH_C1
        out[..., 3, 0] = -SH_C1
    if degree >= 2:
        out[..., 4, 0] = SH_C2[0] * y
        out[..., 4, 1] = SH_C2[0] * x
        out[..., 5, 1] = SH_C2[1] * z
        out[..., 5, 2] = SH_C2[1] * y
        out[..., 6, 0] = SH_C2[2] * (-2 * x)
        out[..., 6, 1] = SH_C2[2] * (-2 * y)
        out[..., 6, 2] = SH_C2[2] * (4 * z)
        out[..., 7, 0] = SH_C2[3] * z
        out[..., 7, 2] = SH_C2[3] * x
        out[..., 8, 0] = SH_C2[4] * (2 * x)
        out[..., 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9, 0] = SH_C3[0] * 6 * x * y
        out[..., 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        out[..., 10, 0] = SH_C3[1] * y * z
        out[..., 10, 1] = SH_C3[1] * x * z
        out[..., 10, 2] = SH_C3[1] * x * y
        out[..., 11, 0] = SH_C3[2] * (-2 * x * y)
        out[..., 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        out[..., 11, 2] = SH_C3[2] * (8 * y * z)
        out[..., 12, 0] = SH_C3[3] * (-6 * x * z)
        out[..., 12, 1] = SH_C3[3] * (-6 * y * z)
        out[..., 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        out[..., 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        out[..., 13, 1] = SH_C3[4] * (-2 * x * y)
        out[..., 13, 2] = SH_C3[4] * (8 * x * z)
        out[..., 14, 0] = SH_C3[5] * (2 * x * z)
        out[..., 14, 1] = SH_C3[5] * (-2 * y * z)
        out[..., 14, 2] = SH_C3[5] * (xx - yy)
        out[..., 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        out[..., 15, 1] = SH_C3[6] * (-6 * x * y)
    return out


def sh_to_rgb(coefficients: np.ndarray, view_direction: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] for SH coefficients (3, (deg+1)^2) seen from a unit direction."""
    coefficients = np.atleast_2d(np.asarray(coefficients, dtype=np.float64))
    n = coefficients.shape[-1]
    degree = int(round(np.sqrt(n))) - 1
    if (degree + 1) ** 2 != n or not 0 <= degree <= 3:
        raise ValueError(f"invalid SH coefficient count {n}")
    return np.clip(eval_sh(coefficients, view_direction, degree) + 0.5, 0.0, 1.0)


def rgb_to_dc(rgb) -> np.ndarray:
    """Degree-0 SH coefficients reproducing a flat RGB color."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


class Scene:
    """A collection of Gaussian splats stored as structure-of-arrays.

    positions (N,3), rotations (N,4) unit wxyz, log_scales (N,3),
    opacity_logits (N,), sh (N,3,(degree+1)^2). The splat count changes
    only through the densify/prune lifecycle in the optimizer.
    """

    def __init__(
        self,
        positions: np.ndarray,
        rotations: np.ndarray,
        log_scales: np.ndarray,
        opacity_logits: np.ndarray,
        sh: np.ndarray,
        sh_degree: int = 0,
        background_color=(1.0, 1.0, 1.0),
    ):
        n = len(positions)
        self.positions = np.asarray(positions, dtype=np.float64).reshape(n, 3)
        # Rotations are kept verbatim (the renderer normalizes on use, and
        # exact file round trips depend on it); only degeneracy is rejected.
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        if n and np.any(np.linalg.norm(self.rotations, axis=1) < 1e-12):
            raise ValueError("degenerate (near-zero) quaternion")
        self.log_scales = np.asarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(opacity_logits, dtype=np.float64).reshape(n)
        k = (sh_degree + 1) ** 2
        self.sh = np.asarray(sh, dtype=np.float64).reshape(n, 3, k)
        self.sh_degree = sh_degree
        self.background_color = np.asarray(background_color, dtype=np.float64).reshape(3)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def from_splats(cls, splats, sh_degree: int = 0, background_color=(1.0, 1.0, 1.0)):
        if not splats:
            raise ValueError("scene must contain at least one splat")
        return cls(
            positions=np.stack([s.position for s in splats]),
            rotations=np.stack([s.rotation for s in splats]),
            log_scales=np.stack([s.log_scale for s in splats]),
            opacity_logits=np.array([s.opacity_logit for s in splats]),
            sh=np.stack([s.color for s in splats]),
            sh_degree=sh_degree,
            background_color=background_color,
        )

    def splat(self, i: int) -> GaussianSplat:
        return GaussianSplat(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            color=self.sh[i].copy(),
        )

    def copy(self) -> "Scene":
        return Scene(
            self.positions.copy(),
            self.rotations.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.sh.copy(),
            sh_degree=self.sh_degree,
            background_color=self.background_color.copy(),
        )

    def activated_opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def activated_scales(self) -> np.ndarray:
        return np.clip(np.exp(self.log_scales), SCALE_FLOOR, SCALE_CEILING)

    def renormalize_rotations(self) -> None:
        self.rotations = normalize_quaternions(self.rotations)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        """Named views of the optimizable parameter groups."""
        return {
            "positions": self.positions,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "sh": self.sh,
        }


@dataclass
class ImageBuffer:
    """Row-major float image in [0, 1], 3 (RGB) or 4 (RGBA) channels."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] not in (3, 4):
            raise ValueError("image data must have shape (H, W, 3|4)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def rgb(self) -> np.ndarray:
        return self.data[..., :3]

    def alpha(self) -> np.ndarray:
        if self.channels != 4:
            raise ValueError("image has no alpha channel")
        return self.data[..., 3]
