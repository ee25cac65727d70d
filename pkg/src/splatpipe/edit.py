"""Text-conditioned scene editing via score distillation.

Each step renders a view, encodes it, noises the latent, asks an edit
oracle to predict the noise, and injects the weighted residual as the
upstream image gradient of the rasterizer. The diffusion model itself is
abstracted behind the `EditOracle` contract so deterministic procedural
oracles can stand in for it at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import Camera, CameraRig
from .core import ImageBuffer, Scene
from .optim import OptimState, adam_step
from .raster import RenderGradients, backward_from_context, render, render_forward


class OracleError(RuntimeError):
    """A retriable oracle failure (remote timeout, malformed reply, ...)."""


# ---------------------------------------------------------------------------
# Codecs


class ImageCodec:
    """Pixel <-> latent transform with an exact adjoint for gradients."""

    def encode(self, image: ImageBuffer) -> np.ndarray:
        raise NotImplementedError

    def decode(self, latent: np.ndarray) -> ImageBuffer:
        raise NotImplementedError

    def backward(self, latent_grad: np.ndarray, pixel_shape) -> np.ndarray:
        """Adjoint of `encode`: latent-space gradient -> (H, W, 3) pixel gradient."""
        raise NotImplementedError


class IdentityCodec(ImageCodec):
    """Latent space = RGB pixel space."""

    def encode(self, image: ImageBuffer) -> np.ndarray:
        return image.rgb().copy()

    def decode(self, latent: np.ndarray) -> ImageBuffer:
        return ImageBuffer(np.clip(latent, 0.0, 1.0))

    def backward(self, latent_grad: np.ndarray, pixel_shape) -> np.ndarray:
        return np.asarray(latent_grad, dtype=np.float64)


class DownsampleCodec(ImageCodec):
    """Area-average downsampling by an integer factor; backward is the exact
    transpose (each pixel receives its cell's gradient / factor^2)."""

    def __init__(self, factor: int = 8):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.factor = factor

    def encode(self, image: ImageBuffer) -> np.ndarray:
        x = image.rgb()
        f = self.factor
        h, w = x.shape[:2]
        if h % f or w % f:
            raise ValueError(f"image size {h}x{w} not divisible by factor {f}")
        return x.reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))

    def decode(self, latent: np.ndarray) -> ImageBuffer:
        up = np.repeat(np.repeat(latent, self.factor, axis=0), self.factor, axis=1)
        return ImageBuffer(np.clip(up, 0.0, 1.0))

    def backward(self, latent_grad: np.ndarray, pixel_shape) -> np.ndarray:
        f = self.factor
        g = np.asarray(latent_grad, dtype=np.float64) / (f * f)
        return np.repeat(np.repeat(g, f, axis=0), f, axis=1)


# ---------------------------------------------------------------------------
# Diffusion schedule

COSINE_OFFSET = 0.008


def _cosine_f(t):
    return np.cos((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2


def alpha_bar(t):
    """Cosine-schedule cumulative signal fraction; 1 at t=0, 0 at t=1."""
    return _cosine_f(np.asarray(t, dtype=np.float64)) / _cosine_f(0.0)


@dataclass
class NoiseSchedule:
    """Timestep range with a linearly shrinking upper bound over the run."""

    t_min: float = 0.02
    t_max: float = 0.98
    total_steps: int = 500
    step: int = 0
    weight_mode: str = "constant"  # or "sigma" for w(t) = 1 - alpha_bar(t)

    def __post_init__(self):
        if not 0.0 < self.t_min <= self.t_max < 1.0:
            raise ValueError("need 0 < t_min <= t_max < 1")
        if self.weight_mode not in ("constant", "sigma"):
            raise ValueError(f"unknown weight mode {self.weight_mode!r}")

    def upper_bound(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        frac = s / self.total_steps if self.total_steps > 0 else 1.0
        return self.t_max - (self.t_max - self.t_min) * min(frac, 1.0)

    def weight(self, t: float) -> float:
        if self.weight_mode == "sigma":
            return float(1.0 - alpha_bar(t))
        return 1.0


def sample_timestep(schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    """Uniform draw from [t_min, u(step)]; the bound shrinks as editing proceeds."""
    u = schedule.upper_bound()
    return float(rng.uniform(schedule.t_min, u))


def add_noise(z: np.ndarray, t: float, eps: np.ndarray) -> np.ndarray:
    """Forward diffusion: z_t = sqrt(abar) z + sqrt(1 - abar) eps."""
    z = np.asarray(z, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z.shape != eps.shape:
        raise ValueError(f"latent shape {z.shape} != noise shape {eps.shape}")
    ab = alpha_bar(t)
    return np.sqrt(ab) * z + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# Oracles


class EditOracle:
    """Noise-prediction contract: given a noisy latent, timestep, source-image
    condition and text prompt, return the predicted noise of the same shape.

    Local oracles additionally receive the injected noise via the `noise`
    keyword (it is known in-process); the remote wire protocol does not
    carry it.
    """

    def predict_noise(
        self,
        z_t: np.ndarray,
        t: float,
        c_i: np.ndarray,
        prompt: str,
        s_text: float,
        s_image: float,
        noise: np.ndarray | None = None,
    ) -> np.ndarray:
        raise NotImplementedError


class IdentityOracle(EditOracle):
    """Predicts the injected noise exactly: a perfect no-op editor."""

    def predict_noise(self, z_t, t, c_i, prompt, s_text, s_image, noise=None):
        if noise is None:
            raise OracleError("identity oracle requires the injected noise")
        return noise


class ProceduralOracle(EditOracle):
    """Edits toward a pixel-space target derived from the source render.

    The residual points from the current denoised estimate toward
    encode(transform(decode(c_i))), scaled by kappa and the text guidance
    scale, so descending the SDS gradient moves renders toward the target.
    """

    def __init__(self, transform, codec: ImageCodec, kappa: float = 1.0):
        self.transform = transform
        self.codec = codec
        self.kappa = kappa

    def predict_noise(self, z_t, t, c_i, prompt, s_text, s_image, noise=None):
        if noise is None:
            raise OracleError("procedural oracles require the injected noise")
        ab = alpha_bar(t)
        z0 = (z_t - np.sqrt(1.0 - ab) * noise) / np.sqrt(ab)
        target_img = self.transform(self.codec.decode(c_i).rgb(), prompt)
        z_target = self.codec.encode(ImageBuffer(np.clip(target_img, 0.0, 1.0)))
        gain = self.kappa * (s_text / 100.0)
        return noise + gain * np.sqrt(ab) * (z0 - z_target)


def _rgb_to_hsv(rgb):
    from skimage.color import rgb2hsv

    return rgb2hsv(np.clip(rgb, 0.0, 1.0))


def _hsv_to_rgb(hsv):
    from skimage.color import hsv2rgb

    return hsv2rgb(hsv)


_NAMED_HUES = {
    "red": 0.0,
    "orange": 30.0,
    "yellow": 60.0,
    "green": 120.0,
    "cyan": 180.0,
    "blue": 240.0,
    "magenta": 300.0,
}


def _object_mask(rgb, background=(1.0, 1.0, 1.0), threshold=0.08):
    dist = np.linalg.norm(rgb - np.asarray(background), axis=-1)
    return dist > threshold


def _composite_aware(recolor, background=(1.0, 1.0, 1.0)):
    """Lift a full-coverage recoloring into a silhouette-preserving transform.

    Anti-aliased pixels are blends of the background and the object color.
    Recoloring them directly produces targets a splat scene can only reach
    by changing coverage (growing or shrinking geometry). Instead, estimate
    per-pixel coverage from the distance to the background, recolor the
    implied object color, and re-composite — the target is then achievable
    with the original silhouette.
    """
    bg = np.asarray(background, dtype=np.float64)

    def transform(rgb, prompt):
        dist = np.linalg.norm(rgb - bg, axis=-1)
        mask = dist > 0.05
        if not mask.any():
            return rgb
        full = np.percentile(dist[mask], 99)
        cov = np.clip(dist / max(full, 1e-9), 0.0, 1.0)
        safe = np.maximum(cov, 1e-9)[..., None]
        obj = np.clip((rgb - (1.0 - cov[..., None]) * bg) / safe, 0.0, 1.0)
        edited = recolor(obj, mask)
        out = (1.0 - cov[..., None]) * bg + cov[..., None] * edited
        return np.where(mask[..., None], out, rgb)

    return transform


def hue_shift_transform(target_hue_deg: float, min_saturation: float = 0.85):
    """Recolor the object to the target hue, leaving silhouette and background alone."""

    def recolor(obj, mask):
        hsv = _rgb_to_hsv(obj)
        hsv[..., 0] = target_hue_deg / 360.0
        hsv[..., 1] = np.maximum(hsv[..., 1], min_saturation)
        return _hsv_to_rgb(hsv)

    return _composite_aware(recolor)


def brightness_transform(delta: float):
    def recolor(obj, mask):
        return np.clip(obj + delta, 0.0, 1.0)

    return _composite_aware(recolor)


def region_darken_transform(top_fraction: float = 0.2, factor: float = 0.5):
    """Darken the top slice of the object silhouette (hat-like local edit)."""

    def recolor(obj, mask):
        out = obj.copy()
        rows = np.flatnonzero(mask.any(axis=1))
        if len(rows) == 0:
            return out
        cut = rows[0] + max(1, int(round(top_fraction * len(rows))))
        region = mask.copy()
        region[cut:, :] = False
        out[region] *= 1.0 - factor
        return out

    return _composite_aware(recolor)


def builtin_oracles(name: str, params: dict | None = None) -> EditOracle:
    """Factory for the bundled oracles: identity, hue_shift, brightness,
    region_darken, and the remote wire client."""
    params = dict(params or {})
    codec = params.pop("codec", None) or IdentityCodec()
    if name == "identity":
        return IdentityOracle()
    if name == "hue_shift":
        target = params.pop("target", "red")
        hue = _NAMED_HUES[target] if isinstance(target, str) else float(target)
        kappa = float(params.pop("kappa", 1.0))
        return ProceduralOracle(hue_shift_transform(hue), codec, kappa)
    if name == "brightness":
        delta = float(params.pop("delta", 0.2))
        kappa = float(params.pop("kappa", 1.0))
        return ProceduralOracle(brightness_transform(delta), codec, kappa)
    if name == "region_darken":
        top = float(params.pop("top_fraction", 0.2))
        factor = float(params.pop("factor", 0.5))
        kappa = float(params.pop("kappa", 1.0))
        return ProceduralOracle(region_darken_transform(top, factor), codec, kappa)
    if name == "remote":
        from .remote import RemoteOracle

        return RemoteOracle(**params)
    raise ValueError(f"unknown oracle {name!r}")


# ---------------------------------------------------------------------------
# SDS loop


@dataclass
class EditConfig:
    """Knobs for the edit loop."""

    n_edit_steps: int = 500
    t_min: float = 0.02
    t_max: float = 0.98
    s_text: float = 100.0
    s_image: float = 10.0
    # Geometry groups run well below the reconstruction rates (positions at
    # 0.1x) so edits move appearance first and preserve the object's shape:
    # Adam steps are sign-normalized, so any persistent residual bias walks a
    # parameter by roughly lr * steps regardless of gradient magnitude.
    learning_rates: dict[str, float] = field(
        default_factory=lambda: {
            "positions": 1.6e-5,
            "rotations": 1e-4,
            "log_scales": 2e-4,
            "opacity_logits": 1e-3,
            "sh": 5e-3,
        }
    )
    convergence_window: int = 50
    convergence_threshold: float = 0.01
    oracle_retries: int = 3
    weight_mode: str = "constant"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.t_min <= self.t_max < 1.0:
            raise ValueError("need 0 < t_min <= t_max < 1")
        if self.n_edit_steps < 0:
            raise ValueError("n_edit_steps must be non-negative")


def sds_step(
    scene: Scene,
    camera: Camera,
    oracle: EditOracle,
    codec: ImageCodec,
    schedule: NoiseSchedule,
    prompt: str,
    config: EditConfig,
    rng: np.random.Generator,
    c_i: np.ndarray | None = None,
) -> tuple[RenderGradients, dict]:
    """One score-distillation step for a single view.

    Returns the parameter gradients w(t) * (eps_hat - eps) * d z_t / d theta
    and diagnostics. No gradient flows through the oracle.
    """
    if len(scene) == 0:
        raise ValueError("scene is empty")
    image, ctx = render_forward(scene, camera)
    z = codec.encode(image)
    if c_i is None:
        c_i = z

    t = sample_timestep(schedule, rng)
    eps = rng.standard_normal(z.shape)
    z_t = add_noise(z, t, eps)
    eps_hat = oracle.predict_noise(
        z_t, t, c_i, prompt, config.s_text, config.s_image, noise=eps
    )
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != z.shape:
        raise OracleError(
            f"oracle returned shape {eps_hat.shape}, expected {z.shape}"
        )
    if not np.all(np.isfinite(eps_hat)):
        raise OracleError("oracle returned non-finite noise prediction")

    delta = eps_hat - eps
    w = schedule.weight(t)
    # d z_t / d theta = sqrt(abar) * d z / d theta; the codec adjoint carries
    # the latent residual back to pixel space.
    upstream_latent = w * np.sqrt(alpha_bar(t)) * delta
    upstream = codec.backward(upstream_latent, image.data.shape[:2] + (3,))
    grads = backward_from_context(ctx, upstream)

    residual = float(np.sqrt(np.mean(delta * delta)))  # size-normalized ||delta||
    diagnostics = {
        "t": t,
        "delta_norm": float(np.linalg.norm(delta)),
        "residual": residual,
    }
    return grads, diagnostics


def convergence_check(history, window: int, threshold: float) -> bool:
    """True when the trailing-window mean of size-normalized residuals is
    below the threshold."""
    if len(history) < window:
        return False
    return float(np.mean(history[-window:])) < threshold


def edit(
    scene: Scene,
    rig: CameraRig,
    oracle: EditOracle,
    codec: ImageCodec,
    prompt: str,
    config: EditConfig | None = None,
    log_every: int = 0,
) -> Scene:
    """Run the capture -> edit -> update loop until done or converged.

    The pre-edit render of every rig camera is cached once as the oracle's
    image condition, so the edit target never drifts with the scene.
    """
    if config is None:
        config = EditConfig()
    scene = scene.copy()
    rng = np.random.default_rng(config.seed)
    cameras = list(rig.cameras)
    source_latents = [codec.encode(render(scene, cam)) for cam in cameras]

    schedule = NoiseSchedule(
        t_min=config.t_min,
        t_max=config.t_max,
        total_steps=config.n_edit_steps,
        weight_mode=config.weight_mode,
    )
    state = OptimState.zeros(scene)
    history: list[float] = []

    for step in range(config.n_edit_steps):
        schedule.step = step
        cam_idx = int(rng.integers(len(cameras)))
        grads = None
        for attempt in range(config.oracle_retries + 1):
            try:
                grads, diag = sds_step(
                    scene,
                    cameras[cam_idx],
                    oracle,
                    codec,
                    schedule,
                    prompt,
                    config,
                    rng,
                    c_i=source_latents[cam_idx],
                )
                break
            except OracleError:
                if attempt == config.oracle_retries:
                    raise
        scene, state = adam_step(scene, grads, state, config.learning_rates)
        history.append(diag["residual"])
        if log_every and (step + 1) % log_every == 0:
            print(f"edit step {step + 1}: residual {np.mean(history[-log_every:]):.5f}")
        if convergence_check(history, config.convergence_window, config.convergence_threshold):
            break
    return scene
