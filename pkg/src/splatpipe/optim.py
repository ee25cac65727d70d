"""Reconstruction training: photometric loss, Adam updates, densify/prune.

The loss is L = (1 - lambda) * L1 + lambda * D-SSIM with an analytic pixel
gradient, so the whole reconstruction loop is first-order end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .cameras import Camera
from .core import ImageBuffer, Scene, inverse_sigmoid
from .raster import RenderGradients, backward_from_context, render_forward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2  # (k1 * data_range)^2, data_range = 1
SSIM_C2 = 0.03**2

DEFAULT_LEARNING_RATES = {
    "positions": 1.6e-4,
    "rotations": 1e-3,
    "log_scales": 5e-3,
    "opacity_logits": 5e-2,
    "sh": 2.5e-3,
}


def _ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return w / w.sum()


_W1D = _ssim_window()
_PAD = SSIM_WINDOW // 2


def _filt(img: np.ndarray) -> np.ndarray:
    """Gaussian-window local mean, restricted to fully-covered pixels."""
    out = correlate1d(img, _W1D, axis=0, mode="constant")
    out = correlate1d(out, _W1D, axis=1, mode="constant")
    return out[_PAD:-_PAD, _PAD:-_PAD]

def _spread(grad: np.ndarray, shape) -> np.ndarray:
    """Adjoint of `_filt`: scatter interior gradients back to full-size pixels."""
    full = np.zeros(shape, dtype=np.float64)
    full[_PAD:-_PAD, _PAD:-_PAD] = grad
    out = correlate1d(full, _W1D, axis=0, mode="constant")
    return correlate1d(out, _W1D, axis=1, mode="constant")


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM over the valid window region and its gradient w.r.t. x."""
    ux, uy = _filt(x), _filt(y)
    exx, eyy, exy = _filt(x * x), _filt(y * y), _filt(x * y)
    vx = exx - ux * ux
    vy = eyy - uy * uy
    vxy = exy - ux * uy

    a1 = 2.0 * ux * uy + SSIM_C1
    a2 = 2.0 * vxy + SSIM_C2
    b1 = ux * ux + uy * uy + SSIM_C1
    b2 = vx + vy + SSIM_C2
    s = (a1 * a2) / (b1 * b2)

    n = s.size
    d_a1 = a2 / (b1 * b2) / n
    d_a2 = a1 / (b1 * b2) / n
    d_b1 = -s / b1 / n
    d_b2 = -s / b2 / n
    d_ux = 2.0 * uy * d_a1 - 2.0 * uy * d_a2 + 2.0 * ux * d_b1 - 2.0 * ux * d_b2
    d_exx = d_b2
    d_exy = 2.0 * d_a2

    grad = (
        _spread(d_ux, x.shape)
        + 2.0 * x * _spread(d_exx, x.shape)
        + y * _spread(d_exy, x.shape)
    )
    return float(s.mean()), grad


def photometric_loss(
    render: ImageBuffer, target: ImageBuffer, loss_lambda: float
) -> tuple[float, np.ndarray]:
    """(1-lambda)*L1 + lambda*(1-SSIM)/2 over RGB, with the pixel gradient.

    The gradient has shape (H, W, 3) and feeds straight into the
    rasterizer's backward pass as the upstream image gradient.
    """
    x = render.rgb()
    y = target.rgb()
    if x.shape != y.shape:
        raise ValueError(f"render shape {x.shape} does not match target {y.shape}")
    if not 0.0 <= loss_lambda <= 1.0:
        raise ValueError("loss_lambda must lie in [0, 1]")

    diff = x - y
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - loss_lambda) * np.sign(diff) / diff.size

    dssim = 0.0
    if loss_lambda > 0.0:
        if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
            raise ValueError("images smaller than the SSIM window")
        for c in range(3):
            s_val, s_grad = _ssim_channel(x[..., c], y[..., c])
            dssim += (1.0 - s_val) / 2.0 / 3.0
            grad[..., c] += loss_lambda * (-0.5 / 3.0) * s_grad

    loss = (1.0 - loss_lambda) * l1 + loss_lambda * dssim
    return loss, grad


@dataclass
class OptimState:
    """Adam moments plus the running densification statistics.

    All arrays stay row-aligned with the scene's splats; densify/prune
    edits them in lockstep.
    """

    exp_avg: dict[str, np.ndarray]
    exp_avg_sq: dict[str, np.ndarray]
    grad_accum: np.ndarray  # (N,) accumulated screen-space gradient norm
    obs_count: np.ndarray  # (N,) number of steps each splat was visible
    step: int = 0

    @classmethod
    def zeros(cls, scene: Scene) -> "OptimState":
        params = scene.parameter_arrays()
        return cls(
            exp_avg={k: np.zeros_like(v) for k, v in params.items()},
            exp_avg_sq={k: np.zeros_like(v) for k, v in params.items()},
            grad_accum=np.zeros(len(scene)),
            obs_count=np.zeros(len(scene)),
        )

    def reset_densify_stats(self) -> None:
        self.grad_accum[:] = 0.0
        self.obs_count[:] = 0.0


@dataclass
class ReconConfig:
    """Knobs for the reconstruction loop."""

    n_initial: int = 10_000
    n_steps: int = 3000
    densify_interval: int = 50
    prune_opacity: float = 0.005
    split_scale_factor: float = 1.6
    densify_grad_threshold: float = 2e-4
    loss_lambda: float = 0.2
    learning_rates: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_LEARNING_RATES)
    )
    position_lr_final_factor: float = 0.1  # exponential decay target for positions
    densify_stop_fraction: float = 0.8  # no densification in the last 20% of steps
    sh_degree: int = 0
    seed: int = 0
    checkpoint_interval: int = 0  # 0 disables checkpointing
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.n_initial <= 0:
            raise ValueError("n_initial must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        for name in (
            "densify_interval",
            "prune_opacity",
            "split_scale_factor",
            "densify_grad_threshold",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.loss_lambda <= 1.0:
            raise ValueError("loss_lambda must lie in [0, 1]")
        if self.n_steps > 0 and self.densify_interval > self.n_steps:
            raise ValueError("densify_interval must not exceed n_steps")


def adam_step(
    scene: Scene,
    grads: RenderGradients,
    state: OptimState,
    learning_rates: dict[str, float] | None = None,
) -> tuple[Scene, OptimState]:
    """One Adam update over all parameter groups; quaternions renormalized after."""
    lrs = dict(DEFAULT_LEARNING_RATES)
    if learning_rates:
        lrs.update(learning_rates)

    params = scene.parameter_arrays()
    grad_arrays = {
        "positions": grads.positions,
        "rotations": grads.rotations,
        "log_scales": grads.log_scales,
        "opacity_logits": grads.opacity_logits,
        "sh": grads.sh,
    }
    for name, p in params.items():
        g = grad_arrays[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} ({name})")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in group {name}")

    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for name, p in params.items():
        g = grad_arrays[name]
        m = state.exp_avg[name]
        v = state.exp_avg_sq[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lrs[name] * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
    scene.renormalize_rotations()
    return scene, state


def _scene_extent(scene: Scene) -> float:
    if len(scene) < 2:
        return 0.0
    return float(np.max(np.ptp(scene.positions, axis=0)))


def _take_rows(state: OptimState, keep: np.ndarray) -> None:
    for d in (state.exp_avg, state.exp_avg_sq):
        for k in d:
            d[k] = d[k][keep]
    state.grad_accum = state.grad_accum[keep]
    state.obs_count = state.obs_count[keep]


def _append_rows(state: OptimState, src_rows: np.ndarray, zero: bool) -> None:
    for d in (state.exp_avg, state.exp_avg_sq):
        for k in d:
            extra = np.zeros_like(d[k][src_rows]) if zero else d[k][src_rows].copy()
            d[k] = np.concatenate([d[k], extra], axis=0)
    n_extra = len(src_rows)
    state.grad_accum = np.concatenate([state.grad_accum, np.zeros(n_extra)])
    state.obs_count = np.concatenate([state.obs_count, np.zeros(n_extra)])


def densify_and_prune(
    scene: Scene,
    state: OptimState,
    config: ReconConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Scene, OptimState, dict[str, int]]:
    """Clone small / split large high-gradient splats, then prune transparent ones.

    A splat whose mean screen-space gradient magnitude exceeds the threshold
    is under-fitted: if it is small relative to the scene it is cloned in
    place, otherwise it is replaced by two children sampled inside it with
    scales divided by the split factor. Splats with activated opacity below
    the prune threshold are removed. Returns a report of all three counts.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    mean_grad = state.grad_accum / np.maximum(state.obs_count, 1.0)
    over = mean_grad > config.densify_grad_threshold
    size_threshold = 0.01 * _scene_extent(scene)
    max_scale = scene.activated_scales().max(axis=1)
    clone_mask = over & (max_scale < size_threshold)
    split_mask = over & ~clone_mask

    clone_idx = np.flatnonzero(clone_mask)
    split_idx = np.flatnonzero(split_mask)

    parts = {k: [v] for k, v in scene.parameter_arrays().items()}

    if len(clone_idx) > 0:
        for k, v in scene.parameter_arrays().items():
            parts[k].append(v[clone_idx].copy())
        _append_rows(state, clone_idx, zero=False)

    if len(split_idx) > 0:
        from .core import quat_to_rotmat

        rot = quat_to_rotmat(scene.rotations[split_idx])
        scales = scene.activated_scales()[split_idx]
        for _ in range(2):
            offsets = np.einsum(
                "nij,nj->ni", rot, scales * rng.standard_normal(scales.shape)
            )
            parts["positions"].append(scene.positions[split_idx] + offsets)
            parts["rotations"].append(scene.rotations[split_idx].copy())
            parts["log_scales"].append(
                scene.log_scales[split_idx] - np.log(config.split_scale_factor)
            )
            parts["opacity_logits"].append(scene.opacity_logits[split_idx].copy())
            parts["sh"].append(scene.sh[split_idx].copy())
            _append_rows(state, split_idx, zero=True)

    new_scene = Scene(
        positions=np.concatenate(parts["positions"]),
        rotations=np.concatenate(parts["rotations"]),
        log_scales=np.concatenate(parts["log_scales"]),
        opacity_logits=np.concatenate(parts["opacity_logits"]),
        sh=np.concatenate(parts["sh"]),
        sh_degree=scene.sh_degree,
        background_color=scene.background_color,
    )

    # Split parents are consumed by their children; prune by opacity last so
    # the post-call scene satisfies min(alpha) >= prune threshold.
    drop = np.zeros(len(new_scene), dtype=bool)
    drop[split_idx] = True
    drop |= new_scene.activated_opacities() < config.prune_opacity
    pruned = int(np.count_nonzero(drop)) - len(split_idx)
    keep = ~drop

    new_scene = Scene(
        positions=new_scene.positions[keep],
        rotations=new_scene.rotations[keep],
        log_scales=new_scene.log_scales[keep],
        opacity_logits=new_scene.opacity_logits[keep],
        sh=new_scene.sh[keep],
        sh_degree=new_scene.sh_degree,
        background_color=new_scene.background_color,
    )
    _take_rows(state, keep)
    state.reset_densify_stats()

    report = {"cloned": len(clone_idx), "split": len(split_idx), "pruned": pruned}
    return new_scene, state, report


def initialize_scene(config: ReconConfig, rng: np.random.Generator) -> Scene:
    """Uniform splats in [-1, 1]^3 with low opacity and mid-gray color."""
    n = config.n_initial
    positions = rng.uniform(-1.0, 1.0, (n, 3))
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0

    if n > 1:
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(positions).query(positions, k=2)
        mean_nn = float(dist[:, 1].mean())
    else:
        mean_nn = 0.1
    log_scales = np.full((n, 3), np.log(mean_nn))

    opacity_logits = np.full(n, inverse_sigmoid(0.1))
    sh = np.zeros((n, 3, (config.sh_degree + 1) ** 2))
    return Scene(
        positions=positions,
        rotations=rotations,
        log_scales=log_scales,
        opacity_logits=opacity_logits,
        sh=sh,
        sh_degree=config.sh_degree,
    )


def reconstruct(
    targets: list[tuple[Camera, ImageBuffer]],
    config: ReconConfig | None = None,
    log_every: int = 0,
) -> Scene:
    """Fit a Gaussian scene to multi-view target renders.

    Per step: sample a random target view, render, apply the photometric
    loss, backpropagate through the rasterizer, and take an Adam step.
    Densification and pruning run on a fixed interval.
    """
    if config is None:
        config = ReconConfig()
    if not targets:
        raise ValueError("at least one target view is required")
    shapes = {t.data.shape[:2] for _, t in targets}
    if len(shapes) > 1:
        raise ValueError("all target views must share image dimensions")
    for cam, img in targets:
        if (cam.height, cam.width) != img.data.shape[:2]:
            raise ValueError("camera image size does not match target image")

    rng = np.random.default_rng(config.seed)
    scene = initialize_scene(config, rng)
    state = OptimState.zeros(scene)
    densify_stop = int(config.densify_stop_fraction * config.n_steps)
    loss_history = []

    for step in range(config.n_steps):
        cam, target = targets[rng.integers(len(targets))]
        image, ctx = render_forward(scene, cam)
        loss, grad_img = photometric_loss(image, target, config.loss_lambda)
        grads = backward_from_context(ctx, grad_img)
        loss_history.append(loss)

        state.grad_accum += np.linalg.norm(grads.mean2d, axis=1)
        state.obs_count[ctx.state.idx] += 1.0

        lrs = dict(config.learning_rates)
        lrs["positions"] *= config.position_lr_final_factor ** (step / config.n_steps)
        scene, state = adam_step(scene, grads, state, lrs)

        at_boundary = (step + 1) % config.densify_interval == 0
        if at_boundary and step + 1 < densify_stop:
            scene, state, _ = densify_and_prune(scene, state, config, rng)

        if config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0:
            if config.checkpoint_path:
                from .io import save_scene

                save_scene(scene, config.checkpoint_path)

        if log_every and (step + 1) % log_every == 0:
            window = loss_history[-log_every:]
            print(f"step {step + 1}: loss {np.mean(window):.5f}, splats {len(scene)}")

    return scene
