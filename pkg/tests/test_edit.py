"""Score-distillation editing: schedule, oracles, SDS gradients, edit loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_sphere_scene
from splatpipe.cameras import Camera, build_camera_rig
from splatpipe.core import ImageBuffer
from splatpipe.edit import (
    DownsampleCodec,
    EditConfig,
    IdentityCodec,
    IdentityOracle,
    NoiseSchedule,
    OracleError,
    ProceduralOracle,
    add_noise,
    alpha_bar,
    builtin_oracles,
    convergence_check,
    edit,
    hue_shift_transform,
    sample_timestep,
    sds_step,
)
from splatpipe.raster import render

ALPHA_BAR_HALF = 0.49384359044063775  # cosine schedule at t = 0.5


class TestSchedule:
    def test_alpha_bar_golden_values(self):
        assert alpha_bar(0.0) == pytest.approx(1.0, abs=1e-12)
        assert alpha_bar(0.5) == pytest.approx(ALPHA_BAR_HALF, abs=1e-15)
        assert alpha_bar(1.0) == pytest.approx(0.0, abs=1e-4)

    @given(st.floats(0.0, 0.99), st.floats(0.0, 0.99))
    @settings(max_examples=50, deadline=None)
    def test_alpha_bar_monotone_decreasing(self, a, b):
        lo, hi = sorted((a, b))
        assert alpha_bar(lo) >= alpha_bar(hi)

    def test_upper_bound_linear(self):
        sched = NoiseSchedule(t_min=0.02, t_max=0.98, total_steps=100)
        bounds = [sched.upper_bound(s) for s in range(101)]
        assert bounds[0] == pytest.approx(0.98)
        assert bounds[100] == pytest.approx(0.02)
        diffs = np.diff(bounds)
        assert np.allclose(diffs, diffs[0], atol=1e-12)

    def test_sample_within_bounds(self):
        sched = NoiseSchedule(t_min=0.02, t_max=0.98, total_steps=100, step=40)
        rng = np.random.default_rng(0)
        u = sched.upper_bound()
        for _ in range(500):
            t = sample_timestep(sched, rng)
            assert 0.02 <= t <= u

    def test_invalid_range_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(t_min=0.5, t_max=0.2)
        with pytest.raises(ValueError):
            NoiseSchedule(t_min=0.0, t_max=0.5)

    def test_weight_modes(self):
        const = NoiseSchedule(weight_mode="constant")
        sigma = NoiseSchedule(weight_mode="sigma")
        assert const.weight(0.5) == 1.0
        assert sigma.weight(0.5) == pytest.approx(1.0 - ALPHA_BAR_HALF)

    def test_add_noise_formula(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(4, 4, 3))
        eps = rng.normal(size=(4, 4, 3))
        t = 0.5
        out = add_noise(z, t, eps)
        ab = ALPHA_BAR_HALF
        assert np.allclose(out, np.sqrt(ab) * z + np.sqrt(1 - ab) * eps, atol=1e-12)

    def test_add_noise_shape_mismatch(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros((2, 2, 3)), 0.5, np.zeros((3, 2, 3)))


class TestCodecs:
    def test_identity_round_trip(self):
        rng = np.random.default_rng(0)
        img = ImageBuffer(rng.uniform(0, 1, (8, 8, 3)))
        codec = IdentityCodec()
        assert np.allclose(codec.decode(codec.encode(img)).data, img.data)

    def test_downsample_shapes(self):
        codec = DownsampleCodec()
        img = ImageBuffer(np.zeros((32, 32, 3)))
        z = codec.encode(img)
        assert z.shape == (4, 4, 3)
        assert codec.decode(z).data.shape == (32, 32, 3)

    def test_downsample_backward_is_adjoint(self):
        # <encode(x), y> == <x, backward(y)> for a linear map.
        codec = DownsampleCodec()
        rng = np.random.default_rng(2)
        x = rng.normal(size=(16, 16, 3))
        y = rng.normal(size=(2, 2, 3))
        lhs = np.sum(codec.encode(ImageBuffer(np.clip(x, 0, 1))) * y)
        # encode clips through ImageBuffer; use a [0,1] input to stay linear.
        x = np.clip(x, 0, 1)
        lhs = np.sum(codec.encode(ImageBuffer(x)) * y)
        rhs = np.sum(x * codec.backward(y, (16, 16, 3)))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestOracles:
    def test_identity_predicts_injected_noise(self):
        rng = np.random.default_rng(0)
        noise = rng.normal(size=(4, 4, 3))
        out = IdentityOracle().predict_noise(
            np.zeros((4, 4, 3)), 0.5, np.zeros((4, 4, 3)), "", 100.0, 10.0, noise=noise
        )
        assert out is noise

    def test_identity_requires_noise(self):
        with pytest.raises(OracleError):
            IdentityOracle().predict_noise(
                np.zeros((2, 2, 3)), 0.5, np.zeros((2, 2, 3)), "", 100.0, 10.0
            )

    def test_procedural_no_edit_when_target_reached(self):
        # If the current render already equals the transform target the
        # residual vanishes and the oracle returns the injected noise.
        codec = IdentityCodec()
        oracle = ProceduralOracle(lambda rgb, prompt: rgb, codec, kappa=1.0)
        rng = np.random.default_rng(3)
        z = rng.uniform(0, 1, (6, 6, 3))
        eps = rng.normal(size=(6, 6, 3))
        z_t = add_noise(z, 0.4, eps)
        out = oracle.predict_noise(z_t, 0.4, z, "", 100.0, 10.0, noise=eps)
        assert np.allclose(out, eps, atol=1e-10)

    def test_procedural_gain_scales_with_guidance(self):
        codec = IdentityCodec()
        oracle = ProceduralOracle(lambda rgb, prompt: np.zeros_like(rgb), codec, kappa=1.0)
        rng = np.random.default_rng(4)
        z = rng.uniform(0.2, 1, (4, 4, 3))
        eps = rng.normal(size=(4, 4, 3))
        z_t = add_noise(z, 0.3, eps)
        d1 = oracle.predict_noise(z_t, 0.3, z, "", 100.0, 10.0, noise=eps) - eps
        d2 = oracle.predict_noise(z_t, 0.3, z, "", 200.0, 10.0, noise=eps) - eps
        assert np.allclose(d2, 2.0 * d1, atol=1e-12)

    def test_hue_shift_preserves_background(self):
        transform = hue_shift_transform(0.0)
        rgb = np.ones((8, 8, 3))  # all background
        assert np.allclose(transform(rgb, ""), rgb)

    def test_hue_shift_moves_object_hue(self):
        from skimage.color import rgb2hsv

        rgb = np.ones((8, 8, 3))
        rgb[2:6, 2:6] = [0.2, 0.2, 0.8]  # blue square on white
        out = hue_shift_transform(0.0)(rgb, "")
        hsv = rgb2hsv(out[3, 3][None, None])
        hue_deg = hsv[0, 0, 0] * 360.0
        assert min(hue_deg, 360.0 - hue_deg) < 20.0

    def test_builtin_factory(self):
        assert isinstance(builtin_oracles("identity"), IdentityOracle)
        assert isinstance(builtin_oracles("hue_shift", {"target": "red"}), ProceduralOracle)
        with pytest.raises(ValueError):
            builtin_oracles("no_such_oracle")


class TestSdsStep:
    def _setup(self):
        scene = make_sphere_scene(30, radius=0.5)
        camera = Camera(azimuth_deg=0, elevation_deg=0, width=32, height=32)
        config = EditConfig(n_edit_steps=10)
        schedule = NoiseSchedule(total_steps=10)
        return scene, camera, config, schedule

    def test_identity_oracle_zero_gradients_bitwise(self):
        scene, camera, config, schedule = self._setup()
        rng = np.random.default_rng(0)
        grads, diag = sds_step(
            scene, camera, IdentityOracle(), IdentityCodec(), schedule, "", config, rng
        )
        for arr in (grads.positions, grads.rotations, grads.log_scales,
                    grads.opacity_logits, grads.sh):
            assert not arr.any()
        assert diag["residual"] == 0.0

    def test_weight_linearity(self):
        # Doubling w(t) doubles every gradient exactly: compare the constant
        # schedule against one whose weight is scaled by hand.
        scene, camera, config, schedule = self._setup()
        oracle = ProceduralOracle(lambda rgb, p: np.zeros_like(rgb), IdentityCodec())

        class Doubled(NoiseSchedule):
            def weight(self, t):
                return 2.0 * super().weight(t)

        doubled = Doubled(total_steps=10)
        g1, _ = sds_step(
            scene, camera, oracle, IdentityCodec(), schedule, "", config,
            np.random.default_rng(7),
        )
        g2, _ = sds_step(
            scene, camera, oracle, IdentityCodec(), doubled, "", config,
            np.random.default_rng(7),
        )
        for a, b in zip(
            (g1.positions, g1.log_scales, g1.sh), (g2.positions, g2.log_scales, g2.sh)
        ):
            assert np.array_equal(2.0 * a, b)

    def test_bad_oracle_shape_raises(self):
        scene, camera, config, schedule = self._setup()

        class BadOracle(IdentityOracle):
            def predict_noise(self, z_t, t, c_i, prompt, s_text, s_image, noise=None):
                return np.zeros((2, 2, 3))

        with pytest.raises(OracleError):
            sds_step(
                scene, camera, BadOracle(), IdentityCodec(), schedule, "", config,
                np.random.default_rng(0),
            )


class TestConvergence:
    def test_needs_full_window(self):
        assert not convergence_check([0.0] * 4, window=5, threshold=0.1)

    def test_trailing_mean(self):
        history = [10.0] * 50 + [0.001] * 50
        assert convergence_check(history, window=50, threshold=0.01)
        assert not convergence_check(history, window=100, threshold=0.01)


class TestEditLoop:
    def test_identity_oracle_leaves_scene_unchanged(self):
        scene = make_sphere_scene(20, radius=0.5)
        rig = build_camera_rig(2, [0.0], 2.5, 49.0, (24, 24))
        config = EditConfig(n_edit_steps=5, convergence_window=100)
        out = edit(scene, rig, IdentityOracle(), IdentityCodec(), "", config)
        scene.renormalize_rotations()  # adam renormalizes even for zero grads
        for k, v in out.parameter_arrays().items():
            assert np.allclose(v, scene.parameter_arrays()[k], atol=1e-15)

    def test_oracle_retries_then_raises(self):
        calls = {"n": 0}

        class Flaky(IdentityOracle):
            def predict_noise(self, *args, **kwargs):
                calls["n"] += 1
                raise OracleError("down")

        scene = make_sphere_scene(5, radius=0.4)
        rig = build_camera_rig(1, [0.0], 2.5, 49.0, (16, 16))
        config = EditConfig(n_edit_steps=3, oracle_retries=2)
        with pytest.raises(OracleError):
            edit(scene, rig, Flaky(), IdentityCodec(), "", config)
        assert calls["n"] == 3  # initial try + two retries

    def test_transient_failure_recovers(self):
        calls = {"n": 0}

        class FlakyOnce(IdentityOracle):
            def predict_noise(self, *args, **kwargs):
                calls["n"] += 1
                if calls["n"] == 1:
                    raise OracleError("transient")
                return super().predict_noise(*args, **kwargs)

        scene = make_sphere_scene(5, radius=0.4)
        rig = build_camera_rig(1, [0.0], 2.5, 49.0, (16, 16))
        config = EditConfig(n_edit_steps=2, oracle_retries=2, convergence_window=100)
        edit(scene, rig, FlakyOnce(), IdentityCodec(), "", config)
        assert calls["n"] >= 2

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            EditConfig(t_min=0.9, t_max=0.1)
        with pytest.raises(ValueError):
            EditConfig(n_edit_steps=-1)
