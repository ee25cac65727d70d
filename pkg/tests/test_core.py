"""Scene representation: activations, quaternions, covariance, SH color."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_random_scene
from splatpipe.core import (
    SH_C0,
    GaussianSplat,
    ImageBuffer,
    Scene,
    activate,
    covariance_from_rotation_scale,
    eval_gaussian,
    eval_sh,
    inverse_sigmoid,
    normalize_quaternions,
    quat_to_rotmat,
    rgb_to_dc,
    sh_basis,
    sh_basis_grad,
    sh_to_rgb,
    sigmoid,
)

finite_floats = st.floats(-30.0, 30.0, allow_nan=False)


class TestActivations:
    @given(finite_floats)
    def test_sigmoid_in_unit_interval(self, x):
        assert 0.0 <= sigmoid(x) <= 1.0

    @given(st.floats(1e-6, 1.0 - 1e-6))
    def test_inverse_sigmoid_round_trip(self, y):
        assert sigmoid(inverse_sigmoid(y)) == pytest.approx(y, abs=1e-12)

    def test_sigmoid_midpoint(self):
        assert sigmoid(0.0) == 0.5

    def test_scale_activation_clamped(self):
        scene = make_random_scene(5, 0)
        scene.log_scales[:] = 100.0
        assert np.all(scene.activated_scales() == 10.0)
        scene.log_scales[:] = -100.0
        assert np.all(scene.activated_scales() == 1e-6)


class TestQuaternions:
    @given(st.lists(st.floats(-2.0, 2.0), min_size=4, max_size=4))
    def test_rotmat_orthonormal(self, q):
        q = np.asarray(q)
        if np.linalg.norm(q) < 1e-3:
            return
        r = quat_to_rotmat(normalize_quaternions(q[None])[0])
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_identity_quaternion(self):
        assert np.allclose(quat_to_rotmat(np.array([1.0, 0, 0, 0])), np.eye(3))

    def test_z_rotation(self):
        # 90 degrees about +z.
        q = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
        r = quat_to_rotmat(q)
        assert np.allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_degenerate_rotation_rejected(self):
        with pytest.raises(ValueError):
            Scene(
                positions=np.zeros((1, 3)),
                rotations=np.zeros((1, 4)),
                log_scales=np.zeros((1, 3)),
                opacity_logits=np.zeros(1),
                sh=np.zeros((1, 3, 1)),
            )

    def test_rotations_stored_verbatim(self):
        rots = np.array([[2.0, 0.5, -0.5, 1.0]])
        scene = Scene(
            positions=np.zeros((1, 3)),
            rotations=rots,
            log_scales=np.zeros((1, 3)),
            opacity_logits=np.zeros(1),
            sh=np.zeros((1, 3, 1)),
        )
        assert np.array_equal(scene.rotations, rots)


class TestCovariance:
    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_spd(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=4)
        s = np.exp(rng.uniform(-3, 0, 3))
        cov = covariance_from_rotation_scale(q, s)
        assert np.allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_axis_aligned(self):
        s = np.array([0.1, 0.2, 0.3])
        cov = covariance_from_rotation_scale(np.array([1.0, 0, 0, 0]), s)
        assert np.allclose(cov, np.diag(s**2))

    def test_rotation_preserves_eigenvalues(self):
        rng = np.random.default_rng(3)
        s = np.array([0.05, 0.2, 0.8])
        cov = covariance_from_rotation_scale(rng.normal(size=4), s)
        assert np.allclose(np.sort(np.linalg.eigvalsh(cov)), np.sort(s**2))


class TestGaussianEval:
    def _splat(self):
        return GaussianSplat(
            position=np.array([0.1, -0.2, 0.3]),
            rotation=np.array([1.0, 0.0, 0.0, 0.0]),
            log_scale=np.log([0.2, 0.2, 0.2]),
            opacity_logit=inverse_sigmoid(0.8),
            color=np.zeros((3, 1)),
        )

    def test_peak_at_mean(self):
        splat = self._splat()
        assert eval_gaussian(splat, splat.position) == pytest.approx(1.0)

    def test_isotropic_falloff(self):
        splat = self._splat()
        x = splat.position + [0.2, 0.0, 0.0]
        assert eval_gaussian(splat, x) == pytest.approx(np.exp(-0.5))

    def test_activate(self):
        alpha, scales = activate(self._splat())
        assert alpha == pytest.approx(0.8)
        assert np.allclose(scales, 0.2)


class TestSphericalHarmonics:
    def test_dc_only(self):
        coeffs = np.zeros((3, 1))
        coeffs[:, 0] = rgb_to_dc([0.25, 0.5, 0.75])
        rgb = sh_to_rgb(coeffs, np.array([0.0, 0.0, 1.0]))
        assert np.allclose(rgb, [0.25, 0.5, 0.75], atol=1e-12)

    def test_dc_round_trip_constant(self):
        assert SH_C0 * rgb_to_dc([0.5, 0.5, 0.5])[0] + 0.5 == pytest.approx(0.5)

    @given(st.integers(0, 10_000), st.integers(0, 3))
    @settings(max_examples=40, deadline=None)
    def test_basis_matches_eval(self, seed, degree):
        rng = np.random.default_rng(seed)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        k = (degree + 1) ** 2
        coeffs = rng.normal(size=(3, k))
        direct = eval_sh(coeffs, d, degree)
        via_basis = coeffs @ sh_basis(d, degree)
        assert np.allclose(direct, via_basis, atol=1e-12)

    @given(st.integers(0, 10_000), st.integers(1, 3))
    @settings(max_examples=20, deadline=None)
    def test_basis_gradient_finite_difference(self, seed, degree):
        rng = np.random.default_rng(seed)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        grad = sh_basis_grad(d, degree)  # (K, 3), d basis / d direction
        eps = 1e-6
        for axis in range(3):
            dp, dm = d.copy(), d.copy()
            dp[axis] += eps
            dm[axis] -= eps
            fd = (sh_basis(dp, degree) - sh_basis(dm, degree)) / (2 * eps)
            assert np.allclose(grad[:, axis], fd, atol=1e-6)

    def test_color_clipped_nonnegative(self):
        coeffs = np.zeros((3, 1))
        coeffs[:, 0] = rgb_to_dc([-5.0, -5.0, -5.0])
        assert np.all(sh_to_rgb(coeffs, np.array([0.0, 0.0, 1.0])) == 0.0)


class TestSceneContainer:
    def test_soa_shapes(self):
        scene = make_random_scene(17, 0, sh_degree=2)
        assert len(scene) == 17
        assert scene.sh.shape == (17, 3, 9)
        groups = scene.parameter_arrays()
        assert set(groups) == {"positions", "rotations", "log_scales", "opacity_logits", "sh"}

    def test_copy_is_deep(self):
        scene = make_random_scene(5, 1)
        clone = scene.copy()
        clone.positions += 1.0
        assert not np.allclose(scene.positions, clone.positions)

    def test_splat_round_trip(self):
        scene = make_random_scene(5, 2)
        splat = scene.splat(3)
        assert np.array_equal(splat.position, scene.positions[3])
        assert np.array_equal(splat.color, scene.sh[3])


class TestImageBuffer:
    def test_channel_validation(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 2)))

    def test_nan_rejected(self):
        data = np.zeros((4, 4, 3))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            ImageBuffer(data)

    def test_alpha_requires_rgba(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((2, 2, 3))).alpha()
