import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_gaussian_blur_3d, reference_robust_average
from stackfuse.config import FusionParams
from stackfuse.smoothing import (
    blur_plane,
    combine_z,
    convolve_axis,
    gaussian_kernel,
    robust_z_average,
    smooth_slab,
    z_tap_window,
)
from stackfuse.volume_io import Slab


def slab_from_volume(vol, z_begin=0):
    return Slab(z_begin, z_begin + vol.shape[0], [vol[i] for i in range(vol.shape[0])])


def separable_blur_volume(vol, params):
    """Whole-volume smoothing via the public per-slice path."""
    slab = slab_from_volume(vol)
    depth = vol.shape[0]
    return np.stack([smooth_slab(slab, z, params, depth) for z in range(depth)])


class TestGaussianKernel:
    def test_sigma_zero_identity(self):
        k = gaussian_kernel(0.0)
        assert k.radius == 0
        assert np.array_equal(k.taps, [1.0])

    def test_sigma_one(self):
        k = gaussian_kernel(1.0, 3.0)
        assert len(k.taps) == 7
        assert abs(k.taps.sum() - 1.0) <= 1e-12
        assert np.array_equal(k.taps, k.taps[::-1])
        # center-to-neighbor ratio is invariant to normalization
        assert np.isclose(k.taps[3] / k.taps[2], math.exp(0.5), rtol=1e-12)

    def test_matches_stack_default(self):
        assert gaussian_kernel(3.0, 3.0).radius == 9

    def test_invalid(self):
        with pytest.raises(ValueError):
            gaussian_kernel(-1.0)
        with pytest.raises(ValueError):
            gaussian_kernel(1.0, 0.0)

    @settings(max_examples=60)
    @given(st.floats(0, 10), st.floats(0.1, 6))
    def test_properties(self, sigma, truncation):
        k = gaussian_kernel(sigma, truncation)
        assert len(k.taps) == 2 * k.radius + 1
        assert k.radius == (0 if sigma == 0 else math.ceil(truncation * sigma))
        assert abs(k.taps.sum() - 1.0) <= 1e-12
        assert np.all(k.taps >= 0)
        assert np.allclose(k.taps, k.taps[::-1], rtol=0, atol=0)


class TestSeparableSmoothing:
    def test_constant_preserved_everywhere(self):
        vol = np.full((9, 8, 7), 0.37)
        out = separable_blur_volume(vol, FusionParams(sigma_xy=1.5, sigma_z=2.0))
        assert np.abs(out - 0.37).max() <= 1e-10

    def test_impulse_response_is_tap_product(self):
        params = FusionParams(sigma_xy=1.0, sigma_z=1.0)
        k = gaussian_kernel(1.0, 3.0)
        n = 4 * k.radius + 1
        vol = np.zeros((n, n, n))
        c = n // 2
        vol[c, c, c] = 1.0
        out = separable_blur_volume(vol, params)
        expected = np.einsum("i,j,k->ijk", k.taps, k.taps, k.taps)
        region = out[c - k.radius : c + k.radius + 1, c - k.radius : c + k.radius + 1, c - k.radius : c + k.radius + 1]
        assert np.abs(region - expected).max() <= 1e-12
        # everything outside the kernel support stays zero
        out[c - k.radius : c + k.radius + 1, c - k.radius : c + k.radius + 1, c - k.radius : c + k.radius + 1] = 0.0
        assert np.abs(out).max() == 0.0

    @pytest.mark.parametrize(
        "shape,sigma_xy,sigma_z",
        [
            ((16, 16, 16), 1.0, 3.0),
            ((9, 7, 5), 1.3, 2.2),
            ((32, 32, 32), 1.0, 3.0),
            ((5, 12, 3), 0.0, 1.0),
            ((4, 6, 9), 2.0, 0.0),
        ],
    )
    def test_matches_brute_force_3d_convolution(self, rng, shape, sigma_xy, sigma_z):
        vol = rng.random(shape)
        params = FusionParams(sigma_xy=sigma_xy, sigma_z=sigma_z)
        out = separable_blur_volume(vol, params)
        expected = brute_gaussian_blur_3d(vol, sigma_xy, sigma_z)
        assert np.abs(out - expected).max() <= 1e-10

    def test_axis_order_does_not_matter(self, rng):
        vol = rng.random((8, 9, 10))
        k = gaussian_kernel(1.4, 3.0)
        results = []
        import itertools

        for order in itertools.permutations([0, 1, 2]):
            out = vol
            for axis in order:
                out = convolve_axis(out, k, axis)
            results.append(out)
        for other in results[1:]:
            assert np.abs(results[0] - other).max() <= 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_range_preserved(self, seed):
        rng = np.random.default_rng(seed)
        vol = rng.random((5, 6, 7))
        out = separable_blur_volume(vol, FusionParams(sigma_xy=1.0, sigma_z=1.5))
        assert out.min() >= vol.min() - 1e-12
        assert out.max() <= vol.max() + 1e-12

    def test_output_ignores_slices_outside_halo(self, rng):
        params = FusionParams(sigma_xy=1.0, sigma_z=1.0)
        radius = gaussian_kernel(1.0, 3.0).radius
        depth = 2 * radius + 5
        vol = rng.random((depth, 6, 6))
        j = depth // 2
        slab = slab_from_volume(vol)
        before = smooth_slab(slab, j, params, depth)
        perturbed = vol.copy()
        perturbed[0] += 0.5  # outside the halo of j
        perturbed[-1] -= 0.3
        after = smooth_slab(slab_from_volume(perturbed), j, params, depth)
        assert np.array_equal(before, after)

    def test_insufficient_halo_is_reported(self, rng):
        params = FusionParams(sigma_xy=0.0, sigma_z=3.0)
        vol = rng.random((4, 5, 5))
        slab = slab_from_volume(vol, z_begin=0)
        # depth says more slices exist above, so the halo is genuinely missing
        with pytest.raises(ValueError, match="halo"):
            smooth_slab(slab, 3, params, depth=20)

    def test_volume_boundary_is_not_an_error(self, rng):
        params = FusionParams(sigma_xy=0.0, sigma_z=3.0)
        vol = rng.random((4, 5, 5))
        slab = slab_from_volume(vol)
        out = smooth_slab(slab, 0, params, depth=4)
        lo, hi, w = z_tap_window(gaussian_kernel(3.0, 3.0), 0, 4)
        assert (lo, hi) == (0, 4)
        expected = np.tensordot(w, vol, axes=1)
        assert np.abs(out - expected).max() <= 1e-12

    def test_channels_handled(self, rng):
        vol = rng.random((5, 6, 7, 3))
        params = FusionParams(sigma_xy=1.0, sigma_z=1.0)
        out = separable_blur_volume(vol, params)
        for c in range(3):
            expected = brute_gaussian_blur_3d(vol[..., c], 1.0, 1.0)
            assert np.abs(out[..., c] - expected).max() <= 1e-10


class TestRobustAverage:
    def test_all_equal_returns_constant(self):
        taps = gaussian_kernel(1.0).taps
        assert robust_z_average(np.full(7, 0.42), taps) == pytest.approx(0.42, abs=1e-15)

    def test_uniform_weights_borderline_outlier(self):
        # from the definition: mu=0.4, s=0.2, |0-0.4| == 2s, so the zero is kept
        samples = [0.5, 0.5, 0.0, 0.5, 0.5]
        weights = [0.2] * 5
        got = robust_z_average(samples, weights)
        assert got == pytest.approx(reference_robust_average(samples, weights), abs=1e-12)
        assert got == pytest.approx(0.4, abs=1e-12)

    def test_near_uniform_weights_drop_outlier(self):
        samples = [0.5, 0.5, 0.0, 0.5, 0.5]
        weights = [0.23, 0.2, 0.14, 0.2, 0.23]
        expected = reference_robust_average(samples, weights)
        got = robust_z_average(samples, weights)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.5, abs=1e-12)  # outlier excluded, rest constant

    def test_gaussian_weighted_outlier(self):
        taps = gaussian_kernel(3.0).taps
        samples = np.full(len(taps), 0.6)
        samples[4] = 0.05
        expected = reference_robust_average(list(samples), list(taps))
        assert robust_z_average(samples, taps) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.001, 0.05))
    def test_reduces_to_weighted_mean_without_outliers(self, seed, spread):
        rng = np.random.default_rng(seed)
        taps = gaussian_kernel(2.0).taps
        samples = 0.5 + spread * rng.uniform(-1, 1, len(taps))
        mu = float(np.dot(taps, samples) / taps.sum())
        s = math.sqrt(float(np.dot(taps / taps.sum(), (samples - mu) ** 2)))
        if np.abs(samples - mu).max() <= 2 * s:  # no rejection triggered
            assert robust_z_average(samples, taps) == pytest.approx(mu, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            robust_z_average([1.0, 2.0], [0.5, 0.25, 0.25])

    def test_vectorized_combine_matches_reference(self, rng):
        taps = gaussian_kernel(2.0).taps
        t = len(taps)
        stack = rng.random((t, 5, 4))
        stack[t // 2, :2, :2] = 0.0  # planted outliers
        combined = combine_z([stack[i] for i in range(t)], taps, robust=True)
        for y in range(5):
            for x in range(4):
                expected = reference_robust_average(list(stack[:, y, x]), list(taps))
                assert combined[y, x] == pytest.approx(expected, abs=1e-12)

    def test_combine_linear_matches_tensordot(self, rng):
        taps = gaussian_kernel(1.5).taps
        stack = rng.random((len(taps), 6, 6))
        got = combine_z(list(stack), taps, robust=False)
        assert np.allclose(got, np.tensordot(taps, stack, axes=1), atol=1e-14)


class TestSmoothSlabRobustMode:
    def test_robust_matches_per_pixel_reference(self, rng):
        params = FusionParams(sigma_xy=0.0, sigma_z=2.0, robust=True)
        kz = gaussian_kernel(2.0, 3.0)
        depth = 2 * kz.radius + 1
        vol = rng.random((depth, 4, 3))
        out = smooth_slab(slab_from_volume(vol), kz.radius, params, depth)
        for y in range(4):
            for x in range(3):
                expected = reference_robust_average(list(vol[:, y, x]), list(kz.taps))
                assert out[y, x] == pytest.approx(expected, abs=1e-12)
