"""Separable anisotropic Gaussian smoothing of a slice stack.

The blur is three sequential 1D passes (x, then y, then z) with a
compactly supported kernel.  Wherever the kernel hangs past the domain,
the out-of-range taps are dropped and the rest renormalized to unit sum,
which keeps constants exact right up to the boundary.  The cross-slice
pass can optionally reject outlying samples before averaging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .config import FusionParams
from .volume_io import Slab


@dataclass(frozen=True)
class Kernel1D:
    """Odd-length symmetric convolution weights with unit sum."""

    taps: np.ndarray
    radius: int
    sigma: float


def gaussian_kernel(sigma: float, truncation: float = 3.0) -> Kernel1D:
    """Sampled Gaussian, zeroed beyond truncation*sigma, renormalized.

    sigma = 0 gives the single-tap identity kernel.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if truncation <= 0:
        raise ValueError("truncation must be > 0")
    if sigma == 0:
        return Kernel1D(np.array([1.0]), 0, 0.0)
    radius = int(math.ceil(truncation * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # tiny sigma: off-center taps underflow to 0
        taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    taps /= taps.sum()
    return Kernel1D(taps, radius, float(sigma))


def _edge_weight_sums(n: int, taps: np.ndarray) -> np.ndarray:
    """In-domain tap mass at every position of an axis of length n."""
    r = (len(taps) - 1) // 2
    csum = np.concatenate(([0.0], np.cumsum(taps)))
    p = np.arange(n)
    start = np.maximum(r - p, 0)
    end = np.minimum(r + n - p, len(taps))
    return csum[end] - csum[start]


def convolve_axis(arr: np.ndarray, kernel: Kernel1D, axis: int) -> np.ndarray:
    """1D convolution along one axis with renormalized truncation at the ends."""
    if kernel.radius == 0:
        return arr.astype(np.float64, copy=True)
    numer = convolve1d(arr.astype(np.float64, copy=False), kernel.taps, axis=axis, mode="constant", cval=0.0)
    wsum = _edge_weight_sums(arr.shape[axis], kernel.taps)
    shape = [1] * arr.ndim
    shape[axis] = arr.shape[axis]
    return numer / wsum.reshape(shape)


def blur_plane(plane: np.ndarray, kernel: Kernel1D) -> np.ndarray:
    """In-plane blur of one slice: x pass then y pass."""
    return convolve_axis(convolve_axis(plane, kernel, axis=1), kernel, axis=0)


def z_tap_window(kernel: Kernel1D, z: int, depth: int) -> tuple:
    """Absolute slice range [lo, hi) and renormalized weights for output z."""
    lo = max(0, z - kernel.radius)
    hi = min(depth, z + kernel.radius + 1)
    w = kernel.taps[lo - z + kernel.radius : hi - z + kernel.radius]
    return lo, hi, w / w.sum()


def robust_z_average(samples, weights) -> float:
    """Weighted mean that ignores samples more than two weighted standard
    deviations from the weighted mean.

    The candidate sample itself is included when computing the mean and
    deviation.  If the deviation is zero, or rejection removes everything,
    the plain weighted mean is returned.
    """
    v = np.asarray(samples, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.shape != w.shape:
        raise ValueError("samples and weights must have the same length")
    w = w / w.sum()
    mu = float(np.dot(w, v))
    s = math.sqrt(float(np.dot(w, (v - mu) ** 2)))
    if s == 0.0:
        return mu
    keep = np.abs(v - mu) <= 2.0 * s
    kept = float(w[keep].sum())
    if kept == 0.0:
        return mu
    return float(np.dot(w[keep], v[keep]) / kept)


def combine_z(planes: list, weights: np.ndarray, robust: bool = False) -> np.ndarray:
    """Cross-slice weighted average of in-plane blurred slices.

    `planes` are the blurred slices of the z-window in ascending z order,
    `weights` the matching renormalized kernel taps.
    """
    stack = np.stack(planes)
    w = np.asarray(weights, dtype=np.float64)
    mu = np.tensordot(w, stack, axes=1)
    if not robust:
        return mu
    dev = stack - mu
    s = np.sqrt(np.tensordot(w, dev * dev, axes=1))
    keep = np.abs(dev) <= 2.0 * s
    wk = w.reshape((-1,) + (1,) * mu.ndim) * keep
    denom = wk.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        robust_mean = (wk * stack).sum(axis=0) / denom
    return np.where((s > 0.0) & (denom > 0.0), robust_mean, mu)


def smooth_slab(slab: Slab, z: int, params: FusionParams, depth: int) -> np.ndarray:
    """Slice z of the smoothed stack, computed from its z-halo window.

    The slab must contain every in-volume slice within
    ceil(truncation*sigma_z) of z; a missing interior slice is a caller
    bug and is reported, while slices clipped off by the volume ends are
    handled by renormalizing the z taps.
    """
    kz = gaussian_kernel(params.sigma_z, params.truncation)
    kxy = gaussian_kernel(params.sigma_xy, params.truncation)
    lo, hi, w = z_tap_window(kz, z, depth)
    if not (slab.z_begin <= lo and hi <= slab.z_end):
        raise ValueError(
            f"insufficient halo for slice {z}: need slices [{lo}, {hi}), "
            f"slab holds [{slab.z_begin}, {slab.z_end})"
        )
    planes = [blur_plane(slab.slice_at(t), kxy) for t in range(lo, hi)]
    return combine_z(planes, w, robust=params.robust)
