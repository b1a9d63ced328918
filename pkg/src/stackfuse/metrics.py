"""Quantitative proxies for stack quality.

The artifacts this pipeline targets are smooth within a slice but jump
between slices, so the discontinuity score looks only at cross-slice
changes of per-slice means and of in-plane low-pass content.  Detail
retention is scored as the correlation of in-plane gradient magnitudes.
Both are proxies for visual judgement, not established benchmarks.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .smoothing import blur_plane, gaussian_kernel


def discontinuity_components(slices: Iterable[np.ndarray], lowpass_sigma: float = 4.0,
                             truncation: float = 3.0) -> tuple:
    """(mean term, low-pass term) of the inter-slice discontinuity score.

    mean term: average |mean(slice j) - mean(slice j+1)|.
    low-pass term: average per-pixel |blur(slice j) - blur(slice j+1)|
    with an in-plane Gaussian of `lowpass_sigma`.
    """
    kernel = gaussian_kernel(lowpass_sigma, truncation)
    prev_mean = None
    prev_blur = None
    mean_acc = 0.0
    low_acc = 0.0
    pairs = 0
    for s in slices:
        s = np.asarray(s, dtype=np.float64)
        cur_mean = float(s.mean())
        cur_blur = blur_plane(s, kernel)
        if prev_blur is not None:
            if cur_blur.shape != prev_blur.shape:
                raise ValueError("slice dimensions change mid-stack")
            mean_acc += abs(cur_mean - prev_mean)
            low_acc += float(np.abs(cur_blur - prev_blur).mean())
            pairs += 1
        prev_mean, prev_blur = cur_mean, cur_blur
    if pairs == 0:
        raise ValueError("need at least two slices")
    return mean_acc / pairs, low_acc / pairs


def interslice_discontinuity(slices: Iterable[np.ndarray], lowpass_sigma: float = 4.0,
                             truncation: float = 3.0) -> float:
    """Sum of the two discontinuity components; 0 for a stack whose
    low-pass content never changes across z."""
    mean_term, low_term = discontinuity_components(slices, lowpass_sigma, truncation)
    return mean_term + low_term


def _gradient_magnitude(s: np.ndarray) -> np.ndarray:
    gx = s[:, 1:, ...] - s[:, :-1, ...]
    gy = s[1:, :, ...] - s[:-1, :, ...]
    return np.sqrt(gx[:-1, :, ...] ** 2 + gy[:, :-1, ...] ** 2)


def gradient_preservation(reference: Iterable[np.ndarray], result: Iterable[np.ndarray]) -> float:
    """Mean per-slice Pearson correlation of in-plane gradient magnitudes.

    Forward differences, all channels pooled.  A slice pair where both
    gradients are constant scores 1 by convention; where only one is
    constant, 0.
    """
    ref_iter, res_iter = iter(reference), iter(result)
    scores = []
    while True:
        a = next(ref_iter, None)
        b = next(res_iter, None)
        if a is None and b is None:
            break
        if a is None or b is None:
            raise ValueError("volumes have different depth")
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
        ga = _gradient_magnitude(a).ravel()
        gb = _gradient_magnitude(b).ravel()
        ga_dev = ga - ga.mean() if ga.size else ga
        gb_dev = gb - gb.mean() if gb.size else gb
        na = float(np.linalg.norm(ga_dev))
        nb = float(np.linalg.norm(gb_dev))
        if na == 0.0 and nb == 0.0:
            scores.append(1.0)
        elif na == 0.0 or nb == 0.0:
            scores.append(0.0)
        else:
            scores.append(float(np.dot(ga_dev, gb_dev)) / (na * nb))
    if not scores:
        raise ValueError("empty volumes")
    return float(np.mean(scores))
