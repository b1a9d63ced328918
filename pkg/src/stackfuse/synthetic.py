"""Synthetic stacks for tests and benchmarks.

Each stack is a fixed in-plane texture plus an independent per-slice
brightness offset, i.e. content that is constant along z contaminated by
exactly the smooth-in-plane / jumpy-across-z component the pipeline is
meant to remove.  Values stay inside (0, 1) so the offsets survive
storage untouched.
"""

from __future__ import annotations

import numpy as np

from .smoothing import blur_plane, gaussian_kernel
from .volume_io import SLICE_STACK, VolumeMeta, create_volume, read_slice, write_slice


def _unit_field(rng: np.random.Generator, height: int, width: int, sigma: float) -> np.ndarray:
    field = blur_plane(rng.standard_normal((height, width)), gaussian_kernel(sigma))
    field -= field.mean()
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def texture(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Band-mixed random texture in [0.15, 0.85]: coarse structure plus
    pixel-scale detail."""
    coarse = _unit_field(rng, height, width, sigma=max(2.0, min(height, width) / 24))
    fine = _unit_field(rng, height, width, sigma=1.0)
    return np.clip(0.5 + 0.22 * coarse + 0.12 * fine, 0.15, 0.85)


def write_synthetic_stack(path, width: int, height: int, depth: int,
                          layout: str = SLICE_STACK, bit_depth: int = 16,
                          channels: int = 1, seed: int = 0,
                          offset: float = 0.1) -> VolumeMeta:
    """Create a stack of `texture` shifted by per-slice uniform offsets in
    +-`offset`, streamed straight to disk."""
    rng = np.random.default_rng(seed)
    planes = [texture(height, width, rng) for _ in range(channels)]
    base = planes[0] if channels == 1 else np.stack(planes, axis=-1)
    offsets = rng.uniform(-offset, offset, size=depth)
    meta = create_volume(path, width, height, depth, channels, bit_depth, layout)
    for z in range(depth):
        write_slice(meta, z, base + offsets[z])
    return meta


def zero_lower_half(meta: VolumeMeta, z: int) -> None:
    """Blank the lower half of slice z, simulating a partially missing slice."""
    s = read_slice(meta, z)
    s[s.shape[0] // 2 :, ...] = 0.0
    write_slice(meta, z, s)
