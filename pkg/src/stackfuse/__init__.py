"""stackfuse: streamed removal of inter-slice discontinuities in image stacks."""

from .config import FusionParams, SolverConfig
from .fusion import RunReport, fuse_pair, fuse_stack
from .metrics import gradient_preservation, interslice_discontinuity
from .poisson import (
    LinearSystem2D,
    MultigridResult,
    build_system,
    gauss_seidel,
    laplacian_apply,
    laplacian_eigenvalues,
    residual_norm,
    solve_multigrid,
    spectral_solve,
    spectral_weights,
)
from .smoothing import (
    Kernel1D,
    blur_plane,
    combine_z,
    convolve_axis,
    gaussian_kernel,
    robust_z_average,
    smooth_slab,
    z_tap_window,
)
from .volume_io import (
    RAW,
    SLICE_STACK,
    Slab,
    VolumeFormatError,
    VolumeMeta,
    create_like,
    create_volume,
    overlap_extent,
    probe,
    read_image,
    read_slab,
    read_slice,
    slice_exists,
    slices,
    write_image,
    write_slice,
)

__all__ = [
    "FusionParams",
    "SolverConfig",
    "RunReport",
    "fuse_pair",
    "fuse_stack",
    "gradient_preservation",
    "interslice_discontinuity",
    "LinearSystem2D",
    "MultigridResult",
    "build_system",
    "gauss_seidel",
    "laplacian_apply",
    "laplacian_eigenvalues",
    "residual_norm",
    "solve_multigrid",
    "spectral_solve",
    "spectral_weights",
    "Kernel1D",
    "blur_plane",
    "combine_z",
    "convolve_axis",
    "gaussian_kernel",
    "robust_z_average",
    "smooth_slab",
    "z_tap_window",
    "RAW",
    "SLICE_STACK",
    "Slab",
    "VolumeFormatError",
    "VolumeMeta",
    "create_like",
    "create_volume",
    "overlap_extent",
    "probe",
    "read_image",
    "read_slab",
    "read_slice",
    "slice_exists",
    "slices",
    "write_image",
    "write_slice",
]

__version__ = "0.1.0"
