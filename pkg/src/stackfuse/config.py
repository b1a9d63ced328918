"""Parameter dataclasses shared across the pipeline."""

from dataclasses import dataclass


@dataclass(frozen=True)
class FusionParams:
    """Knobs of the two-phase pipeline.

    sigma_xy / sigma_z are the in-plane and cross-slice blur widths in
    pixels, alpha the screening weight (1/pixel^2) of the per-slice blend,
    truncation the kernel cutoff in multiples of sigma.  robust switches
    the cross-slice averaging to the outlier-rejecting variant.
    """

    sigma_xy: float = 1.0
    sigma_z: float = 3.0
    alpha: float = 0.001
    truncation: float = 3.0
    robust: bool = False

    def __post_init__(self):
        if self.sigma_xy < 0 or self.sigma_z < 0:
            raise ValueError("sigma_xy and sigma_z must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.truncation <= 0:
            raise ValueError("truncation must be > 0")


@dataclass(frozen=True)
class SolverConfig:
    """Multigrid schedule for the per-slice screened-Poisson solves."""

    v_cycles: int = 16
    pre_sweeps: int = 2
    post_sweeps: int = 2
    coarsest_size: int = 8
    tolerance: float = 1e-6
    max_levels: int = 32

    def __post_init__(self):
        for name in ("v_cycles", "pre_sweeps", "post_sweeps", "coarsest_size", "max_levels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
