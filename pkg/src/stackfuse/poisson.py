"""Per-slice screened-Poisson blending.

Solves (alpha - lap) u = alpha*low - lap(high) on a unit-spaced pixel
grid with Neumann boundaries (missing stencil neighbors are simply
omitted), so u inherits its low frequencies from `low` and its high
frequencies from `high`.

Two solvers are provided: a geometric multigrid V-cycle (the production
path, linear in pixel count) and a cosine-transform solver that
diagonalizes the exact same discrete operator and therefore serves as a
near-machine-precision oracle for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.fft import dctn, idctn

from .config import SolverConfig

_MAX_DENSE_POINTS = 4096  # direct-solve guard for degenerate configs
_NORM_FLOOR = 1e-300


@dataclass(frozen=True)
class LinearSystem2D:
    """Right-hand side and screening weight of one per-slice system.

    Boundary conditions are always Neumann; they are baked into the
    operator, not stored here.
    """

    rhs: np.ndarray
    alpha: float


@dataclass
class SolveStats:
    """Work counters for one solve (points touched, not flops)."""

    point_relaxations: int = 0
    residual_points: int = 0
    transfer_points: int = 0


@dataclass
class MultigridResult:
    solution: np.ndarray
    residual: float
    cycles: int
    converged: bool
    history: list = field(default_factory=list)
    stats: SolveStats = field(default_factory=SolveStats)


def _neighbor_count(height: int, width: int) -> np.ndarray:
    deg = np.full((height, width), 4.0)
    deg[0, :] -= 1.0
    deg[-1, :] -= 1.0
    deg[:, 0] -= 1.0
    deg[:, -1] -= 1.0
    return deg


def _neighbor_sum(u: np.ndarray) -> np.ndarray:
    s = np.zeros_like(u)
    s[1:, ...] += u[:-1, ...]
    s[:-1, ...] += u[1:, ...]
    s[:, 1:, ...] += u[:, :-1, ...]
    s[:, :-1, ...] += u[:, 1:, ...]
    return s


def laplacian_apply(grid: np.ndarray) -> np.ndarray:
    """5-point Laplacian at unit spacing, Neumann via omitted neighbors.

    Accepts (H, W) or (H, W, C); channels are independent.  The output
    sums to exactly zero by construction.
    """
    u = np.asarray(grid, dtype=np.float64)
    if u.ndim not in (2, 3) or u.shape[0] < 1 or u.shape[1] < 1:
        raise ValueError(f"expected a 2D grid (optionally with channels), got shape {u.shape}")
    deg = _neighbor_count(u.shape[0], u.shape[1])
    if u.ndim == 3:
        deg = deg[..., None]
    return _neighbor_sum(u) - deg * u


def build_system(low: np.ndarray, high: np.ndarray, alpha: float) -> LinearSystem2D:
    """Assemble rhs = alpha*low - lap(high), per channel."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if low.shape != high.shape:
        raise ValueError(f"dimension mismatch: low {low.shape} vs high {high.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return LinearSystem2D(alpha * low - laplacian_apply(high), float(alpha))


def residual_norm(system: LinearSystem2D, solution: np.ndarray) -> float:
    """Relative L2 residual of a candidate solution."""
    solution = np.asarray(solution, dtype=np.float64)
    if solution.shape != system.rhs.shape:
        raise ValueError("solution dimensions do not match the system")
    r = system.rhs - (system.alpha * solution - laplacian_apply(solution))
    return float(np.linalg.norm(r.ravel()) / max(np.linalg.norm(system.rhs.ravel()), _NORM_FLOOR))


# ---------------------------------------------------------------------------
# geometric multigrid


@dataclass
class _Level:
    shape: tuple
    inv_h2: float
    diag: np.ndarray  # alpha + neighbor_count * inv_h2
    red: np.ndarray
    black: np.ndarray
    lu: tuple | None = None


def _dense_operator(level: _Level) -> np.ndarray:
    h, w = level.shape
    n = h * w
    a = np.diag(level.diag.ravel())
    for i in range(h):
        for j in range(w):
            k = i * w + j
            if i > 0:
                a[k, k - w] = -level.inv_h2
            if i < h - 1:
                a[k, k + w] = -level.inv_h2
            if j > 0:
                a[k, k - 1] = -level.inv_h2
            if j < w - 1:
                a[k, k + 1] = -level.inv_h2
    return a


@lru_cache(maxsize=32)
def _hierarchy(height: int, width: int, alpha: float, coarsest_size: int, max_levels: int) -> tuple:
    levels = []
    h, w = height, width
    depth = 0
    while True:
        inv_h2 = 0.25**depth  # grid spacing doubles per level; alpha stays fixed
        diag = alpha + _neighbor_count(h, w) * inv_h2
        ii, jj = np.indices((h, w))
        red = (ii + jj) % 2 == 0
        levels.append(_Level((h, w), inv_h2, diag, red, ~red))
        hc, wc = (h + 1) // 2, (w + 1) // 2
        if max(h, w) <= coarsest_size or len(levels) >= max_levels or (hc, wc) == (h, w):
            break
        h, w = hc, wc
        depth += 1
    coarsest = levels[-1]
    n = coarsest.shape[0] * coarsest.shape[1]
    if n > _MAX_DENSE_POINTS:
        raise ValueError(
            f"coarsest grid {coarsest.shape} too large for a direct solve; "
            "raise max_levels or coarsest_size"
        )
    coarsest.lu = sla.lu_factor(_dense_operator(coarsest))
    return tuple(levels)


def _apply(level: _Level, u: np.ndarray) -> np.ndarray:
    return level.diag * u - level.inv_h2 * _neighbor_sum(u)


def gauss_seidel(system: LinearSystem2D, solution: np.ndarray, sweeps: int = 1) -> np.ndarray:
    """Red-black Gauss-Seidel relaxation on the fine grid; returns a copy."""
    u = np.array(solution, dtype=np.float64)
    if u.shape != system.rhs.shape or u.ndim != 2:
        raise ValueError("gauss_seidel expects a single-channel solution matching the system")
    h, w = u.shape
    diag = system.alpha + _neighbor_count(h, w)
    ii, jj = np.indices((h, w))
    red = (ii + jj) % 2 == 0
    level = _Level((h, w), 1.0, diag, red, ~red)
    stats = SolveStats()
    for _ in range(sweeps):
        _gs_sweep(u, system.rhs, level, stats)
    return u


def _gs_sweep(u: np.ndarray, rhs: np.ndarray, level: _Level, stats: SolveStats) -> None:
    for mask in (level.red, level.black):
        update = (rhs + level.inv_h2 * _neighbor_sum(u)) / level.diag
        np.copyto(u, update, where=mask)
    stats.point_relaxations += u.size


def _restrict_axis0(a: np.ndarray) -> np.ndarray:
    # full weighting as transpose-of-prolongation / 2: residual mass per
    # fine point is preserved exactly, which the tiny screening term needs
    # (any lost mass reappears as a constant error amplified by 1/alpha)
    n = a.shape[0]
    if n == 1:
        return a.copy()
    nc = (n + 1) // 2
    out = a[0::2].copy()
    odd = a[1::2]
    if n % 2 == 0:
        pairs = odd[:-1]
        out[-1] += odd[-1]  # end point prolonged by copy folds in fully
    else:
        pairs = odd
    out[: nc - 1] += 0.5 * pairs
    out[1:nc] += 0.5 * pairs
    return out * 0.5


def _prolong_axis0(c: np.ndarray, n_fine: int) -> np.ndarray:
    # linear interpolation; the trailing fine point of an even-sized axis
    # has no coarse neighbor on its right and copies the nearest value
    nc = c.shape[0]
    out = np.empty((n_fine,) + c.shape[1:], dtype=c.dtype)
    out[0::2] = c
    pairs = 0.5 * (c[:-1] + c[1:])
    if n_fine % 2 == 0:
        out[1::2][: nc - 1] = pairs
        out[1::2][nc - 1] = c[-1]
    else:
        out[1::2] = pairs
    return out


def _restrict(r: np.ndarray) -> np.ndarray:
    return _restrict_axis0(_restrict_axis0(r).T).T


def _prolong(e: np.ndarray, fine_shape: tuple) -> np.ndarray:
    return _prolong_axis0(_prolong_axis0(e, fine_shape[0]).T, fine_shape[1]).T


def _vcycle(levels: tuple, li: int, u: np.ndarray, rhs: np.ndarray,
            pre: int, post: int, stats: SolveStats) -> None:
    level = levels[li]
    if li == len(levels) - 1:
        u[:] = sla.lu_solve(level.lu, rhs.ravel()).reshape(level.shape)
        stats.point_relaxations += u.size
        return
    for _ in range(pre):
        _gs_sweep(u, rhs, level, stats)
    r = rhs - _apply(level, u)
    stats.residual_points += r.size
    rc = _restrict(r)
    stats.transfer_points += rc.size
    ec = np.zeros(levels[li + 1].shape)
    _vcycle(levels, li + 1, ec, rc, pre, post, stats)
    u += _prolong(ec, level.shape)
    stats.transfer_points += u.size
    for _ in range(post):
        _gs_sweep(u, rhs, level, stats)


def _solve_channel(rhs: np.ndarray, alpha: float, config: SolverConfig,
                   guess: np.ndarray, stats: SolveStats) -> tuple:
    levels = _hierarchy(rhs.shape[0], rhs.shape[1], alpha, config.coarsest_size, config.max_levels)
    fine = levels[0]
    u = np.array(guess, dtype=np.float64)
    rhs_norm = max(float(np.linalg.norm(rhs)), _NORM_FLOOR)
    mean_target = float(rhs.mean()) / alpha  # constants map to alpha*constants

    def rel_residual() -> float:
        stats.residual_points += u.size
        return float(np.linalg.norm(rhs - _apply(fine, u)) / rhs_norm)

    history = [rel_residual()]
    cycles = 0
    while history[-1] > config.tolerance and cycles < config.v_cycles:
        _vcycle(levels, 0, u, rhs, config.pre_sweeps, config.post_sweeps, stats)
        # exact solve of the constant mode; the residual norm barely sees it
        # when alpha is small, so cycling alone leaves it behind
        u += mean_target - u.mean()
        cycles += 1
        history.append(rel_residual())
    return u, history, cycles


def solve_multigrid(system: LinearSystem2D, config: SolverConfig | None = None,
                    initial_guess: np.ndarray | None = None) -> MultigridResult:
    """V-cycle solve of (alpha - lap) u = rhs.

    Iterates until the relative residual drops to config.tolerance or
    config.v_cycles cycles have run, whichever comes first.  Multi-channel
    systems are solved channel by channel.  history[k] is the residual
    after k cycles (worst channel).
    """
    config = config or SolverConfig()
    rhs = np.asarray(system.rhs, dtype=np.float64)
    if rhs.ndim not in (2, 3) or rhs.shape[0] < 1 or rhs.shape[1] < 1:
        raise ValueError(f"expected a 2D system (optionally with channels), got shape {rhs.shape}")
    if not np.isfinite(rhs).all():
        raise ValueError("non-finite values in system rhs")
    if initial_guess is None:
        guess = np.zeros_like(rhs)
    else:
        guess = np.asarray(initial_guess, dtype=np.float64)
        if guess.shape != rhs.shape:
            raise ValueError("initial guess dimensions do not match the system")
        if not np.isfinite(guess).all():
            raise ValueError("non-finite values in initial guess")

    stats = SolveStats()
    if rhs.ndim == 2:
        u, history, cycles = _solve_channel(rhs, system.alpha, config, guess, stats)
    else:
        sols, histories, cycles = [], [], 0
        for c in range(rhs.shape[2]):
            uc, hist, cyc = _solve_channel(rhs[..., c], system.alpha, config, guess[..., c], stats)
            sols.append(uc)
            histories.append(hist)
            cycles = max(cycles, cyc)
        u = np.stack(sols, axis=-1)
        width = max(len(h) for h in histories)
        padded = [h + [h[-1]] * (width - len(h)) for h in histories]
        history = [max(col) for col in zip(*padded)]

    residual = residual_norm(system, u)
    return MultigridResult(u, residual, cycles, residual <= config.tolerance, history, stats)


# ---------------------------------------------------------------------------
# cosine-basis solver (exact for the same discrete operator)


def laplacian_eigenvalues(height: int, width: int) -> np.ndarray:
    """Eigenvalues of -lap on the even-symmetric cosine basis.

    lam[k, l] = 4 sin^2(pi k / 2H) + 4 sin^2(pi l / 2W); lam[0, 0] = 0.
    """
    ly = 4.0 * np.sin(np.pi * np.arange(height) / (2.0 * height)) ** 2
    lx = 4.0 * np.sin(np.pi * np.arange(width) / (2.0 * width)) ** 2
    return ly[:, None] + lx[None, :]


def spectral_weights(height: int, width: int, alpha: float) -> tuple:
    """(low-image weight, high-image weight) per mode: alpha/(alpha+lam)
    and lam/(alpha+lam)."""
    lam = laplacian_eigenvalues(height, width)
    return alpha / (alpha + lam), lam / (alpha + lam)


def spectral_solve(low: np.ndarray, high: np.ndarray, alpha: float) -> np.ndarray:
    """Exact solution of the discrete system via the cosine transform.

    The even-symmetric cosine basis diagonalizes the omitted-neighbor
    Laplacian, so blending the coefficients with the discrete eigenvalue
    weights and inverting reproduces the dense solve to rounding error.
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if low.shape != high.shape:
        raise ValueError(f"dimension mismatch: low {low.shape} vs high {high.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    lam = laplacian_eigenvalues(low.shape[0], low.shape[1])
    if low.ndim == 3:
        lam = lam[..., None]
    lc = dctn(low, type=2, norm="ortho", axes=(0, 1))
    hc = dctn(high, type=2, norm="ortho", axes=(0, 1))
    blended = (alpha * lc + lam * hc) / (alpha + lam)
    return idctn(blended, type=2, norm="ortho", axes=(0, 1))
