"""Two-phase pipeline over a streamed stack, plus standalone pair fusion.

For every slice j the smoothed slice is produced from a sliding z-window
of in-plane blurred slices, then blended with the original slice by the
screened-Poisson solver and written out.  A single reader advances the
window; a worker pool handles per-slice combine/solve/write.  Held
buffers are reference-counted so the instrumented working set stays at
(window + in-flight tasks) slices no matter how deep the volume is.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import FusionParams, SolverConfig
from .poisson import build_system, solve_multigrid
from .smoothing import blur_plane, combine_z, gaussian_kernel, z_tap_window
from .volume_io import VolumeMeta, read_slice, slice_exists, write_slice

# rough multigrid + combine workspace per in-flight slice, in slice buffers
_TASK_WORKSPACE_SLICES = 12


@dataclass
class RunReport:
    """Summary of one fuse_stack run."""

    slices_total: int
    slices_written: int
    slices_skipped: int
    workers: int
    smooth_seconds: float
    solve_seconds: float
    wall_seconds: float
    peak_bytes: int
    residual_max: float
    residual_mean: float
    solver_nonconverged: int

    def to_kv(self) -> str:
        """Machine-readable key=value lines."""
        pairs = [
            ("slices_total", self.slices_total),
            ("slices_written", self.slices_written),
            ("slices_skipped", self.slices_skipped),
            ("workers", self.workers),
            ("smooth_seconds", repr(self.smooth_seconds)),
            ("solve_seconds", repr(self.solve_seconds)),
            ("wall_seconds", repr(self.wall_seconds)),
            ("peak_bytes", self.peak_bytes),
            ("residual_max", repr(self.residual_max)),
            ("residual_mean", repr(self.residual_mean)),
            ("solver_nonconverged", self.solver_nonconverged),
        ]
        return "\n".join(f"{k}={v}" for k, v in pairs)

    def summary(self) -> str:
        lines = [
            f"fused {self.slices_written} of {self.slices_total} slices "
            f"({self.slices_skipped} already present) with {self.workers} worker(s)",
            f"smoothing phase   {self.smooth_seconds:.2f} s",
            f"solve phase       {self.solve_seconds:.2f} s",
            f"wall time         {self.wall_seconds:.2f} s",
            f"peak working set  {self.peak_bytes / 1e6:.1f} MB (estimate)",
            f"solver residual   max {self.residual_max:.3e}, mean {self.residual_mean:.3e}",
        ]
        if self.solver_nonconverged:
            lines.append(f"WARNING: {self.solver_nonconverged} slice(s) did not reach tolerance")
        return "\n".join(lines)


class _ByteLedger:
    """Thread-safe live/peak byte accounting for the instrumented working set."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def add(self, nbytes: int) -> None:
        with self._lock:
            self.current += nbytes
            if self.current > self.peak:
                self.peak = self.current

    def release(self, nbytes: int) -> None:
        with self._lock:
            self.current -= nbytes


class _Entry:
    """One window slice (raw + in-plane blurred) with a reference count."""

    __slots__ = ("raw", "blurred", "refs", "nbytes")

    def __init__(self, raw, blurred):
        self.raw = raw
        self.blurred = blurred
        self.refs = 1  # the window itself
        self.nbytes = raw.nbytes + blurred.nbytes


@dataclass
class _Shared:
    """Accumulators shared between reader and workers."""

    lock: threading.Lock
    ledger: _ByteLedger
    smooth_seconds: float = 0.0
    solve_seconds: float = 0.0
    residual_sum: float = 0.0
    residual_max: float = 0.0
    nonconverged: int = 0
    solved: int = 0


def fuse_stack(input_meta: VolumeMeta, output_meta: VolumeMeta, params: FusionParams,
               solver: SolverConfig | None = None, workers: int = 1,
               smoothed_meta: VolumeMeta | None = None, resume: bool = True) -> RunReport:
    """Run both pipeline phases over a whole volume.

    Output slices that already exist are skipped when `resume` is true
    (slice-stack outputs only), so an interrupted run can be re-launched
    and regenerates exactly the missing slices.  Results are bitwise
    independent of the worker count.
    """
    if (input_meta.width, input_meta.height, input_meta.depth, input_meta.channels) != (
        output_meta.width, output_meta.height, output_meta.depth, output_meta.channels
    ):
        raise ValueError("input and output volume dimensions differ")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    solver = solver or SolverConfig()
    for target in (smoothed_meta,):
        if target is not None and target.slice_shape != input_meta.slice_shape:
            raise ValueError("smoothed volume dimensions differ from input")

    kz = gaussian_kernel(params.sigma_z, params.truncation)
    kxy = gaussian_kernel(params.sigma_xy, params.truncation)
    depth = input_meta.depth
    shared = _Shared(lock=threading.Lock(), ledger=_ByteLedger())
    window: dict[int, _Entry] = {}
    started = time.perf_counter()
    written = 0
    skipped = 0

    def retain(entry: _Entry) -> None:
        with shared.lock:
            entry.refs += 1

    def release(entry: _Entry) -> None:
        with shared.lock:
            entry.refs -= 1
            gone = entry.refs == 0
        if gone:
            shared.ledger.release(entry.nbytes)

    def load(z: int) -> _Entry:
        raw = read_slice(input_meta, z)
        t0 = time.perf_counter()
        blurred = blur_plane(raw, kxy)
        entry = _Entry(raw, blurred)
        shared.ledger.add(entry.nbytes)
        with shared.lock:
            shared.smooth_seconds += time.perf_counter() - t0
        return entry

    def run_slice(j: int, z_lo: int, entries: list, weights: np.ndarray) -> None:
        workspace = entries[0].nbytes // 2 * _TASK_WORKSPACE_SLICES
        shared.ledger.add(workspace)
        try:
            t0 = time.perf_counter()
            smoothed = combine_z([e.blurred for e in entries], weights, robust=params.robust)
            t1 = time.perf_counter()
            system = build_system(smoothed, entries[j - z_lo].raw, params.alpha)
            result = solve_multigrid(system, solver, initial_guess=smoothed)
            t2 = time.perf_counter()
            with shared.lock:
                shared.smooth_seconds += t1 - t0
                shared.solve_seconds += t2 - t1
                shared.residual_sum += result.residual
                shared.residual_max = max(shared.residual_max, result.residual)
                shared.solved += 1
                if not result.converged:
                    shared.nonconverged += 1
            if smoothed_meta is not None:
                write_slice(smoothed_meta, j, smoothed)
            write_slice(output_meta, j, result.solution)
        except Exception as exc:
            raise RuntimeError(f"slice {j}: {exc}") from exc
        finally:
            shared.ledger.release(workspace)
            for e in entries:
                release(e)

    max_inflight = workers + 2
    pending: deque = deque()
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for j in range(depth):
                if resume and slice_exists(output_meta, j) and (
                    smoothed_meta is None or slice_exists(smoothed_meta, j)
                ):
                    skipped += 1
                    continue
                lo, hi, weights = z_tap_window(kz, j, depth)
                for z in range(lo, hi):
                    if z not in window:
                        window[z] = load(z)
                for z in sorted(window):
                    if z < lo:
                        release(window.pop(z))
                entries = [window[z] for z in range(lo, hi)]
                for e in entries:
                    retain(e)
                pending.append(pool.submit(run_slice, j, lo, entries, weights))
                written += 1
                while len(pending) >= max_inflight:
                    pending.popleft().result()
            while pending:
                pending.popleft().result()
    finally:
        for z in list(window):
            release(window.pop(z))

    mean = shared.residual_sum / shared.solved if shared.solved else 0.0
    return RunReport(
        slices_total=depth,
        slices_written=written,
        slices_skipped=skipped,
        workers=workers,
        smooth_seconds=shared.smooth_seconds,
        solve_seconds=shared.solve_seconds,
        wall_seconds=time.perf_counter() - started,
        peak_bytes=shared.ledger.peak,
        residual_max=shared.residual_max,
        residual_mean=mean,
        solver_nonconverged=shared.nonconverged,
    )


def fuse_pair(low: np.ndarray, high: np.ndarray, alpha: float,
              solver: SolverConfig | None = None) -> np.ndarray:
    """Blend one low-frequency image with one high-frequency image.

    A monochrome `high` paired with an RGB `low` is expanded by copying
    the gray values into all three channels; the result is then RGB.
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if low.shape[:2] != high.shape[:2]:
        raise ValueError(f"dimension mismatch: low {low.shape} vs high {high.shape}")
    if high.ndim == 2 and low.ndim == 3:
        high = np.repeat(high[:, :, None], low.shape[2], axis=2)
    elif low.shape != high.shape:
        raise ValueError(f"channel mismatch: low {low.shape} vs high {high.shape}")
    system = build_system(low, high, alpha)
    return solve_multigrid(system, solver, initial_guess=low).solution


def default_workers() -> int:
    return os.cpu_count() or 1
