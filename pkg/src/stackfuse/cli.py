"""Command line front end: stack fusion, pair fusion, metrics, benchmarks."""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import click

from . import fusion, metrics, synthetic, volume_io
from .config import FusionParams, SolverConfig

_LAYOUTS = click.Choice([volume_io.SLICE_STACK, volume_io.RAW])


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Remove inter-slice brightness/color discontinuities from registered
    image stacks while keeping in-slice detail.

    The pipeline blurs the stack along the slice axis, then re-introduces
    each slice's own high frequencies by solving a screened-Poisson system
    per slice.  Volumes are streamed, so memory use is bounded by the
    z-window, not the stack depth.
    """


def _solver_options(fn):
    fn = click.option("--tolerance", type=click.FloatRange(0, min_open=True), default=1e-6,
                      show_default=True, help="Relative residual target per solve.")(fn)
    fn = click.option("--v-cycles", type=click.IntRange(1), default=16, show_default=True,
                      help="Maximum multigrid V-cycles per solve.")(fn)
    return fn


def _fusion_options(fn):
    fn = click.option("--sigma-xy", type=click.FloatRange(0), default=1.0, show_default=True,
                      help="In-plane blur sigma in pixels.")(fn)
    fn = click.option("--sigma-z", type=click.FloatRange(0), default=3.0, show_default=True,
                      help="Cross-slice blur sigma in pixels.")(fn)
    fn = click.option("--alpha", type=click.FloatRange(0, min_open=True), default=0.001,
                      show_default=True, help="Screening weight of the per-slice blend.")(fn)
    fn = click.option("--truncation", type=click.FloatRange(0, min_open=True), default=3.0,
                      show_default=True, help="Kernel cutoff in multiples of sigma.")(fn)
    fn = click.option("--robust/--no-robust", default=False, show_default=True,
                      help="Reject outlying samples in the cross-slice average.")(fn)
    return fn


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Input volume (slice-stack directory or raw file).")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True,
              help="Output volume location.")
@click.option("--layout", type=_LAYOUTS, default=None,
              help="Output layout.  [default: same as input]")
@_fusion_options
@click.option("--workers", type=click.IntRange(1), default=None,
              show_default="hardware count", help="Concurrent per-slice workers.")
@_solver_options
@click.option("--keep-smoothed", is_flag=True, default=False, show_default=True,
              help="Also write the intermediate smoothed volume next to the output.")
def fuse(in_path, out_path, layout, sigma_xy, sigma_z, alpha, truncation, robust,
         workers, tolerance, v_cycles, keep_smoothed):
    """Fuse a whole stack: smooth along z, then re-blend per slice."""
    params = FusionParams(sigma_xy=sigma_xy, sigma_z=sigma_z, alpha=alpha,
                          truncation=truncation, robust=robust)
    solver = SolverConfig(tolerance=tolerance, v_cycles=v_cycles)
    workers = workers or fusion.default_workers()
    try:
        source = volume_io.probe(in_path)
        target = volume_io.create_like(out_path, source, layout=layout)
        smoothed = None
        if keep_smoothed:
            smoothed_path = out_path.with_name(out_path.name + "-smoothed")
            smoothed = volume_io.create_like(smoothed_path, source, layout=layout)
        report = fusion.fuse_stack(source, target, params, solver, workers=workers,
                                   smoothed_meta=smoothed)
    except (OSError, ValueError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(report.summary())
    click.echo(report.to_kv())


@main.command(name="fuse-pair")
@click.option("--low", "low_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Image supplying the low frequencies (may be RGB).")
@click.option("--high", "high_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Image supplying the high frequencies (may be monochrome).")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True,
              help="Output PNG path.")
@click.option("--alpha", type=click.FloatRange(0, min_open=True), default=0.001,
              show_default=True, help="Screening weight of the blend.")
@_solver_options
@click.option("--bit-depth", type=click.Choice(["8", "16"]), default="8", show_default=True,
              help="Output sample depth.")
def fuse_pair(low_path, high_path, out_path, alpha, tolerance, v_cycles, bit_depth):
    """Blend two images: low frequencies from one, high from the other."""
    solver = SolverConfig(tolerance=tolerance, v_cycles=v_cycles)
    try:
        low = volume_io.read_image(low_path)
        high = volume_io.read_image(high_path)
        fused = fusion.fuse_pair(low, high, alpha, solver)
        volume_io.write_image(out_path, fused, bit_depth=int(bit_depth))
    except (OSError, ValueError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {out_path}")


@main.command(name="metrics")
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Reference volume (typically the unprocessed input).")
@click.option("--out", "out_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Result volume to score against the reference.")
def metrics_cmd(in_path, out_path):
    """Score discontinuity and detail retention of a processed volume."""
    try:
        ref = volume_io.probe(in_path)
        res = volume_io.probe(out_path)
        disc_in = metrics.interslice_discontinuity(volume_io.slices(ref))
        disc_out = metrics.interslice_discontinuity(volume_io.slices(res))
        grad = metrics.gradient_preservation(volume_io.slices(ref), volume_io.slices(res))
    except (OSError, ValueError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(f"discontinuity_in={disc_in!r}")
    click.echo(f"discontinuity_out={disc_out!r}")
    click.echo(f"discontinuity_delta={disc_in - disc_out!r}")
    click.echo(f"gradient_preservation={grad!r}")


@main.command()
@click.option("--size", "sizes", type=click.IntRange(2), multiple=True,
              default=(64, 128, 256), show_default=True,
              help="Cube edge length; repeat the flag for a ladder.")
@click.option("--workers", type=click.IntRange(1), default=1, show_default=True,
              help="Concurrent per-slice workers.")
@click.option("--work-dir", type=click.Path(path_type=Path), default=None,
              help="Where to place generated volumes.  [default: temp dir]")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for the generated volumes.")
def bench(sizes, workers, work_dir, seed):
    """Fuse synthetic cubes of increasing size; print a time/memory table."""
    params = FusionParams()
    solver = SolverConfig()
    cleanup = None
    if work_dir is None:
        cleanup = tempfile.TemporaryDirectory(prefix="stackfuse-bench-")
        work_dir = Path(cleanup.name)
    try:
        work_dir.mkdir(parents=True, exist_ok=True)
        for n in sizes:
            src = synthetic.write_synthetic_stack(
                work_dir / f"bench-{n}.vol", n, n, n,
                layout=volume_io.RAW, bit_depth=16, seed=seed,
            )
            dst = volume_io.create_like(work_dir / f"bench-{n}-out.vol", src)
            report = fusion.fuse_stack(src, dst, params, solver, workers=workers)
            click.echo(
                f"size={n} voxels={n**3} "
                f"smooth_seconds={report.smooth_seconds!r} "
                f"solve_seconds={report.solve_seconds!r} "
                f"wall_seconds={report.wall_seconds!r} "
                f"peak_bytes={report.peak_bytes}"
            )
    except (OSError, ValueError, RuntimeError) as exc:
        _fail(str(exc))
    finally:
        if cleanup is not None:
            cleanup.cleanup()


if __name__ == "__main__":
    main()
