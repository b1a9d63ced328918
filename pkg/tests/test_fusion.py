import hashlib

import numpy as np
import pytest

from stackfuse import volume_io
from stackfuse.config import FusionParams, SolverConfig
from stackfuse.fusion import RunReport, fuse_pair, fuse_stack
from stackfuse.poisson import build_system, solve_multigrid
from stackfuse.smoothing import smooth_slab
from stackfuse.synthetic import write_synthetic_stack
from stackfuse.volume_io import create_like, create_volume, read_slab, read_slice, write_slice

PARAMS = FusionParams()  # sigma_xy=1, sigma_z=3, alpha=0.001, truncation=3


def volume_digest(meta):
    h = hashlib.sha256()
    for z in range(meta.depth):
        h.update(read_slice(meta, z).tobytes())
    return h.hexdigest()


@pytest.fixture
def small_stack(tmp_path):
    return write_synthetic_stack(tmp_path / "in", 32, 32, 14, bit_depth=16, seed=7)


class TestFuseStack:
    def test_constant_volume_unchanged(self, tmp_path):
        src = create_volume(tmp_path / "in", 16, 16, 8, 1, 16)
        for z in range(8):
            write_slice(src, z, np.full((16, 16), 0.5))
        dst = create_like(tmp_path / "out", src)
        fuse_stack(src, dst, PARAMS)
        for z in range(8):
            assert np.array_equal(read_slice(dst, z), read_slice(src, z))

    def test_slice_matches_standalone_computation(self, small_stack, tmp_path):
        dst = create_like(tmp_path / "out", small_stack)
        fuse_stack(small_stack, dst, PARAMS, workers=3)
        j = 6
        slab = read_slab(small_stack, 0, small_stack.depth)
        smoothed = smooth_slab(slab, j, PARAMS, small_stack.depth)
        system = build_system(smoothed, slab.slice_at(j), PARAMS.alpha)
        result = solve_multigrid(system, SolverConfig(), initial_guess=smoothed)
        expected = volume_io.quantize(result.solution, dst)
        got = volume_io.quantize(read_slice(dst, j), dst)
        assert np.array_equal(got, expected)

    def test_worker_count_invariance(self, small_stack, tmp_path):
        digests = set()
        for workers in (1, 2, 5):
            dst = create_like(tmp_path / f"out{workers}", small_stack)
            fuse_stack(small_stack, dst, PARAMS, workers=workers)
            digests.add(volume_digest(dst))
        assert len(digests) == 1

    def test_resume_regenerates_deleted_slices(self, small_stack, tmp_path):
        dst = create_like(tmp_path / "out", small_stack)
        report = fuse_stack(small_stack, dst, PARAMS)
        assert report.slices_written == small_stack.depth
        before = volume_digest(dst)
        for z in (2, 9):
            dst.slice_path(z).unlink()
        report = fuse_stack(small_stack, dst, PARAMS)
        assert report.slices_written == 2
        assert report.slices_skipped == small_stack.depth - 2
        assert volume_digest(dst) == before

    def test_output_mean_follows_smoothed_slice(self, small_stack, tmp_path):
        dst = create_like(tmp_path / "out", small_stack)
        smoothed = create_like(tmp_path / "smoothed", small_stack)
        fuse_stack(small_stack, dst, PARAMS, smoothed_meta=smoothed)
        for z in range(small_stack.depth):
            out_mean = read_slice(dst, z).mean()
            smooth_mean = read_slice(smoothed, z).mean()
            assert abs(out_mean - smooth_mean) <= 1e-6

    def test_dimension_mismatch_rejected(self, small_stack, tmp_path):
        bad = create_volume(tmp_path / "bad", 16, 16, 14, 1, 16)
        with pytest.raises(ValueError, match="dimensions"):
            fuse_stack(small_stack, bad, PARAMS)

    def test_nonconvergence_flagged_not_raised(self, small_stack, tmp_path):
        dst = create_like(tmp_path / "out", small_stack)
        starved = SolverConfig(tolerance=1e-14, v_cycles=1)
        report = fuse_stack(small_stack, dst, PARAMS, solver=starved)
        assert report.solver_nonconverged == small_stack.depth
        assert report.residual_max > 1e-14

    def test_error_carries_slice_index(self, small_stack, tmp_path):
        dst = create_like(tmp_path / "out", small_stack)
        path = small_stack.slice_path(5)
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(RuntimeError, match="slice 5"):
            fuse_stack(small_stack, dst, PARAMS)

    def test_peak_memory_below_whole_volume(self, tmp_path):
        deep = write_synthetic_stack(tmp_path / "deep", 48, 48, 256, bit_depth=16, seed=3)
        dst = create_like(tmp_path / "out", deep)
        report = fuse_stack(deep, dst, PARAMS, workers=2)
        whole_volume_floats = deep.width * deep.height * deep.depth * 8
        assert 0 < report.peak_bytes < whole_volume_floats / 3

    def test_report_round_trips_as_kv(self, small_stack, tmp_path):
        dst = create_like(tmp_path / "out", small_stack)
        report = fuse_stack(small_stack, dst, PARAMS, workers=2)
        kv = dict(line.split("=", 1) for line in report.to_kv().splitlines())
        assert int(kv["slices_total"]) == small_stack.depth
        assert float(kv["residual_max"]) == report.residual_max
        assert float(kv["smooth_seconds"]) > 0
        assert float(kv["solve_seconds"]) > 0
        assert int(kv["peak_bytes"]) == report.peak_bytes
        assert "phase" in report.summary()

    def test_raw_layout_end_to_end(self, tmp_path):
        src = write_synthetic_stack(tmp_path / "in.vol", 24, 20, 10,
                                    layout=volume_io.RAW, bit_depth=16, seed=5)
        dst = create_like(tmp_path / "out.vol", src)
        report = fuse_stack(src, dst, PARAMS, workers=2)
        assert report.slices_written == 10
        assert volume_io.probe(tmp_path / "out.vol").depth == 10

    def test_rgb_stack(self, tmp_path):
        src = write_synthetic_stack(tmp_path / "in", 20, 20, 8, channels=3, bit_depth=8, seed=11)
        dst = create_like(tmp_path / "out", src)
        report = fuse_stack(src, dst, PARAMS, workers=2)
        assert report.slices_written == 8
        assert read_slice(dst, 3).shape == (20, 20, 3)


class TestFusePair:
    def test_identity(self, rng):
        img = rng.random((24, 24))
        out = fuse_pair(img, img, 0.001)
        assert np.abs(out - img).max() <= 1e-6

    def test_monochrome_high_with_rgb_low(self, rng):
        low = rng.random((16, 16, 3))
        high = rng.random((16, 16))
        out = fuse_pair(low, high, 0.001)
        assert out.shape == (16, 16, 3)
        replicated = np.repeat(high[:, :, None], 3, axis=2)
        direct = fuse_pair(low, replicated, 0.001)
        assert np.array_equal(out, direct)

    def test_pixel_dimension_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatch"):
            fuse_pair(rng.random((8, 8)), rng.random((8, 9)), 0.001)

    def test_rgb_high_with_mono_low_rejected(self, rng):
        with pytest.raises(ValueError, match="channel"):
            fuse_pair(rng.random((8, 8)), rng.random((8, 8, 3)), 0.001)

    def test_means_follow_low(self, rng):
        low = rng.random((32, 32))
        high = rng.random((32, 32))
        out = fuse_pair(low, high, 0.001)
        assert abs(out.mean() - low.mean()) <= 1e-6
