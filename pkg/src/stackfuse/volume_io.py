"""Streamed volume storage.

Two on-disk layouts are supported:

* ``slice-stack`` — a directory of lossless PNG files named
  ``slice_<index>.png`` with zero-padded, contiguous indices starting at 0.
  The pad width is ``max(5, len(str(depth - 1)))``.
* ``raw`` — a single file with a fixed 32-byte little-endian header
  (magic ``RVOL``, then uint32 width, height, depth, channels, bit_depth,
  8 reserved bytes) followed by z-major, row-major, channel-interleaved
  samples.  Every z-slab is a contiguous byte range.

Samples are exposed to the rest of the package as float64 in [0, 1]:
an 8-bit code v maps to v/255, a 16-bit code to v/65535.  Writes clamp to
[0, 1] and quantize round-to-nearest.
"""

from __future__ import annotations

import math
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

SLICE_STACK = "slice-stack"
RAW = "raw"
LAYOUTS = (SLICE_STACK, RAW)

_RAW_MAGIC = b"RVOL"
_RAW_HEADER = struct.Struct("<4s5I8x")  # magic, width, height, depth, channels, bit_depth
assert _RAW_HEADER.size == 32

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_SLICE_NAME = re.compile(r"^slice_(\d+)\.png$")


class VolumeFormatError(RuntimeError):
    """On-disk data is inconsistent with its declared format."""


@dataclass(frozen=True)
class VolumeMeta:
    """Dimensions, sample format and storage location of one volume."""

    path: Path
    width: int
    height: int
    depth: int
    channels: int
    bit_depth: int
    layout: str

    def __post_init__(self):
        if min(self.width, self.height, self.depth) < 1:
            raise ValueError("width, height and depth must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError(f"unsupported channel count {self.channels} (expected 1 or 3)")
        if self.bit_depth not in (8, 16):
            raise ValueError(f"unsupported bit depth {self.bit_depth} (expected 8 or 16)")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype("<u1" if self.bit_depth == 8 else "<u2")

    @property
    def max_code(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def slice_shape(self) -> tuple:
        if self.channels == 1:
            return (self.height, self.width)
        return (self.height, self.width, self.channels)

    @property
    def slice_bytes(self) -> int:
        return self.width * self.height * self.channels * (self.bit_depth // 8)

    @property
    def index_width(self) -> int:
        return max(5, len(str(self.depth - 1)))

    def slice_path(self, z: int) -> Path:
        return self.path / f"slice_{z:0{self.index_width}d}.png"


@dataclass
class Slab:
    """A contiguous half-open z-window [z_begin, z_end) held in memory."""

    z_begin: int
    z_end: int
    slices: list = field(default_factory=list)

    def __post_init__(self):
        if self.z_end - self.z_begin != len(self.slices):
            raise ValueError("slab slice count does not match its z range")

    def __len__(self) -> int:
        return len(self.slices)

    def slice_at(self, z: int) -> np.ndarray:
        """Slice by absolute z index."""
        if not self.z_begin <= z < self.z_end:
            raise IndexError(f"slice {z} outside slab [{self.z_begin}, {self.z_end})")
        return self.slices[z - self.z_begin]


def overlap_extent(sigma_z: float, truncation: float) -> int:
    """One-sided halo (in slices) a slab needs so interior outputs are exact.

    ceil(truncation * sigma_z); the two-sided total is twice that.
    """
    if sigma_z < 0:
        raise ValueError("sigma_z must be >= 0")
    if truncation <= 0:
        raise ValueError("truncation must be > 0")
    return int(math.ceil(truncation * sigma_z))


def _read_png_header(path: Path) -> tuple:
    """(width, height, channels, bit_depth) from a PNG IHDR without decoding."""
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise VolumeFormatError(f"{path}: not a PNG file")
    width, height = struct.unpack(">II", head[16:24])
    bit_depth = head[24]
    color_type = head[25]
    if color_type == 0:
        channels = 1
    elif color_type == 2:
        channels = 3
    else:
        raise VolumeFormatError(f"{path}: unsupported PNG color type {color_type}")
    if bit_depth not in (8, 16):
        raise VolumeFormatError(f"{path}: unsupported bit depth {bit_depth}")
    return width, height, channels, bit_depth


def _stack_files(path: Path) -> list:
    entries = []
    for child in path.iterdir():
        m = _SLICE_NAME.match(child.name)
        if m:
            entries.append((int(m.group(1)), len(m.group(1)), child))
    if not entries:
        raise VolumeFormatError(f"{path}: no slice_*.png files found")
    entries.sort()
    indices = [e[0] for e in entries]
    if indices != list(range(len(entries))):
        raise VolumeFormatError(f"{path}: slice indices are not contiguous from 0")
    widths = {e[1] for e in entries}
    if len(widths) != 1:
        raise VolumeFormatError(f"{path}: inconsistent zero-padding in slice names")
    return [e[2] for e in entries]


def probe(path) -> VolumeMeta:
    """Inspect a storage location and return its metadata.

    Directories are treated as slice stacks, files as raw volumes.  For
    slice stacks every file's PNG header is checked (cheaply, without
    decoding); pixel data is verified lazily on read.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no volume at {path}")
    if path.is_dir():
        files = _stack_files(path)
        width, height, channels, bit_depth = _read_png_header(files[0])
        for z, child in enumerate(files[1:], start=1):
            w, h, c, b = _read_png_header(child)
            if (w, h) != (width, height):
                raise VolumeFormatError(
                    f"{path}: inconsistent slice dimensions "
                    f"(slice {z} is {w}x{h}, expected {width}x{height})"
                )
            if (c, b) != (channels, bit_depth):
                raise VolumeFormatError(
                    f"{path}: inconsistent sample format at slice {z}"
                )
        return VolumeMeta(path, width, height, len(files), channels, bit_depth, SLICE_STACK)

    with open(path, "rb") as fh:
        header = fh.read(_RAW_HEADER.size)
    if len(header) < _RAW_HEADER.size:
        raise VolumeFormatError(f"{path}: file too short for a raw volume header")
    magic, width, height, depth, channels, bit_depth = _RAW_HEADER.unpack(header)
    if magic != _RAW_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {magic!r}, not a raw volume")
    meta = VolumeMeta(path, width, height, depth, channels, bit_depth, RAW)
    expected = _RAW_HEADER.size + meta.slice_bytes * depth
    actual = path.stat().st_size
    if actual != expected:
        raise VolumeFormatError(
            f"{path}: raw volume is {actual} bytes, header implies {expected}"
        )
    return meta


def create_volume(path, width, height, depth, channels=1, bit_depth=8, layout=SLICE_STACK) -> VolumeMeta:
    """Prepare an empty volume at `path` and return its metadata.

    Slice stacks become a directory (created if needed, existing slices
    left alone so interrupted runs can resume).  Raw volumes get their
    header written and the file extended to full size; an existing raw
    file with an identical header is kept as-is.
    """
    path = Path(path)
    meta = VolumeMeta(path, width, height, depth, channels, bit_depth, layout)
    if layout == SLICE_STACK:
        path.mkdir(parents=True, exist_ok=True)
        return meta
    header = _RAW_HEADER.pack(_RAW_MAGIC, width, height, depth, channels, bit_depth)
    total = _RAW_HEADER.size + meta.slice_bytes * depth
    if path.exists() and path.stat().st_size == total:
        with open(path, "rb") as fh:
            if fh.read(_RAW_HEADER.size) == header:
                return meta
    with open(path, "wb") as fh:
        fh.write(header)
        fh.truncate(total)
    return meta


def create_like(path, meta: VolumeMeta, layout=None) -> VolumeMeta:
    """Empty volume with the same dimensions and sample format as `meta`."""
    return create_volume(
        path, meta.width, meta.height, meta.depth, meta.channels, meta.bit_depth,
        layout or meta.layout,
    )


def _normalize(codes: np.ndarray, meta: VolumeMeta) -> np.ndarray:
    return codes.astype(np.float64) / meta.max_code


def _decode_slice(meta: VolumeMeta, z: int, data: bytes) -> np.ndarray:
    arr = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise VolumeFormatError(f"{meta.path}: slice {z} is corrupt (decode failed)")
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2RGB)
    expected_depth = 8 if arr.dtype == np.uint8 else 16
    if arr.shape != meta.slice_shape or expected_depth != meta.bit_depth:
        raise VolumeFormatError(
            f"{meta.path}: inconsistent slice dimensions at slice {z} "
            f"(got {arr.shape}, {arr.dtype}; expected {meta.slice_shape}, {meta.bit_depth}-bit)"
        )
    return _normalize(arr, meta)


def read_slab(meta: VolumeMeta, z_begin: int, z_end: int) -> Slab:
    """Decode slices [z_begin, z_end) into a Slab of normalized float arrays."""
    if not 0 <= z_begin < z_end <= meta.depth:
        raise ValueError(f"slab range [{z_begin}, {z_end}) outside [0, {meta.depth}]")
    if meta.layout == SLICE_STACK:
        out = []
        for z in range(z_begin, z_end):
            try:
                data = meta.slice_path(z).read_bytes()
            except FileNotFoundError:
                raise VolumeFormatError(f"{meta.path}: slice {z} is missing") from None
            out.append(_decode_slice(meta, z, data))
        return Slab(z_begin, z_end, out)

    count = z_end - z_begin
    offset = _RAW_HEADER.size + z_begin * meta.slice_bytes
    with open(meta.path, "rb") as fh:
        fh.seek(offset)
        data = fh.read(count * meta.slice_bytes)
    if len(data) != count * meta.slice_bytes:
        raise VolumeFormatError(f"{meta.path}: truncated read at slice {z_begin}")
    codes = np.frombuffer(data, meta.dtype).reshape((count,) + meta.slice_shape)
    return Slab(z_begin, z_end, [_normalize(codes[i], meta) for i in range(count)])


def read_slice(meta: VolumeMeta, z: int) -> np.ndarray:
    return read_slab(meta, z, z + 1).slices[0]


def slices(meta: VolumeMeta, z_begin: int = 0, z_end: int | None = None) -> Iterator[np.ndarray]:
    """Stream slices one at a time (bounded memory regardless of depth)."""
    if z_end is None:
        z_end = meta.depth
    for z in range(z_begin, z_end):
        yield read_slice(meta, z)


def quantize(samples: np.ndarray, meta: VolumeMeta) -> np.ndarray:
    """Clamp to [0, 1] and round to the nearest output code."""
    clamped = np.clip(samples, 0.0, 1.0)
    return np.floor(clamped * meta.max_code + 0.5).astype(meta.dtype)


def write_slice(meta: VolumeMeta, z: int, samples: np.ndarray) -> None:
    """Quantize and store one slice.

    Slice-stack writes go through a temp file in the same directory plus
    an atomic rename, so a crash never leaves a truncated slice.  Raw
    writes are a single positioned write into the preallocated file.
    """
    if not 0 <= z < meta.depth:
        raise ValueError(f"slice index {z} outside [0, {meta.depth})")
    samples = np.asarray(samples)
    if samples.shape != meta.slice_shape:
        raise ValueError(
            f"slice shape {samples.shape} does not match volume {meta.slice_shape}"
        )
    codes = quantize(samples, meta)

    if meta.layout == SLICE_STACK:
        encode = codes if codes.ndim == 2 else cv2.cvtColor(codes, cv2.COLOR_RGB2BGR)
        ok, buf = cv2.imencode(".png", encode)
        if not ok:
            raise IOError(f"PNG encoding failed for slice {z}")
        final = meta.slice_path(z)
        fd, tmp_name = tempfile.mkstemp(dir=meta.path, prefix=f".{final.name}.")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(buf.tobytes())
            os.replace(tmp_name, final)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        return

    offset = _RAW_HEADER.size + z * meta.slice_bytes
    with open(meta.path, "r+b") as fh:
        fh.seek(offset)
        fh.write(codes.tobytes())


def slice_exists(meta: VolumeMeta, z: int) -> bool:
    """Whether slice z is already stored.  Always False for raw volumes
    (individual raw slices cannot be told apart from blank data)."""
    if meta.layout == SLICE_STACK:
        return meta.slice_path(z).exists()
    return False


def read_image(path) -> np.ndarray:
    """One image file as normalized float64 samples, (H, W) or (H, W, 3)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no image at {path}")
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise VolumeFormatError(f"{path}: could not decode image")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = cv2.cvtColor(arr, cv2.COLOR_BGR2RGB)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float64) / 65535.0
    raise VolumeFormatError(f"{path}: unsupported sample type {arr.dtype}")


def write_image(path, samples: np.ndarray, bit_depth: int = 8) -> None:
    """Quantize normalized samples and write a single PNG (atomic rename)."""
    path = Path(path)
    samples = np.asarray(samples)
    if bit_depth not in (8, 16):
        raise ValueError(f"unsupported bit depth {bit_depth}")
    max_code = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth == 8 else np.dtype("<u2")
    codes = np.floor(np.clip(samples, 0.0, 1.0) * max_code + 0.5).astype(dtype)
    encode = codes if codes.ndim == 2 else cv2.cvtColor(codes, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(".png", encode)
    if not ok:
        raise IOError(f"PNG encoding failed for {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.tobytes())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
