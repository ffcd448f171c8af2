"""Image substrate: grayscale frames, binary masks, Netpbm I/O, smoothing
filters, binary morphology and connected-component (blob) analysis.

Conventions fixed here and relied on by every pixel-level pipeline:
luminance is stored as float64 in [0, 1] (quantized only at I/O), filter
borders are replicated, morphology treats out-of-bounds as background,
and blob connectivity defaults to 8.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ._kernels import backend as _kern


class NetpbmError(ValueError):
    """Malformed Netpbm data; message carries the byte offset."""


@dataclass
class Frame:
    """Grayscale raster with samples in [0, 1] and a frame index."""

    pixels: np.ndarray
    index: int = 0

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("frame must be a 2-D raster with positive dimensions")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class BinaryMask:
    """Boolean raster, one bit per pixel."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError("mask must be a 2-D raster")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Blob:
    """Stats for one connected region of set pixels."""

    label: int
    area: int
    bbox: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y (inclusive)
    centroid: tuple[float, float]  # (x, y)


# ---------------------------------------------------------------------------
# Netpbm I/O


def _parse_tokens(data: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integer tokens, skipping '#' comments."""
    tokens: list[int] = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        if pos >= n:
            raise NetpbmError(f"at byte {pos}: truncated header")
        tok_start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos] != ord("#"):
            pos += 1
        try:
            tokens.append(int(data[tok_start:pos]))
        except ValueError:
            raise NetpbmError(f"at byte {tok_start}: expected integer header field") from None
    return tokens, pos


def read_pgm(data: bytes) -> Frame:
    """Parse a binary (P5) or ASCII (P2) PGM into a Frame scaled to [0, 1]."""
    if len(data) < 2:
        raise NetpbmError("at byte 0: missing Netpbm magic")
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise NetpbmError(f"at byte 0: unsupported magic {magic!r} (want P5 or P2)")
    (width, height, maxval), pos = _parse_tokens(data, 3, 2)
    if width < 1 or height < 1:
        raise NetpbmError(f"at byte 2: bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise NetpbmError(f"at byte 2: maxval {maxval} outside [1, 65535]")
    n = width * height
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        if maxval > 255:
            need = 2 * n
            if len(data) - pos < need:
                raise NetpbmError(f"at byte {len(data)}: truncated payload, need {need} bytes")
            raw = np.frombuffer(data, dtype=">u2", count=n, offset=pos).astype(np.float64)
        else:
            if len(data) - pos < n:
                raise NetpbmError(f"at byte {len(data)}: truncated payload, need {n} bytes")
            raw = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).astype(np.float64)
    else:
        values, pos = _parse_tokens(data, n, pos)
        raw = np.asarray(values, dtype=np.float64)
    if raw.min() < 0 or raw.max() > maxval:
        raise NetpbmError(f"at byte {pos}: sample outside [0, {maxval}]")
    return Frame(raw.reshape(height, width) / float(maxval))


def write_pgm(frame: Frame) -> bytes:
    """Serialize a Frame as binary P5 with maxval 255 (samples round(s*255))."""
    quant = np.clip(np.round(frame.pixels * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + quant.tobytes()


def write_ppm(rgb: np.ndarray) -> bytes:
    """Serialize an (h, w, 3) uint8 array as binary P6 (used for color overlays)."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected (h, w, 3) uint8 array")
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def mask_to_frame(mask: BinaryMask) -> Frame:
    """Render a mask as a 0/1 frame (serialized as 0/255 by write_pgm)."""
    return Frame(mask.bits.astype(np.float64))


def read_sequence(directory: str) -> list[Frame]:
    """Load every *.pgm under `directory` in lexicographic order as a sequence."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".pgm"))
    frames = []
    for i, name in enumerate(names):
        with open(os.path.join(directory, name), "rb") as fh:
            frame = read_pgm(fh.read())
        frame.index = i
        frames.append(frame)
    return frames


def write_sequence(frames: list[Frame], directory: str, prefix: str = "frame_") -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = os.path.join(directory, f"{prefix}{i:06d}.pgm")
        with open(path, "wb") as fh:
            fh.write(write_pgm(frame))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Filters


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at radius ceil(3*sigma), normalized to sum 1."""
    radius = math.ceil(3.0 * sigma)
    if radius == 0:
        return np.ones(1)
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(frame: Frame, sigma: float) -> Frame:
    """Separable Gaussian smoothing with replicated borders."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return Frame(frame.pixels.copy(), frame.index)
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    if radius == 0:
        return Frame(frame.pixels.copy(), frame.index)
    padded = np.pad(frame.pixels, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(frame.pixels)
    for i, wk in enumerate(kernel):
        out += wk * padded[:, i : i + frame.width]
    padded = np.pad(out, ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(frame.pixels)
    for i, wk in enumerate(kernel):
        out += wk * padded[i : i + frame.height, :]
    return Frame(out, frame.index)


def median_filter(frame: Frame, radius: int) -> Frame:
    """Median over the (2r+1)^2 replicated-border neighborhood of each pixel."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    return Frame(_kern.median_filter(np.ascontiguousarray(frame.pixels), int(radius)), frame.index)


# ---------------------------------------------------------------------------
# Morphology


def _as_u8(mask: BinaryMask) -> np.ndarray:
    return np.ascontiguousarray(mask.bits.astype(np.uint8))


def morph_open(mask: BinaryMask, radius: int) -> BinaryMask:
    """Erosion then dilation by the (2r+1)x(2r+1) square."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return BinaryMask(_kern.dilate(_kern.erode(_as_u8(mask), radius), radius).astype(bool))


def morph_close(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilation then erosion by the (2r+1)x(2r+1) square.

    Computed on an r-padded canvas so that dilated pixels past the frame
    edge still count during the erosion; out-of-bounds pixels beyond that
    are genuinely background.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    work = np.pad(_as_u8(mask), radius, mode="constant", constant_values=0)
    closed = _kern.erode(_kern.dilate(work, radius), radius)
    return BinaryMask(closed[radius:-radius, radius:-radius].astype(bool))


def mask_and(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if a.bits.shape != b.bits.shape:
        raise ValueError("mask dimensions differ")
    return BinaryMask(a.bits & b.bits)


# ---------------------------------------------------------------------------
# Blobs


def connected_components(
    mask: BinaryMask, connectivity: int = 8
) -> tuple[list[Blob], np.ndarray]:
    """Label connected regions and compute per-blob stats.

    Returns (blobs, labels) where labels is an int32 raster with 0 for
    background and 1..N for blobs, numbered by first pixel in scan order.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    labels, count = _kern.label_components(_as_u8(mask), connectivity)
    blobs: list[Blob] = []
    if count == 0:
        return blobs, labels
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    ys, xs, lab = ys[order], xs[order], lab[order]
    starts = np.searchsorted(lab, np.arange(1, count + 2))
    for i in range(count):
        sl = slice(starts[i], starts[i + 1])
        by, bx = ys[sl], xs[sl]
        blobs.append(
            Blob(
                label=i + 1,
                area=int(bx.size),
                bbox=(int(bx.min()), int(by.min()), int(bx.max()), int(by.max())),
                centroid=(float(bx.mean()), float(by.mean())),
            )
        )
    return blobs, labels


PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 60, 60),
    (60, 130, 230),
    (70, 190, 90),
    (230, 190, 50),
    (180, 90, 220),
    (60, 200, 200),
    (240, 130, 40),
    (160, 160, 160),
    (120, 220, 60),
    (220, 80, 160),
    (90, 90, 230),
    (150, 110, 60),
)


def label_color(label: int) -> tuple[int, int, int]:
    """Fixed palette color for a positive label (cycled)."""
    return PALETTE[(label - 1) % len(PALETTE)]
