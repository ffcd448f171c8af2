"""Dense optical flow (Horn-Schunck) and extraction of the per-pixel
motion flow field used by the segmentation pipeline.

The flow solver is the classical iterative scheme: brightness-constancy
data term plus a smoothness term weighted by alpha^2, relaxed by Jacobi
sweeps with the 1/6-1/12 weighted neighbor average.  Spatial gradients
are central differences averaged over the frame pair; the temporal
gradient is the forward difference.  Input frames are pre-smoothed
before differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import backend as _kern
from .raster import BinaryMask, Frame, gaussian_smooth, write_pgm


@dataclass
class FlowField:
    """Per-pixel velocity in pixels/frame; u horizontal, v vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must be 2-D rasters of equal shape")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass
class MotionFlowField:
    """Retained flow vectors, one (x, y, u, v) row per moving pixel.

    Rows are in row-major scan order of the source raster.
    """

    vectors: np.ndarray  # (n, 4) float64
    t: int = 0

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(-1, 4)

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _central_dx(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, ((0, 0), (1, 1)), mode="edge")
    return (p[:, 2:] - p[:, :-2]) / 2.0


def _central_dy(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, ((1, 1), (0, 0)), mode="edge")
    return (p[2:, :] - p[:-2, :]) / 2.0


def _gradients(prev: Frame, nxt: Frame, presmooth_sigma: float):
    a = gaussian_smooth(prev, presmooth_sigma).pixels if presmooth_sigma > 0 else prev.pixels
    b = gaussian_smooth(nxt, presmooth_sigma).pixels if presmooth_sigma > 0 else nxt.pixels
    ix = (_central_dx(a) + _central_dx(b)) / 2.0
    iy = (_central_dy(a) + _central_dy(b)) / 2.0
    it = b - a
    return ix, iy, it


def horn_schunck(
    prev: Frame,
    nxt: Frame,
    alpha: float = 1.0,
    iterations: int = 100,
    tol: float = 1e-4,
    presmooth_sigma: float = 1.0,
) -> FlowField:
    """Estimate dense flow from prev to nxt.

    alpha weighs smoothness against the data term; iterations bounds the
    Jacobi sweeps, with an early stop when the mean update magnitude
    falls below tol (pixels/frame).
    """
    if prev.pixels.shape != nxt.pixels.shape:
        raise ValueError("frame dimensions differ")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    ix, iy, it = _gradients(prev, nxt, presmooth_sigma)
    u, v = _kern.hs_solve(
        np.ascontiguousarray(ix),
        np.ascontiguousarray(iy),
        np.ascontiguousarray(it),
        float(alpha),
        int(iterations),
        float(tol),
    )
    return FlowField(u, v)


def hs_energy(
    prev: Frame,
    nxt: Frame,
    flow: FlowField,
    alpha: float = 1.0,
    presmooth_sigma: float = 1.0,
) -> float:
    """Global objective of a flow estimate: data term + alpha^2 * smoothness.

    Smoothness uses forward differences clamped at the border.
    """
    ix, iy, it = _gradients(prev, nxt, presmooth_sigma)
    data = (ix * flow.u + iy * flow.v + it) ** 2
    ux = np.diff(flow.u, axis=1, append=flow.u[:, -1:])
    uy = np.diff(flow.u, axis=0, append=flow.u[-1:, :])
    vx = np.diff(flow.v, axis=1, append=flow.v[:, -1:])
    vy = np.diff(flow.v, axis=0, append=flow.v[-1:, :])
    smooth = ux**2 + uy**2 + vx**2 + vy**2
    return float(data.sum() + alpha * alpha * smooth.sum())


def flow_magnitude(flow: FlowField) -> np.ndarray:
    return np.hypot(flow.u, flow.v)


def flow_orientation(flow: FlowField) -> np.ndarray:
    """Angle in (-pi, pi], 0 where the magnitude is zero."""
    mag = flow_magnitude(flow)
    ang = np.arctan2(flow.v, flow.u)
    return np.where(mag > 0, ang, 0.0)


def extract_flow_vectors(flow: FlowField, mask: BinaryMask, tau_mag: float) -> MotionFlowField:
    """Collect one (x, y, u, v) row per pixel that is set in mask and moves
    faster than tau_mag, in row-major scan order."""
    if mask.bits.shape != flow.u.shape:
        raise ValueError("mask dimensions differ from flow")
    if tau_mag < 0:
        raise ValueError("tau_mag must be nonnegative")
    keep = mask.bits & (flow_magnitude(flow) > tau_mag)
    ys, xs = np.nonzero(keep)
    vectors = np.column_stack(
        [xs.astype(np.float64), ys.astype(np.float64), flow.u[ys, xs], flow.v[ys, xs]]
    )
    return MotionFlowField(vectors)


def dump_flow(flow: FlowField, base_path: str) -> list[str]:
    """Debug dump: u and v as PGM rasters plus a sidecar with scale/offset.

    Each channel c is written as round((c - offset) / scale * 255) where
    offset = min(c) and scale = max(c) - min(c) (1 if constant).
    """
    paths = []
    with open(base_path + "_flow.txt", "w") as sidecar:
        for name, chan in (("u", flow.u), ("v", flow.v)):
            lo = float(chan.min())
            hi = float(chan.max())
            scale = (hi - lo) or 1.0
            path = f"{base_path}_{name}.pgm"
            with open(path, "wb") as fh:
                fh.write(write_pgm(Frame((chan - lo) / scale)))
            sidecar.write(f"{name} offset={lo!r} scale={scale!r} file={path}\n")
            paths.append(path)
    paths.append(base_path + "_flow.txt")
    return paths
