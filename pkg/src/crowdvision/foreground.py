"""Adaptive per-pixel Gaussian-mixture background subtraction, the
flow-magnitude foreground mask, and their logical-product fusion.

The mixture update follows the usual adaptive scheme: components are
matched within match_sigma standard deviations, updated by exponential
moving averages, and the weakest component is replaced on a miss.  A
pixel is background when its matched component sits inside the smallest
prefix of (weight/stddev)-sorted components whose cumulative weight
exceeds background_ratio.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._kernels import backend as _kern
from .motion import FlowField, flow_magnitude
from .raster import BinaryMask, Frame, gaussian_smooth, mask_and, median_filter, morph_close, morph_open

_CHECKPOINT_MAGIC = b"CVBGMIX\x00"
_CHECKPOINT_VERSION = 1


@dataclass
class GmmParams:
    components: int = 3
    learning_rate: float = 0.02
    background_ratio: float = 0.7
    match_sigma: float = 2.5
    variance_floor: float = (4.0 / 255.0) ** 2
    initial_variance: float = 0.0225  # sigma ~ 0.15 for fresh components
    initial_weight: float = 0.02

    def validate(self) -> None:
        if not 1 <= self.components <= 8:
            raise ValueError("components must be in [1, 8]")
        if not 0 < self.learning_rate < 1:
            raise ValueError("learning_rate must be in (0, 1)")
        if not 0 < self.background_ratio < 1:
            raise ValueError("background_ratio must be in (0, 1)")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")


@dataclass
class BackgroundModel:
    """Per-pixel mixtures stored as (h, w, K) arrays, sorted by weight/stddev."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    params: GmmParams = field(default_factory=GmmParams)
    frames_seen: int = 0

    @classmethod
    def create(cls, width: int, height: int, params: GmmParams | None = None) -> "BackgroundModel":
        params = params or GmmParams()
        params.validate()
        shape = (height, width, params.components)
        return cls(
            means=np.zeros(shape),
            variances=np.full(shape, params.initial_variance),
            weights=np.zeros(shape),
            params=params,
        )

    @property
    def height(self) -> int:
        return self.means.shape[0]

    @property
    def width(self) -> int:
        return self.means.shape[1]

    def mixture_at(self, x: int, y: int) -> list[tuple[float, float, float]]:
        """(weight, mean, variance) triples at one pixel, strongest first."""
        return [
            (float(self.weights[y, x, k]), float(self.means[y, x, k]), float(self.variances[y, x, k]))
            for k in range(self.means.shape[2])
        ]


def gmm_update(model: BackgroundModel, frame: Frame, learning_rate: float | None = None) -> BinaryMask:
    """Fold one frame into the model (in place) and return its foreground mask.

    Must be called in increasing frame order by a single writer.  The
    first frame initializes every pixel's dominant component and yields
    an empty mask.
    """
    if (frame.height, frame.width) != (model.height, model.width):
        raise ValueError("frame dimensions differ from model")
    lr = model.params.learning_rate if learning_rate is None else learning_rate
    if not 0 < lr < 1:
        raise ValueError("learning_rate must be in (0, 1)")
    if model.frames_seen == 0:
        model.means[..., 0] = frame.pixels
        model.weights[..., 0] = 1.0
        model.variances[..., :] = model.params.initial_variance
        model.frames_seen = 1
        return BinaryMask(np.zeros((model.height, model.width), dtype=bool))
    p = model.params
    fg = _kern.gmm_update(
        model.means,
        model.variances,
        model.weights,
        np.ascontiguousarray(frame.pixels),
        float(lr),
        float(p.match_sigma),
        float(p.background_ratio),
        float(p.variance_floor),
        float(p.initial_variance),
        float(p.initial_weight),
    )
    model.frames_seen += 1
    return BinaryMask(fg.astype(bool))


def flow_foreground_mask(
    flow: FlowField,
    tau_mag: float = 0.25,
    sigma: float = 1.0,
    median_radius: int = 1,
) -> BinaryMask:
    """Foreground from motion: |flow| smoothed by gaussian then median,
    thresholded at tau_mag."""
    if tau_mag < 0:
        raise ValueError("tau_mag must be nonnegative")
    mag = Frame(flow_magnitude(flow))
    mag = gaussian_smooth(mag, sigma)
    mag = median_filter(mag, median_radius)
    return BinaryMask(mag.pixels > tau_mag)


def fuse(f_gmm: BinaryMask, f_flow: BinaryMask, morph_radius: int = 1) -> BinaryMask:
    """Logical product of the two masks, cleaned by opening then closing.

    morph_radius = 0 skips the morphology and returns the raw product.
    """
    product = mask_and(f_gmm, f_flow)
    if morph_radius == 0:
        return product
    return morph_close(morph_open(product, morph_radius), morph_radius)


@dataclass
class FusionMasks:
    f_gmm: BinaryMask
    f_flow: BinaryMask
    f_out: BinaryMask
    t: int = 0


# ---------------------------------------------------------------------------
# Checkpointing: 16-byte header (8-byte magic, u32 version, u32 reserved),
# then u32 width, u32 height, u32 K, u64 frames_seen, 7 float64 params,
# then (h, w, K) float64 arrays of weights, means, variances.


def save_model(model: BackgroundModel) -> bytes:
    p = model.params
    head = _CHECKPOINT_MAGIC + struct.pack("<II", _CHECKPOINT_VERSION, 0)
    meta = struct.pack(
        "<IIIQ7d",
        model.width,
        model.height,
        p.components,
        model.frames_seen,
        p.learning_rate,
        p.background_ratio,
        p.match_sigma,
        p.variance_floor,
        p.initial_variance,
        p.initial_weight,
        0.0,
    )
    return head + meta + model.weights.tobytes() + model.means.tobytes() + model.variances.tobytes()


def load_model(blob: bytes) -> BackgroundModel:
    if blob[:8] != _CHECKPOINT_MAGIC:
        raise ValueError("not a background-model checkpoint")
    version, _ = struct.unpack_from("<II", blob, 8)
    if version != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    meta_size = struct.calcsize("<IIIQ7d")
    width, height, k, frames_seen, lr, ratio, msigma, floor, ivar, iweight, _ = struct.unpack_from(
        "<IIIQ7d", blob, 16
    )
    params = GmmParams(
        components=k,
        learning_rate=lr,
        background_ratio=ratio,
        match_sigma=msigma,
        variance_floor=floor,
        initial_variance=ivar,
        initial_weight=iweight,
    )
    n = width * height * k
    offset = 16 + meta_size
    arrays = []
    for _i in range(3):
        arr = np.frombuffer(blob, dtype=np.float64, count=n, offset=offset).reshape(height, width, k)
        arrays.append(arr.copy())
        offset += n * 8
    model = BackgroundModel(
        means=arrays[1], variances=arrays[2], weights=arrays[0], params=params, frames_seen=frames_seen
    )
    return model
