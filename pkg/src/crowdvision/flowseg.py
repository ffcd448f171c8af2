"""Crowd flow segmentation and per-segment people counting.

Moving pixels are clustered by direction only: each retained flow vector
is embedded as the unit vector (cos theta, sin theta) of its orientation,
which keeps opposite lanes apart without the wraparound problems of raw
angles.  Small connected fragments left at flow boundaries are then
merged into whichever neighboring segment (or the background) dominates
their border, repeatedly, until every fragment is above the area floor.
People counts divide blob areas by the estimated single-person blob size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .motion import MotionFlowField
from .raster import BinaryMask, connected_components, label_color, write_ppm


class NoMotionError(RuntimeError):
    """Raised when a frame has no flow vectors to segment."""


@dataclass
class SegmentLabeling:
    """Per-pixel labels: 0 background, 1..K flow segments."""

    labels: np.ndarray  # int32 (h, w)
    k: int
    centroids: np.ndarray  # (k, 2) unit direction vectors

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.centroids = np.asarray(self.centroids, dtype=np.float64).reshape(-1, 2)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def present_labels(self) -> list[int]:
        """Nonzero labels that actually own pixels."""
        return sorted(int(l) for l in np.unique(self.labels) if l != 0)


@dataclass
class OptimumBlobSize:
    a_prime: float
    per_frame_sizes: list[float]
    sample_frames: list[int]


@dataclass
class CountReport:
    t: int
    per_segment: list[tuple[int, int, int]]  # (label, blobs used, people)
    total: int


def _kmeans_unit(features: np.ndarray, k: int, seed: int, max_iter: int = 100):
    """Lloyd iterations over unit vectors with k-means++ seeding.

    Centroids are renormalized to unit length each step (the constrained
    optimum for unit-vector data).  Returns (assignments, centroids,
    per-iteration objective history).
    """
    n = features.shape[0]
    rng = np.random.default_rng(seed)
    centers = np.empty((k, 2))
    centers[0] = features[int(rng.integers(n))]
    d2 = np.sum((features - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = features[int(rng.integers(n))]
        else:
            r = rng.random() * total
            centers[j] = features[min(int(np.searchsorted(np.cumsum(d2), r)), n - 1)]
        d2 = np.minimum(d2, np.sum((features - centers[j]) ** 2, axis=1))
    assign = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        dists = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        history.append(float(dists[np.arange(n), new_assign].sum()))
        moved = not np.array_equal(new_assign, assign)
        assign = new_assign
        for j in range(k):
            members = features[assign == j]
            if members.size == 0:
                continue
            mean = members.mean(axis=0)
            norm = float(np.hypot(mean[0], mean[1]))
            if norm > 0:
                centers[j] = mean / norm
        if not moved and len(history) > 1:
            break
    return assign, centers, history


def kmeans_flow(mff: MotionFlowField, dims: tuple[int, int], k: int, seed: int) -> SegmentLabeling:
    """Cluster flow vectors into k directional segments.

    dims is (width, height) of the frame the vectors came from.  Pixels
    without a vector get label 0.  Deterministic for a given seed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(mff) == 0:
        raise NoMotionError("no motion: the flow field has no vectors to segment")
    if k > len(mff):
        raise ValueError(f"k={k} exceeds the number of flow vectors ({len(mff)})")
    width, height = dims
    angles = np.arctan2(mff.vectors[:, 3], mff.vectors[:, 2])
    features = np.column_stack([np.cos(angles), np.sin(angles)])
    assign, centers, _ = _kmeans_unit(features, k, seed)
    labels = np.zeros((height, width), dtype=np.int32)
    xs = mff.vectors[:, 0].astype(np.int64)
    ys = mff.vectors[:, 1].astype(np.int64)
    labels[ys, xs] = assign + 1
    return SegmentLabeling(labels, k, centers)


def _component_border_majority(
    labels: np.ndarray, comp_mask: np.ndarray
) -> int | None:
    """Label holding the majority of an 8-neighborhood border; ties go to
    the larger global segment, then to the background."""
    h, w = labels.shape
    ys, xs = np.nonzero(comp_mask)
    border: dict[int, int] = {}
    for y, x in zip(ys.tolist(), xs.tolist()):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and not comp_mask[ny, nx]:
                    lab = int(labels[ny, nx])
                    border[lab] = border.get(lab, 0) + 1
    if not border:
        return None
    global_area = {lab: int((labels == lab).sum()) for lab in border}
    return max(
        border,
        key=lambda lab: (border[lab], global_area[lab], 1 if lab == 0 else 0, -lab),
    )


def _small_components(labels: np.ndarray, min_area: int):
    """All per-label connected components below min_area, as (area, label,
    first_pixel, mask) tuples sorted for deterministic processing."""
    found = []
    for lab in np.unique(labels):
        region = BinaryMask(labels == lab)
        comps, comp_labels = connected_components(region, connectivity=8)
        for blob in comps:
            if blob.area < min_area:
                mask = comp_labels == blob.label
                ys, xs = np.nonzero(mask)
                found.append((blob.area, int(lab), int(ys[0] * labels.shape[1] + xs[0]), mask))
    found.sort(key=lambda item: (item[0], item[1], item[2]))
    return found


def blob_absorption(seg: SegmentLabeling, min_area: int) -> SegmentLabeling:
    """Merge sub-threshold connected fragments into their dominant border
    label (background counts as a segment), repeating until stable.

    One fragment is absorbed per pass, smallest first, so later decisions
    see the updated labeling.
    """
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    labels = seg.labels.copy()
    while True:
        small = _small_components(labels, min_area)
        absorbed = False
        for _area, _lab, _pix, mask in small:
            target = _component_border_majority(labels, mask)
            if target is None:
                continue  # component covers the whole frame; nothing borders it
            labels[mask] = target
            absorbed = True
            break
        if not absorbed:
            break
    return SegmentLabeling(labels, seg.k, seg.centroids.copy())


def optimum_blob_size(
    fg_masks: list[BinaryMask], sample_count: int, seed: int
) -> OptimumBlobSize:
    """Estimate the single-person blob area from a few random frames.

    Each sampled frame contributes the median area of its foreground
    blobs; the estimate is the mean of those.  Frames without blobs are
    re-drawn; it is an error if fewer than sample_count frames qualify.
    """
    if sample_count not in (4, 5):
        raise ValueError("sample_count must be 4 or 5")
    if len(fg_masks) < sample_count:
        raise ValueError("sequence shorter than sample_count")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(fg_masks))
    sizes: list[float] = []
    frames: list[int] = []
    for idx in order:
        blobs, _ = connected_components(fg_masks[idx])
        if not blobs:
            continue
        sizes.append(float(np.median([b.area for b in blobs])))
        frames.append(int(idx))
        if len(sizes) == sample_count:
            break
    if len(sizes) < sample_count:
        raise ValueError(
            f"only {len(sizes)} frames contain foreground blobs; need {sample_count}"
        )
    return OptimumBlobSize(a_prime=float(np.mean(sizes)), per_frame_sizes=sizes, sample_frames=frames)


def count_people(
    seg: SegmentLabeling,
    f_out: BinaryMask,
    a_prime: float,
    max_blob_area: float | None = None,
    t: int = 0,
) -> CountReport:
    """Count people per segment by blob analysis.

    Blobs larger than max_blob_area (default 12 * a_prime) are ignored;
    each retained blob contributes round(area / a_prime), at least 1.
    """
    if a_prime <= 0:
        raise ValueError("a_prime must be positive")
    if f_out.bits.shape != seg.labels.shape:
        raise ValueError("mask dimensions differ from labeling")
    if max_blob_area is None:
        max_blob_area = 12.0 * a_prime
    per_segment: list[tuple[int, int, int]] = []
    total = 0
    for lab in seg.present_labels():
        blobs, _ = connected_components(BinaryMask(f_out.bits & (seg.labels == lab)))
        used = 0
        people = 0
        for blob in blobs:
            if blob.area > max_blob_area:
                continue
            used += 1
            people += max(1, int(math.floor(blob.area / a_prime + 0.5)))
        per_segment.append((lab, used, people))
        total += people
    return CountReport(t=t, per_segment=per_segment, total=total)


def render_segmentation(seg: SegmentLabeling) -> np.ndarray:
    """Overlay raster: fixed palette per label over black background."""
    rgb = np.zeros((seg.height, seg.width, 3), dtype=np.uint8)
    for lab in seg.present_labels():
        rgb[seg.labels == lab] = label_color(lab)
    return rgb


def segmentation_report(seg: SegmentLabeling, counts: CountReport | None = None) -> str:
    """One record per segment: label, pixel area, mean direction (deg), people."""
    count_by_label = {lab: people for lab, _used, people in (counts.per_segment if counts else [])}
    lines = ["label\tarea_px\tmean_direction_deg\tpeople"]
    for lab in seg.present_labels():
        area = int((seg.labels == lab).sum())
        cx, cy = seg.centroids[lab - 1]
        direction = math.degrees(math.atan2(cy, cx))
        people = count_by_label.get(lab, 0)
        lines.append(f"{lab}\t{area}\t{direction:.2f}\t{people}")
    return "\n".join(lines) + "\n"


def write_segmentation_overlay(seg: SegmentLabeling, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ppm(render_segmentation(seg)))
