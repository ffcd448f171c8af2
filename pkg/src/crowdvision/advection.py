"""Particle advection over dense flow, tracklet linking, LCSS-based
track clustering, and source/sink summaries of the dominant flows.

A regular grid of particles is seeded on the first frame of each video
segment and advected forward with explicit Euler steps over bilinearly
interpolated flow.  Short tracklets are chained end-to-start into long
tracks when junctions are close and orientations compatible, then the
tracks are clustered greedily against cluster centers by longest-common-
subsequence similarity, shortest track first, with centers refit by
polynomial regression once a cluster grows past the refit size.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import backend as _kern
from .motion import FlowField
from .raster import label_color, write_ppm


class NoDominantFlowError(RuntimeError):
    """Raised when no track cluster reaches the member threshold."""


@dataclass
class AdvectionParams:
    frames_per_segment: int = 30  # video segment length in frames
    grid_spacing: float = 4.0  # particle seeding pitch, px
    min_displacement: float = 2.0  # tracklets moving less are dropped, px
    gap_radius: float = 6.0  # max sink-to-source junction distance, px
    angle_tol: float = 0.8  # max mean-orientation difference when linking, rad
    lcss_eps: float = 6.0  # spatial matching tolerance, px
    lcss_delta: int = 8  # index-offset matching tolerance, frames
    sim_threshold: float = 0.6  # minimum similarity to join a cluster
    cluster_refit_size: int = 30  # refit the center once a cluster outgrows this
    poly_order: int = 3  # least-squares polynomial order for center refit
    resample_points: int = 32  # points per member when pooling for the refit
    min_members: int = 5  # clusters below this are not dominant flows

    def validate(self) -> None:
        if self.frames_per_segment < 2:
            raise ValueError("frames_per_segment must be >= 2")
        if self.grid_spacing < 1:
            raise ValueError("grid_spacing must be >= 1")
        if not 0 < self.sim_threshold <= 1:
            raise ValueError("sim_threshold must be in (0, 1]")
        if self.cluster_refit_size < 1:
            raise ValueError("cluster_refit_size must be >= 1")
        if self.poly_order < 1:
            raise ValueError("poly_order must be >= 1")
        if self.gap_radius <= 0:
            raise ValueError("gap_radius must be positive")


@dataclass
class Tracklet:
    """Short advected path: (x, y, t) rows with t increasing by 1."""

    points: np.ndarray  # (m, 3) float64

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] < 2:
            raise ValueError("tracklet needs at least two points")

    @property
    def source(self) -> np.ndarray:
        return self.points[0]

    @property
    def sink(self) -> np.ndarray:
        return self.points[-1]

    @property
    def length(self) -> float:
        """Euclidean distance between first and last point."""
        return float(np.hypot(*(self.points[-1, :2] - self.points[0, :2])))

    @property
    def mean_orientation(self) -> float:
        dx, dy = self.points[-1, :2] - self.points[0, :2]
        return math.atan2(dy, dx)


@dataclass
class Track:
    """Chained trajectory, possibly spanning several video segments."""

    points: np.ndarray  # (m, 3) float64, t nondecreasing

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    @property
    def source(self) -> np.ndarray:
        return self.points[0]

    @property
    def sink(self) -> np.ndarray:
        return self.points[-1]

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.points[-1, :2] - self.points[0, :2])))


@dataclass
class TrackCluster:
    center: Track
    members: list[Track] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class ClusterFlow:
    source: tuple[float, float]
    source_radius: float
    sink: tuple[float, float]
    sink_radius: float
    member_count: int
    mean_direction: float  # radians


@dataclass
class SourceSinkReport:
    flows: list[ClusterFlow]
    clusters: list[TrackCluster]


def _angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def advect(flows: list[FlowField], params: AdvectionParams, t0: int = 0) -> list[Tracklet]:
    """Advect a particle grid through a segment's flow fields.

    Particles are seeded at grid_spacing pitch on the segment's first
    frame; each flow field moves them one explicit Euler step, clamped to
    the frame.  Tracklets whose net displacement stays below
    min_displacement are discarded.
    """
    if not flows:
        raise ValueError("need at least one flow field")
    h, w = flows[0].u.shape
    for f in flows:
        if f.u.shape != (h, w):
            raise ValueError("flow fields must share dimensions")
    gx = np.arange(params.grid_spacing / 2.0, w, params.grid_spacing)
    gy = np.arange(params.grid_spacing / 2.0, h, params.grid_spacing)
    xs, ys = np.meshgrid(gx, gy)
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    n = xs.size
    steps = len(flows)
    path = np.empty((steps + 1, n, 2))
    path[0, :, 0] = xs
    path[0, :, 1] = ys
    for i, flowfield in enumerate(flows):
        xs, ys = _kern.advect_step(
            np.ascontiguousarray(flowfield.u), np.ascontiguousarray(flowfield.v), xs, ys
        )
        path[i + 1, :, 0] = xs
        path[i + 1, :, 1] = ys
    tracklets = []
    times = np.arange(t0, t0 + steps + 1, dtype=np.float64)
    for p in range(n):
        disp = math.hypot(path[-1, p, 0] - path[0, p, 0], path[-1, p, 1] - path[0, p, 1])
        if disp < params.min_displacement:
            continue
        pts = np.column_stack([path[:, p, 0], path[:, p, 1], times])
        tracklets.append(Tracklet(pts))
    return tracklets


def link_tracklets(
    tracklets: list[Tracklet], gap_radius: float, angle_tol: float
) -> list[Track]:
    """Greedily chain tracklets whose junctions are close and orientations agree.

    Tracklets are consumed in batches of equal start time, ascending.
    Within a batch, every open chain end (processed in descending seed
    tracklet length) attaches at most one unconsumed tracklet: the
    nearest one starting within gap_radius of the sink, no earlier in
    time, and within angle_tol of the chain's last orientation.  Batch
    leftovers open new chains.  A chain that finds no match in one batch
    stays open and may resume in a later one, so competing chains share
    the supply instead of starving each other.  Every tracklet ends up
    in exactly one track.
    """
    if gap_radius <= 0:
        raise ValueError("gap_radius must be positive")
    consumed = [False] * len(tracklets)
    chains: list[list[int]] = []  # indices into tracklets

    def chain_priority(chain: list[int]) -> tuple:
        seed = chain[0]
        return (-tracklets[seed].length, tracklets[seed].points[0, 2], seed)

    start_times = sorted({t.points[0, 2] for t in tracklets})
    for t0 in start_times:
        batch = [i for i, t in enumerate(tracklets) if not consumed[i] and t.points[0, 2] == t0]
        for chain in sorted(chains, key=chain_priority):
            tail = tracklets[chain[-1]]
            sink = tail.sink
            best = None
            best_dist = None
            for j in batch:
                if consumed[j]:
                    continue
                cand = tracklets[j]
                if cand.points[0, 2] < sink[2]:
                    continue  # keep track time nondecreasing
                dist = math.hypot(cand.source[0] - sink[0], cand.source[1] - sink[1])
                if dist > gap_radius:
                    continue
                if _angle_diff(cand.mean_orientation, tail.mean_orientation) > angle_tol:
                    continue
                if best_dist is None or dist < best_dist:
                    best = j
                    best_dist = dist
            if best is not None:
                consumed[best] = True
                chain.append(best)
        leftovers = [j for j in batch if not consumed[j]]
        leftovers.sort(key=lambda j: (-tracklets[j].length, j))
        for j in leftovers:
            consumed[j] = True
            chains.append([j])
    tracks = []
    for chain in sorted(chains, key=chain_priority):
        tracks.append(Track(np.vstack([tracklets[i].points for i in chain])))
    return tracks


def lcss_similarity(a: Track, b: Track, eps: float, delta: int) -> float:
    """Similarity in [0, 1]: LCSS length over the shorter track's length.

    Points match when both coordinates differ by at most eps and the
    index offset is at most delta.
    """
    pa, pb = a.points, b.points
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        return 0.0
    n = _kern.lcss_length(
        np.ascontiguousarray(pa[:, 0]),
        np.ascontiguousarray(pa[:, 1]),
        np.ascontiguousarray(pb[:, 0]),
        np.ascontiguousarray(pb[:, 1]),
        float(eps),
        int(delta),
    )
    return float(n) / float(min(pa.shape[0], pb.shape[0]))


def resample_by_arc_length(points: np.ndarray, count: int) -> np.ndarray:
    """Resample an (m, >=2) polyline to `count` points uniform in arc length."""
    xy = points[:, :2]
    seg = np.hypot(*np.diff(xy, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    tau = np.linspace(0.0, 1.0, count)
    if total == 0:
        return np.repeat(xy[:1], count, axis=0)
    return np.column_stack(
        [np.interp(tau * total, s, xy[:, 0]), np.interp(tau * total, s, xy[:, 1])]
    )


def _refit_center(members: list[Track], params: AdvectionParams) -> Track:
    """Pooled least-squares polynomial fit of member tracks over normalized
    arc parameter; the center is the fitted curve resampled to a fixed count."""
    m = params.resample_points
    tau = np.linspace(0.0, 1.0, m)
    xs = []
    ys = []
    ts = []
    for track in members:
        pts = resample_by_arc_length(track.points, m)
        xs.append(pts[:, 0])
        ys.append(pts[:, 1])
        ts.append(tau)
    pooled_tau = np.concatenate(ts)
    order = min(params.poly_order, m - 1)
    cx = np.polynomial.polynomial.polyfit(pooled_tau, np.concatenate(xs), order)
    cy = np.polynomial.polynomial.polyfit(pooled_tau, np.concatenate(ys), order)
    fit_x = np.polynomial.polynomial.polyval(tau, cx)
    fit_y = np.polynomial.polynomial.polyval(tau, cy)
    return Track(np.column_stack([fit_x, fit_y, np.arange(m, dtype=np.float64)]))


def cluster_tracks(tracks: list[Track], params: AdvectionParams) -> list[TrackCluster]:
    """Greedy center-based clustering of tracks.

    Tracks are sorted descending by start-to-end length; the longest
    seeds the first cluster.  The remaining tracks are popped shortest
    first and joined to the best cluster whose center similarity exceeds
    sim_threshold, otherwise they open a new cluster.  A cluster whose
    size exceeds cluster_refit_size gets its center refit on every
    subsequent assignment.
    """
    if not tracks:
        raise ValueError("no tracks to cluster")
    params.validate()
    pending = sorted(
        range(len(tracks)), key=lambda i: (-tracks[i].length, tracks[i].points[0, 2], i)
    )
    first = tracks[pending.pop(0)]
    clusters = [TrackCluster(center=first, members=[first])]
    while pending:
        idx = pending.pop()  # bottom-most: shortest remaining track
        track = tracks[idx]
        best = -1
        best_sim = 0.0
        for ci, cluster in enumerate(clusters):
            sim = lcss_similarity(track, cluster.center, params.lcss_eps, params.lcss_delta)
            if sim > params.sim_threshold and sim > best_sim:
                best = ci
                best_sim = sim
        if best < 0:
            clusters.append(TrackCluster(center=track, members=[track]))
            continue
        cluster = clusters[best]
        cluster.members.append(track)
        if cluster.size > params.cluster_refit_size:
            cluster.center = _refit_center(cluster.members, params)
    return clusters


def sources_sinks(clusters: list[TrackCluster], min_members: int = 5) -> SourceSinkReport:
    """Summarize dominant flows: per surviving cluster, the centroid and RMS
    radius of member starts (source) and ends (sink), plus mean direction."""
    if not clusters:
        raise ValueError("no clusters")
    flows = []
    kept = []
    for cluster in clusters:
        if cluster.size < min_members:
            continue
        starts = np.array([t.points[0, :2] for t in cluster.members])
        ends = np.array([t.points[-1, :2] for t in cluster.members])
        src = starts.mean(axis=0)
        snk = ends.mean(axis=0)
        src_r = float(np.sqrt(((starts - src) ** 2).sum(axis=1).mean()))
        snk_r = float(np.sqrt(((ends - snk) ** 2).sum(axis=1).mean()))
        center_delta = cluster.center.points[-1, :2] - cluster.center.points[0, :2]
        flows.append(
            ClusterFlow(
                source=(float(src[0]), float(src[1])),
                source_radius=src_r,
                sink=(float(snk[0]), float(snk[1])),
                sink_radius=snk_r,
                member_count=cluster.size,
                mean_direction=math.atan2(center_delta[1], center_delta[0]),
            )
        )
        kept.append(cluster)
    if not flows:
        raise NoDominantFlowError(f"no dominant flows: every cluster has fewer than {min_members} members")
    return SourceSinkReport(flows=flows, clusters=kept)


def winding_angle(points: np.ndarray, center: tuple[float, float]) -> float:
    """Signed total angle swept by a polyline about a center, radians."""
    ang = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
    steps = np.diff(ang)
    steps = (steps + math.pi) % (2.0 * math.pi) - math.pi
    return float(steps.sum())


def tracks_to_csv(tracks: list[Track]) -> str:
    """CSV export with header track_id,point_idx,x,y,t."""
    out = io.StringIO()
    out.write("track_id,point_idx,x,y,t\n")
    for tid, track in enumerate(tracks):
        for i, (x, y, t) in enumerate(track.points):
            out.write(f"{tid},{i},{x:.3f},{y:.3f},{int(t)}\n")
    return out.getvalue()


def render_tracks(clusters: list[TrackCluster], dims: tuple[int, int]) -> np.ndarray:
    """Overlay raster: member tracks drawn in their cluster's palette color."""
    width, height = dims
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    for ci, cluster in enumerate(clusters):
        color = label_color(ci + 1)
        for track in cluster.members:
            xs = np.clip(np.round(track.points[:, 0]).astype(int), 0, width - 1)
            ys = np.clip(np.round(track.points[:, 1]).astype(int), 0, height - 1)
            rgb[ys, xs] = color
    return rgb


def write_tracks_overlay(clusters: list[TrackCluster], dims: tuple[int, int], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ppm(render_tracks(clusters, dims)))


def report_to_dict(report: SourceSinkReport) -> dict:
    return {
        "flows": [
            {
                "source": list(f.source),
                "source_radius": f.source_radius,
                "sink": list(f.sink),
                "sink_radius": f.sink_radius,
                "member_count": f.member_count,
                "mean_direction_rad": f.mean_direction,
            }
            for f in report.flows
        ]
    }
