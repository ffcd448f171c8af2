"""Group detection from pedestrian trajectories.

Each pedestrian's walking behavior relative to the others is summarized
as a row distribution over the other pedestrians, built from source and
sink proximity.  Couples are proposed greedily (everyone picks their
strongest affinity) and pruned when the Kullback-Leibler divergence
between the two row distributions is too large in either direction;
groups are the connected components of the surviving adjacency.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .raster import label_color, write_ppm

logger = logging.getLogger(__name__)


@dataclass
class PedestrianTrajectory:
    id: int
    points: np.ndarray  # (m, 3) float64 rows of (x, y, t), t strictly increasing

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] < 2:
            raise ValueError("trajectory needs at least two points")

    @property
    def source(self) -> np.ndarray:
        return self.points[0, :2]

    @property
    def sink(self) -> np.ndarray:
        return self.points[-1, :2]


@dataclass
class AssociationMatrix:
    """Row-stochastic affinity matrix; row k is pedestrian k's distribution
    over the other pedestrians."""

    p: np.ndarray  # (n, n) float64, zero diagonal
    sigma: float
    ids: list[int]

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass
class AdjacencyMatrix:
    bits: np.ndarray  # (n, n) bool, symmetric, zero diagonal
    ids: list[int]

    @property
    def n(self) -> int:
        return self.bits.shape[0]


@dataclass
class GroupSet:
    groups: list[set[int]]
    singletons: set[int]


def ingest_trajectories(data: bytes | str) -> list[PedestrianTrajectory]:
    """Parse a `ped_id,x,y,t` CSV into trajectories sorted by time.

    Trajectories with fewer than two points are dropped (logged).
    Malformed rows and duplicate (ped_id, t) pairs are errors.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.reader(io.StringIO(data))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["ped_id", "x", "y", "t"]:
        raise ValueError("expected CSV header ped_id,x,y,t")
    rows: dict[int, list[tuple[float, float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            ped = int(row[0])
            x = float(row[1])
            y = float(row[2])
            t = float(row[3])
        except (ValueError, IndexError):
            raise ValueError(f"line {lineno}: malformed row {row!r}") from None
        rows.setdefault(ped, []).append((x, y, t))
    trajectories = []
    dropped = 0
    for ped in sorted(rows):
        pts = sorted(rows[ped], key=lambda p: p[2])
        times = [p[2] for p in pts]
        for a, b in zip(times, times[1:]):
            if a == b:
                raise ValueError(f"duplicate (ped_id, t) = ({ped}, {a:g})")
        if len(pts) < 2:
            dropped += 1
            continue
        trajectories.append(PedestrianTrajectory(ped, np.array([(x, y, t) for x, y, t in pts])))
    if dropped:
        logger.warning("dropped %d trajectories with fewer than 2 points", dropped)
    return trajectories


def association_matrix(trajs: list[PedestrianTrajectory], sigma: float = 20.0) -> AssociationMatrix:
    """Affinity a_kj = exp(-(|src_k - src_j| + |snk_k - snk_j|) / sigma),
    zero diagonal, rows normalized to sum 1."""
    n = len(trajs)
    if n < 2:
        raise ValueError("need at least two pedestrians")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    sources = np.array([t.source for t in trajs])
    sinks = np.array([t.sink for t in trajs])
    d_src = np.sqrt(((sources[:, None, :] - sources[None, :, :]) ** 2).sum(axis=2))
    d_snk = np.sqrt(((sinks[:, None, :] - sinks[None, :, :]) ** 2).sum(axis=2))
    p = np.exp(-(d_src + d_snk) / sigma)
    np.fill_diagonal(p, 0.0)
    p = p / p.sum(axis=1, keepdims=True)
    return AssociationMatrix(p=p, sigma=sigma, ids=[t.id for t in trajs])


def kl_divergence(p_r: np.ndarray, p_k: np.ndarray, smoothing: float = 1e-6) -> float:
    """D_KL(p_r || p_k) in nats after mixing both rows with the uniform
    distribution: q = (1 - smoothing) * p + smoothing / n."""
    p_r = np.asarray(p_r, dtype=np.float64)
    p_k = np.asarray(p_k, dtype=np.float64)
    if p_r.shape != p_k.shape:
        raise ValueError("rows have different lengths")
    n = p_r.size
    q_r = (1.0 - smoothing) * p_r + smoothing / n
    q_k = (1.0 - smoothing) * p_k + smoothing / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q_r > 0, q_r * np.log(q_r / q_k), 0.0)
    return float(terms.sum())


def _masked_rows(p: np.ndarray, k: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows k and j with both self-entries (columns k and j) removed and
    renormalized, so the two distributions live on the same support."""
    keep = np.ones(p.shape[1], dtype=bool)
    keep[[k, j]] = False
    row_k = p[k, keep]
    row_j = p[j, keep]
    sum_k = row_k.sum()
    sum_j = row_j.sum()
    if sum_k > 0:
        row_k = row_k / sum_k
    if sum_j > 0:
        row_j = row_j / sum_j
    return row_k, row_j


def detect_couples(
    assoc: AssociationMatrix, kl_threshold: float = 0.5, smoothing: float = 1e-6
) -> AdjacencyMatrix:
    """Greedy couple proposal with bad-couple pruning.

    Each pedestrian k proposes its argmax-affinity partner j; the couple
    stands only if the divergence between their (self-masked) rows is at
    most kl_threshold in both directions.  With fewer than four
    pedestrians the masked rows carry at most one entry, so the check is
    vacuous and every proposal stands.
    """
    n = assoc.n
    bits = np.zeros((n, n), dtype=bool)
    for k in range(n):
        j = int(assoc.p[k].argmax())
        if j == k:
            continue
        if n > 2:
            row_k, row_j = _masked_rows(assoc.p, k, j)
            if (
                kl_divergence(row_k, row_j, smoothing) > kl_threshold
                or kl_divergence(row_j, row_k, smoothing) > kl_threshold
            ):
                continue
        bits[k, j] = True
        bits[j, k] = True
    return AdjacencyMatrix(bits=bits, ids=list(assoc.ids))


def extract_groups(adj: AdjacencyMatrix) -> GroupSet:
    """Groups are connected components of size >= 2; the rest are singletons."""
    n = adj.n
    seen = [False] * n
    groups: list[set[int]] = []
    singletons: set[int] = set()
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        component = []
        while stack:
            node = stack.pop()
            component.append(node)
            for other in range(n):
                if adj.bits[node, other] and not seen[other]:
                    seen[other] = True
                    stack.append(other)
        members = {adj.ids[i] for i in component}
        if len(members) >= 2:
            groups.append(members)
        else:
            singletons.update(members)
    groups.sort(key=lambda g: sorted(g))
    return GroupSet(groups=groups, singletons=singletons)


def groups_report(gs: GroupSet) -> str:
    """One line per group (sorted member ids), then the singleton list."""
    lines = []
    for group in gs.groups:
        lines.append("group\t" + " ".join(str(i) for i in sorted(group)))
    lines.append("singletons\t" + " ".join(str(i) for i in sorted(gs.singletons)))
    return "\n".join(lines) + "\n"


def render_groups(
    trajs: list[PedestrianTrajectory], gs: GroupSet, dims: tuple[int, int]
) -> np.ndarray:
    """Overlay raster: trajectories colored by group; singletons gray."""
    width, height = dims
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    color_of: dict[int, tuple[int, int, int]] = {}
    for gi, group in enumerate(gs.groups):
        for ped in group:
            color_of[ped] = label_color(gi + 1)
    for traj in trajs:
        color = color_of.get(traj.id, (110, 110, 110))
        xs = np.clip(np.round(traj.points[:, 0]).astype(int), 0, width - 1)
        ys = np.clip(np.round(traj.points[:, 1]).astype(int), 0, height - 1)
        rgb[ys, xs] = color
    return rgb


def write_groups_overlay(
    trajs: list[PedestrianTrajectory], gs: GroupSet, dims: tuple[int, int], path: str
) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ppm(render_groups(trajs, gs, dims)))
