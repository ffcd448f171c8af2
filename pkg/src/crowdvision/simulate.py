"""Cellular-automata crowd simulator with static floor fields.

Agents occupy grid cells exclusively and move synchronously: each agent
samples a target among its free Moore neighbors (plus staying put) with
probability proportional to exp(-k_s * field difference); contested
cells go to one uniformly random claimant and the losers stay.  Exit
fields are breadth-first geodesic distances; the spiral field is the
angle about a center (negated, plus an inward radial pull) with a known
period so field differences wrap across the branch cut.  Because a
softmax is invariant to constant shifts, scoring by field differences is
identical to scoring by the per-cell field values for aperiodic fields.

The simulator emits both ground-truth agent trajectories (CSV) and
rasterized grayscale frames, closing the loop with the analysis
pipelines.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .raster import Frame

CELL_FREE = 0
CELL_WALL = 1
CELL_OBSTACLE = 2

_MOORE = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class World:
    cells: np.ndarray  # uint8 (rows, cols): free / wall / obstacle
    cell_size: int
    agent_pos: np.ndarray  # (n, 2) int64 rows of (col, row)
    agent_ids: list[int]
    seed: int
    rng: np.random.Generator = field(init=False)

    def __post_init__(self) -> None:
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        self.agent_pos = np.asarray(self.agent_pos, dtype=np.int64).reshape(-1, 2)
        self.rng = np.random.default_rng(self.seed)
        occupied = set()
        for col, row in self.agent_pos:
            if self.cells[row, col] != CELL_FREE:
                raise ValueError(f"agent on non-free cell ({col}, {row})")
            if (col, row) in occupied:
                raise ValueError(f"two agents on cell ({col}, {row})")
            occupied.add((col, row))

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    @property
    def agent_count(self) -> int:
        return self.agent_pos.shape[0]


@dataclass
class FloorField:
    """Per-cell potential; lower is more attractive.  Walls and obstacles
    carry +inf.  period > 0 marks an angle-like field whose differences
    must be wrapped into [-period/2, period/2)."""

    values: np.ndarray  # float64 (rows, cols)
    kind: str  # "exit" or "spiral"
    period: float = 0.0


@dataclass
class ExitGoal:
    cells: list[tuple[int, int]]  # (col, row) exit cells


@dataclass
class SpiralGoal:
    center: tuple[float, float]  # (col, row), may be fractional
    inward_weight: float = 0.15


@dataclass
class SimTrace:
    """Recorded agent positions: (steps, n, 2) of (col, row) per step."""

    positions: np.ndarray
    agent_ids: list[int]

    @property
    def steps(self) -> int:
        return self.positions.shape[0]


def build_floor_field(world: World, goal: ExitGoal | SpiralGoal) -> FloorField:
    """Exit goal: geodesic (Moore BFS) hop distance from the exit set.
    Spiral goal: negated angle about the center plus inward_weight * radius."""
    blocked = world.cells != CELL_FREE
    values = np.full((world.rows, world.cols), np.inf)
    if isinstance(goal, ExitGoal):
        if not goal.cells:
            raise ValueError("exit goal needs at least one exit cell")
        queue: deque[tuple[int, int]] = deque()
        for col, row in goal.cells:
            if blocked[row, col]:
                raise ValueError(f"exit cell ({col}, {row}) is not free")
            values[row, col] = 0.0
            queue.append((row, col))
        if not queue:
            raise ValueError("no reachable free cell")
        while queue:
            row, col = queue.popleft()
            for dr, dc in _MOORE:
                nr, nc = row + dr, col + dc
                if 0 <= nr < world.rows and 0 <= nc < world.cols:
                    if not blocked[nr, nc] and not np.isfinite(values[nr, nc]):
                        values[nr, nc] = values[row, col] + 1.0
                        queue.append((nr, nc))
        return FloorField(values=values, kind="exit")
    rows = np.arange(world.rows)[:, None] - goal.center[1]
    cols = np.arange(world.cols)[None, :] - goal.center[0]
    theta = np.arctan2(rows, cols)
    radius = np.hypot(rows, cols)
    spiral = -theta + goal.inward_weight * radius
    values = np.where(blocked, np.inf, spiral)
    return FloorField(values=values, kind="spiral", period=2.0 * math.pi)


def _wrap(delta: float, period: float) -> float:
    if period <= 0:
        return delta
    half = period / 2.0
    return (delta + half) % period - half


def step(world: World, floor: FloorField, k_s: float) -> World:
    """One synchronous update; mutates agent positions in place.

    Candidate targets are the agent's own cell plus free, unoccupied
    Moore neighbors, weighted by exp(-k_s * wrapped field difference).
    Cells claimed by several agents go to a uniformly random claimant.
    """
    if k_s < 0:
        raise ValueError("k_s must be nonnegative")
    rng = world.rng
    occupied = np.zeros((world.rows, world.cols), dtype=bool)
    for col, row in world.agent_pos:
        occupied[row, col] = True
    intents = np.empty_like(world.agent_pos)
    for i in range(world.agent_count):
        col, row = world.agent_pos[i]
        here = floor.values[row, col]
        cand_cols = [int(col)]
        cand_rows = [int(row)]
        scores = [0.0]  # staying has zero field difference
        for dr, dc in _MOORE:
            nr, nc = int(row) + dr, int(col) + dc
            if not (0 <= nr < world.rows and 0 <= nc < world.cols):
                continue
            if world.cells[nr, nc] != CELL_FREE or occupied[nr, nc]:
                continue
            delta = _wrap(float(floor.values[nr, nc] - here), floor.period)
            if not math.isfinite(delta):
                continue  # unreachable pocket in an exit field
            scores.append(-k_s * delta)
            cand_cols.append(nc)
            cand_rows.append(nr)
        top = max(scores)
        w = np.exp(np.asarray(scores) - top)
        pick = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        pick = min(pick, len(scores) - 1)
        intents[i, 0] = cand_cols[pick]
        intents[i, 1] = cand_rows[pick]
    # conflict resolution: one winner per contested cell, losers stay
    claims: dict[tuple[int, int], list[int]] = {}
    for i in range(world.agent_count):
        claims.setdefault((int(intents[i, 0]), int(intents[i, 1])), []).append(i)
    for cell in sorted(claims):
        agents = claims[cell]
        winner = agents[0] if len(agents) == 1 else agents[int(rng.integers(len(agents)))]
        for i in agents:
            if i != winner:
                intents[i] = world.agent_pos[i]
    world.agent_pos[:, :] = intents
    return world


def run(world: World, floor: FloorField, k_s: float, steps: int) -> SimTrace:
    """Advance the world `steps` times, recording positions each step
    (including the initial state)."""
    positions = np.empty((steps + 1, world.agent_count, 2), dtype=np.int64)
    positions[0] = world.agent_pos
    for s in range(steps):
        step(world, floor, k_s)
        positions[s + 1] = world.agent_pos
    return SimTrace(positions=positions, agent_ids=list(world.agent_ids))


BACKGROUND_LUMA = 0.05
WALL_LUMA = 0.4
AGENT_LUMA = 0.9


def _stamp_disk(
    img: np.ndarray, cx: float, cy: float, radius: int, luma: float, falloff: float
) -> None:
    h, w = img.shape
    x0 = max(int(math.floor(cx - radius)), 0)
    x1 = min(int(math.ceil(cx + radius)) + 1, w)
    y0 = max(int(math.floor(cy - radius)), 0)
    y1 = min(int(math.ceil(cy + radius)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    inside = d2 <= radius * radius
    shade = luma * (1.0 - falloff * d2[inside] / (radius * radius))
    img[y0:y1, x0:x1][inside] = shade


def rasterize(
    trace: SimTrace,
    world: World,
    agent_radius: int = 5,
    frames_per_step: int = 1,
    agent_luma: np.ndarray | None = None,
    disk_falloff: float = 0.0,
    floor_texture: float = 0.0,
) -> list[Frame]:
    """Render the trace: dark background, mid-gray walls and obstacles,
    agents as bright disks at their cell centers.

    With frames_per_step = 1 (default) each recorded step yields one
    frame.  Higher values raise the video frame rate by interpolating
    agent positions linearly between steps, keeping per-frame motion
    small enough for dense optical flow to track.  agent_luma optionally
    gives each agent its own brightness, and disk_falloff > 0 dims disks
    quadratically toward the rim; uniform flat disks merge into
    gradient-free clumps that dense flow cannot track from the inside.
    floor_texture > 0 overlays static seeded noise on the background,
    which anchors the flow estimate to zero away from the agents.
    """
    if agent_radius < 1:
        raise ValueError("agent_radius must be >= 1")
    if frames_per_step < 1:
        raise ValueError("frames_per_step must be >= 1")
    if not 0.0 <= disk_falloff < 1.0:
        raise ValueError("disk_falloff must be in [0, 1)")
    cs = world.cell_size
    h = world.rows * cs
    w = world.cols * cs
    base = np.full((h, w), BACKGROUND_LUMA)
    if floor_texture > 0.0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([h, w, 31]))
        base += noise_rng.uniform(0.0, 2.0 * floor_texture, size=(h, w))
    blocked = world.cells != CELL_FREE
    base[np.kron(blocked, np.ones((cs, cs), dtype=bool))] = WALL_LUMA
    centers = trace.positions.astype(np.float64) * cs + cs / 2.0
    n_agents = trace.positions.shape[1]
    if agent_luma is None:
        agent_luma = np.full(n_agents, AGENT_LUMA)
    frames = []
    index = 0
    for s in range(trace.steps):
        substeps = 1 if s == trace.steps - 1 else frames_per_step
        for j in range(substeps):
            alpha = j / frames_per_step
            pos = centers[s] if j == 0 else (1.0 - alpha) * centers[s] + alpha * centers[s + 1]
            img = base.copy()
            for a in range(pos.shape[0]):
                _stamp_disk(
                    img, pos[a, 0], pos[a, 1], agent_radius, float(agent_luma[a]), disk_falloff
                )
            frames.append(Frame(img, index=index))
            index += 1
    return frames


def export_trace(trace: SimTrace, cell_size: int) -> str:
    """Trajectory CSV `ped_id,x,y,t` with positions at cell centers in pixels."""
    lines = ["ped_id,x,y,t"]
    for s in range(trace.steps):
        for a, ped in enumerate(trace.agent_ids):
            col, row = trace.positions[s, a]
            x = col * cell_size + cell_size / 2.0
            y = row * cell_size + cell_size / 2.0
            lines.append(f"{ped},{x:.1f},{y:.1f},{s}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Scenario files (JSON)


@dataclass
class Scenario:
    cols: int = 64
    rows: int = 64
    cell_size: int = 4
    border_walls: bool = True
    walls: list[tuple[int, int, int, int]] = field(default_factory=list)  # col0,row0,col1,row1
    obstacle: tuple[float, float, float] | None = None  # center col, center row, radius
    corridor: tuple[float, float] | None = None  # free ring lane (r_in, r_out) about the center
    exits: list[tuple[int, int]] = field(default_factory=list)
    field_kind: str = "spiral"
    inward_weight: float = 0.15
    agent_count: int = 60
    placement: str = "annulus"  # or "uniform" / explicit agents list
    annulus: tuple[float, float] = (14.0, 18.0)  # radius range in cells
    agents: list[tuple[int, int]] = field(default_factory=list)
    k_s: float = 60.0
    steps: int = 240
    seed: int = 7
    agent_radius: int = 5
    frames_per_step: int = 1
    agent_shades: tuple[float, float] | None = None  # per-agent luma range
    disk_falloff: float = 0.0  # radial dimming toward disk rims
    floor_texture: float = 0.0  # static background noise amplitude

    def center(self) -> tuple[float, float]:
        return ((self.cols - 1) / 2.0, (self.rows - 1) / 2.0)

    def agent_luma(self, count: int) -> np.ndarray | None:
        if self.agent_shades is None:
            return None
        lo, hi = self.agent_shades
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 977]))
        return rng.uniform(lo, hi, size=count)


_SCENARIO_KEYS = {
    "cols", "rows", "cell_size", "border_walls", "walls", "obstacle", "corridor",
    "exits", "field_kind", "inward_weight", "agent_count", "placement", "annulus",
    "agents", "k_s", "steps", "seed", "agent_radius", "frames_per_step",
    "agent_shades", "disk_falloff", "floor_texture",
}


def parse_scenario(doc: dict) -> Scenario:
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    sc = Scenario()
    for key, value in doc.items():
        setattr(sc, key, value)
    if sc.cols < 4 or sc.rows < 4:
        raise ValueError("grid must be at least 4x4")
    if sc.steps < 1:
        raise ValueError("steps must be >= 1")
    if sc.field_kind not in ("spiral", "exit"):
        raise ValueError("field_kind must be 'spiral' or 'exit'")
    return sc


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return parse_scenario(json.load(fh))


def default_spiral_scenario() -> Scenario:
    """Circulation around a central obstacle: 64x64 cells, 60 agents seeded
    on an annulus, spiral field with a mild inward pull.

    The rendering choices keep the footage in the regime dense optical
    flow can actually track: 3 interpolated frames per step (about one
    pixel of motion per frame), per-agent shades plus radial falloff so
    the packed ring keeps luminance gradients, and a static textured
    floor that anchors the flow estimate to zero off the crowd.
    """
    sc = Scenario()
    sc.corridor = (8.0, 11.0)
    sc.annulus = (8.0, 11.0)
    sc.agent_radius = 6
    sc.steps = 130
    sc.frames_per_step = 3
    sc.agent_shades = (0.6, 0.95)
    sc.disk_falloff = 0.45
    sc.floor_texture = 0.04
    return sc


def build_scenario(sc: Scenario) -> tuple[World, FloorField]:
    """Materialize a scenario: cell raster, agent placement, floor field."""
    cells = np.zeros((sc.rows, sc.cols), dtype=np.uint8)
    if sc.border_walls:
        cells[0, :] = CELL_WALL
        cells[-1, :] = CELL_WALL
        cells[:, 0] = CELL_WALL
        cells[:, -1] = CELL_WALL
    for col0, row0, col1, row1 in sc.walls:
        cells[row0 : row1 + 1, col0 : col1 + 1] = CELL_WALL
    if sc.obstacle is not None:
        ocx, ocy, orad = sc.obstacle
        rr = np.arange(sc.rows)[:, None] - ocy
        cc = np.arange(sc.cols)[None, :] - ocx
        cells[np.hypot(rr, cc) <= orad] = CELL_OBSTACLE
    if sc.corridor is not None:
        r_in, r_out = sc.corridor
        cx, cy = sc.center()
        rr = np.arange(sc.rows)[:, None] - cy
        cc = np.arange(sc.cols)[None, :] - cx
        rad = np.hypot(rr, cc)
        cells[rad < r_in] = CELL_OBSTACLE
        cells[(rad > r_out) & (cells == CELL_FREE)] = CELL_WALL
    rng = np.random.default_rng(sc.seed)
    if sc.agents:
        pos = [(int(c), int(r)) for c, r in sc.agents]
    else:
        free_rows, free_cols = np.nonzero(cells == CELL_FREE)
        candidates = list(zip(free_cols.tolist(), free_rows.tolist()))
        if sc.placement == "annulus":
            cx, cy = sc.center()
            r_min, r_max = sc.annulus
            candidates = [
                (c, r) for c, r in candidates if r_min <= math.hypot(c - cx, r - cy) <= r_max
            ]
        if len(candidates) < sc.agent_count:
            raise ValueError(
                f"placement region has {len(candidates)} free cells for {sc.agent_count} agents"
            )
        chosen = rng.choice(len(candidates), size=sc.agent_count, replace=False)
        pos = [candidates[int(i)] for i in sorted(chosen)]
    world = World(
        cells=cells,
        cell_size=sc.cell_size,
        agent_pos=np.array(pos, dtype=np.int64),
        agent_ids=list(range(len(pos))),
        seed=sc.seed,
    )
    if sc.field_kind == "exit":
        floor = build_floor_field(world, ExitGoal(cells=[tuple(e) for e in sc.exits]))
    else:
        floor = build_floor_field(world, SpiralGoal(center=sc.center(), inward_weight=sc.inward_weight))
    return world, floor
