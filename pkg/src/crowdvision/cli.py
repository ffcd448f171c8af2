"""Command-line pipelines: segment, flows, groups, simulate, and the
closed-loop validate command.

Exit codes: 0 success, 1 configuration error, 2 runtime or assertion
failure.  All randomness derives from the single config seed, so a rerun
with the same config produces byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

from . import advection as adv
from . import flowseg
from . import foreground as fg
from . import groups as grp
from . import motion
from . import raster
from . import simulate as sim
from ._kernels import BACKEND_NAME
from .config import (
    STREAM_BLOB_SIZE,
    STREAM_KMEANS,
    STREAM_SIMULATION,
    ConfigError,
    PipelineConfig,
    config_from_dict,
    derive_seed,
    load_config,
    spiral_validation_config,
)


@dataclass
class RunReport:
    command: str
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    wall_ms: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _write(path: str, data: bytes | str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(data)
    return path


def _json_text(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_frames(config: PipelineConfig, minimum: int) -> list[raster.Frame]:
    if not config.input_dir:
        raise ConfigError("input_dir is required")
    frames = raster.read_sequence(config.input_dir)
    if len(frames) < minimum:
        raise RuntimeError(f"need at least {minimum} frames, found {len(frames)}")
    return frames


def _flows_and_masks(config: PipelineConfig, frames: list[raster.Frame]):
    """Shared front end of cmd_segment: background update, dense flow and
    fused foreground per frame pair."""
    h, w = frames[0].pixels.shape
    model = fg.BackgroundModel.create(w, h, config.gmm_params())
    flows: list[motion.FlowField] = []
    masks: list[raster.BinaryMask] = []
    prev = None
    for frame in frames:
        f_gmm = fg.gmm_update(model, frame)
        if prev is not None:
            flow = motion.horn_schunck(
                prev,
                frame,
                alpha=config.hs_alpha,
                iterations=config.hs_iterations,
                tol=config.hs_tol,
                presmooth_sigma=config.presmooth_sigma,
            )
            f_flow = fg.flow_foreground_mask(
                flow, config.tau_mag, config.mask_sigma, config.median_radius
            )
            flows.append(flow)
            masks.append(fg.fuse(f_gmm, f_flow, config.morph_radius))
        prev = frame
    return flows, masks


def cmd_segment(config: PipelineConfig) -> RunReport:
    """Flow segmentation + counting over a frame directory."""
    started = time.perf_counter()
    frames = _load_frames(config, 2)
    h, w = frames[0].pixels.shape
    flows, masks = _flows_and_masks(config, frames)
    min_area = config.min_area if config.min_area is not None else max(1, (w * h) // 200)
    if config.a_prime is not None:
        blob_size = flowseg.OptimumBlobSize(config.a_prime, [], [])
    else:
        blob_size = flowseg.optimum_blob_size(
            masks, config.sample_count, derive_seed(config.seed, STREAM_BLOB_SIZE)
        )
    report = RunReport(command="segment")
    out = config.output_dir
    lines = ["t\tsegments\ttotal_people"]
    per_frame = []
    final_seg = None
    for i, (flow, mask) in enumerate(zip(flows, masks)):
        t = i + 1
        mff = motion.extract_flow_vectors(flow, mask, config.tau_mag)
        seg = flowseg.kmeans_flow(
            mff, (w, h), config.clusters, derive_seed(config.seed, STREAM_KMEANS, t)
        )
        seg = flowseg.blob_absorption(seg, min_area)
        counts = flowseg.count_people(seg, mask, blob_size.a_prime, config.max_blob_area, t)
        final_seg = seg
        per_frame.append(
            {"t": t, "segments": seg.present_labels(), "total": counts.total,
             "per_segment": [list(e) for e in counts.per_segment]}
        )
        lines.append(f"{t}\t{len(seg.present_labels())}\t{counts.total}")
        report.outputs.append(
            _write(os.path.join(out, f"segments_{t:06d}.ppm"),
                   raster.write_ppm(flowseg.render_segmentation(seg)))
        )
        report.outputs.append(
            _write(os.path.join(out, f"segments_{t:06d}.txt"),
                   flowseg.segmentation_report(seg, counts))
        )
    summary = {
        "frames": len(frames),
        "a_prime": blob_size.a_prime,
        "a_prime_samples": blob_size.per_frame_sizes,
        "min_area": min_area,
        "per_frame": per_frame,
        "final_segments": final_seg.present_labels() if final_seg else [],
    }
    report.outputs.append(_write(os.path.join(out, "segment_report.txt"), "\n".join(lines) + "\n"))
    report.outputs.append(_write(os.path.join(out, "segment_summary.json"), _json_text(summary)))
    report.summary = summary
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


def _flows_pipeline(config: PipelineConfig, frames: list[raster.Frame]):
    """Segment the video, advect per segment, link, cluster, summarize."""
    params = config.advection_params()
    k = params.frames_per_segment
    n_segments = len(frames) // k
    if n_segments < 1:
        raise RuntimeError(f"need at least {k} frames, found {len(frames)}")
    tracklets: list[adv.Tracklet] = []
    for s in range(n_segments):
        chunk = frames[s * k : (s + 1) * k]
        flows = [
            motion.horn_schunck(
                chunk[i],
                chunk[i + 1],
                alpha=config.hs_alpha,
                iterations=config.hs_iterations,
                tol=config.hs_tol,
                presmooth_sigma=config.presmooth_sigma,
            )
            for i in range(len(chunk) - 1)
        ]
        tracklets.extend(adv.advect(flows, params, t0=s * k))
    if not tracklets:
        raise flowseg.NoMotionError("no motion: no particle moved far enough to form a tracklet")
    tracks = adv.link_tracklets(tracklets, params.gap_radius, params.angle_tol)
    clusters = adv.cluster_tracks(tracks, params)
    report = adv.sources_sinks(clusters, params.min_members)
    return tracks, clusters, report


def cmd_flows(config: PipelineConfig) -> RunReport:
    """Source/sink identification over a frame directory."""
    started = time.perf_counter()
    frames = _load_frames(config, config.frames_per_segment)
    h, w = frames[0].pixels.shape
    tracks, clusters, ssreport = _flows_pipeline(config, frames)
    out = config.output_dir
    report = RunReport(command="flows")
    report.outputs.append(_write(os.path.join(out, "tracks.csv"), adv.tracks_to_csv(tracks)))
    report.outputs.append(
        _write(os.path.join(out, "clusters.ppm"),
               raster.write_ppm(adv.render_tracks(ssreport.clusters, (w, h))))
    )
    doc = adv.report_to_dict(ssreport)
    report.outputs.append(_write(os.path.join(out, "sources_sinks.json"), _json_text(doc)))
    report.summary = {
        "tracks": len(tracks),
        "clusters": len(ssreport.flows),
        "flows": doc["flows"],
    }
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


def cmd_groups(config: PipelineConfig) -> RunReport:
    """Group detection over an ingested trajectory CSV."""
    started = time.perf_counter()
    if not config.trajectory_csv:
        raise ConfigError("trajectory_csv is required")
    with open(config.trajectory_csv, "rb") as fh:
        trajs = grp.ingest_trajectories(fh.read())
    assoc = grp.association_matrix(trajs, config.sigma)
    adjacency = grp.detect_couples(assoc, config.kl_threshold, config.smoothing)
    partition = grp.extract_groups(adjacency)
    width = int(max(t.points[:, 0].max() for t in trajs)) + 2
    height = int(max(t.points[:, 1].max() for t in trajs)) + 2
    out = config.output_dir
    report = RunReport(command="groups")
    report.outputs.append(_write(os.path.join(out, "groups.txt"), grp.groups_report(partition)))
    report.outputs.append(
        _write(os.path.join(out, "groups.ppm"),
               raster.write_ppm(grp.render_groups(trajs, partition, (width, height))))
    )
    report.summary = {
        "pedestrians": len(trajs),
        "groups": [sorted(g) for g in partition.groups],
        "singletons": sorted(partition.singletons),
    }
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


def _run_simulation(config: PipelineConfig):
    scenario = sim.load_scenario(config.scenario) if config.scenario else sim.default_spiral_scenario()
    scenario.seed = derive_seed(config.seed, STREAM_SIMULATION)
    world, floor = sim.build_scenario(scenario)
    trace = sim.run(world, floor, scenario.k_s, scenario.steps)
    frames = sim.rasterize(
        trace,
        world,
        scenario.agent_radius,
        scenario.frames_per_step,
        scenario.agent_luma(world.agent_count),
        scenario.disk_falloff,
        scenario.floor_texture,
    )
    return scenario, world, trace, frames


def cmd_simulate(config: PipelineConfig) -> RunReport:
    """Run the CA simulator; write frames + ground-truth trajectories."""
    started = time.perf_counter()
    scenario, world, trace, frames = _run_simulation(config)
    out = config.output_dir
    frame_dir = os.path.join(out, "frames")
    paths = raster.write_sequence(frames, frame_dir)
    report = RunReport(command="simulate")
    report.outputs.extend(paths)
    report.outputs.append(
        _write(os.path.join(out, "trajectories.csv"), sim.export_trace(trace, world.cell_size))
    )
    report.summary = {
        "agents": world.agent_count,
        "steps": trace.steps - 1,
        "frames": len(frames),
        "frame_dir": frame_dir,
    }
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


def cmd_validate(config: PipelineConfig) -> RunReport:
    """Closed loop: simulate the spiral scenario, run the flows pipeline on
    the rendered frames, and assert the recovered flow is one dominant
    circulation (winding >= 270 degrees, source meets sink)."""
    started = time.perf_counter()
    sim_report = cmd_simulate(config)
    frames = raster.read_sequence(sim_report.summary["frame_dir"])
    h, w = frames[0].pixels.shape
    report = RunReport(command="validate")
    failures: list[str] = []
    summary: dict = {"simulate": sim_report.summary}
    try:
        tracks, clusters, ssreport = _flows_pipeline(config, frames)
    except (flowseg.NoMotionError, adv.NoDominantFlowError) as exc:
        failures.append(str(exc))
        report.failures = failures
        report.summary = {**summary, "checks": [], "failures": failures}
        report.wall_ms = (time.perf_counter() - started) * 1000.0
        return report
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    dominant = len(ssreport.flows)
    winding = math.degrees(abs(adv.winding_angle(ssreport.clusters[0].center.points, center)))
    src = ssreport.flows[0].source
    snk = ssreport.flows[0].sink
    gap = math.hypot(src[0] - snk[0], src[1] - snk[1])
    checks = [
        ("one_dominant_cluster", dominant == 1, f"dominant clusters = {dominant}"),
        ("winding_at_least_270deg", winding >= 270.0, f"winding = {winding:.1f} deg"),
        (
            "source_meets_sink",
            gap <= 2.0 * config.grid_spacing,
            f"source-sink distance = {gap:.1f} px (limit {2.0 * config.grid_spacing:.1f})",
        ),
    ]
    for name, ok, detail in checks:
        if not ok:
            failures.append(f"{name}: {detail}")
    out = config.output_dir
    report.outputs.append(_write(os.path.join(out, "tracks.csv"), adv.tracks_to_csv(tracks)))
    report.outputs.append(
        _write(os.path.join(out, "clusters.ppm"),
               raster.write_ppm(adv.render_tracks(ssreport.clusters, (w, h))))
    )
    summary["checks"] = [
        {"name": name, "passed": ok, "detail": detail} for name, ok, detail in checks
    ]
    summary["failures"] = failures
    report.outputs.append(_write(os.path.join(out, "validation.json"), _json_text(summary)))
    report.summary = summary
    report.failures = failures
    report.wall_ms = (time.perf_counter() - started) * 1000.0
    return report


COMMANDS = {
    "segment": (cmd_segment, PipelineConfig),
    "flows": (cmd_flows, PipelineConfig),
    "groups": (cmd_groups, PipelineConfig),
    "simulate": (cmd_simulate, PipelineConfig),
    "validate": (cmd_validate, spiral_validation_config),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdvision",
        description="Crowd analytics pipelines over PGM frame sequences "
        f"(kernel backend: {BACKEND_NAME})",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--input", metavar="DIR", help="input frame directory")
        p.add_argument("--output", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, help="master random seed")
        if name == "groups":
            p.add_argument("--trajectories", metavar="CSV", help="trajectory CSV path")
        if name in ("simulate", "validate"):
            p.add_argument("--scenario", metavar="PATH", help="scenario JSON path")
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    _fn, base_factory = COMMANDS[args.command]
    base = base_factory()
    cfg = load_config(args.config, base) if args.config else base
    overrides = {}
    if args.input:
        overrides["input_dir"] = args.input
    if args.output:
        overrides["output_dir"] = args.output
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trajectories", None):
        overrides["trajectory_csv"] = args.trajectories
    if getattr(args, "scenario", None):
        overrides["scenario"] = args.scenario
    return config_from_dict(overrides, cfg)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        fn, _ = COMMANDS[args.command]
        report = fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{report.command}: {len(report.outputs)} artifacts in {cfg.output_dir} "
          f"({report.wall_ms:.0f} ms)")
    for key, value in report.summary.items():
        if not isinstance(value, (list, dict)):
            print(f"  {key} = {value}")
    if report.failures:
        for failure in report.failures:
            print(f"  FAIL {failure}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
