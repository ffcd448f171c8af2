"""Scratch harness for tuning the spiral validation loop (not shipped)."""
import math
import sys
import time

import numpy as np

from crowdvision import advection as adv
from crowdvision import motion
from crowdvision import simulate as sim
from crowdvision.config import spiral_validation_config


def probe(name, scenario_mods, config_mods):
    t0 = time.perf_counter()
    cfg = spiral_validation_config()
    for k, v in config_mods.items():
        setattr(cfg, k, v)
    sc = sim.default_spiral_scenario()
    for k, v in scenario_mods.items():
        setattr(sc, k, v)
    world, field = sim.build_scenario(sc)
    trace = sim.run(world, field, sc.k_s, sc.steps)
    frames = sim.rasterize(trace, world, sc.agent_radius)
    params = cfg.advection_params()
    k = params.frames_per_segment
    n_seg = len(frames) // k
    tracklets = []
    disps = []
    for s in range(n_seg):
        chunk = frames[s * k : (s + 1) * k]
        flows = [
            motion.horn_schunck(chunk[i], chunk[i + 1], alpha=cfg.hs_alpha,
                                iterations=cfg.hs_iterations, tol=cfg.hs_tol,
                                presmooth_sigma=cfg.presmooth_sigma)
            for i in range(len(chunk) - 1)
        ]
        tl = adv.advect(flows, params, t0=s * k)
        tracklets.extend(tl)
        disps.extend(t.length for t in tl)
    tracks = adv.link_tracklets(tracklets, params.gap_radius, params.angle_tol)
    cx = cy = (frames[0].pixels.shape[1] - 1) / 2.0
    try:
        clusters = adv.cluster_tracks(tracks, params)
        rep = adv.sources_sinks(clusters, params.min_members)
        winding = math.degrees(abs(adv.winding_angle(rep.clusters[0].center.points, (cx, cy))))
        gap = math.hypot(rep.flows[0].source[0] - rep.flows[0].sink[0],
                         rep.flows[0].source[1] - rep.flows[0].sink[1])
        flows_n = len(rep.flows)
        sizes = sorted((c.size for c in clusters), reverse=True)[:5]
    except Exception as exc:
        winding, gap, flows_n, sizes = float("nan"), float("nan"), -1, str(exc)[:40]
    dt = time.perf_counter() - t0
    best_wind = max(
        (abs(adv.winding_angle(t.points, (cx, cy))) for t in tracks), default=0.0
    )
    print(
        f"{name}: segs={n_seg} tracklets={len(tracklets)} "
        f"drift(mean/max)={np.mean(disps) if disps else 0:.0f}/{np.max(disps) if disps else 0:.0f} "
        f"tracks={len(tracks)} flows={flows_n} sizes={sizes} "
        f"center_wind={winding:.0f} best_track_wind={math.degrees(best_wind):.0f} "
        f"gap={gap:.0f} t={dt:.0f}s"
    )


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    cases = {
        "A": (dict(agent_radius=6, steps=300), dict(gap_radius=15.0, min_displacement=6.0)),
        "B": (dict(agent_radius=7, steps=300), dict(gap_radius=15.0, min_displacement=6.0)),
        "C": (dict(agent_radius=7, steps=300, obstacle=(31.5, 31.5, 10.0), annulus=(11.0, 15.0)),
              dict(gap_radius=15.0, min_displacement=6.0)),
        "D": (dict(agent_radius=7, steps=300, obstacle=(31.5, 31.5, 10.0), annulus=(11.0, 15.0)),
              dict(gap_radius=15.0, min_displacement=10.0, frames_per_segment=60)),
    }
    for name, (sm, cm) in cases.items():
        if which in ("all", name):
            probe(name, sm, cm)
