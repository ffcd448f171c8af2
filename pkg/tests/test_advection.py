import math

import numpy as np
import pytest

from crowdvision.advection import (
    AdvectionParams,
    NoDominantFlowError,
    Track,
    Tracklet,
    advect,
    cluster_tracks,
    lcss_similarity,
    link_tracklets,
    resample_by_arc_length,
    sources_sinks,
    tracks_to_csv,
    winding_angle,
)
from crowdvision.motion import FlowField


def uniform_flow(h, w, u, v):
    return FlowField(np.full((h, w), float(u)), np.full((h, w), float(v)))


def rotation_flow(h, w, omega, center):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return FlowField(-omega * (ys - center[1]), omega * (xs - center[0]))


def analytic_rotation(p, omega, center):
    return (
        -omega * (p[1] - center[1]),
        omega * (p[0] - center[0]),
    )


def rk4_rotation(p0, omega, center, steps):
    """Fourth-order integration of the analytic rotation field, one unit
    time step per frame (the oracle for the explicit-Euler advection)."""
    p = np.array(p0, dtype=np.float64)
    for _ in range(steps):
        k1 = np.array(analytic_rotation(p, omega, center))
        k2 = np.array(analytic_rotation(p + 0.5 * k1, omega, center))
        k3 = np.array(analytic_rotation(p + 0.5 * k2, omega, center))
        k4 = np.array(analytic_rotation(p + k3, omega, center))
        p = p + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return p


def straight_tracklet(x0, y0, dx, dy, n, t0):
    pts = [(x0 + dx * i, y0 + dy * i, t0 + i) for i in range(n)]
    return Tracklet(np.array(pts))


class TestAdvect:
    def test_zero_flow_discards_everything(self):
        params = AdvectionParams(grid_spacing=4, min_displacement=1.0)
        flows = [uniform_flow(16, 16, 0, 0)] * 5
        assert advect(flows, params) == []

    def test_uniform_flow_straight_tracklets(self):
        params = AdvectionParams(grid_spacing=8, min_displacement=2.0)
        flows = [uniform_flow(32, 64, 1.0, 0.0)] * 9  # k = 10 frames
        tracklets = advect(flows, params, t0=0)
        assert tracklets
        for tr in tracklets:
            assert tr.points.shape[0] == 10
            np.testing.assert_allclose(tr.sink[0], min(tr.source[0] + 9.0, 63.0))
            np.testing.assert_allclose(tr.sink[1], tr.source[1])
            assert tr.points[0, 2] == 0 and tr.points[-1, 2] == 9

    def test_rotation_radius_within_5pct_of_rk4_oracle(self):
        h = w = 96
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
        omega = 0.05
        steps = 32  # just over a quarter turn
        flows = [rotation_flow(h, w, omega, center)] * steps
        params = AdvectionParams(grid_spacing=4, min_displacement=1.0)
        tracklets = advect(flows, params)
        # pick the tracklet starting closest to a known radius
        target = (center[0] + 30.0, center[1])
        tr = min(tracklets, key=lambda t: np.hypot(t.source[0] - target[0], t.source[1] - target[1]))
        r0 = math.hypot(tr.source[0] - center[0], tr.source[1] - center[1])
        radii = np.hypot(tr.points[:, 0] - center[0], tr.points[:, 1] - center[1])
        assert np.all(np.abs(radii - r0) <= 0.05 * r0)
        oracle_end = rk4_rotation(tr.source[:2], omega, center, steps)
        assert math.hypot(*(tr.sink[:2] - oracle_end)) <= 0.06 * r0

    def test_points_stay_in_bounds(self):
        params = AdvectionParams(grid_spacing=4, min_displacement=0.0)
        flows = [uniform_flow(16, 16, 10.0, -10.0)] * 6
        for tr in advect(flows, params):
            assert np.all(tr.points[:, 0] >= 0) and np.all(tr.points[:, 0] <= 15)
            assert np.all(tr.points[:, 1] >= 0) and np.all(tr.points[:, 1] <= 15)

    def test_deterministic(self):
        params = AdvectionParams(grid_spacing=4, min_displacement=0.5)
        rng = np.random.default_rng(0)
        flows = [FlowField(rng.normal(size=(20, 20)), rng.normal(size=(20, 20))) for _ in range(4)]
        a = advect(flows, params)
        b = advect(flows, params)
        assert len(a) == len(b)
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.points, tb.points)

    def test_empty_flow_list(self):
        with pytest.raises(ValueError):
            advect([], AdvectionParams())


def link_oracle(tracklets, gap_radius, angle_tol):
    """Declarative restatement of the batch-synchronous chaining rule,
    built on plain lists and sets."""

    def angdiff(a, b):
        d = abs(a - b) % (2 * math.pi)
        return min(d, 2 * math.pi - d)

    def priority(chain):
        seed = chain[0]
        return (-tracklets[seed].length, tracklets[seed].points[0, 2], seed)

    free = set(range(len(tracklets)))
    chains = []
    for t0 in sorted({t.points[0, 2] for t in tracklets}):
        batch = {j for j in free if tracklets[j].points[0, 2] == t0}
        for chain in sorted(chains, key=priority):
            tail = tracklets[chain[-1]]
            options = []
            for j in sorted(batch & free):
                cand = tracklets[j]
                if cand.points[0, 2] < tail.points[-1, 2]:
                    continue
                d = math.hypot(cand.points[0, 0] - tail.points[-1, 0],
                               cand.points[0, 1] - tail.points[-1, 1])
                if d <= gap_radius and angdiff(cand.mean_orientation, tail.mean_orientation) <= angle_tol:
                    options.append((d, j))
            if options:
                _, best = min(options)
                free.discard(best)
                chain.append(best)
        for j in sorted(batch & free, key=lambda j: (-tracklets[j].length, j)):
            free.discard(j)
            chains.append([j])
    return [np.vstack([tracklets[i].points for i in chain]) for chain in sorted(chains, key=priority)]


class TestLinkTracklets:
    def test_collinear_pair_links(self):
        a = straight_tracklet(0, 5, 1, 0, 10, t0=0)
        b = straight_tracklet(10, 5, 1, 0, 10, t0=10)  # 1 px gap from a's sink
        tracks = link_tracklets([a, b], gap_radius=2.0, angle_tol=0.5)
        assert len(tracks) == 1
        assert tracks[0].points.shape[0] == 20

    def test_opposite_orientations_not_linked(self):
        a = straight_tracklet(0, 5, 1, 0, 10, t0=0)
        b = straight_tracklet(9.5, 5, -1, 0, 10, t0=10)
        tracks = link_tracklets([a, b], gap_radius=2.0, angle_tol=0.5)
        assert len(tracks) == 2

    def test_chain_of_three(self):
        a = straight_tracklet(0, 5, 1, 0, 10, t0=0)
        b = straight_tracklet(9.5, 5, 1, 0, 10, t0=10)
        c = straight_tracklet(19, 5, 1, 0, 10, t0=20)
        tracks = link_tracklets([a, b, c], gap_radius=2.0, angle_tol=0.5)
        assert len(tracks) == 1
        assert tracks[0].points.shape[0] == 30
        t = tracks[0].points[:, 2]
        assert np.all(np.diff(t) >= 0)

    def test_matches_oracle_on_small_sets(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            tracklets = []
            for i in range(6):
                x0, y0 = rng.uniform(0, 40, size=2)
                ang = rng.uniform(-np.pi, np.pi)
                n = int(rng.integers(4, 9))
                t0 = int(rng.integers(0, 3)) * 10
                tracklets.append(
                    straight_tracklet(x0, y0, math.cos(ang), math.sin(ang), n, t0)
                )
            got = link_tracklets(tracklets, gap_radius=6.0, angle_tol=0.9)
            want = link_oracle(tracklets, 6.0, 0.9)
            assert len(got) == len(want)
            got_sorted = sorted(got, key=lambda t: t.points[0, :2].tolist())
            want_sorted = sorted(want, key=lambda p: p[0, :2].tolist())
            for g, w in zip(got_sorted, want_sorted):
                np.testing.assert_array_equal(g.points, w)

    def test_junction_distance_never_exceeds_gap_radius(self):
        rng = np.random.default_rng(2)
        tracklets = []
        for i in range(12):
            x0, y0 = rng.uniform(0, 30, size=2)
            tracklets.append(straight_tracklet(x0, y0, 1, 0, 5, t0=int(rng.integers(0, 4)) * 5))
        for track in link_tracklets(tracklets, gap_radius=4.0, angle_tol=1.0):
            pts = track.points
            # a time step other than +1 can only happen at a junction
            for i in range(len(pts) - 1):
                if pts[i + 1, 2] != pts[i, 2] + 1:
                    gap = math.hypot(pts[i + 1, 0] - pts[i, 0], pts[i + 1, 1] - pts[i, 1])
                    assert gap <= 4.0 + 1e-9


def lcss_recursion(a, b, eps, delta):
    def match(i, j):
        return (
            abs(a[i][0] - b[j][0]) <= eps
            and abs(a[i][1] - b[j][1]) <= eps
            and abs(i - j) <= delta
        )

    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        best = max(rec(i + 1, j), rec(i, j + 1))
        if match(i, j):
            best = max(best, 1 + rec(i + 1, j + 1))
        return best

    return rec(0, 0)


def track_from_xy(xy, t0=0):
    pts = [(x, y, t0 + i) for i, (x, y) in enumerate(xy)]
    return Track(np.array(pts, dtype=np.float64))


class TestLcss:
    def test_identical_tracks(self):
        tr = track_from_xy([(0, 0), (1, 1), (2, 2), (3, 3)])
        assert lcss_similarity(tr, tr, eps=1.0, delta=2) == 1.0

    def test_far_apart_tracks(self):
        a = track_from_xy([(0, 0), (1, 0), (2, 0)])
        b = track_from_xy([(100, 100), (101, 100), (102, 100)])
        assert lcss_similarity(a, b, eps=5.0, delta=2) == 0.0

    def test_matches_recursion_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            na, nb = rng.integers(1, 7), rng.integers(1, 7)
            a = rng.uniform(0, 10, size=(na, 2))
            b = rng.uniform(0, 10, size=(nb, 2))
            eps = float(rng.uniform(0.5, 5.0))
            delta = int(rng.integers(0, 4))
            got = lcss_similarity(track_from_xy(a), track_from_xy(b), eps, delta)
            want = lcss_recursion(a.tolist(), b.tolist(), eps, delta) / min(na, nb)
            assert got == pytest.approx(want, abs=1e-12)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(4)
        for trial in range(30):
            a = track_from_xy(rng.uniform(0, 20, size=(int(rng.integers(2, 10)), 2)))
            b = track_from_xy(rng.uniform(0, 20, size=(int(rng.integers(2, 10)), 2)))
            s1 = lcss_similarity(a, b, 4.0, 3)
            s2 = lcss_similarity(b, a, 4.0, 3)
            assert s1 == pytest.approx(s2)
            assert 0.0 <= s1 <= 1.0

    def test_one_iff_every_short_point_matches(self):
        a = track_from_xy([(0, 0), (1, 0), (2, 0)])
        b = track_from_xy([(0.1, 0), (1.1, 0), (2.1, 0), (3.1, 0)])
        assert lcss_similarity(a, b, eps=0.5, delta=2) == 1.0
        c = track_from_xy([(0.1, 0), (1.1, 0), (9.0, 0), (3.1, 0)])
        assert lcss_similarity(a, c, eps=0.5, delta=2) < 1.0


def parallel_bundle(y0, count, spacing, length, x0=0.0, t0=0):
    tracks = []
    for i in range(count):
        xy = [(x0 + j, y0 + i * spacing) for j in range(length)]
        tracks.append(track_from_xy(xy, t0))
    return tracks


class TestClusterTracks:
    def test_single_track(self):
        tr = track_from_xy([(0, 0), (5, 0), (10, 0)])
        clusters = cluster_tracks([tr], AdvectionParams())
        assert len(clusters) == 1
        assert clusters[0].center is tr
        assert clusters[0].members == [tr]

    def test_two_bundles_exact_membership(self):
        params = AdvectionParams(lcss_eps=6.0, lcss_delta=8, sim_threshold=0.6)
        bundle_a = parallel_bundle(10.0, 10, 0.5, 30)
        bundle_b = parallel_bundle(60.0, 10, 0.5, 30)
        clusters = cluster_tracks(bundle_a + bundle_b, params)
        assert len(clusters) == 2
        sets = [set(id(t) for t in c.members) for c in clusters]
        assert {len(s) for s in sets} == {10}
        assert sets[0] == {id(t) for t in bundle_a} or sets[0] == {id(t) for t in bundle_b}
        # all-pairs similarity oracle: within-bundle high, across-bundle zero
        for ta in bundle_a:
            for tb in bundle_b:
                assert lcss_similarity(ta, tb, params.lcss_eps, params.lcss_delta) == 0.0

    def test_conservation(self):
        rng = np.random.default_rng(5)
        tracks = []
        for i in range(25):
            x0, y0 = rng.uniform(0, 100, size=2)
            ang = rng.uniform(-np.pi, np.pi)
            n = int(rng.integers(5, 20))
            xy = [(x0 + math.cos(ang) * j, y0 + math.sin(ang) * j) for j in range(n)]
            tracks.append(track_from_xy(xy))
        clusters = cluster_tracks(tracks, AdvectionParams())
        assigned = [t for c in clusters for t in c.members]
        assert len(assigned) == len(tracks)
        assert {id(t) for t in assigned} == {id(t) for t in tracks}

    def test_default_refit_size_is_30(self):
        assert AdvectionParams().cluster_refit_size == 30

    def test_refit_preserves_orientation(self):
        params = AdvectionParams(cluster_refit_size=10, lcss_eps=8.0)
        tracks = parallel_bundle(20.0, 15, 0.4, 40)
        clusters = cluster_tracks(tracks, params)
        assert len(clusters) == 1
        center = clusters[0].center
        starts = np.array([t.points[0, :2] for t in clusters[0].members])
        ends = np.array([t.points[-1, :2] for t in clusters[0].members])
        d_start = np.hypot(*(starts - center.points[0, :2]).T).mean()
        d_end = np.hypot(*(ends - center.points[0, :2]).T).mean()
        assert d_start < d_end

    def test_empty_input(self):
        with pytest.raises(ValueError):
            cluster_tracks([], AdvectionParams())


class TestSourcesSinks:
    def test_left_to_right_bundle(self):
        tracks = parallel_bundle(30.0, 8, 1.0, 50, x0=5.0)
        clusters = cluster_tracks(tracks, AdvectionParams(lcss_eps=10.0))
        report = sources_sinks(clusters, min_members=5)
        assert len(report.flows) == 1
        flow = report.flows[0]
        assert flow.source[0] < 20 and flow.sink[0] > 40
        assert flow.member_count == 8
        assert abs(flow.mean_direction) < 0.2

    def test_all_below_threshold_raises(self):
        tracks = parallel_bundle(10.0, 2, 1.0, 20)
        clusters = cluster_tracks(tracks, AdvectionParams(lcss_eps=10.0))
        with pytest.raises(NoDominantFlowError, match="no dominant flows"):
            sources_sinks(clusters, min_members=5)

    def test_empty_clusters(self):
        with pytest.raises(ValueError):
            sources_sinks([], min_members=1)


class TestHelpers:
    def test_winding_angle_full_circle(self):
        ang = np.linspace(0, 2 * np.pi, 100)
        pts = np.column_stack([10 * np.cos(ang), 10 * np.sin(ang), np.arange(100)])
        w = winding_angle(pts, (0.0, 0.0))
        assert w == pytest.approx(2 * np.pi, abs=1e-6)

    def test_winding_angle_straight_line(self):
        pts = np.column_stack([np.arange(10.0) + 5, np.full(10, 3.0), np.arange(10.0)])
        assert abs(winding_angle(pts, (0.0, 0.0))) < 0.6

    def test_resample_by_arc_length(self):
        pts = np.array([[0, 0, 0], [10, 0, 1], [10, 10, 2]], dtype=float)
        out = resample_by_arc_length(pts, 5)
        assert out.shape == (5, 2)
        np.testing.assert_allclose(out[0], [0, 0])
        np.testing.assert_allclose(out[-1], [10, 10])
        np.testing.assert_allclose(out[2], [10, 0], atol=1e-9)

    def test_tracks_to_csv(self):
        tr = track_from_xy([(1.5, 2.5), (3.5, 4.5)], t0=7)
        text = tracks_to_csv([tr])
        lines = text.strip().split("\n")
        assert lines[0] == "track_id,point_idx,x,y,t"
        assert lines[1] == "0,0,1.500,2.500,7"
        assert lines[2] == "0,1,3.500,4.500,8"
