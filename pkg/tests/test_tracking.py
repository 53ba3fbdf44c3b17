"""Density filter, clustering, head/tail merging and track extraction."""
import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from evorbit import _accel
from evorbit.events import make_stream
from evorbit.tracking import TrackerConfig
from evorbit.tracking.clustering import Cluster, cluster_corners, embed, merge_clusters, qualifying_pairs
from evorbit.tracking.density import density_filter, density_scores
from evorbit.tracking.tracks import FeatureTrack, extract_tracks, load_tracks, num_windows, save_tracks

from oracles import random_stream


def brute_density(stream, corners, lam, time_scale):
    out = []
    for i in corners:
        c = 0
        for j in range(len(stream)):
            if j == i or stream.p[j] != stream.p[i]:
                continue
            d2 = ((stream.x[j] - stream.x[i]) ** 2 + (stream.y[j] - stream.y[i]) ** 2
                  + ((stream.t[j] - stream.t[i]) * time_scale) ** 2)
            if d2 <= lam * lam:
                c += 1
        out.append(c / lam)
    return np.array(out)


def _one_cluster(id, t, x, y, n=1):
    return Cluster(id, np.arange(n) + 100 * id, np.full(n, t), np.full(n, float(x)), np.full(n, float(y)))


# ---- density -------------------------------------------------------------------

def test_isolated_corner_has_zero_density():
    s = make_stream([0.0, 1.0], [10, 10], [10, 10], [1, 1])
    assert density_scores([0], s, lam=7.0, backend="numpy")[0] == 0.0


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_fourteen_neighbours_give_two(backend):
    # corner at t = 0.5 s with 14 same-polarity neighbours within 7 px, plus distractors
    t = [0.5] + [0.5 + 1e-4 * k for k in range(1, 15)] + [0.5, 0.5]
    x = [20] + [20 + (k % 3) for k in range(1, 15)] + [20, 40]
    y = [20] * 15 + [21, 20]
    p = [1] * 15 + [-1, 1]
    s = make_stream(t, x, y, p, 64, 64)
    c = int(np.flatnonzero((s.x == 20) & (s.y == 20) & (s.p == 1) & (s.t == 0.5))[0])
    assert density_scores([c], s, lam=7.0, backend=backend)[0] == pytest.approx(2.0)


def test_mean_threshold_keeps_denser_corner():
    # corner A has 7 neighbours (D = 1), corner B has 21 (D = 3); mean 2
    tA = [0.1] + [0.1 + 1e-4 * k for k in range(1, 8)]
    tB = [0.5] + [0.5 + 1e-4 * k for k in range(1, 22)]
    s = make_stream(tA + tB, [10] * 8 + [30] * 22, [10] * 8 + [30] * 22, [1] * 30, 64, 64)
    a = int(np.flatnonzero(s.t == 0.1)[0])
    b = int(np.flatnonzero(s.t == 0.5)[0])
    d = density_scores([a, b], s, lam=7.0, backend="numpy")
    assert np.allclose(d, [1.0, 3.0])
    kept = density_filter([a, b], s, lam=7.0, backend="numpy")
    assert kept.index.tolist() == [b]
    assert kept.mean_density[1] == pytest.approx(2.0)


def test_density_matches_brute_force():
    s = random_stream(5, n=1500, w=32, h=32)
    corners = np.arange(0, len(s), 7)
    ref = brute_density(s, corners, 7.0, 1000.0)
    assert np.allclose(density_scores(corners, s, 7.0, 1000.0, backend="numpy"), ref)
    if _accel.HAVE_NUMBA:
        assert np.allclose(density_scores(corners, s, 7.0, 1000.0, backend="numba"), ref)


def test_survivors_reach_their_polarity_mean():
    s = random_stream(6, n=3000)
    corners = np.arange(0, len(s), 3)
    d = density_scores(corners, s, backend="numpy")
    out = density_filter(corners, s, backend="numpy")
    for i, di in zip(out.index, out.density):
        pol = s.p[i]
        assert di >= d[s.p[corners] == pol].mean() - 1e-12
    assert density_filter(np.zeros(0, dtype=int), s).index.size == 0
    with pytest.raises(ValueError):
        density_scores(corners, s, lam=0.0)


# ---- clustering ----------------------------------------------------------------

def _group_stream(rng, centres, n_each=20, spread=0.6):
    t, x, y = [], [], []
    for cx, cy, ct in centres:
        t += list(ct + rng.uniform(0, spread, n_each) * 1e-3)
        x += list(np.round(cx + rng.uniform(-spread, spread, n_each)))
        y += list(np.round(cy + rng.uniform(-spread, spread, n_each)))
    t = np.array(t)
    order = np.argsort(t, kind="stable")
    n = len(t)
    return make_stream(t[order], np.array(x)[order], np.array(y)[order], np.ones(n, int), 346, 260)


def test_two_separated_groups_match_single_linkage():
    rng = np.random.default_rng(0)
    s = _group_stream(rng, [(50, 50, 0.1), (150, 50, 0.1)])
    idx = np.arange(len(s))
    clusters = cluster_corners(idx, s, min_pts=10, eps=5.0)
    assert len(clusters) == 2
    # oracle: single linkage cut between the intra-group (< 2) and inter-group (100) scales
    ref = fcluster(linkage(embed(s.t, s.x, s.y, 1000.0), "single"), t=20.0, criterion="distance")
    groups = sorted(sorted(idx[ref == lab].tolist()) for lab in np.unique(ref))
    got = sorted(sorted(c.index.tolist()) for c in clusters)
    assert got == groups


def test_too_few_corners_is_all_noise():
    s = _group_stream(np.random.default_rng(1), [(50, 50, 0.1)], n_each=5)
    assert cluster_corners(np.arange(len(s)), s, min_pts=10) == []


def test_single_tight_group_is_one_cluster():
    s = _group_stream(np.random.default_rng(2), [(80, 80, 0.2)], n_each=30)
    clusters = cluster_corners(np.arange(len(s)), s, min_pts=10, eps=5.0)
    assert len(clusters) == 1
    assert len(clusters[0]) == 30


def test_time_chunks_rejoined_by_merge():
    # a point moving slowly to the right: one trajectory, cut into chunks
    rng = np.random.default_rng(0)
    n = 3000
    t = np.sort(rng.uniform(0.0, 0.6, n))
    x = np.round(50 + 20 * t + rng.normal(0, 0.7, n))
    y = np.round(60 + rng.normal(0, 0.7, n))
    s = make_stream(t, x, y, np.ones(n, int))
    whole = cluster_corners(np.arange(n), s, min_pts=10, eps=5.0, max_chunk=0)
    parts = cluster_corners(np.arange(n), s, min_pts=10, eps=5.0, max_chunk=750)
    assert len(parts) == 4
    assert len(merge_clusters(whole, phi=30.0)) == 1
    assert len(merge_clusters(parts, phi=30.0)) == 1


def test_cluster_descriptors_and_union():
    c = Cluster(0, np.arange(8), np.arange(8) * 1e-3, np.arange(8.0), np.zeros(8), n_sigma=5)
    assert np.allclose(c.head, [2.0, 2.0, 0.0])
    assert np.allclose(c.tail, [5.0, 5.0, 0.0])
    small = Cluster(1, [0, 1], [0.0, 1e-3], [0.0, 2.0], [0.0, 0.0], n_sigma=5)
    assert np.allclose(small.head, small.tail)
    u = c.union(Cluster(2, [20], [1.0], [9.0], [9.0]))
    assert len(u) == 9 and u.t[-1] == 1.0 and u.merged_from == [2]
    with pytest.raises(ValueError):
        Cluster(3, [], [], [], [])


# ---- merging -------------------------------------------------------------------

def test_forward_head_within_phi_merges():
    a = _one_cluster(0, 0.0, 0, 0)
    b = _one_cluster(1, 0.010, 10, 10)
    assert len(qualifying_pairs([a, b], 30.0)) == 1
    out = merge_clusters([a, b], phi=30.0)
    assert len(out) == 1 and len(out[0]) == 2


def test_backward_head_is_not_merged():
    a = _one_cluster(0, 0.0, 0, 0)
    b = _one_cluster(1, -0.010, 10, 10)
    # a's tail may not link to b's earlier head; only b -> a qualifies
    pairs = qualifying_pairs([a, b], 30.0)
    assert [(i, j) for _, i, j in pairs] == [(1, 0)]
    assert pairs[0][0] == pytest.approx(np.sqrt(300.0))


def test_collinear_chain_merges_transitively():
    clusters = [_one_cluster(i, 0.020 * i, 20 * i, 0, n=3) for i in range(3)]
    # oracle: components of the qualifying-pair graph
    pairs = qualifying_pairs(clusters, 30.0)
    ii = [p[1] for p in pairs]
    jj = [p[2] for p in pairs]
    g = coo_matrix((np.ones(len(ii)), (ii, jj)), shape=(3, 3))
    n_comp, _ = connected_components(g, directed=True, connection="weak")
    out = merge_clusters(clusters, phi=30.0)
    assert n_comp == 1 and len(out) == 1
    assert sorted(out[0].merged_from) == [1, 2]


def test_merges_never_go_backward_in_time():
    rng = np.random.default_rng(3)
    clusters = []
    for i in range(30):
        n = int(rng.integers(1, 8))
        t = np.sort(rng.uniform(0, 0.2, n))
        clusters.append(Cluster(i, np.arange(n) + 100 * i, t, rng.uniform(0, 60, n), rng.uniform(0, 60, n)))
    log = []
    out = merge_clusters(clusters, phi=40.0, log=log)
    assert len(out) < len(clusters)
    assert all(tail < head for tail, head in log)
    assert sum(len(c) for c in out) == sum(len(c) for c in clusters)


# ---- track extraction ----------------------------------------------------------

def test_window_mean_sample():
    c = Cluster(0, [0, 1, 2], [0.10, 0.11, 0.16], [10.0, 12.0, 5.0], [20.0, 22.0, 5.0])
    (tr,) = extract_tracks([c], dt=0.03, duration=1.0)
    assert tr.k.tolist() == [3, 5]
    assert np.allclose(tr.uv[0], [11.0, 21.0])
    assert tr.count.tolist() == [2, 1]


def test_single_window_cluster_dropped():
    c = Cluster(0, [0, 1], [0.10, 0.11], [1.0, 2.0], [1.0, 2.0])
    assert extract_tracks([c], dt=0.03, duration=1.0) == []


def test_window_count():
    assert num_windows(3.0, 0.03) == 99
    assert num_windows(4.0, 0.04) == 99
    with pytest.raises(ValueError):
        extract_tracks([_one_cluster(0, 0.0, 0, 0)], dt=0.03, duration=0.05)


def test_samples_inside_their_window_bounding_box():
    rng = np.random.default_rng(4)
    n = 400
    c = Cluster(0, np.arange(n), np.sort(rng.uniform(0, 1, n)), rng.uniform(0, 50, n), rng.uniform(0, 50, n))
    (tr,) = extract_tracks([c], dt=0.05, duration=1.0)
    assert np.all(np.diff(tr.k) > 0)
    for k, (u, v), ev in zip(tr.k, tr.uv, tr.events):
        sel = np.isin(c.index, ev)
        assert np.all((c.t[sel] > k * 0.05 - 1e-12) & (c.t[sel] <= (k + 1) * 0.05 + 1e-12))
        assert c.x[sel].min() <= u <= c.x[sel].max()
        assert c.y[sel].min() <= v <= c.y[sel].max()


def test_track_csv_round_trip(tmp_path):
    tracks = [FeatureTrack(0, [1, 2, 5], [[1.5, 2.25], [3.0, 4.0], [0.1, 1e-7]], 0.03),
              FeatureTrack(4, [3, 4], [[9.0, 9.0], [8.0, 7.5]], 0.03)]
    save_tracks(tracks, tmp_path / "t.csv")
    back = load_tracks(tmp_path / "t.csv")
    assert [t.track_id for t in back] == [0, 4]
    for a, b in zip(tracks, back):
        assert np.array_equal(a.k, b.k)
        assert np.array_equal(a.uv, b.uv)
        assert b.dt == pytest.approx(0.03)


def test_tracker_config_rejects_non_positive():
    with pytest.raises(ValueError):
        TrackerConfig(lam=0)
    with pytest.raises(ValueError):
        TrackerConfig(dt=-0.03)
