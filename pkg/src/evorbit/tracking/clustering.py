"""
Spatio-temporal clustering of corner events and head/tail cluster merging.

Points live in (x, y, t * time_scale) space. Clustering ignores polarity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import HDBSCAN

from ..events import EventStream


@dataclass
class Cluster:
    id: int
    index: np.ndarray  # stream indices, time ordered
    t: np.ndarray  # seconds
    x: np.ndarray
    y: np.ndarray
    time_scale: float = 1000.0
    n_sigma: int = 5
    merged_from: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.index) == 0:
            raise ValueError("a cluster needs at least one member")
        order = np.argsort(self.t, kind="stable")
        self.index = np.asarray(self.index)[order]
        self.t = np.asarray(self.t, dtype=np.float64)[order]
        self.x = np.asarray(self.x, dtype=np.float64)[order]
        self.y = np.asarray(self.y, dtype=np.float64)[order]

    def __len__(self):
        return len(self.index)

    def _descriptor(self, sl):
        return np.array([self.t[sl].mean() * self.time_scale, self.x[sl].mean(), self.y[sl].mean()])

    @property
    def head(self) -> np.ndarray:
        """Mean (scaled t, x, y) of the first ``n_sigma`` members."""
        return self._descriptor(slice(0, self.n_sigma))

    @property
    def tail(self) -> np.ndarray:
        return self._descriptor(slice(max(len(self) - self.n_sigma, 0), len(self)))

    @classmethod
    def from_stream(cls, id, index, stream: EventStream, time_scale=1000.0, n_sigma=5):
        index = np.asarray(index, dtype=np.int64)
        return cls(id, index, stream.t[index], stream.x[index], stream.y[index],
                   time_scale=time_scale, n_sigma=n_sigma)

    def union(self, other: "Cluster") -> "Cluster":
        return Cluster(self.id,
                       np.concatenate([self.index, other.index]),
                       np.concatenate([self.t, other.t]),
                       np.concatenate([self.x, other.x]),
                       np.concatenate([self.y, other.y]),
                       self.time_scale, self.n_sigma,
                       self.merged_from + [other.id] + other.merged_from)


def embed(t, x, y, time_scale):
    return np.column_stack([np.asarray(x, float), np.asarray(y, float), np.asarray(t, float) * time_scale])


def _hdbscan_labels(pts, min_pts, eps):
    # single-cluster selection lets one dense group come back as one cluster
    return HDBSCAN(min_cluster_size=min_pts, cluster_selection_epsilon=eps,
                   allow_single_cluster=True).fit(pts).labels_


def cluster_corners(corners, stream: EventStream, min_pts=10, eps=5.0, time_scale=1000.0, n_sigma=5,
                    max_chunk=20000):
    """HDBSCAN over corner events; noise is dropped.

    ``corners`` is an index array into ``stream`` (or anything with an
    ``index`` attribute, such as the output of ``density_filter``).

    HDBSCAN cost grows faster than linearly, so long streams are split into
    consecutive time slices of at most ``max_chunk`` corners that are
    clustered independently. A trajectory cut at a slice boundary comes back
    as two clusters, which the head/tail merge joins again.
    """
    idx = np.asarray(getattr(corners, "index", corners), dtype=np.int64)
    if len(idx) < max(min_pts, 2):
        return []
    idx = idx[np.argsort(stream.t[idx], kind="stable")]
    n_chunks = 1 if not max_chunk or len(idx) <= max_chunk else -(-len(idx) // max_chunk)
    clusters = []
    for part in np.array_split(idx, n_chunks):
        if len(part) < max(min_pts, 2):
            continue
        pts = embed(stream.t[part], stream.x[part], stream.y[part], time_scale)
        labels = _hdbscan_labels(pts, min_pts, eps)
        for lab in np.unique(labels):
            if lab < 0:
                continue
            members = part[labels == lab]
            clusters.append(Cluster.from_stream(len(clusters), members, stream, time_scale, n_sigma))
    return clusters


def qualifying_pairs(clusters, phi):
    """(distance, i, j) for every tail i / head j inside the forward hemisphere."""
    if not clusters:
        return []
    tails = np.array([c.tail for c in clusters])
    heads = np.array([c.head for c in clusters])
    diff = heads[None, :, :] - tails[:, None, :]
    d2 = np.sum(diff * diff, axis=2)
    forward = diff[:, :, 0] > 0
    ok = forward & (d2 < phi * phi)
    np.fill_diagonal(ok, False)
    ii, jj = np.nonzero(ok)
    return sorted(zip(np.sqrt(d2[ii, jj]), ii.tolist(), jj.tolist()))


def merge_clusters(clusters, phi=30.0, n_sigma=None, log=None):
    """Join clusters whose tail sits just behind another cluster's head.

    Each pass walks qualifying pairs in order of descriptor distance; a tail
    and a head are used at most once per pass. Passes repeat until nothing
    qualifies. ``log`` (a list) receives ``(tail_time, head_time)`` of every
    accepted link.
    """
    clusters = list(clusters)
    if n_sigma is not None:
        for c in clusters:
            c.n_sigma = n_sigma
    while True:
        pairs = qualifying_pairs(clusters, phi)
        if not pairs:
            return clusters
        parent = list(range(len(clusters)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        tail_used, head_used = set(), set()
        for _, i, j in pairs:
            if i in tail_used or j in head_used:
                continue
            ri, rj = find(i), find(j)
            if ri == rj:
                continue
            tail_used.add(i)
            head_used.add(j)
            parent[rj] = ri
            if log is not None:
                log.append((clusters[i].tail[0], clusters[j].head[0]))
        groups = {}
        for k in range(len(clusters)):
            groups.setdefault(find(k), []).append(k)
        if len(groups) == len(clusters):
            return clusters
        merged = []
        for root in sorted(groups):
            members = sorted(groups[root], key=lambda k: clusters[k].t[0])
            c = clusters[members[0]]
            for k in members[1:]:
                c = c.union(clusters[k])
            merged.append(c)
        clusters = merged
