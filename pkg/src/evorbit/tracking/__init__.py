"""Event Tracking by Clustering: corners, density filter, clustering, merging, tracks."""
from dataclasses import asdict, dataclass

from .clustering import Cluster, cluster_corners, merge_clusters
from .density import CornerEvents, density_filter, density_scores
from .efast import detect_corners
from .tracks import FeatureTrack, extract_tracks, load_tracks, save_tracks


@dataclass
class TrackerConfig:
    lam: float = 7.0  # density neighbourhood radius
    min_pts: int = 10  # HDBSCAN minimum cluster size
    eps: float = 5.0  # HDBSCAN cluster selection epsilon
    phi: float = 30.0  # head/tail merge radius
    n_sigma: int = 5  # events averaged into a head/tail descriptor
    dt: float = 0.030  # track window, seconds
    time_scale: float = 1000.0  # seconds -> ms, so phi and lam mix px and ms
    max_chunk: int = 20000  # corners per HDBSCAN call

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"TrackerConfig.{name} must be positive, got {value}")


@dataclass
class TrackerResult:
    corners: object
    filtered: CornerEvents
    clusters: list
    merged: list
    tracks: list


def run_tracker(stream, cfg: TrackerConfig = None, t_origin=None, backend=None) -> TrackerResult:
    cfg = cfg or TrackerConfig()
    if t_origin is None:
        t_origin = float(stream.t[0]) if len(stream) else 0.0
    corners = detect_corners(stream, backend=backend)
    filtered = density_filter(corners, stream, cfg.lam, cfg.time_scale, backend=backend)
    clusters = cluster_corners(filtered, stream, cfg.min_pts, cfg.eps, cfg.time_scale, cfg.n_sigma,
                                cfg.max_chunk)
    merged = merge_clusters(clusters, cfg.phi, cfg.n_sigma)
    duration = float(stream.t[-1]) - t_origin if len(stream) else 0.0
    tracks = extract_tracks(merged, cfg.dt, duration, t_origin) if merged else []
    return TrackerResult(corners, filtered, clusters, merged, tracks)


__all__ = [
    "Cluster", "CornerEvents", "FeatureTrack", "TrackerConfig", "TrackerResult",
    "cluster_corners", "density_filter", "density_scores", "detect_corners",
    "extract_tracks", "load_tracks", "merge_clusters", "run_tracker", "save_tracks",
]
