"""K-means clustering, centroid-distance binning, and diversity sampling.

Clusters are built with seeded k-means++ initialization and Lloyd iterations;
per-tile centroid distances are min-max normalized within each cluster,
split into equal-frequency bins (nearest-centroid bin first), and a fixed
fraction of every bin is sampled so both prototypical and edge-of-cluster
tiles are always represented.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imgqual import ContractError
from .extract import ConfigurationError


@dataclass(frozen=True)
class ClusterConfig:
    m: int = 400                  # target samples (tiles) per cluster
    K: int | None = None          # explicit cluster count overrides the m rule
    g: int = 5                    # distance bins per cluster
    sample_fraction: float = 0.2
    seed: int = 0
    max_iter: int = 300
    tol: float = 1e-6             # relative inertia change
    sqrt_rule: bool = False       # K = round(sqrt(T)) instead of round(T/m)
    k_nn: int = 4                 # neighbor clusters consulted for propagation
    n_init: int = 10              # k-means++ restarts; best final inertia wins

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError(f"m must be >= 1, got {self.m}")
        if self.g < 1:
            raise ConfigurationError(f"g must be >= 1, got {self.g}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigurationError(
                f"sample_fraction must be in (0, 1], got {self.sample_fraction}"
            )


def choose_cluster_count(tile_count: int, cfg: ClusterConfig) -> int:
    """K from config, else round(T/m); sqrt_rule switches to round(sqrt(T))."""
    if tile_count < 1:
        raise ContractError("tile_count must be >= 1")
    if cfg.K is not None:
        return cfg.K
    if cfg.sqrt_rule:
        return max(1, round(math.sqrt(tile_count)))
    return max(1, round(tile_count / cfg.m))


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    closest = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[i] = x[idx]
        closest = np.minimum(closest, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # exact differences (no |x|^2+|c|^2-2xc shortcut) keep the Lloyd inertia
    # sequence monotone to the last bit
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _lloyd(
    x: np.ndarray, k: int, cfg: ClusterConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n = x.shape[0]
    centroids = _kmeans_pp_init(x, k, rng)
    history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    prev_inertia = None
    for _ in range(cfg.max_iter):
        d2 = _sq_distances(x, centroids)
        assignments = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assignments].sum())
        history.append(inertia)
        if prev_inertia is not None and prev_inertia - inertia <= cfg.tol * max(prev_inertia, 1e-300):
            break
        prev_inertia = inertia
        own = d2[np.arange(n), assignments]
        for c in range(k):
            members = assignments == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                far = int(own.argmax())
                centroids[c] = x[far]
                own[far] = 0.0  # keep later repairs from picking the same point
    d2 = _sq_distances(x, centroids)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    if not history or inertia < history[-1]:
        history.append(inertia)
    return assignments, centroids, inertia, history


def kmeans(
    x: np.ndarray, k: int, cfg: ClusterConfig
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    """Seeded k-means++ / Lloyd with restarts; the lowest final inertia wins.

    Returns (assignments, centroids, inertia, history); history holds the
    winning run's inertia after each assignment step and is nonincreasing.
    Empty clusters are repaired by re-seeding from the point farthest from
    its current centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ConfigurationError(f"K must be >= 1, got {k}")
    if k > n:
        raise ConfigurationError(f"K={k} exceeds the {n} available points")
    best = None
    for restart in range(max(1, cfg.n_init)):
        rng = np.random.default_rng([cfg.seed & 0x7FFFFFFF, restart])
        result = _lloyd(x, k, cfg, rng)
        if best is None or result[2] < best[2]:
            best = result
    return best


def normalize_distances(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize one cluster's centroid distances to [0, 1].

    Degenerate spreads (all equal, including singletons) normalize to 0.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ContractError("cannot normalize an empty cluster")
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def equal_frequency_bins(sorted_values: np.ndarray, g: int) -> np.ndarray:
    """Bin ids for values already sorted ascending.

    n values split into min(g, n) contiguous runs whose sizes differ by at
    most one, larger runs first; bin 0 holds the smallest values.
    """
    values = np.asarray(sorted_values, dtype=np.float64)
    n = values.size
    if n == 0:
        raise ContractError("cannot bin zero tiles")
    if g < 1:
        raise ContractError(f"bin count must be >= 1, got {g}")
    if (np.diff(values) < 0).any():
        raise ContractError("values must be sorted ascending before binning")
    g_eff = min(g, n)
    base, rem = divmod(n, g_eff)
    sizes = [base + 1] * rem + [base] * (g_eff - rem)
    return np.repeat(np.arange(g_eff), sizes)


def sample_bins(
    bins: dict[int, list[str]], fraction: float, seed: int | list[int]
) -> list[str]:
    """Draw ceil(fraction * size) tiles from each bin, without replacement.

    Returned order is deterministic: bin id ascending, then draw order
    (original order when the whole bin is taken).
    """
    rng = np.random.default_rng(seed)
    selected: list[str] = []
    for bin_id in sorted(bins):
        members = bins[bin_id]
        if not members:
            continue
        take = math.ceil(fraction * len(members))
        if take >= len(members):
            selected.extend(members)
        else:
            idx = rng.choice(len(members), size=take, replace=False)
            selected.extend(members[i] for i in idx)
    return selected


@dataclass
class ClusterModel:
    """All per-tile and per-cluster clustering artifacts, immutable after build."""

    tile_ids: list[str]
    assignments: np.ndarray        # (n,) cluster id per tile
    centroids: np.ndarray          # (K, d)
    inertia: float
    inertia_history: list[float]
    raw_distance: np.ndarray       # (n,) Euclidean distance to own centroid
    normalized_distance: np.ndarray
    bin_ids: np.ndarray            # (n,) bin within the tile's cluster
    g: int

    @property
    def k(self) -> int:
        return len(self.centroids)

    def cluster_members(self, cluster_id: int) -> np.ndarray:
        self._check_cluster(cluster_id)
        return np.flatnonzero(self.assignments == cluster_id)

    def _check_cluster(self, cluster_id: int) -> None:
        if not 0 <= cluster_id < self.k:
            raise ContractError(f"unknown cluster id {cluster_id}")

    def bins_of(self, cluster_id: int) -> dict[int, list[str]]:
        """Tile ids per bin, each bin ordered by (normalized distance, tile id)."""
        members = self.cluster_members(cluster_id)
        order = sorted(members, key=lambda i: (self.normalized_distance[i], self.tile_ids[i]))
        bins: dict[int, list[str]] = {}
        for i in order:
            bins.setdefault(int(self.bin_ids[i]), []).append(self.tile_ids[i])
        return bins


def build_cluster_model(
    reduced: np.ndarray, tile_ids: list[str], cfg: ClusterConfig
) -> ClusterModel:
    """Cluster reduced embeddings and derive distances, bins, and neighbors."""
    reduced = np.asarray(reduced, dtype=np.float64)
    if len(tile_ids) != reduced.shape[0]:
        raise ContractError(f"{len(tile_ids)} tile ids for {reduced.shape[0]} rows")
    k = choose_cluster_count(reduced.shape[0], cfg)
    assignments, centroids, inertia, history = kmeans(reduced, k, cfg)
    raw = np.linalg.norm(reduced - centroids[assignments], axis=1)
    normalized = np.zeros_like(raw)
    bin_ids = np.zeros(len(tile_ids), dtype=np.int64)
    for c in range(k):
        members = np.flatnonzero(assignments == c)
        if members.size == 0:
            continue
        normalized[members] = normalize_distances(raw[members])
        order = sorted(members, key=lambda i: (normalized[i], tile_ids[i]))
        bin_ids[order] = equal_frequency_bins(normalized[order], cfg.g)
    return ClusterModel(
        tile_ids=list(tile_ids),
        assignments=assignments,
        centroids=centroids,
        inertia=inertia,
        inertia_history=history,
        raw_distance=raw,
        normalized_distance=normalized,
        bin_ids=bin_ids,
        g=cfg.g,
    )


def neighbor_clusters(model: ClusterModel, cluster_id: int, k_nn: int) -> list[int]:
    """Other clusters ranked by centroid distance ascending, ties by id."""
    model._check_cluster(cluster_id)
    if model.k < 2:
        return []
    if k_nn >= model.k:
        warnings.warn(
            f"k_nn={k_nn} >= cluster count {model.k}; truncating to {model.k - 1}",
            stacklevel=2,
        )
        k_nn = model.k - 1
    dists = np.linalg.norm(model.centroids - model.centroids[cluster_id], axis=1)
    others = [c for c in range(model.k) if c != cluster_id]
    others.sort(key=lambda c: (dists[c], c))
    return others[:k_nn]


def sample_clusters(model: ClusterModel, cfg: ClusterConfig) -> dict[int, list[str]]:
    """Per-cluster diversity sample: a fraction of every distance bin."""
    return {
        c: sample_bins(model.bins_of(c), cfg.sample_fraction, [cfg.seed & 0x7FFFFFFF, c])
        for c in range(model.k)
    }


def shannon_admixture(
    groups: list[np.ndarray], variant_count: int
) -> tuple[list[float], float]:
    """Normalized Shannon entropy of variant proportions per group, plus mean.

    0 means a pure group, 1 a uniform mixture; entropy is normalized by
    ln(variant_count) and defined as 0 when only one variant exists. Empty
    groups are excluded from the average with a warning.
    """
    if variant_count < 1:
        raise ContractError(f"variant_count must be >= 1, got {variant_count}")
    per_group: list[float] = []
    for i, labels in enumerate(groups):
        labels = np.asarray(labels)
        if labels.size == 0:
            warnings.warn(f"group {i} is empty; excluded from admixture average", stacklevel=2)
            continue
        if (labels < 0).any() or (labels >= variant_count).any():
            raise ContractError(f"group {i} has labels outside [0, {variant_count})")
        if variant_count == 1:
            per_group.append(0.0)
            continue
        counts = np.bincount(labels, minlength=variant_count).astype(np.float64)
        p = counts[counts > 0] / counts.sum()
        entropy = float(-(p * np.log(p)).sum()) + 0.0  # normalize -0.0
        per_group.append(entropy / math.log(variant_count))
    if not per_group:
        raise ContractError("all groups are empty")
    return per_group, float(np.mean(per_group))


# --- cluster artifact files ---------------------------------------------------

def write_cluster_report(path: str | Path, model: ClusterModel, k_nn: int = 4) -> None:
    """Per-tile rows then '#cluster'-prefixed per-cluster summary lines."""
    lines = ["#tile_id\tcluster\traw_distance\tnormalized_distance\tbin"]
    for i, tile_id in enumerate(model.tile_ids):
        lines.append(
            f"{tile_id}\t{model.assignments[i]}\t{model.raw_distance[i]:.9g}"
            f"\t{model.normalized_distance[i]:.9g}\t{model.bin_ids[i]}"
        )
    total = model.inertia if model.inertia > 0 else 1.0
    for c in range(model.k):
        members = model.cluster_members(c)
        share = float((model.raw_distance[members] ** 2).sum()) / total
        neighbors = neighbor_clusters(model, c, k_nn) if model.k > 1 else []
        lines.append(
            f"#cluster\t{c}\t{members.size}\t{share:.9g}\t" + ",".join(map(str, neighbors))
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ClusterReport:
    """Round-trip of the cluster report file, as the review service consumes it."""

    tile_rows: list[tuple[str, int, float, float, int]]
    cluster_sizes: dict[int, int]
    neighbors: dict[int, list[int]]
    samples: dict[int, list[str]] = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.cluster_sizes)

    def bins_of(self, cluster_id: int) -> dict[int, list[str]]:
        """Tile ids per bin ordered by (normalized distance, tile id)."""
        bins: dict[int, list[str]] = {}
        rows = [r for r in self.tile_rows if r[1] == cluster_id]
        for tile_id, _c, _raw, _norm, bin_id in sorted(rows, key=lambda r: (r[3], r[0])):
            bins.setdefault(bin_id, []).append(tile_id)
        return bins


def read_cluster_report(path: str | Path) -> ClusterReport:
    tile_rows = []
    sizes: dict[int, int] = {}
    neighbors: dict[int, list[int]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("#cluster\t"):
            _, c, size, _share, nbrs = line.split("\t")
            sizes[int(c)] = int(size)
            neighbors[int(c)] = [int(v) for v in nbrs.split(",") if v]
        elif line.startswith("#"):
            continue
        else:
            tile_id, c, raw, norm, bin_id = line.split("\t")
            tile_rows.append((tile_id, int(c), float(raw), float(norm), int(bin_id)))
    return ClusterReport(tile_rows, sizes, neighbors)


def sample_report(report: ClusterReport, fraction: float, seed: int) -> dict[int, list[str]]:
    """Per-cluster bin sampling from a report round-trip; matches sample_clusters."""
    return {
        c: sample_bins(report.bins_of(c), fraction, [seed & 0x7FFFFFFF, c])
        for c in sorted(report.cluster_sizes)
    }


def write_samples(path: str | Path, samples: dict[int, list[str]]) -> None:
    lines = ["#cluster\ttile_id"]
    for c in sorted(samples):
        for tile_id in samples[c]:
            lines.append(f"{c}\t{tile_id}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_samples(path: str | Path) -> dict[int, list[str]]:
    samples: dict[int, list[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        c, tile_id = line.split("\t")
        samples.setdefault(int(c), []).append(tile_id)
    return samples
