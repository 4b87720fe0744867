"""Labeling journal, propagation proposals, and final dataset assembly.

State is event-sourced: every mutation appends exactly one self-describing
record to an append-only journal, and replaying the journal reproduces the
in-memory state after any event prefix. Labels propagate one hop at a time:
labeling a cluster proposes the same label for its nearest unlabeled
neighbors, and each human acceptance extends the frontier by one hop.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .extract import ConfigurationError, TileRecord
from .imgqual import ContractError

DEFAULT_CAP_PER_CLASS = 70_000

# canonical nine-class vocabulary with display colors (RGB)
DEFAULT_CLASSES = {
    "ADI": (255, 221, 85),
    "LYM": (65, 105, 225),
    "MUS": (205, 92, 92),
    "FCT": (144, 190, 109),
    "MUC": (135, 206, 235),
    "NCS": (139, 90, 43),
    "BLD": (220, 20, 60),
    "TUM": (148, 0, 211),
    "NOR": (255, 160, 122),
}
UNREGISTERED_COLOR = (0, 0, 0)  # classes outside the registry render black


class ConflictError(RuntimeError):
    """The mutation conflicts with existing journal state."""


@dataclass(frozen=True)
class ClassRegistry:
    classes: tuple[str, ...] = tuple(DEFAULT_CLASSES)
    colors: dict = field(default_factory=lambda: dict(DEFAULT_CLASSES))

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("class names must be unique")

    def __contains__(self, name: str) -> bool:
        return name in self.classes

    def color(self, name: str) -> tuple[int, int, int]:
        return tuple(self.colors.get(name, UNREGISTERED_COLOR))


@dataclass
class ClusterLabel:
    tissue: str
    source: str            # human | propagated-accepted
    reviewer: str


@dataclass
class Proposal:
    proposal_id: int
    source_cluster: int
    target_cluster: int
    tissue: str
    status: str = "pending"  # pending | accepted | rejected
    resolved_by: str | None = None


class Journal:
    """Append-only newline-delimited JSON event log.

    Each record: {"seq": n, "ts": unix_time, "type": ..., ...payload}. A torn
    final line (crash mid-write) is dropped on replay: the event was never
    acknowledged, so it never happened.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event_type: str, payload: dict, seq: int) -> dict:
        event = {"seq": seq, "ts": time.time(), "type": event_type, **payload}
        line = json.dumps(event, sort_keys=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
        return event

    def events(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        lines = self.path.read_text(encoding="utf-8").split("\n")
        for i, line in enumerate(lines):
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    warnings.warn(f"dropping torn trailing journal record in {self.path}")
                    break
                raise ConfigurationError(f"{self.path}: corrupt journal record at line {i + 1}")
        return out


class CurationState:
    """Cluster labels, proposals, and per-class tallies over one cluster model.

    The state is a pure function of (cluster artifact, journal events): every
    mutating method appends one event and then applies it, and ``replay``
    rebuilds identical state from the log.
    """

    def __init__(
        self,
        neighbors: dict[int, list[int]],
        samples: dict[int, list[str]],
        registry: ClassRegistry | None = None,
        journal: Journal | None = None,
    ):
        self.neighbors = neighbors
        self.samples = samples
        self.registry = registry or ClassRegistry()
        self.journal = journal
        self.labels: dict[int, ClusterLabel] = {}
        self.proposals: dict[int, Proposal] = {}
        self.next_seq = 0
        self.next_proposal_id = 0

    # -- queries ------------------------------------------------------------

    def cluster_ids(self) -> list[int]:
        return sorted(self.neighbors)

    def tallies(self) -> dict[str, int]:
        counts = {name: 0 for name in self.registry.classes}
        for cluster, label in self.labels.items():
            counts[label.tissue] = counts.get(label.tissue, 0) + len(self.samples.get(cluster, []))
        return counts

    def pending_proposals(self) -> list[Proposal]:
        return [p for p in sorted(self.proposals.values(), key=lambda p: p.proposal_id)
                if p.status == "pending"]

    # -- mutations ------------------------------------------------------------

    def _record(self, event_type: str, payload: dict) -> None:
        if self.journal is not None:
            self.journal.append(event_type, payload, self.next_seq)
        self.next_seq += 1

    def assign_cluster_label(
        self, cluster_id: int, tissue: str, reviewer: str, override: bool = False
    ) -> list[Proposal]:
        """Record a human label and propose it for unlabeled neighbor clusters.

        Returns the created proposals in centroid-proximity order. Relabeling
        a human-labeled cluster requires override.
        """
        if cluster_id not in self.neighbors:
            raise ContractError(f"unknown cluster {cluster_id}")
        if tissue not in self.registry:
            raise ContractError(
                f"unknown class {tissue!r}; registered classes: {list(self.registry.classes)}"
            )
        existing = self.labels.get(cluster_id)
        if existing is not None and existing.source == "human" and not override:
            raise ConflictError(
                f"cluster {cluster_id} already labeled {existing.tissue} by {existing.reviewer}; "
                "pass override to relabel"
            )
        self._record(
            "label",
            {"cluster": cluster_id, "tissue": tissue, "reviewer": reviewer, "override": override},
        )
        return self._apply_label(cluster_id, tissue, reviewer, "human")

    def resolve_proposal(self, proposal_id: int, decision: str, reviewer: str) -> list[Proposal]:
        """Accept or reject one pending proposal.

        Accepting labels the target (source: propagated-accepted) and creates
        new pending proposals for the target's unlabeled neighbors. Returns
        the new proposals (empty on reject).
        """
        if decision not in ("accept", "reject"):
            raise ContractError(f"decision must be accept or reject, got {decision!r}")
        proposal = self.proposals.get(proposal_id)
        if proposal is None:
            raise ContractError(f"unknown proposal {proposal_id}")
        if proposal.status != "pending":
            raise ConflictError(
                f"proposal {proposal_id} already {proposal.status} by {proposal.resolved_by}"
            )
        if decision == "accept" and proposal.target_cluster in self.labels:
            raise ConflictError(
                f"cluster {proposal.target_cluster} was labeled after this proposal was created"
            )
        self._record("resolve", {"proposal": proposal_id, "decision": decision, "reviewer": reviewer})
        return self._apply_resolve(proposal_id, decision, reviewer)

    # -- event application (shared by live mutation and replay) ---------------

    def _apply_label(
        self, cluster_id: int, tissue: str, reviewer: str, source: str
    ) -> list[Proposal]:
        self.labels[cluster_id] = ClusterLabel(tissue, source, reviewer)
        created = []
        for neighbor in self.neighbors.get(cluster_id, []):
            if neighbor in self.labels:
                continue
            proposal = Proposal(self.next_proposal_id, cluster_id, neighbor, tissue)
            self.next_proposal_id += 1
            self.proposals[proposal.proposal_id] = proposal
            created.append(proposal)
        return created

    def _apply_resolve(self, proposal_id: int, decision: str, reviewer: str) -> list[Proposal]:
        proposal = self.proposals[proposal_id]
        proposal.resolved_by = reviewer
        if decision == "reject":
            proposal.status = "rejected"
            return []
        proposal.status = "accepted"
        return self._apply_label(
            proposal.target_cluster, proposal.tissue, reviewer, "propagated-accepted"
        )

    def apply_event(self, event: dict) -> None:
        if event["seq"] != self.next_seq:
            raise ConfigurationError(
                f"journal replay out of order: expected seq {self.next_seq}, got {event['seq']}"
            )
        self.next_seq += 1
        if event["type"] == "label":
            self._apply_label(event["cluster"], event["tissue"], event["reviewer"], "human")
        elif event["type"] == "resolve":
            self._apply_resolve(event["proposal"], event["decision"], event["reviewer"])
        else:
            raise ConfigurationError(f"unknown journal event type {event['type']!r}")

    @classmethod
    def replay(
        cls,
        neighbors: dict[int, list[int]],
        samples: dict[int, list[str]],
        events: list[dict],
        registry: ClassRegistry | None = None,
        journal: Journal | None = None,
    ) -> "CurationState":
        state = cls(neighbors, samples, registry)
        for event in events:
            state.apply_event(event)
        state.journal = journal  # attach after replay so apply does not re-log
        return state

    def verify_propagation_chains(self) -> None:
        """Every propagated label must chain through accepted proposals to a human label."""
        for cluster, label in self.labels.items():
            seen = set()
            current = cluster
            while self.labels[current].source != "human":
                if current in seen:
                    raise ConfigurationError(f"propagation cycle at cluster {current}")
                seen.add(current)
                accepted = [
                    p for p in self.proposals.values()
                    if p.target_cluster == current and p.status == "accepted"
                ]
                if not accepted:
                    raise ConfigurationError(
                        f"cluster {current} labeled {label.tissue} without an accepted proposal"
                    )
                current = accepted[0].source_cluster


# --- dataset assembly ---------------------------------------------------------

@dataclass
class DatasetManifest:
    per_class: dict[str, list[TileRecord]]
    cap_per_class: int
    seed: int
    checksum: str

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.per_class.values())


def assemble_dataset(
    state: CurationState,
    tile_records: dict[str, TileRecord],
    cap_per_class: int = DEFAULT_CAP_PER_CLASS,
    seed: int = 0,
) -> DatasetManifest:
    """Collect sampled tiles of labeled clusters into a class-capped manifest.

    Per class: union of its labeled clusters' samples, deduplicated; above the
    cap, a seeded uniform subsample of exactly cap tiles. Classes are claimed
    in registry order, so a tile sampled under two classes lands in the first;
    no tile id ever appears twice in the manifest.
    """
    if not state.labels:
        raise ConfigurationError("no labeled clusters; label at least one cluster first")
    claimed: set[str] = set()
    per_class: dict[str, list[TileRecord]] = {}
    for class_index, tissue in enumerate(state.registry.classes):
        clusters = sorted(c for c, lab in state.labels.items() if lab.tissue == tissue)
        if not clusters:
            continue
        pool: list[str] = []
        for cluster in clusters:
            for tile_id in state.samples.get(cluster, []):
                if tile_id not in claimed and tile_id not in pool:
                    pool.append(tile_id)
        if len(pool) > cap_per_class:
            rng = np.random.default_rng([seed & 0x7FFFFFFF, class_index])
            keep = rng.choice(len(pool), size=cap_per_class, replace=False)
            pool = [pool[i] for i in sorted(keep)]
        elif len(pool) < cap_per_class:
            warnings.warn(
                f"class {tissue}: only {len(pool)} tiles available against cap {cap_per_class}"
            )
        claimed.update(pool)
        missing = [t for t in pool if t not in tile_records]
        if missing:
            raise ConfigurationError(f"sampled tiles missing from the tile manifest: {missing[:5]}")
        per_class[tissue] = [tile_records[t] for t in pool]
    digest = hashlib.sha256()
    for tissue in sorted(per_class):
        for record in per_class[tissue]:
            digest.update(f"{tissue}\t{record.tile_id}\n".encode())
    return DatasetManifest(per_class, cap_per_class, seed, digest.hexdigest())


DATASET_COLUMNS = ("class",) + tuple(
    ["slide_id", "tile_id", "x", "y", "width", "height", "tissue_fraction", "path"]
)


def write_dataset_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    lines = [
        "#" + "\t".join(DATASET_COLUMNS),
        f"#checksum={manifest.checksum}\tcap={manifest.cap_per_class}\tseed={manifest.seed}",
    ]
    for tissue in manifest.per_class:
        for r in manifest.per_class[tissue]:
            lines.append(
                "\t".join(
                    [tissue, r.slide_id, r.tile_id, str(r.x), str(r.y), str(r.width),
                     str(r.height), f"{r.tissue_fraction:.6f}", r.path]
                )
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def materialize_dataset(
    manifest: DatasetManifest, tiles_dir: str | Path, out_dir: str | Path
) -> None:
    """Copy tile images into one folder per class."""
    tiles_dir, out_dir = Path(tiles_dir), Path(out_dir)
    for tissue, records in manifest.per_class.items():
        class_dir = out_dir / tissue
        class_dir.mkdir(parents=True, exist_ok=True)
        for r in records:
            src = tiles_dir / r.path
            (class_dir / Path(r.path).name).write_bytes(src.read_bytes())
