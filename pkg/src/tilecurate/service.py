"""HTTP review service: browse cluster galleries, label, resolve proposals.

Read endpoints are pure functions of the journal snapshot plus immutable
cluster artifacts; mutations are funneled through a single journal writer
guarded by a lock, and every event is persisted before the response returns.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel

from . import store
from .clustering import ClusterReport, read_cluster_report, read_samples
from .curation import ClassRegistry, ConflictError, CurationState, Journal
from .imgqual import ContractError

PAGE_SIZE = 48
DEFAULT_PORT = 8700


class LabelRequest(BaseModel):
    tissue: str
    reviewer: str
    override: bool = False


class ResolveRequest(BaseModel):
    decision: str
    reviewer: str


class ReviewProject:
    """Immutable cluster artifacts plus the journal-backed curation state."""

    def __init__(self, project_dir: str | Path, cap_per_class: int = 70_000):
        self.dir = Path(project_dir)
        self.cap = cap_per_class
        self.lock = threading.Lock()
        report_path = self.dir / "clusters" / "report.tsv"
        if not report_path.exists():
            raise FileNotFoundError(f"no cluster report at {report_path}")
        self.report: ClusterReport = read_cluster_report(report_path)
        samples_path = self.dir / "clusters" / "samples.tsv"
        self.report.samples = read_samples(samples_path) if samples_path.exists() else {}
        self.tiles_by_cluster_bin: dict[tuple[int, int], list[str]] = {}
        for tile_id, cluster, _raw, norm, bin_id in sorted(
            self.report.tile_rows, key=lambda r: (r[1], r[4], r[3], r[0])
        ):
            self.tiles_by_cluster_bin.setdefault((cluster, bin_id), []).append(tile_id)
        self.tile_paths = {
            tile_id: self.dir / "tiles" / f"{tile_id.replace(':', '_')}.png"
            for tile_id, *_ in self.report.tile_rows
        }
        self.registry = ClassRegistry()
        journal = Journal(self.dir / "journal" / "events.jsonl")
        self.state = CurationState.replay(
            self.report.neighbors, self.report.samples, journal.events(),
            self.registry, journal,
        )
        scatter_path = self.dir / "embeddings" / "projected.dcpp"
        self.scatter = store.read_embeddings(scatter_path) if scatter_path.exists() else None

    def bins_of(self, cluster: int) -> dict[int, int]:
        counts = {}
        for (c, b), tiles in self.tiles_by_cluster_bin.items():
            if c == cluster:
                counts[b] = len(tiles)
        return dict(sorted(counts.items()))

    def summary(self, cluster: int) -> dict:
        bins = self.bins_of(cluster)
        label = self.state.labels.get(cluster)
        return {
            "cluster": cluster,
            "tile_count": self.report.cluster_sizes.get(cluster, 0),
            "bins": [{"bin": b, "count": n} for b, n in bins.items()],
            "label": None if label is None else {
                "tissue": label.tissue, "source": label.source, "reviewer": label.reviewer,
            },
            "neighbors": self.report.neighbors.get(cluster, []),
            "representatives": [
                self.tiles_by_cluster_bin[(cluster, b)][0] for b in bins
                if self.tiles_by_cluster_bin.get((cluster, b))
            ],
        }


def _proposal_json(p) -> dict:
    return {
        "id": p.proposal_id,
        "source_cluster": p.source_cluster,
        "target_cluster": p.target_cluster,
        "tissue": p.tissue,
        "status": p.status,
    }


def create_app(project_dir: str | Path | None, cap_per_class: int = 70_000) -> FastAPI:
    app = FastAPI(title="tile curation review service")
    project: ReviewProject | None = None
    if project_dir is not None:
        project = ReviewProject(project_dir, cap_per_class)

    def require_project() -> ReviewProject:
        if project is None:
            raise HTTPException(status_code=409, detail="no project loaded")
        return project

    @app.get("/clusters")
    def list_clusters(
        filter: str | None = Query(default=None), tissue: str | None = Query(default=None)
    ):
        proj = require_project()
        out = []
        for cluster in sorted(proj.report.cluster_sizes):
            label = proj.state.labels.get(cluster)
            if filter == "labeled" and label is None:
                continue
            if filter == "unlabeled" and label is not None:
                continue
            if tissue is not None and (label is None or label.tissue != tissue):
                continue
            out.append(proj.summary(cluster))
        return {"clusters": out}

    @app.get("/clusters/{cluster_id}")
    def get_cluster(cluster_id: int):
        proj = require_project()
        if cluster_id not in proj.report.cluster_sizes:
            raise HTTPException(status_code=404, detail=f"unknown cluster {cluster_id}")
        return proj.summary(cluster_id)

    @app.get("/clusters/{cluster_id}/tiles")
    def cluster_tiles(cluster_id: int, bin: int = Query(default=0), page: int = Query(default=0)):
        proj = require_project()
        if cluster_id not in proj.report.cluster_sizes:
            raise HTTPException(status_code=404, detail=f"unknown cluster {cluster_id}")
        tiles = proj.tiles_by_cluster_bin.get((cluster_id, bin), [])
        start = page * PAGE_SIZE
        return {
            "cluster": cluster_id,
            "bin": bin,
            "page": page,
            "total": len(tiles),
            "tiles": tiles[start : start + PAGE_SIZE],
        }

    @app.post("/clusters/{cluster_id}/label")
    def submit_label(cluster_id: int, request: LabelRequest):
        proj = require_project()
        with proj.lock:
            try:
                created = proj.state.assign_cluster_label(
                    cluster_id, request.tissue, request.reviewer, request.override
                )
            except ConflictError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except ContractError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        return {"summary": proj.summary(cluster_id), "proposals": [_proposal_json(p) for p in created]}

    @app.get("/proposals")
    def list_proposals(status: str | None = Query(default=None)):
        proj = require_project()
        proposals = sorted(proj.state.proposals.values(), key=lambda p: p.proposal_id)
        if status is not None:
            proposals = [p for p in proposals if p.status == status]
        return {"proposals": [_proposal_json(p) for p in proposals]}

    @app.post("/proposals/{proposal_id}/resolve")
    def resolve(proposal_id: int, request: ResolveRequest):
        proj = require_project()
        with proj.lock:
            try:
                created = proj.state.resolve_proposal(proposal_id, request.decision, request.reviewer)
            except ConflictError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            except ContractError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        return {
            "proposal": _proposal_json(proj.state.proposals[proposal_id]),
            "new_proposals": [_proposal_json(p) for p in created],
        }

    @app.get("/progress")
    def progress():
        proj = require_project()
        tallies = proj.state.tallies()
        return {
            "cap_per_class": proj.cap,
            "classes": [
                {"tissue": name, "verified": tallies.get(name, 0),
                 "fraction": tallies.get(name, 0) / proj.cap}
                for name in proj.registry.classes
            ],
        }

    @app.get("/scatter")
    def scatter():
        proj = require_project()
        if proj.scatter is None:
            raise HTTPException(status_code=409, detail="no 2-D projection in this project")
        clusters = {tile_id: c for tile_id, c, *_ in proj.report.tile_rows}
        points = [
            {"tile_id": tid, "x": float(x), "y": float(y), "cluster": clusters.get(tid, -1)}
            for tid, (x, y) in zip(proj.scatter.tile_ids or [], proj.scatter.data)
        ]
        return {"points": points}

    @app.get("/tiles/{tile_id}/image")
    def tile_image(tile_id: str):
        proj = require_project()
        path = proj.tile_paths.get(tile_id)
        if path is None or not path.exists():
            raise HTTPException(status_code=404, detail=f"no image for tile {tile_id}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/classes")
    def classes():
        proj = require_project()
        return {
            "classes": [
                {"name": name, "color": list(proj.registry.color(name))}
                for name in proj.registry.classes
            ]
        }

    return app
