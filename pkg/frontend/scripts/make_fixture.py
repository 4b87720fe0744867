#!/usr/bin/env python3
"""Build the on-disk fixture project the UI integration tests run against.

Usage: python3 scripts/make_fixture.py [out_dir]
Writes cluster artifacts, sampled tiles, tile PNGs, and a fixture_meta.json
with the per-cluster sample counts the tests assert tallies against.
"""

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from tilecurate.clustering import (
    ClusterConfig,
    build_cluster_model,
    neighbor_clusters,
    sample_clusters,
    write_cluster_report,
    write_samples,
)
from tilecurate.features import EmbeddingMatrix, project_2d
from tilecurate.store import write_embeddings


def main(out_dir: Path) -> None:
    for sub in ("tiles", "embeddings", "clusters", "journal"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    gen = np.random.default_rng(11)
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [8.0, 8.0]])
    rows, tile_ids = [], []
    for c, center in enumerate(centers):
        for i in range(10):
            rows.append(center + gen.normal(0, 0.3, 2))
            tile_ids.append(f"slide:{c * 2560 + i * 256}:0")
    data = np.array(rows)
    cfg = ClusterConfig(K=4, g=5, sample_fraction=0.3, seed=3, k_nn=2)
    model = build_cluster_model(data, tile_ids, cfg)
    write_cluster_report(out_dir / "clusters" / "report.tsv", model, k_nn=cfg.k_nn)
    samples = sample_clusters(model, cfg)
    write_samples(out_dir / "clusters" / "samples.tsv", samples)

    reduced = EmbeddingMatrix(data.astype(np.float32), "reduced", tile_ids)
    write_embeddings(out_dir / "embeddings" / "reduced.dcpp", reduced)
    write_embeddings(out_dir / "embeddings" / "projected.dcpp", project_2d(reduced))

    img_rng = np.random.default_rng(0)
    for tile_id in tile_ids:
        arr = (img_rng.random((16, 16, 3)) * 255).astype(np.uint8)
        Image.fromarray(arr).save(out_dir / "tiles" / f"{tile_id.replace(':', '_')}.png")

    meta = {
        "sample_counts": {str(c): len(ids) for c, ids in samples.items()},
        "neighbors": {str(c): neighbor_clusters(model, c, cfg.k_nn) for c in range(model.k)},
    }
    (out_dir / "fixture_meta.json").write_text(json.dumps(meta, indent=2))
    print(f"fixture project written to {out_dir}")


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "fixture"
    main(target)
