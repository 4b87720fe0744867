import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthdata import blob_tiles, planted_slide  # noqa: E402


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance.py" in report.nodeid:
                name = report.nodeid.split("::")[-1].replace("test_", "", 1)
                rows.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, outcome in rows:
            terminalreporter.write_line(f"{outcome}  {name}")


@pytest.fixture(scope="session")
def small_blob_tiles():
    return blob_tiles(n=8, size=256, seed=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def fixture_cluster_project(tmp_path_factory):
    """Minimal on-disk project: 4 clusters, bins, samples, tile PNGs."""
    from PIL import Image

    from tilecurate.clustering import (
        ClusterConfig,
        build_cluster_model,
        sample_clusters,
        write_cluster_report,
        write_samples,
    )
    from tilecurate.features import EmbeddingMatrix
    from tilecurate.store import write_embeddings

    root = tmp_path_factory.mktemp("project")
    for sub in ("tiles", "embeddings", "clusters", "journal"):
        (root / sub).mkdir()

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
    write_cluster_report(root / "clusters" / "report.tsv", model, k_nn=cfg.k_nn)
    samples = sample_clusters(model, cfg)
    write_samples(root / "clusters" / "samples.tsv", samples)

    reduced = EmbeddingMatrix(data.astype(np.float32), "reduced", tile_ids)
    write_embeddings(root / "embeddings" / "reduced.dcpp", reduced)
    from tilecurate.features import project_2d

    write_embeddings(root / "embeddings" / "projected.dcpp", project_2d(reduced))

    img_rng = np.random.default_rng(0)
    for tile_id in tile_ids:
        arr = (img_rng.random((16, 16, 3)) * 255).astype(np.uint8)
        Image.fromarray(arr).save(root / "tiles" / f"{tile_id.replace(':', '_')}.png")
    return root
