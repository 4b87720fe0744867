import json

import numpy as np
import pytest

from tilecurate.curation import (
    ClassRegistry,
    ConflictError,
    CurationState,
    Journal,
    assemble_dataset,
    materialize_dataset,
    write_dataset_manifest,
)
from tilecurate.extract import ConfigurationError, TileRecord
from tilecurate.imgqual import ContractError


def make_state(journal=None):
    # 4 clusters in a line: 0 - 1 - 2 - 3; two nearest neighbors each
    neighbors = {0: [1, 2], 1: [0, 2], 2: [1, 3], 3: [2, 1]}
    samples = {
        0: ["s:0:0", "s:256:0"],
        1: ["s:512:0", "s:768:0", "s:1024:0"],
        2: ["s:1280:0"],
        3: ["s:1536:0", "s:1792:0"],
    }
    return CurationState(neighbors, samples, journal=journal)


def record_for(tile_id):
    _, x, y = tile_id.split(":")
    return TileRecord("s", tile_id, int(x), int(y), 256, 256, 1.0, f"s_{x}_{y}.png")


class TestLabeling:
    def test_label_creates_proposals_in_proximity_order(self):
        state = make_state()
        created = state.assign_cluster_label(0, "TUM", "alice")
        assert [p.target_cluster for p in created] == [1, 2]
        assert all(p.tissue == "TUM" and p.status == "pending" for p in created)
        assert state.labels[0].source == "human"

    def test_no_proposals_when_neighbors_labeled(self):
        state = make_state()
        state.assign_cluster_label(1, "NOR", "alice")
        state.assign_cluster_label(2, "TUM", "alice")
        created = state.assign_cluster_label(0, "TUM", "alice")
        assert created == []

    def test_relabel_without_override_conflicts(self):
        state = make_state()
        state.assign_cluster_label(0, "TUM", "alice")
        before = dict(state.labels)
        with pytest.raises(ConflictError, match="TUM"):
            state.assign_cluster_label(0, "NOR", "bob")
        assert state.labels == before

    def test_relabel_with_override(self):
        state = make_state()
        state.assign_cluster_label(0, "TUM", "alice")
        state.assign_cluster_label(0, "NOR", "bob", override=True)
        assert state.labels[0].tissue == "NOR"

    def test_unknown_cluster_or_class(self):
        state = make_state()
        with pytest.raises(ContractError):
            state.assign_cluster_label(99, "TUM", "alice")
        with pytest.raises(ContractError, match="registered classes"):
            state.assign_cluster_label(0, "XXX", "alice")


class TestProposals:
    def test_accept_labels_target_and_extends_frontier(self):
        state = make_state()
        created = state.assign_cluster_label(0, "TUM", "alice")
        follow = state.resolve_proposal(created[0].proposal_id, "accept", "bob")
        assert state.labels[1].tissue == "TUM"
        assert state.labels[1].source == "propagated-accepted"
        # cluster 1's unlabeled neighbor is 2 (0 is labeled)
        assert [p.target_cluster for p in follow] == [2]

    def test_reject_keeps_cluster_unlabeled(self):
        state = make_state()
        created = state.assign_cluster_label(0, "TUM", "alice")
        follow = state.resolve_proposal(created[0].proposal_id, "reject", "bob")
        assert follow == []
        assert 1 not in state.labels
        assert state.proposals[created[0].proposal_id].status == "rejected"

    def test_double_resolution_is_idempotency_error(self):
        state = make_state()
        created = state.assign_cluster_label(0, "TUM", "alice")
        state.resolve_proposal(created[0].proposal_id, "accept", "bob")
        with pytest.raises(ConflictError, match="accepted"):
            state.resolve_proposal(created[0].proposal_id, "reject", "carol")

    def test_accept_stale_proposal_conflicts(self):
        state = make_state()
        created = state.assign_cluster_label(0, "TUM", "alice")
        target = created[0].target_cluster
        state.assign_cluster_label(target, "NOR", "carol")
        with pytest.raises(ConflictError):
            state.resolve_proposal(created[0].proposal_id, "accept", "bob")

    def test_propagation_chains_terminate_at_human_label(self):
        state = make_state()
        created = state.assign_cluster_label(0, "TUM", "alice")
        follow = state.resolve_proposal(created[0].proposal_id, "accept", "bob")
        state.resolve_proposal(follow[0].proposal_id, "accept", "bob")
        state.verify_propagation_chains()


class TestTallies:
    def test_tallies_track_sampled_counts(self):
        state = make_state()
        assert sum(state.tallies().values()) == 0
        state.assign_cluster_label(0, "TUM", "alice")
        assert state.tallies()["TUM"] == 2
        created = state.assign_cluster_label(1, "TUM", "alice")
        assert state.tallies()["TUM"] == 5
        assert state.tallies()["NOR"] == 0


class TestJournal:
    def test_replay_reproduces_state_after_every_prefix(self, tmp_path):
        journal = Journal(tmp_path / "events.jsonl")
        state = make_state(journal)
        p = state.assign_cluster_label(0, "TUM", "alice")
        state.resolve_proposal(p[0].proposal_id, "accept", "bob")
        state.assign_cluster_label(3, "NOR", "alice", override=False)
        events = journal.events()
        assert len(events) == 3
        for prefix in range(len(events) + 1):
            partial = CurationState.replay(
                state.neighbors, state.samples, events[:prefix]
            )
            full = make_state()
            for event in events[:prefix]:
                full.apply_event(event)
            assert partial.labels == full.labels
            assert partial.proposals == full.proposals
            assert partial.tallies() == full.tallies()
        final = CurationState.replay(state.neighbors, state.samples, events)
        assert final.labels == state.labels
        assert final.proposals == state.proposals

    def test_torn_trailing_record_dropped(self, tmp_path):
        journal = Journal(tmp_path / "events.jsonl")
        state = make_state(journal)
        state.assign_cluster_label(0, "TUM", "alice")
        with open(journal.path, "a", encoding="utf-8") as fh:
            fh.write('{"seq": 1, "type": "label", "cluster"')  # crash mid-write
        with pytest.warns(UserWarning, match="torn"):
            events = journal.events()
        assert len(events) == 1
        replayed = CurationState.replay(state.neighbors, state.samples, events)
        assert replayed.labels == state.labels

    def test_corrupt_interior_record_raises(self, tmp_path):
        journal = Journal(tmp_path / "events.jsonl")
        state = make_state(journal)
        state.assign_cluster_label(0, "TUM", "alice")
        raw = journal.path.read_text()
        journal.path.write_text("garbage\n" + raw)
        with pytest.raises(ConfigurationError, match="corrupt"):
            journal.events()

    def test_out_of_order_replay_rejected(self, tmp_path):
        journal = Journal(tmp_path / "events.jsonl")
        state = make_state(journal)
        state.assign_cluster_label(0, "TUM", "alice")
        events = journal.events()
        events[0]["seq"] = 5
        with pytest.raises(ConfigurationError, match="seq"):
            CurationState.replay(state.neighbors, state.samples, events)


class TestAssembly:
    def test_cap_enforced_reproducibly(self):
        samples = {0: [f"s:{i}:0" for i in range(100)]}
        state = CurationState({0: []}, samples)
        state.assign_cluster_label(0, "TUM", "alice")
        records = {t: record_for(t) for t in samples[0]}
        a = assemble_dataset(state, records, cap_per_class=70, seed=5)
        b = assemble_dataset(state, records, cap_per_class=70, seed=5)
        assert len(a.per_class["TUM"]) == 70
        assert [r.tile_id for r in a.per_class["TUM"]] == [r.tile_id for r in b.per_class["TUM"]]
        c = assemble_dataset(state, records, cap_per_class=70, seed=6)
        assert [r.tile_id for r in c.per_class["TUM"]] != [r.tile_id for r in a.per_class["TUM"]]

    def test_shortfall_warns_and_keeps_all(self):
        state = make_state()
        state.assign_cluster_label(0, "TUM", "alice")
        records = {t: record_for(t) for t in state.samples[0]}
        with pytest.warns(UserWarning, match="cap"):
            manifest = assemble_dataset(state, records, cap_per_class=70_000, seed=0)
        assert len(manifest.per_class["TUM"]) == 2

    def test_same_class_duplicate_appears_once(self):
        samples = {0: ["s:0:0", "s:256:0"], 1: ["s:256:0", "s:512:0"]}
        state = CurationState({0: [], 1: []}, samples)
        state.assign_cluster_label(0, "TUM", "alice")
        state.assign_cluster_label(1, "TUM", "alice")
        records = {t: record_for(t) for t in {"s:0:0", "s:256:0", "s:512:0"}}
        with pytest.warns(UserWarning):
            manifest = assemble_dataset(state, records, cap_per_class=100, seed=0)
        ids = [r.tile_id for r in manifest.per_class["TUM"]]
        assert sorted(ids) == ["s:0:0", "s:256:0", "s:512:0"]

    def test_global_uniqueness_across_classes(self):
        samples = {0: ["s:0:0", "s:256:0"], 1: ["s:256:0"]}
        state = CurationState({0: [], 1: []}, samples)
        state.assign_cluster_label(0, "TUM", "alice")
        state.assign_cluster_label(1, "NOR", "alice")
        records = {t: record_for(t) for t in {"s:0:0", "s:256:0"}}
        with pytest.warns(UserWarning):
            manifest = assemble_dataset(state, records, cap_per_class=100, seed=0)
        all_ids = [r.tile_id for recs in manifest.per_class.values() for r in recs]
        assert len(all_ids) == len(set(all_ids))

    def test_no_labels_is_configuration_error(self):
        state = make_state()
        with pytest.raises(ConfigurationError):
            assemble_dataset(state, {}, cap_per_class=10, seed=0)

    def test_manifest_file_and_materialize(self, tmp_path):
        state = make_state()
        state.assign_cluster_label(0, "TUM", "alice")
        records = {t: record_for(t) for t in state.samples[0]}
        with pytest.warns(UserWarning):
            manifest = assemble_dataset(state, records, cap_per_class=100, seed=0)
        path = tmp_path / "manifest.tsv"
        write_dataset_manifest(path, manifest)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#class\t")
        assert any(line.startswith("TUM\t") for line in lines)
        tiles_dir = tmp_path / "tiles"
        tiles_dir.mkdir()
        for r in records.values():
            (tiles_dir / r.path).write_bytes(b"png-bytes")
        materialize_dataset(manifest, tiles_dir, tmp_path / "dataset")
        for r in manifest.per_class["TUM"]:
            assert (tmp_path / "dataset" / "TUM" / r.path).read_bytes() == b"png-bytes"


class TestRegistry:
    def test_nine_canonical_classes(self):
        registry = ClassRegistry()
        assert registry.classes == ("ADI", "LYM", "MUS", "FCT", "MUC", "NCS", "BLD", "TUM", "NOR")

    def test_unregistered_class_is_black(self):
        assert ClassRegistry().color("STR") == (0, 0, 0)

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigurationError):
            ClassRegistry(classes=("TUM", "TUM"))
