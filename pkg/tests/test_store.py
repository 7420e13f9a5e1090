import json

import pytest

from iuq.store import ConfigMismatchError, ManifestError, StoreError, load_run, open_run
from iuq.types import ClaimRecord, TopicItem


def _claims(n, topic="t"):
    return [ClaimRecord(f"c{topic}{i}", "r", topic, i + 1, f"claim {i}") for i in range(n)]


def test_fresh_run_and_resume(tmp_path):
    store = open_run(tmp_path, {"n_samples": 5})
    store.ensure_topic("t")
    assert store.status("t", "generate") == "pending"
    store.set_status("t", "generate", "complete")
    store.save_manifest()
    again = open_run(tmp_path, {"n_samples": 5})
    assert again.status("t", "generate") == "complete"
    assert again.run_id == store.run_id


def test_config_mismatch_refused_unless_override(tmp_path):
    open_run(tmp_path, {"n_samples": 5})
    with pytest.raises(ConfigMismatchError, match="n_samples"):
        open_run(tmp_path, {"n_samples": 3})
    assert open_run(tmp_path, {"n_samples": 3}, override=True).config == {"n_samples": 3}


def test_corrupt_manifest_lists_fields(tmp_path):
    open_run(tmp_path, {})
    data = json.loads((tmp_path / "manifest.json").read_text())
    data["status"] = "oops"
    del data["ledger"]
    (tmp_path / "manifest.json").write_text(json.dumps(data))
    with pytest.raises(ManifestError, match="status, ledger"):
        open_run(tmp_path, {})
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_run(tmp_path)


def test_stage_order_is_monotone(tmp_path):
    store = open_run(tmp_path, {})
    with pytest.raises(StoreError):
        store.set_status("t", "questions", "complete")


def test_write_read_filter_and_dedup(tmp_path):
    store = open_run(tmp_path, {})
    assert store.append_records("claims", _claims(60, "a") + _claims(40, "b")) == 100
    assert len(store.read_records("claims")) == 100
    assert len(store.read_records("claims", where=lambda c: c.topic_id == "b")) == 40
    assert store.append_records("claims", _claims(60, "a")) == 0
    header = json.loads((tmp_path / "claims.jsonl").read_text().splitlines()[0])
    assert header == {"schema": "iuq-records", "stage": "claims", "version": 1}


def test_truncated_line_tolerated(tmp_path):
    store = open_run(tmp_path, {})
    store.append_records("claims", _claims(100))
    path = tmp_path / "claims.jsonl"
    path.write_text(path.read_text()[:-20])
    fresh = load_run(tmp_path)
    assert len(fresh.read_records("claims")) == 99
    assert [d["kind"] for d in fresh.diagnostics] == ["truncated-line"]
    # the next append repairs the file rather than gluing onto the partial line
    fresh.append_records("claims", _claims(100))
    assert len(load_run(tmp_path).read_records("claims")) == 100


def test_topic_states(tmp_path):
    store = open_run(tmp_path, {})
    store.append_records("topics", [TopicItem("t", "p")])
    store.ensure_topic("t")
    assert store.topic_state("t") == "pending"
    store.skip_topic("t", "all refused")
    assert store.topic_state("t") == "skipped"
    store.fail_topic("t", "generate", "boom")
    assert store.topic_state("t") == "failed"
