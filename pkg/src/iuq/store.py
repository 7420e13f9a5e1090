"""Append-only run store.

Layout of a run directory::

    manifest.json          config snapshot, per-topic stage status, ledger
    <stage>.jsonl          one file per record stage, header line first
    diagnostics.jsonl      non-fatal problems met while running
    cache/completions.jsonl
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

from .types import SCHEMA_VERSION, STAGE_RECORDS, Record, RunRecords

log = logging.getLogger(__name__)

PIPELINE_STAGES = ("generate", "decompose", "questions", "answers", "contradiction", "entailment")
STATUSES = ("pending", "complete", "failed", "skipped")


class StoreError(RuntimeError):
    pass


class ConfigMismatchError(StoreError):
    pass


class ManifestError(StoreError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def config_fingerprint(config: dict[str, Any]) -> str:
    return hashlib.sha1(_dumps(config).encode()).hexdigest()[:12]


class RunStore:
    """Handle on one run directory. Single writer, any number of readers."""

    MANIFEST = "manifest.json"

    def __init__(self, path: Path, manifest: dict[str, Any]):
        self.path = Path(path)
        self.manifest = manifest
        self._lock = threading.Lock()
        self._ids: dict[str, set[str]] = {}
        self.diagnostics: list[dict[str, Any]] = []

    # manifest ---------------------------------------------------------

    @property
    def config(self) -> dict[str, Any]:
        return self.manifest["config"]

    @property
    def run_id(self) -> str:
        return self.manifest["run_id"]

    def save_manifest(self) -> None:
        self.manifest["updated"] = _now()
        tmp = self.path / (self.MANIFEST + ".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        os.replace(tmp, self.path / self.MANIFEST)

    def ensure_topic(self, topic_id: str) -> None:
        status = self.manifest["status"]
        if topic_id not in status:
            status[topic_id] = {stage: "pending" for stage in PIPELINE_STAGES}

    def status(self, topic_id: str, stage: str) -> str:
        return self.manifest["status"].get(topic_id, {}).get(stage, "pending")

    def set_status(self, topic_id: str, stage: str, status: str, reason: str = "") -> None:
        if status not in STATUSES:
            raise ValueError(f"bad status {status!r}")
        self.ensure_topic(topic_id)
        if status == "complete":
            prior = PIPELINE_STAGES[: PIPELINE_STAGES.index(stage)]
            for p in prior:
                if self.status(topic_id, p) not in ("complete", "skipped"):
                    raise StoreError(f"{topic_id}: cannot complete {stage} before {p}")
        self.manifest["status"][topic_id][stage] = status
        if reason:
            self.manifest.setdefault("reasons", {})[topic_id] = reason

    def skip_topic(self, topic_id: str, reason: str) -> None:
        self.ensure_topic(topic_id)
        for stage in PIPELINE_STAGES:
            if self.status(topic_id, stage) == "pending":
                self.manifest["status"][topic_id][stage] = "skipped"
        self.manifest.setdefault("reasons", {})[topic_id] = reason

    def fail_topic(self, topic_id: str, stage: str, reason: str) -> None:
        self.ensure_topic(topic_id)
        self.manifest["status"][topic_id][stage] = "failed"
        self.manifest.setdefault("reasons", {})[topic_id] = reason

    def topic_state(self, topic_id: str) -> str:
        """One of pending / complete / failed / skipped for the whole topic."""
        stages = self.manifest["status"].get(topic_id)
        if not stages:
            return "pending"
        values = set(stages.values())
        if "failed" in values:
            return "failed"
        if "pending" in values:
            return "pending"
        return "skipped" if "skipped" in values else "complete"

    # records ----------------------------------------------------------

    def stage_path(self, stage: str) -> Path:
        if stage not in STAGE_RECORDS:
            raise StoreError(f"unknown stage {stage!r}")
        return self.path / f"{stage}.jsonl"

    def _known_ids(self, stage: str) -> set[str]:
        if stage not in self._ids:
            self._ids[stage] = {r.id for r in self.read_records(stage)}
        return self._ids[stage]

    def append_records(self, stage: str, records: Iterable[Record]) -> int:
        """Append a batch in one write; records whose id is already stored are skipped."""
        path = self.stage_path(stage)
        with self._lock:
            known = self._known_ids(stage)
            lines = []
            for rec in records:
                if rec.id in known:
                    continue
                known.add(rec.id)
                lines.append(_dumps(rec.to_dict()))
            if not lines:
                return 0
            if path.exists():
                _trim_partial_line(path)
            new_file = not path.exists() or path.stat().st_size == 0
            with path.open("a", encoding="utf-8") as fh:
                if new_file:
                    fh.write(_dumps({"schema": "iuq-records", "stage": stage,
                                     "version": SCHEMA_VERSION}) + "\n")
                fh.write("\n".join(lines) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            return len(lines)

    def read_records(self, stage: str, where: Optional[Callable[[Record], bool]] = None) -> list:
        path = self.stage_path(stage)
        if not path.exists():
            return []
        cls = STAGE_RECORDS[stage]
        text = path.read_text(encoding="utf-8")
        lines = text.split("\n")
        complete = lines[:-1]
        if lines[-1]:
            self.diagnostic("truncated-line", f"{path.name}: ignored partial trailing line")
        out = []
        for i, line in enumerate(complete):
            if not line:
                continue
            data = json.loads(line)
            if i == 0 and data.get("schema") == "iuq-records":
                if data.get("version") != SCHEMA_VERSION:
                    raise StoreError(f"{path.name}: schema version {data.get('version')}")
                continue
            rec = cls.from_dict(data)
            if where is None or where(rec):
                out.append(rec)
        return out

    def replace_records(self, stage: str, records: Iterable[Record]) -> None:
        """Rewrite a derived-record stage (scores, labels) from scratch."""
        path = self.stage_path(stage)
        with self._lock:
            if path.exists():
                path.unlink()
            self._ids.pop(stage, None)
        self.append_records(stage, records)

    def has_records(self, stage: str) -> bool:
        return self.stage_path(stage).exists()

    def load(self) -> RunRecords:
        return RunRecords(**{stage: self.read_records(stage) for stage in
                             ("topics", "responses", "claims", "questions", "answers",
                              "contradictions", "entailments", "labels")})

    # diagnostics ------------------------------------------------------

    def diagnostic(self, kind: str, message: str, **context: Any) -> None:
        entry = {"kind": kind, "message": message, **context}
        self.diagnostics.append(entry)
        log.warning("%s: %s", kind, message)
        with (self.path / "diagnostics.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(_dumps(entry) + "\n")

    @property
    def cache_dir(self) -> Path:
        d = self.path / "cache"
        d.mkdir(exist_ok=True)
        return d


def _trim_partial_line(path: Path) -> None:
    """Cut a crash-truncated final line so the next append starts on a fresh line."""
    with path.open("rb+") as fh:
        fh.seek(0, os.SEEK_END)
        size = fh.tell()
        if size == 0:
            return
        fh.seek(size - 1)
        if fh.read(1) == b"\n":
            return
        data = path.read_bytes()
        fh.truncate(data.rfind(b"\n") + 1)


def _check_manifest(data: Any, path: Path) -> dict[str, Any]:
    required = {"run_id": str, "config": dict, "status": dict, "ledger": dict,
                "schema_version": int, "created": str, "updated": str}
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest is not an object")
    bad = [k for k, t in required.items() if not isinstance(data.get(k), t)]
    if bad:
        raise ManifestError(f"{path}: unreadable manifest fields: {', '.join(bad)}")
    return data


def open_run(path: str | Path, config: dict[str, Any], override: bool = False) -> RunStore:
    """Create a run directory, or resume it when the config matches."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    mpath = path / RunStore.MANIFEST
    if mpath.exists():
        try:
            data = json.loads(mpath.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{mpath}: not valid JSON ({exc})") from exc
        manifest = _check_manifest(data, mpath)
        if manifest["config"] != config:
            if not override:
                changed = sorted(k for k in set(config) | set(manifest["config"])
                                 if config.get(k) != manifest["config"].get(k))
                raise ConfigMismatchError(f"config differs from stored run on: {', '.join(changed)}")
            manifest["config"] = config
        store = RunStore(path, manifest)
        store.save_manifest()
        return store
    now = _now()
    manifest = {
        "run_id": config_fingerprint(config),
        "config": config,
        "status": {},
        "ledger": {},
        "schema_version": SCHEMA_VERSION,
        "created": now,
        "updated": now,
    }
    store = RunStore(path, manifest)
    store.save_manifest()
    return store


def load_run(path: str | Path) -> RunStore:
    """Open an existing run without checking its config."""
    path = Path(path)
    mpath = path / RunStore.MANIFEST
    if not mpath.exists():
        raise StoreError(f"{path}: no run manifest")
    try:
        data = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{mpath}: not valid JSON ({exc})") from exc
    return RunStore(path, _check_manifest(data, mpath))
