"""Domain records shared by every stage of the pipeline.

All records are frozen dataclasses and serialize to flat JSON objects. Nested
views (a claim with its questions and answers) are assembled on demand by
:class:`RunRecords` rather than stored.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Optional

SCHEMA_VERSION = 1

TokenLogprobs = Optional[tuple[tuple[str, float], ...]]

Orientation = Literal["confident", "uncertain"]
LABELS = ("correct", "incorrect", "not_enough_information")


def make_id(parent: str, stage: str, ordinal: int, text: str) -> str:
    """Content-addressed identifier: hash of parent, stage, ordinal and text."""
    digest = hashlib.sha1(f"{parent}\x1f{stage}\x1f{ordinal}\x1f{text}".encode()).hexdigest()
    return digest[:16]


def _freeze_logprobs(value: Any) -> TokenLogprobs:
    if value is None:
        return None
    return tuple((str(tok), float(lp)) for tok, lp in value)


class Record:
    """Mixin giving dataclass records a JSON-friendly round trip."""

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]):
        names = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
        kwargs = {k: v for k, v in data.items() if k in names}
        if "token_logprobs" in kwargs:
            kwargs["token_logprobs"] = _freeze_logprobs(kwargs["token_logprobs"])
        for key in ("baselines", "orientation"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = dict(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class TopicItem(Record):
    topic_id: str
    prompt: str
    reference: Optional[str] = None
    dataset_tag: str = "default"

    def __post_init__(self):
        if not self.prompt or not self.prompt.strip():
            raise ValueError(f"topic {self.topic_id!r}: prompt is empty")

    @property
    def id(self) -> str:
        return self.topic_id


@dataclass(frozen=True)
class SampledResponse(Record):
    response_id: str
    topic_id: str
    sample_index: int
    text: str
    refusal: bool
    temperature: float
    token_logprobs: TokenLogprobs = None

    @property
    def id(self) -> str:
        return self.response_id


@dataclass(frozen=True)
class ClaimRecord(Record):
    claim_id: str
    response_id: str
    topic_id: str
    index: int
    text: str

    @property
    def id(self) -> str:
        return self.claim_id


@dataclass(frozen=True)
class QuestionRecord(Record):
    question_id: str
    claim_id: str
    question_index: int
    text: str
    synthetic: bool = False

    @property
    def id(self) -> str:
        return self.question_id


@dataclass(frozen=True)
class AnswerRecord(Record):
    answer_id: str
    question_id: str
    answer_index: int
    text: Optional[str]
    token_logprobs: TokenLogprobs = None

    @property
    def id(self) -> str:
        return self.answer_id

    @property
    def missing(self) -> bool:
        return self.text is None


@dataclass(frozen=True)
class ContradictionRecord(Record):
    """Contradiction of one answer against the claim context in one direction."""

    record_id: str
    answer_id: str
    claim_id: str
    direction: str
    score: Optional[float]
    vacuous: bool = False
    raw: str = ""

    @property
    def id(self) -> str:
        return self.record_id


@dataclass(frozen=True)
class EntailmentRecord(Record):
    """Judge verdict of whether ``response_id`` supports ``claim_id``.

    ``judge`` is ``"entail"`` for the S/closeness judge and ``"support"`` for
    frequency scoring.
    """

    record_id: str
    claim_id: str
    response_id: str
    judge: str
    verdict: bool
    parsed: bool = True

    @property
    def id(self) -> str:
        return self.record_id


@dataclass(frozen=True)
class CorrectnessLabel(Record):
    claim_id: str
    label: str
    judge_raw: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown correctness label {self.label!r}")

    @property
    def id(self) -> str:
        return self.claim_id

    @property
    def binary(self) -> Optional[int]:
        return {"correct": 1, "incorrect": 0}.get(self.label)


@dataclass(frozen=True)
class ScoreVector(Record):
    claim_id: str
    topic_id: str
    response_id: str
    index: int
    s_entail: Optional[float]
    f_faith: Optional[float]
    w_weight: float
    u_iuq: Optional[float]
    u_answer: Optional[float]
    baselines: dict[str, Optional[float]] = field(default_factory=dict)
    orientation: dict[str, str] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.claim_id


@dataclass(frozen=True)
class KernelSpec:
    """Influence kernel used to propagate unfaithfulness along a response.

    ``variant`` is one of ``exp``, ``linear``, ``accumulative`` or ``none``.
    """

    variant: str = "exp"
    lam: float = 1.0
    m: float = 0.1
    b: float = 0.0

    def __post_init__(self):
        if self.variant not in ("exp", "linear", "accumulative", "none"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "exp" and not self.lam > 0:
            raise ValueError("exponential kernel requires lambda > 0")
        if self.variant == "linear" and not self.m > 0:
            raise ValueError("linear kernel requires m > 0")

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``exp:LAMBDA``, ``lin:M:B``, ``acc`` or ``none``."""
        parts = text.strip().lower().split(":")
        head = parts[0]
        try:
            if head == "exp":
                return cls("exp", lam=float(parts[1]) if len(parts) > 1 else 1.0)
            if head in ("lin", "linear"):
                m = float(parts[1]) if len(parts) > 1 else 0.1
                b = float(parts[2]) if len(parts) > 2 else 0.0
                return cls("linear", m=m, b=b)
        except ValueError as exc:
            raise ValueError(f"bad kernel spec {text!r}: {exc}") from exc
        if head in ("acc", "accumulative"):
            return cls("accumulative")
        if head in ("none", "no"):
            return cls("none")
        raise ValueError(f"bad kernel spec {text!r}")

    @property
    def label(self) -> str:
        return {"exp": "Exp-E", "linear": "Lin-E", "accumulative": "Acc-E", "none": "No-E"}[self.variant]

    def __str__(self) -> str:
        if self.variant == "exp":
            return f"exp:{self.lam:g}"
        if self.variant == "linear":
            return f"lin:{self.m:g}:{self.b:g}"
        return "acc" if self.variant == "accumulative" else "none"


STAGE_RECORDS: dict[str, type] = {
    "topics": TopicItem,
    "responses": SampledResponse,
    "claims": ClaimRecord,
    "questions": QuestionRecord,
    "answers": AnswerRecord,
    "contradictions": ContradictionRecord,
    "entailments": EntailmentRecord,
    "labels": CorrectnessLabel,
    "scores": ScoreVector,
}


@dataclass
class RunRecords:
    """Every record of a run, with lookups for the nested claim view."""

    topics: list[TopicItem] = field(default_factory=list)
    responses: list[SampledResponse] = field(default_factory=list)
    claims: list[ClaimRecord] = field(default_factory=list)
    questions: list[QuestionRecord] = field(default_factory=list)
    answers: list[AnswerRecord] = field(default_factory=list)
    contradictions: list[ContradictionRecord] = field(default_factory=list)
    entailments: list[EntailmentRecord] = field(default_factory=list)
    labels: list[CorrectnessLabel] = field(default_factory=list)

    def __post_init__(self):
        self.reindex()

    def reindex(self) -> None:
        self.topic_by_id = {t.topic_id: t for t in self.topics}
        self.response_by_id = {r.response_id: r for r in self.responses}
        self.claim_by_id = {c.claim_id: c for c in self.claims}
        self.responses_by_topic: dict[str, list[SampledResponse]] = {}
        for r in sorted(self.responses, key=lambda r: r.sample_index):
            self.responses_by_topic.setdefault(r.topic_id, []).append(r)
        self.claims_by_response: dict[str, list[ClaimRecord]] = {}
        for c in sorted(self.claims, key=lambda c: c.index):
            self.claims_by_response.setdefault(c.response_id, []).append(c)
        self.questions_by_claim: dict[str, list[QuestionRecord]] = {}
        for q in sorted(self.questions, key=lambda q: q.question_index):
            self.questions_by_claim.setdefault(q.claim_id, []).append(q)
        self.answers_by_question: dict[str, list[AnswerRecord]] = {}
        for a in sorted(self.answers, key=lambda a: a.answer_index):
            self.answers_by_question.setdefault(a.question_id, []).append(a)
        self.contradictions_by_answer: dict[tuple[str, str], ContradictionRecord] = {
            (x.answer_id, x.direction): x for x in self.contradictions
        }
        self.entailments_by_claim: dict[tuple[str, str], dict[str, bool]] = {}
        for e in self.entailments:
            self.entailments_by_claim.setdefault((e.claim_id, e.judge), {})[e.response_id] = e.verdict
        self.label_by_claim = {lab.claim_id: lab for lab in self.labels}

    def claims_of_topic(self, topic_id: str) -> list[ClaimRecord]:
        out = []
        for r in self.responses_by_topic.get(topic_id, []):
            out.extend(self.claims_by_response.get(r.response_id, []))
        return out

    def contradiction_grid(self, claim_id: str, direction: str = "preceding") -> list[list[Optional[float]]]:
        """Per-question lists of per-answer contradiction scores (None = missing)."""
        grid = []
        for q in self.questions_by_claim.get(claim_id, []):
            row = []
            for a in self.answers_by_question.get(q.question_id, []):
                rec = self.contradictions_by_answer.get((a.answer_id, direction))
                row.append(None if rec is None else rec.score)
            grid.append(row)
        return grid


def validate_run_artifacts(records: RunRecords) -> list[str]:
    """Report invariant violations across a run's records; empty means consistent."""
    problems: list[str] = []
    seen_topics: set[str] = set()
    for t in records.topics:
        if t.topic_id in seen_topics:
            problems.append(f"duplicate topic_id {t.topic_id}")
        seen_topics.add(t.topic_id)

    sample_keys: set[tuple[str, int]] = set()
    for r in records.responses:
        if r.topic_id not in records.topic_by_id:
            problems.append(f"orphan response {r.response_id}: unknown topic {r.topic_id}")
        key = (r.topic_id, r.sample_index)
        if key in sample_keys:
            problems.append(f"duplicate sample_index {r.sample_index} for topic {r.topic_id}")
        sample_keys.add(key)
        for _, lp in r.token_logprobs or ():
            if lp > 0:
                problems.append(f"response {r.response_id}: positive logprob {lp}")
                break

    for rid, claims in records.claims_by_response.items():
        if rid not in records.response_by_id:
            problems.append(f"orphan claims: unknown response {rid}")
        elif records.response_by_id[rid].refusal:
            problems.append(f"claims attached to refused response {rid}")
        indices = [c.index for c in claims]
        if len(set(indices)) != len(indices):
            problems.append(f"response {rid}: duplicate claim index")
        expected = 1
        for idx in sorted(set(indices)):
            while expected < idx:
                problems.append(f"response {rid}: index gap at {expected}")
                expected += 1
            expected = idx + 1
        for c in claims:
            if not c.text.strip():
                problems.append(f"claim {c.claim_id}: empty text")

    for cid, qs in records.questions_by_claim.items():
        if cid not in records.claim_by_id:
            problems.append(f"orphan questions: unknown claim {cid}")
        if not 1 <= len(qs) <= 3:
            problems.append(f"claim {cid}: {len(qs)} questions (expected 1..3)")
    question_ids = {q.question_id for q in records.questions}
    answer_counts = set()
    for qid, answers in records.answers_by_question.items():
        if qid not in question_ids:
            problems.append(f"orphan answers: unknown question {qid}")
        answer_counts.add(len(answers))
        for a in answers:
            for _, lp in a.token_logprobs or ():
                if lp > 0:
                    problems.append(f"answer {a.answer_id}: positive logprob {lp}")
                    break
    if len(answer_counts) > 1:
        problems.append(f"unequal answer counts across questions: {sorted(answer_counts)}")

    answer_ids = {a.answer_id for a in records.answers}
    for x in records.contradictions:
        if x.answer_id not in answer_ids:
            problems.append(f"orphan contradiction {x.record_id}")
        if x.score is not None and not (0.0 <= x.score <= 1.0 and not math.isnan(x.score)):
            problems.append(f"contradiction out of range: {x.score} on answer {x.answer_id}")
    for e in records.entailments:
        if e.claim_id not in records.claim_by_id or e.response_id not in records.response_by_id:
            problems.append(f"orphan entailment {e.record_id}")
    for lab in records.labels:
        if lab.claim_id not in records.claim_by_id:
            problems.append(f"orphan label for claim {lab.claim_id}")
    return problems


def iter_records(records: RunRecords) -> Iterable[tuple[str, Record]]:
    for stage in ("topics", "responses", "claims", "questions", "answers",
                  "contradictions", "entailments", "labels"):
        for rec in getattr(records, stage):
            yield stage, rec
