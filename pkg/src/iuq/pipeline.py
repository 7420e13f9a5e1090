"""Interrogation pipeline: sample, decompose, question, answer, judge.

Every stage is checkpointed per topic in the run store, so an interrupted run
resumes at the first incomplete stage without repeating finished requests.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence, TypeVar

from . import prompts
from .backend import Backend, BackendError, CompletionCache, CompletionRequest, TokenLedger
from .store import PIPELINE_STAGES, RunStore
from .types import (
    AnswerRecord,
    ClaimRecord,
    ContradictionRecord,
    EntailmentRecord,
    QuestionRecord,
    RunRecords,
    SampledResponse,
    TopicItem,
    make_id,
)

log = logging.getLogger(__name__)

T = TypeVar("T")

REFUSAL_PHRASES = (
    "i don't know",
    "i do not know",
    "i cannot provide information",
    "i can't provide information",
    "i am unable to provide",
    "i'm unable to provide",
    "i have no information",
    "i'm not able to provide",
    "i could not find any information",
    "i couldn't find any information",
)
DIRECTIONS = ("preceding", "subsequent")


class ParseFailure(BackendError):
    """A model reply stayed unparseable after its retry."""


@dataclass(frozen=True)
class PipelineConfig:
    n_samples: int = 5
    sample_temperature: float = 1.0
    n_q_max: int = 3
    n_answers: int = 3
    direction: str = "preceding"  # preceding | subsequent | both
    include_own_response: bool = True
    frequency_scoring: bool = True
    seed: int = 0
    max_in_flight: int = 8
    max_tokens: int = 1024
    refusal_phrases: tuple[str, ...] = REFUSAL_PHRASES
    refusal_max_tokens: int = 20
    prompt_templates: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 1 <= self.n_q_max <= 3:
            raise ValueError("n_q_max must lie in 1..3")
        if self.n_answers < 1:
            raise ValueError("n_answers must be >= 1")
        if self.direction not in (*DIRECTIONS, "both"):
            raise ValueError(f"direction must be preceding, subsequent or both, not {self.direction!r}")
        if self.sample_temperature < 0:
            raise ValueError("sample_temperature must be >= 0")
        prompts.templates(self.prompt_templates)

    @property
    def directions(self) -> tuple[str, ...]:
        return DIRECTIONS if self.direction == "both" else (self.direction,)

    @property
    def templates(self) -> dict[str, str]:
        return prompts.templates(self.prompt_templates)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["refusal_phrases"] = list(self.refusal_phrases)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        d = dict(data)
        if "refusal_phrases" in d:
            d["refusal_phrases"] = tuple(d["refusal_phrases"])
        return cls(**d)


def seed_for(*parts: Any) -> int:
    return int(hashlib.sha1("|".join(map(str, parts)).encode()).hexdigest()[:8], 16)


def is_refusal(text: str, phrases: Sequence[str] = REFUSAL_PHRASES, max_tokens: int = 20) -> bool:
    """Refusal iff a phrase matches and the reply is short or opens with it."""
    t = " ".join(text.lower().split())
    if not t:
        return True
    hits = [p for p in phrases if p in t]
    if not hits:
        return False
    return len(t.split()) < max_tokens or any(t.startswith(p) for p in hits)


def _fan_out(fn: Callable[[Any], T], items: Sequence[Any], workers: int) -> list[T | BaseException]:
    """Apply fn to items concurrently; results (or raised errors) in input order."""
    def guarded(item):
        try:
            return fn(item)
        except BackendError as exc:
            return exc
    if workers <= 1 or len(items) <= 1:
        return [guarded(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(guarded, items))


def _raise_first(results: Iterable[Any]) -> None:
    for r in results:
        if isinstance(r, BaseException):
            raise r


# stage operations ---------------------------------------------------------

def generate_responses(topic: TopicItem, cfg: PipelineConfig, backend: Backend) -> list[SampledResponse]:
    prompt = prompts.render(cfg.templates["generate"], prompt=topic.prompt)
    t = cfg.sample_temperature
    tag = "greedy_gen" if t == 0 else "diverse_gen"

    def one(i: int) -> SampledResponse:
        req = CompletionRequest(tag, prompt, temperature=t, max_tokens=cfg.max_tokens, want_logprobs=True,
                                seed_hint=None if t == 0 else seed_for(cfg.seed, topic.topic_id, "gen", i))
        res = backend.complete(req)
        return SampledResponse(
            response_id=make_id(topic.topic_id, "responses", i, res.text),
            topic_id=topic.topic_id,
            sample_index=i,
            text=res.text,
            refusal=is_refusal(res.text, cfg.refusal_phrases, cfg.refusal_max_tokens),
            temperature=t,
            token_logprobs=res.token_logprobs,
        )

    results = _fan_out(one, list(range(cfg.n_samples)), cfg.max_in_flight)
    _raise_first(results)
    return results  # type: ignore[return-value]


def _complete_parsed(backend: Backend, req: CompletionRequest, parse: Callable[[str], Any]) -> tuple[Any, str]:
    """Issue req; on an unparseable reply retry once with a fresh request key."""
    res = backend.complete(req)
    value = parse(res.text)
    if value is not None:
        return value, res.text
    retry = CompletionRequest(req.stage_tag, req.prompt, req.temperature, req.max_tokens,
                              req.want_logprobs, seed_for(req.seed_hint, "retry"))
    res = backend.complete(retry)
    return parse(res.text), res.text


def decompose_claims(response: SampledResponse, topic: TopicItem, cfg: PipelineConfig,
                     backend: Backend) -> list[ClaimRecord]:
    if response.refusal:
        raise ValueError(f"response {response.response_id} is a refusal")
    prompt = prompts.render(cfg.templates["decompose"], context=topic.prompt, text=response.text)
    req = CompletionRequest("claim_extract", prompt, temperature=0.0, max_tokens=cfg.max_tokens)
    items, raw = _complete_parsed(backend, req, prompts.parse_list)
    if items is None:
        raise ParseFailure(f"response {response.response_id}: decomposition is not a list: {raw[:80]!r}")
    return [
        ClaimRecord(make_id(response.response_id, "claims", i, text), response.response_id,
                    topic.topic_id, i, text)
        for i, text in enumerate(items, start=1)
    ]


def fallback_question(topic: TopicItem, claim: ClaimRecord) -> str:
    subject = topic.prompt.strip().rstrip(".?!")
    return f"Regarding {subject}: is the following true: {claim.text.rstrip('.')}?"


def generate_questions(claim: ClaimRecord, topic: TopicItem, cfg: PipelineConfig,
                       backend: Backend) -> list[QuestionRecord]:
    prompt = prompts.render(cfg.templates["question"], context=topic.prompt, claim=claim.text)
    t = cfg.sample_temperature
    req = CompletionRequest("question_gen", prompt, temperature=t, max_tokens=256,
                            seed_hint=None if t == 0 else seed_for(cfg.seed, claim.claim_id, "q"))
    res = backend.complete(req)
    questions = prompts.parse_questions(res.text)[: cfg.n_q_max]
    synthetic = not questions
    if synthetic:
        questions = [fallback_question(topic, claim)]
    return [
        QuestionRecord(make_id(claim.claim_id, "questions", i, q), claim.claim_id, i, q, synthetic)
        for i, q in enumerate(questions)
    ]


def answer_questions(question: QuestionRecord, topic: TopicItem, cfg: PipelineConfig,
                     backend: Backend) -> list[AnswerRecord]:
    """n_a answers with only the dataset prompt as context; failed slots come back missing."""
    prompt = prompts.render(cfg.templates["answer"], context=topic.prompt, question=question.text)
    t = cfg.sample_temperature
    out = []
    for i in range(cfg.n_answers):
        req = CompletionRequest("answer_gen", prompt, temperature=t, max_tokens=256, want_logprobs=True,
                                seed_hint=None if t == 0 else seed_for(cfg.seed, question.question_id, "a", i))
        try:
            res = backend.complete(req)
            text, lp = res.text, res.token_logprobs
        except BackendError as exc:
            log.warning("answer %d of %s missing: %s", i, question.question_id, exc)
            text, lp = None, None
        out.append(AnswerRecord(make_id(question.question_id, "answers", i, text or ""),
                                question.question_id, i, text, lp))
    return out


def claim_context(claims: Sequence[ClaimRecord], index: int, direction: str) -> list[str]:
    """Claim texts preceding-and-including (or strictly following) the claim at 1-based index."""
    ordered = sorted(claims, key=lambda c: c.index)
    if direction == "preceding":
        return [c.text for c in ordered if c.index <= index]
    if direction == "subsequent":
        return [c.text for c in ordered if c.index > index]
    raise ValueError(f"unknown direction {direction!r}")


def evaluate_contradiction(answer: AnswerRecord, context: Sequence[str], backend: Backend,
                           cfg: Optional[PipelineConfig] = None) -> tuple[Optional[float], bool, str]:
    """Contradiction in [0, 1] of one answer against the context.

    Returns (score, vacuous, raw reply). An empty context scores 0 and is
    flagged vacuous; an unparseable reply after one retry scores None.
    """
    if answer.text is None:
        return None, False, ""
    if not context:
        return 0.0, True, ""
    template = (cfg.templates if cfg else prompts.DEFAULT_TEMPLATES)["contradiction"]
    prompt = prompts.render(template, statement=answer.text, context="\n".join(context))
    req = CompletionRequest("contradiction_eval", prompt, temperature=0.0, max_tokens=16)
    score, raw = _complete_parsed(backend, req, prompts.parse_percentage)
    return score, False, raw


def evaluate_entailment(claim: ClaimRecord, other: SampledResponse, backend: Backend,
                        cfg: Optional[PipelineConfig] = None, judge: str = "entail") -> tuple[bool, bool]:
    """(verdict, parsed). Unparseable verdicts count as not supported."""
    if other.refusal:
        raise ValueError(f"response {other.response_id} is a refusal")
    templates = cfg.templates if cfg else prompts.DEFAULT_TEMPLATES
    if judge == "entail":
        template, parse = templates["entailment"], prompts.parse_entailment
    elif judge == "support":
        template, parse = templates["support"], prompts.parse_yes_no
    else:
        raise ValueError(f"unknown judge {judge!r}")
    prompt = prompts.render(template, response=other.text, claim=claim.text)
    req = CompletionRequest("entailment_eval", prompt, temperature=0.0, max_tokens=8)
    verdict, _ = _complete_parsed(backend, req, parse)
    if verdict is None:
        return False, False
    return bool(verdict), True


# orchestration ------------------------------------------------------------

class _StageRunner:
    def __init__(self, cfg: PipelineConfig, backend: Backend, store: RunStore):
        self.cfg = cfg
        self.backend = backend
        self.store = store
        self.records = RunRecords()

    def refresh(self) -> None:
        self.records = self.store.load()

    def live_responses(self, topic_id: str) -> list[SampledResponse]:
        return [r for r in self.records.responses_by_topic.get(topic_id, []) if not r.refusal]

    def topic_claims(self, topic_id: str) -> list[ClaimRecord]:
        out = []
        for r in self.live_responses(topic_id):
            out.extend(self.records.claims_by_response.get(r.response_id, []))
        return out

    def generate(self, topic: TopicItem) -> None:
        responses = generate_responses(topic, self.cfg, self.backend)
        self.store.append_records("responses", responses)
        if all(r.refusal for r in responses):
            self.store.set_status(topic.topic_id, "generate", "complete")
            self.store.skip_topic(topic.topic_id, "all responses refused")
            return
        self.store.set_status(topic.topic_id, "generate", "complete")

    def decompose(self, topic: TopicItem) -> None:
        live = self.live_responses(topic.topic_id)
        results = _fan_out(lambda r: decompose_claims(r, topic, self.cfg, self.backend), live,
                           self.cfg.max_in_flight)
        _raise_first(results)
        claims = []
        for r, cs in zip(live, results):
            if not cs:
                self.store.diagnostic("empty-claims", f"response {r.response_id} produced no claims",
                                      topic_id=topic.topic_id)
            claims.extend(cs)  # type: ignore[arg-type]
        self.store.append_records("claims", claims)
        self.store.set_status(topic.topic_id, "decompose", "complete")

    def questions(self, topic: TopicItem) -> None:
        claims = self.topic_claims(topic.topic_id)
        results = _fan_out(lambda c: generate_questions(c, topic, self.cfg, self.backend), claims,
                           self.cfg.max_in_flight)
        _raise_first(results)
        synthetic = sum(q.synthetic for qs in results for q in qs)  # type: ignore[union-attr]
        if synthetic:
            self.store.diagnostic("synthetic-questions", f"{synthetic} fallback questions",
                                  topic_id=topic.topic_id)
        self.store.append_records("questions", [q for qs in results for q in qs])  # type: ignore[union-attr]
        self.store.set_status(topic.topic_id, "questions", "complete")

    def answers(self, topic: TopicItem) -> None:
        qs = [q for c in self.topic_claims(topic.topic_id)
              for q in self.records.questions_by_claim.get(c.claim_id, [])]
        results = _fan_out(lambda q: answer_questions(q, topic, self.cfg, self.backend), qs,
                           self.cfg.max_in_flight)
        _raise_first(results)
        answers = [a for batch in results for a in batch]  # type: ignore[union-attr]
        missing = sum(a.missing for a in answers)
        if missing:
            self.store.diagnostic("missing-answers", f"{missing} answer slots missing",
                                  topic_id=topic.topic_id)
        self.store.append_records("answers", answers)
        self.store.set_status(topic.topic_id, "answers", "complete")

    def contradiction(self, topic: TopicItem) -> None:
        jobs = []
        for r in self.live_responses(topic.topic_id):
            claims = self.records.claims_by_response.get(r.response_id, [])
            for c in claims:
                for direction in self.cfg.directions:
                    ctx = claim_context(claims, c.index, direction)
                    for q in self.records.questions_by_claim.get(c.claim_id, []):
                        for a in self.records.answers_by_question.get(q.question_id, []):
                            jobs.append((c, a, direction, ctx))

        def one(job):
            c, a, direction, ctx = job
            score, vacuous, raw = evaluate_contradiction(a, ctx, self.backend, self.cfg)
            return ContradictionRecord(make_id(a.answer_id, "contradictions", 0, direction),
                                       a.answer_id, c.claim_id, direction, score, vacuous, raw)

        results = _fan_out(one, jobs, self.cfg.max_in_flight)
        _raise_first(results)
        unparsed = sum(1 for x, job in zip(results, jobs) if x.score is None and job[1].text is not None)  # type: ignore[union-attr]
        if unparsed:
            self.store.diagnostic("unparsed-contradiction", f"{unparsed} contradiction replies unparseable",
                                  topic_id=topic.topic_id)
        self.store.append_records("contradictions", results)  # type: ignore[arg-type]
        self.store.set_status(topic.topic_id, "contradiction", "complete")

    def entailment(self, topic: TopicItem) -> None:
        live = self.live_responses(topic.topic_id)
        jobs = []
        for c in self.topic_claims(topic.topic_id):
            for r in live:
                own = r.response_id == c.response_id
                if not own or self.cfg.include_own_response:
                    jobs.append((c, r, "entail"))
                if self.cfg.frequency_scoring and not own:
                    jobs.append((c, r, "support"))

        def one(job):
            c, r, judge = job
            verdict, parsed = evaluate_entailment(c, r, self.backend, self.cfg, judge)
            return EntailmentRecord(make_id(c.claim_id, "entailments", 0, f"{judge}:{r.response_id}"),
                                    c.claim_id, r.response_id, judge, verdict, parsed)

        results = _fan_out(one, jobs, self.cfg.max_in_flight)
        _raise_first(results)
        unparsed = sum(1 for e in results if not e.parsed)  # type: ignore[union-attr]
        if unparsed:
            self.store.diagnostic("unparsed-verdict", f"{unparsed} judge verdicts unparseable",
                                  topic_id=topic.topic_id)
        self.store.append_records("entailments", results)  # type: ignore[arg-type]
        self.store.set_status(topic.topic_id, "entailment", "complete")


def run_pipeline(dataset: Sequence[TopicItem], cfg: PipelineConfig, backend: Backend, store: RunStore,
                 stop_after: Optional[str] = None) -> dict[str, Any]:
    """Run (or resume) every stage over the dataset; returns the manifest.

    Stages run stage-major: one stage for every topic, then the next. A stage
    error fails its topic and the run carries on. ``stop_after`` ends the run
    after the named stage, leaving later stages pending.
    """
    if stop_after is not None and stop_after not in PIPELINE_STAGES:
        raise ValueError(f"unknown stage {stop_after!r}")
    backend.cache = CompletionCache(store.cache_dir / "completions.jsonl")
    backend.ledger = TokenLedger(store.manifest.get("ledger") or {})
    store.append_records("topics", dataset)
    for t in dataset:
        store.ensure_topic(t.topic_id)
    store.manifest["n_topics"] = len({t.topic_id for t in store.read_records("topics")})
    runner = _StageRunner(cfg, backend, store)
    for stage in PIPELINE_STAGES:
        runner.refresh()
        for topic in dataset:
            if store.status(topic.topic_id, stage) != "pending":
                continue
            if store.topic_state(topic.topic_id) == "failed":
                continue
            try:
                getattr(runner, stage)(topic)
            except BackendError as exc:
                log.error("topic %s failed at %s: %s", topic.topic_id, stage, exc)
                store.fail_topic(topic.topic_id, stage, f"{stage}: {exc}")
                store.diagnostic("stage-failed", str(exc), topic_id=topic.topic_id, stage=stage)
            backend.cache.flush()
            store.manifest["ledger"] = backend.ledger.snapshot()
            store.save_manifest()
        if stage == stop_after:
            break
    summary = {"complete": 0, "failed": 0, "skipped": 0, "pending": 0}
    for t in dataset:
        summary[store.topic_state(t.topic_id)] += 1
    store.manifest["summary"] = summary
    store.manifest["claims_per_response"] = _claim_counts(store)
    store.save_manifest()
    return store.manifest


def _claim_counts(store: RunStore) -> dict[str, int]:
    counts: dict[str, int] = {}
    for c in store.read_records("claims"):
        counts[c.response_id] = counts.get(c.response_id, 0) + 1
    return dict(sorted(counts.items()))
