"""Synthetic knowledge worlds and the scripted model that lives in them.

A world is a set of entities, each with ground-truth facts and a table of
fabricated values the model tends to produce instead. :class:`WorldBackend`
plays every role of the pipeline (responder, decomposer, interrogator,
answerer and judges) from those tables, so the correctness of every claim is
known exactly.

Sentences are templated as ``"<name>'s <attribute> is <value>."``.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml

from .backend import Backend, CompletionRequest, CompletionResult, ConfigurationError, whitespace_tokens
from .types import ClaimRecord, CorrectnessLabel, TopicItem

ATTRIBUTES = (
    "occupation", "birthplace", "birth year", "alma mater", "employer", "nationality",
    "spouse", "first award", "notable work", "field of study", "mentor", "home city",
    "research area", "first book", "founding firm", "signature project",
)
_SYLLABLES = ("ka", "lo", "ven", "dra", "mi", "sul", "or", "te", "bri", "an", "qu", "el",
              "zo", "ra", "fen", "tis", "mar", "ul", "do", "vex", "ni", "sa", "gor", "li")
_FACT = re.compile(r"^(?P<name>[A-Z][\w\- ]*?)'s (?P<attr>[a-z][a-z ]*?) is (?P<value>[^.]+)\.?$")
_QUESTION = re.compile(r"^What is (?P<name>[A-Z][\w\- ]*?)'s (?P<attr>[a-z][a-z ]*?); is it (?P<value>[^?]+)\?$")
REFUSAL_TEXT = "I cannot provide information on this person."


@dataclass(frozen=True)
class Entity:
    name: str
    facts: dict[str, str]
    fabricated_facts: dict[str, str]
    refuses: bool = False
    fabrication_rate: Optional[float] = None

    @property
    def attributes(self) -> list[str]:
        return list(self.facts)

    @property
    def premise(self) -> str:
        return self.attributes[0]


@dataclass(frozen=True)
class SynthWorld:
    """Immutable synthetic world; see :func:`build_world`."""

    entities: tuple[Entity, ...]
    fabrication_rate: float = 0.4
    answer_consistency: float = 0.2
    seed: int = 0
    coverage: float = 1.0
    context_driven: bool = False
    dependent_fabrication_rate: Optional[float] = None
    dependent_answer_consistency: Optional[float] = None
    refabricate: bool = False
    flourish_rate: float = 0.0
    _by_name: dict[str, Entity] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {e.name: e for e in self.entities})

    def entity(self, name: str) -> Optional[Entity]:
        return self._by_name.get(name)

    def find_entity(self, text: str) -> Optional[Entity]:
        hits = [e for e in self.entities if e.name in text]
        return max(hits, key=lambda e: len(e.name)) if hits else None

    def rate(self, ent: Entity) -> float:
        return self.fabrication_rate if ent.fabrication_rate is None else ent.fabrication_rate

    @property
    def dep_rate(self) -> float:
        if self.dependent_fabrication_rate is not None:
            return self.dependent_fabrication_rate
        return self.fabrication_rate / 2

    @property
    def dep_consistency(self) -> float:
        if self.dependent_answer_consistency is not None:
            return self.dependent_answer_consistency
        return self.answer_consistency

    def topics(self, dataset_tag: str = "synth") -> list[TopicItem]:
        return [
            TopicItem(topic_id=f"synth-{i:03d}", prompt=f"Tell me a bio of {e.name}.",
                      reference=reference_article(e), dataset_tag=dataset_tag)
            for i, e in enumerate(self.entities)
        ]

    def to_config(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "fabrication_rate": self.fabrication_rate,
            "answer_consistency": self.answer_consistency,
            "coverage": self.coverage,
            "context_driven": self.context_driven,
            "dependent_fabrication_rate": self.dependent_fabrication_rate,
            "dependent_answer_consistency": self.dependent_answer_consistency,
            "refabricate": self.refabricate,
            "flourish_rate": self.flourish_rate,
            "entities": [
                {"name": e.name, "facts": dict(e.facts), "fabricated_facts": dict(e.fabricated_facts),
                 "refuses": e.refuses, "fabrication_rate": e.fabrication_rate}
                for e in self.entities
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_config(), indent=2, sort_keys=True)


def fact_sentence(name: str, attr: str, value: str) -> str:
    return f"{name}'s {attr} is {value}."


def parse_fact(text: str) -> Optional[tuple[str, str, str]]:
    m = _FACT.match(text.strip())
    if not m:
        return None
    return m.group("name"), m.group("attr"), m.group("value").strip()


def split_sentences(text: str) -> list[str]:
    return [s.strip() + "." for s in re.split(r"\.(?:\s+|$)", text.strip()) if s.strip()]


def reference_article(ent: Entity) -> str:
    lines = [f"{ent.name} is the subject of this reference article."]
    for attr, value in ent.facts.items():
        lines.append(fact_sentence(ent.name, attr, value))
        lines.append("Further details on this topic are recorded in archival sources.")
    return " ".join(lines)


def _word(rng: random.Random, n: int = 3) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(n)).capitalize()


def _check_rate(name: str, value: Optional[float]) -> None:
    if value is not None and not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")


def build_world(config: dict[str, Any]) -> SynthWorld:
    """Build a world from a config mapping.

    Explicit ``entities`` are used as given; otherwise ``n_entities`` entities
    with ``n_attributes`` (an int or ``[lo, hi]``) facts each are drawn from
    ``seed``.
    """
    cfg = dict(config)
    seed = int(cfg.get("seed", 0))
    for key in ("fabrication_rate", "answer_consistency", "coverage", "dependent_fabrication_rate",
                "dependent_answer_consistency", "flourish_rate"):
        _check_rate(key, cfg.get(key))
    raw = cfg.get("entities")
    if raw is None:
        raw = _random_entities(seed, int(cfg.get("n_entities", 20)), cfg.get("n_attributes", [6, 10]))
    entities = []
    for e in raw:
        facts = dict(e.get("facts") or {})
        fabricated = dict(e.get("fabricated_facts") or {})
        if not facts:
            raise ConfigurationError(f"entity {e.get('name')!r} has no fact table")
        extra = set(fabricated) - set(facts)
        if extra:
            raise ConfigurationError(f"entity {e['name']!r}: fabricated keys {sorted(extra)} not in facts")
        same = [k for k, v in fabricated.items() if facts[k] == v]
        if same:
            raise ConfigurationError(f"entity {e['name']!r}: fabricated values equal the truth for {same}")
        _check_rate("fabrication_rate", e.get("fabrication_rate"))
        entities.append(Entity(name=e["name"], facts=facts, fabricated_facts=fabricated,
                               refuses=bool(e.get("refuses", False)),
                               fabrication_rate=e.get("fabrication_rate")))
    if not entities:
        raise ConfigurationError("world has no entities")
    return SynthWorld(
        entities=tuple(entities),
        fabrication_rate=float(cfg.get("fabrication_rate", 0.4)),
        answer_consistency=float(cfg.get("answer_consistency", 0.2)),
        seed=seed,
        coverage=float(cfg.get("coverage", 1.0)),
        context_driven=bool(cfg.get("context_driven", False)),
        dependent_fabrication_rate=cfg.get("dependent_fabrication_rate"),
        dependent_answer_consistency=cfg.get("dependent_answer_consistency"),
        refabricate=bool(cfg.get("refabricate", False)),
        flourish_rate=float(cfg.get("flourish_rate", 0.0)),
    )


def _random_entities(seed: int, n: int, n_attributes: Any) -> list[dict[str, Any]]:
    rng = random.Random(seed)
    lo, hi = (n_attributes, n_attributes) if isinstance(n_attributes, int) else n_attributes
    used: set[str] = set()
    out = []
    for _ in range(n):
        while True:
            name = f"{_word(rng, 2)} {_word(rng, 3)}"
            if name not in used:
                used.add(name)
                break
        attrs = rng.sample(ATTRIBUTES, rng.randint(lo, hi))
        facts = {}
        fabricated = {}
        for a in attrs:
            truth = _word(rng)
            fake = _word(rng)
            while fake == truth:
                fake = _word(rng)
            facts[a] = truth
            fabricated[a] = fake
        out.append({"name": name, "facts": facts, "fabricated_facts": fabricated})
    return out


def load_world(path: str | Path) -> SynthWorld:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: world config must be a mapping")
    return build_world(data)


def ground_truth_labels(world: SynthWorld, claims: Iterable[ClaimRecord]) -> list[CorrectnessLabel]:
    """Exact labels from the fact tables, bypassing any judge."""
    out = []
    for c in claims:
        parsed = parse_fact(c.text)
        ent = world.entity(parsed[0]) if parsed else None
        if not parsed or ent is None or parsed[1] not in ent.facts:
            out.append(CorrectnessLabel(c.claim_id, "not_enough_information", "world: untraceable"))
            continue
        label = "correct" if ent.facts[parsed[1]] == parsed[2] else "incorrect"
        out.append(CorrectnessLabel(c.claim_id, label, "world: fact table"))
    return out


class WorldBackend(Backend):
    """Deterministic stand-in model answering every stage from a world's tables.

    Output is a pure function of (prompt, temperature, seed_hint) plus, for
    t > 0 without a seed hint, the per-prompt call ordinal.
    """

    backend_id = "world"

    def __init__(self, world: SynthWorld, **kwargs):
        super().__init__(**kwargs)
        if not world.entities:
            raise ConfigurationError("world has no entities")
        self.world = world
        self.model = f"world-{world.seed}"
        self._ordinals: dict[str, int] = {}
        self._ord_lock = threading.Lock()

    # randomness -------------------------------------------------------

    def _rng(self, req: CompletionRequest) -> random.Random:
        ordinal = 0
        if req.temperature > 0 and req.seed_hint is None:
            with self._ord_lock:
                ordinal = self._ordinals.get(req.prompt, 0)
                self._ordinals[req.prompt] = ordinal + 1
        key = f"{self.world.seed}|{req.stage_tag}|{req.prompt}|{req.temperature}|{req.seed_hint}|{ordinal}"
        return random.Random(int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big"))

    def _result(self, req: CompletionRequest, text: str, logprobs=None) -> CompletionResult:
        lp = tuple(logprobs) if (req.want_logprobs and logprobs is not None) else None
        return CompletionResult(text, lp, whitespace_tokens(req.prompt), whitespace_tokens(text))

    def _call(self, req: CompletionRequest) -> CompletionResult:
        handler = getattr(self, "_" + req.stage_tag)
        return handler(req, self._rng(req))

    # responder ----------------------------------------------------------

    def _sample_values(self, ent: Entity, rng: random.Random, greedy: bool) -> list[tuple[str, str, bool]]:
        w = self.world
        rate = w.rate(ent)
        rows = []
        premise_fab = False
        for k, attr in enumerate(ent.attributes):
            if not greedy and k > 0 and rng.random() >= w.coverage:
                continue
            can_fab = attr in ent.fabricated_facts
            if greedy:
                fab = can_fab and rate > 0.5
            elif w.context_driven and k > 0:
                fab = can_fab and (premise_fab or rng.random() < w.dep_rate)
            else:
                fab = can_fab and rng.random() < rate
            if k == 0:
                premise_fab = fab
            if fab:
                value = ent.fabricated_facts[attr]
                if w.refabricate and not greedy:
                    value = f"{value}-{rng.randrange(1000)}"
            else:
                value = ent.facts[attr]
            rows.append((attr, value, fab))
        return rows

    def _generate(self, req: CompletionRequest, rng: random.Random, greedy: bool) -> CompletionResult:
        ent = self.world.find_entity(req.prompt)
        if ent is None:
            return self._result(req, "I don't know.", [("I", -0.1), ("don't", -0.1), ("know.", -0.1)])
        if ent.refuses:
            return self._result(req, REFUSAL_TEXT, [(t, -0.05) for t in REFUSAL_TEXT.split()])
        sentences = []
        logprobs = []
        for attr, value, fab in self._sample_values(ent, rng, greedy):
            sent = fact_sentence(ent.name, attr, value)
            sentences.append(sent)
            value_tokens = set(value.split())
            for tok in sent.split():
                if tok.rstrip(".") in value_tokens:
                    lp = -(0.2 + 1.6 * rng.random()) if fab else -(1.2 * rng.random())
                else:
                    lp = -(0.05 * rng.random())
                logprobs.append((tok, lp))
            if not greedy and rng.random() < self.world.flourish_rate:
                flourish = f"{ent.name} is widely discussed in the press."
                sentences.append(flourish)
                logprobs.extend((t, -(0.2 * rng.random())) for t in flourish.split())
        return self._result(req, " ".join(sentences), logprobs)

    def _greedy_gen(self, req, rng):
        return self._generate(req, rng, greedy=True)

    def _diverse_gen(self, req, rng):
        return self._generate(req, rng, greedy=req.temperature == 0)

    # decomposer / interrogator -----------------------------------------

    @staticmethod
    def _section(prompt: str, tag: str) -> str:
        m = re.search(rf"<{tag}>\s*(.*?)\s*</{tag}>", prompt, re.DOTALL)
        return m.group(1) if m else ""

    @staticmethod
    def _line_field(prompt: str, label: str) -> str:
        m = re.search(rf"^{label}: (.*)$", prompt, re.MULTILINE)
        return m.group(1).strip() if m else ""

    def _claim_extract(self, req, rng):
        text = self._section(req.prompt, "Text")
        return self._result(req, "\n".join(f"- {s}" for s in split_sentences(text)))

    def _question_gen(self, req, rng):
        claim = self._line_field(req.prompt, "Claim")
        parsed = parse_fact(claim)
        if parsed is None:
            return self._result(req, "This claim does not support a specific question.")
        name, attr, value = parsed
        return self._result(req, f"What is {name}'s {attr}; is it {value}?")

    # answerer -----------------------------------------------------------

    def _answer_gen(self, req, rng):
        question = self._line_field(req.prompt, "Question")
        m = _QUESTION.match(question)
        ent = self.world.entity(m.group("name")) if m else None
        if m is None or ent is None or m.group("attr") not in ent.facts:
            text = "Yes, that is true."
            return self._result(req, text, [(t, -(0.3 * rng.random())) for t in text.split()])
        attr, claimed = m.group("attr"), m.group("value")
        truth = ent.facts[attr]
        consistency = self.world.answer_consistency
        if self.world.context_driven and attr != ent.premise:
            consistency = self.world.dep_consistency
        value = claimed if rng.random() < consistency else truth
        text = fact_sentence(ent.name, attr, value)
        logprobs = []
        for tok in text.split():
            if tok.rstrip(".") in value.split():
                lp = -(0.25 * rng.random()) if value == truth else -(0.6 + 1.5 * rng.random())
            else:
                lp = -(0.05 * rng.random())
            logprobs.append((tok, lp))
        return self._result(req, text, logprobs)

    # judges -------------------------------------------------------------

    def _premise_of(self, ent: Entity, attr: str, value: str) -> Optional[str]:
        """Premise value a dependent claim presupposes, in context-driven worlds."""
        if not self.world.context_driven or attr == ent.premise:
            return None
        if value == ent.fabricated_facts.get(attr) and ent.premise in ent.fabricated_facts:
            return ent.fabricated_facts[ent.premise]
        if value == ent.facts.get(attr):
            return ent.facts[ent.premise]
        return None

    def _contradiction_eval(self, req, rng):
        statement = parse_fact(self._section(req.prompt, "Statement"))
        context = [parse_fact(s) for s in self._section(req.prompt, "Context").splitlines() if s.strip()]
        if statement is None:
            return self._result(req, "0")
        name, attr, value = statement
        ent = self.world.entity(name)
        relevant = conflicts = 0
        for item in context:
            if item is None or item[0] != name:
                continue
            c_attr, c_value = item[1], item[2]
            if c_attr == attr:
                relevant += 1
                conflicts += c_value != value
            elif ent is not None and attr == ent.premise:
                premise = self._premise_of(ent, c_attr, c_value)
                if premise is not None:
                    relevant += 1
                    conflicts += premise != value
        pct = 0 if relevant == 0 else round(100 * conflicts / relevant)
        return self._result(req, str(pct))

    def _entailment_eval(self, req, rng):
        claim = self._section(req.prompt, "Claim")
        response = self._section(req.prompt, "Response")
        parsed = parse_fact(claim)
        if parsed is None:
            hit = claim.strip() and claim.strip() in response
        else:
            hit = any(parse_fact(s) == parsed for s in split_sentences(response))
        if "supported or not_supported" in req.prompt:
            return self._result(req, "supported" if hit else "not_supported")
        return self._result(req, "yes" if hit else "no")

    def _correctness_eval(self, req, rng):
        parsed = parse_fact(self._section(req.prompt, "Claim"))
        reference = self._section(req.prompt, "Reference")
        if parsed is None:
            return self._result(req, "not_enough_information")
        verdict = "not_enough_information"
        for s in split_sentences(reference):
            fact = parse_fact(s)
            if fact is None or fact[:2] != parsed[:2]:
                continue
            if fact[2] == parsed[2]:
                return self._result(req, "correct")
            verdict = "incorrect"
        return self._result(req, verdict)


def scripted_backend_from_world(world: SynthWorld, **kwargs) -> WorldBackend:
    for e in world.entities:
        if not e.facts:
            raise ConfigurationError(f"entity {e.name!r} has no fact table")
    return WorldBackend(world, **kwargs)
