"""Faithfulness, unfaithfulness weighting and claim uncertainty.

Everything here is a pure function of stored artifacts; no model calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import fmean
from typing import Optional, Sequence

from . import baselines, kernels
from .types import KernelSpec, RunRecords, ScoreVector

# method name -> orientation of the raw score
ORIENTATION = {
    "S": "confident",
    "C_C": "confident",
    "Freq": "confident",
    "F": "confident",
    "IUQ": "uncertain",
    "IUQ-conf": "confident",
    "IUQ-rev": "uncertain",
    "U_A": "uncertain",
    "MaxTokEnt": "uncertain",
    "PPL": "uncertain",
}


@dataclass(frozen=True)
class FaithfulnessRecord:
    claim_id: str
    per_question_x: tuple[float, ...]
    f: float


def question_contradiction(scores: Sequence[Optional[float]]) -> Optional[float]:
    usable = [s for s in scores if s is not None]
    return fmean(usable) if usable else None


def claim_faithfulness(grid: Sequence[Sequence[Optional[float]]], claim_id: str = "") -> Optional[FaithfulnessRecord]:
    """One minus the mean, over questions, of the mean answer contradiction.

    ``grid`` holds one row per question with the per-answer contradiction
    scores; None marks a missing slot. Questions with no usable score are
    dropped; if none remain the claim has no faithfulness (None).
    """
    per_q = [x for x in (question_contradiction(row) for row in grid) if x is not None]
    if not per_q:
        return None
    return FaithfulnessRecord(claim_id, tuple(per_q), 1.0 - fmean(per_q))


def response_faithfulness(values: Sequence[float]) -> Optional[float]:
    values = [v for v in values if v is not None]
    return fmean(values) if values else None


def unfaithfulness_weighting(f_sequence: Sequence[float], kernel: KernelSpec = KernelSpec()) -> list[float]:
    """Propagate per-claim unfaithfulness ``1 - F`` forward along the response.

    exp:           sum_{j<=i} (1 - F_j) * exp(-lam * (i - j))
    none:          1 - F_i
    accumulative:  sum_{j<=i} (1 - F_j)
    linear:        sum_{j<=i} (1 - F_j) * max(0, m * j + b)
    """
    unfaith = [1.0 - f for f in f_sequence]
    if kernel.variant == "none":
        return unfaith
    if kernel.variant == "exp":
        return list(kernels.exp_weights(unfaith, kernel.lam))
    if kernel.variant == "accumulative":
        return list(kernels.cumulative_weights(unfaith))
    return list(kernels.linear_weights(unfaith, kernel.m, kernel.b))


def claim_uncertainty(s: float, w: float) -> float:
    return s * w


def iuq_confidence(s: float, w: float) -> float:
    """Composite confidence S * exp(-W): higher means more trustworthy."""
    return s * math.exp(-w)


def answer_entropy(token_logprobs, normalize: bool = False) -> float:
    """Sequence negative log-likelihood of a sampled answer."""
    if not token_logprobs:
        raise ValueError("no tokens")
    total = sum(-float(lp) for _, lp in token_logprobs) + 0.0
    return total / len(token_logprobs) if normalize else total


def answer_level_uncertainty(entropies: Sequence[Sequence[Optional[float]]]) -> Optional[float]:
    """Mean over questions of the mean answer entropy; None when nothing is available."""
    per_q = [fmean(v) for v in ([e for e in row if e is not None] for row in entropies) if v]
    return fmean(per_q) if per_q else None


# whole-run scoring --------------------------------------------------------

@dataclass
class ScoreOptions:
    kernel: KernelSpec = KernelSpec()
    direction: str = "preceding"
    n_first: Optional[int] = None
    include_own_response: bool = True
    normalize_entropy: bool = False


def claim_f_values(records: RunRecords, direction: str = "preceding") -> dict[str, Optional[float]]:
    out = {}
    for c in records.claims:
        rec = claim_faithfulness(records.contradiction_grid(c.claim_id, direction), c.claim_id)
        out[c.claim_id] = None if rec is None else rec.f
    return out


def response_weights(records: RunRecords, f_values: dict[str, Optional[float]],
                     kernel: KernelSpec) -> dict[str, float]:
    """W for every claim; claims lacking F count as fully faithful (F = 1)."""
    out = {}
    for claims in records.claims_by_response.values():
        seq = [1.0 if f_values.get(c.claim_id) is None else f_values[c.claim_id] for c in claims]
        for c, w in zip(claims, unfaithfulness_weighting(seq, kernel)):
            out[c.claim_id] = w
    return out


def considered_responses(records: RunRecords, topic_id: str, n_first: Optional[int]) -> list:
    live = [r for r in records.responses_by_topic.get(topic_id, []) if not r.refusal]
    if n_first is not None:
        live = [r for r in live if r.sample_index < n_first]
    return live


def score_run(records: RunRecords, opts: ScoreOptions = ScoreOptions(),
              external: Optional[dict[str, dict]] = None) -> tuple[list[ScoreVector], list[str]]:
    """Score every claim of the run; returns (score vectors, diagnostics)."""
    diagnostics: list[str] = []
    f_main = claim_f_values(records, opts.direction)
    w_main = response_weights(records, f_main, opts.kernel)
    other = "subsequent" if opts.direction == "preceding" else "preceding"
    has_other = any(x.direction == other for x in records.contradictions)
    w_rev = response_weights(records, claim_f_values(records, other), opts.kernel) if has_other else {}
    missing_f = [cid for cid, f in f_main.items() if f is None]
    if missing_f:
        diagnostics.append(f"{len(missing_f)} claims without usable contradiction scores (F treated as 1 in W)")

    out: list[ScoreVector] = []
    unaligned = 0
    for topic in records.topics:
        considered = considered_responses(records, topic.topic_id, opts.n_first)
        considered_ids = [r.response_id for r in considered]
        claims = [c for r in records.responses_by_topic.get(topic.topic_id, []) if not r.refusal
                  for c in records.claims_by_response.get(r.response_id, [])]
        if not claims or not considered:
            continue
        graph = baselines.EntailmentGraph(claims=[c.claim_id for c in claims], responses=considered_ids)
        entail: dict[str, list[bool]] = {}
        support: dict[str, list[bool]] = {}
        for c in claims:
            verdicts = records.entailments_by_claim.get((c.claim_id, "entail"), {})
            sup = records.entailments_by_claim.get((c.claim_id, "support"), {})
            entail[c.claim_id] = []
            support[c.claim_id] = []
            for rid in considered_ids:
                if rid == c.response_id and not opts.include_own_response:
                    continue
                if rid in verdicts:
                    entail[c.claim_id].append(verdicts[rid])
                    if verdicts[rid]:
                        graph.add_edge(c.claim_id, rid)
                if rid != c.response_id and rid in sup:
                    support[c.claim_id].append(sup[rid])
        cc = baselines.closeness_centrality(graph)

        for c in claims:
            source = records.response_by_id[c.response_id]
            s = baselines.claim_entailment_s(entail[c.claim_id]) if entail[c.claim_id] else None
            f = f_main[c.claim_id]
            w = w_main[c.claim_id]
            u = None if s is None else claim_uncertainty(s, w)
            ent_grid = []
            for q in records.questions_by_claim.get(c.claim_id, []):
                row = []
                for a in records.answers_by_question.get(q.question_id, []):
                    row.append(answer_entropy(a.token_logprobs, opts.normalize_entropy)
                               if a.token_logprobs else None)
                ent_grid.append(row)
            u_a = answer_level_uncertainty(ent_grid)
            mte = baselines.max_token_entropy(c.text, source.token_logprobs)
            ppl = baselines.perplexity(c.text, source.token_logprobs)
            if mte is None:
                unaligned += 1
            base = {
                "S": s,
                "C_C": cc.get(c.claim_id),
                "Freq": baselines.frequency_from_verdicts(support[c.claim_id]) if support[c.claim_id] else None,
                "F": f,
                "IUQ": u,
                "IUQ-conf": None if s is None else iuq_confidence(s, w),
                "U_A": u_a,
                "MaxTokEnt": mte,
                "PPL": ppl,
            }
            orientation = dict(ORIENTATION)
            if has_other:
                base["IUQ-rev"] = None if s is None else claim_uncertainty(s, w_rev[c.claim_id])
            else:
                orientation.pop("IUQ-rev")
            for method, spec in (external or {}).items():
                base[method] = spec["scores"].get(c.claim_id)
                orientation[method] = spec["orientation"]
            out.append(ScoreVector(
                claim_id=c.claim_id, topic_id=c.topic_id, response_id=c.response_id, index=c.index,
                s_entail=s, f_faith=f, w_weight=w, u_iuq=u, u_answer=u_a,
                baselines=base, orientation=orientation,
            ))
    if unaligned:
        diagnostics.append(f"{unaligned} claims could not be aligned to response tokens")
    return out, diagnostics


def model_faithfulness(records: RunRecords, direction: str = "preceding") -> dict:
    """F(R) per response, F averaged per topic, and per-dataset model faithfulness."""
    f_values = claim_f_values(records, direction)
    per_response: dict[str, float] = {}
    for rid, claims in records.claims_by_response.items():
        fr = response_faithfulness([f_values[c.claim_id] for c in claims if f_values[c.claim_id] is not None])
        if fr is not None:
            per_response[rid] = fr
    per_topic: dict[str, float] = {}
    for topic_id, responses in records.responses_by_topic.items():
        vals = [per_response[r.response_id] for r in responses if r.response_id in per_response]
        if vals:
            per_topic[topic_id] = fmean(vals)
    per_dataset: dict[str, list[float]] = {}
    for t in records.topics:
        if t.topic_id in per_topic:
            per_dataset.setdefault(t.dataset_tag, []).append(per_topic[t.topic_id])
    return {
        "per_response": per_response,
        "per_topic": per_topic,
        "per_dataset": {tag: fmean(v) for tag, v in sorted(per_dataset.items())},
    }


def dataset_model_faithfulness(topic_values: Sequence[float]) -> Optional[float]:
    return fmean(topic_values) if topic_values else None
