"""Correctness labeling, ranking metrics and the ablation harnesses."""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, fields
from statistics import fmean
from typing import Callable, Iterable, Optional, Sequence

from scipy.stats import norm

from . import kernels, prompts
from .backend import Backend, CompletionRequest
from .pipeline import _complete_parsed, _fan_out, _raise_first
from .scoring import ScoreOptions, score_run
from .types import ClaimRecord, CorrectnessLabel, KernelSpec, RunRecords, ScoreVector, TopicItem

log = logging.getLogger(__name__)

Z_95 = 1.96
PASSAGE_TOKENS = 256
PASSAGE_STRIDE = 128
TOP_K_PASSAGES = 3


class UndefinedMetric(ValueError):
    """A metric has no value for this input; the message says why."""


# metrics ----------------------------------------------------------------

def _split(pairs: Iterable[tuple[float, int]]) -> tuple[list[float], list[int]]:
    scores, labels = [], []
    for s, y in pairs:
        scores.append(float(s))
        labels.append(int(y))
    return scores, labels


def auroc(pairs: Iterable[tuple[float, int]]) -> float:
    """Mann-Whitney AUROC of (confidence, label) pairs; ties count one half."""
    scores, labels = _split(pairs)
    npos = sum(labels)
    if npos == 0 or npos == len(labels):
        raise UndefinedMetric("AUROC needs at least one positive and one negative")
    return kernels.mann_whitney_auc(scores, labels)


def auprc(pairs: Iterable[tuple[float, int]]) -> float:
    """Average precision, with equal scores sharing a single threshold."""
    scores, labels = _split(pairs)
    if not any(labels):
        raise UndefinedMetric("AUPRC needs at least one positive")
    return kernels.average_precision(scores, labels)


def pearson_with_ci(pairs: Iterable[tuple[float, float]]) -> tuple[float, float, float, float]:
    """Pearson r with a Fisher-z 95% interval and two-sided normal p-value."""
    xs, ys = [], []
    for x, y in pairs:
        xs.append(float(x))
        ys.append(float(y))
    n = len(xs)
    if n < 4:
        raise UndefinedMetric(f"Pearson interval needs n >= 4, got {n}")
    mx, my = fmean(xs), fmean(ys)
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx == 0 or syy == 0:
        raise UndefinedMetric("zero variance in one column")
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    se = 1.0 / math.sqrt(n - 3)
    if abs(r) == 1.0:
        return r, r, r, 0.0
    z = math.atanh(r)
    lo, hi = math.tanh(z - Z_95 * se), math.tanh(z + Z_95 * se)
    p = 2.0 * norm.sf(abs(z) / se)
    return r, lo, hi, float(p)


# labeling ---------------------------------------------------------------

_TOKEN = re.compile(r"\w+")


def split_passages(text: str, size: int = PASSAGE_TOKENS, stride: int = PASSAGE_STRIDE) -> list[str]:
    """Overlapping whitespace-token windows covering the whole text."""
    words = text.split()
    if not words:
        return []
    out = []
    start = 0
    while True:
        out.append(" ".join(words[start:start + size]))
        if start + size >= len(words):
            break
        start += stride
    return out


class LexicalRetriever:
    """Ranks passages by the share of the claim's normalized tokens they contain."""

    def rank(self, claim: str, passages: Sequence[str], k: int = TOP_K_PASSAGES) -> list[str]:
        q = set(_TOKEN.findall(claim.lower()))
        if not q:
            return list(passages[:k])
        scored = []
        for i, p in enumerate(passages):
            overlap = len(q & set(_TOKEN.findall(p.lower()))) / len(q)
            scored.append((-overlap, i))
        scored.sort()
        return [passages[i] for _, i in scored[:k]]


def label_claims(claims: Sequence[ClaimRecord], topic: TopicItem, backend: Backend,
                 retriever: Optional[LexicalRetriever] = None, template: str = prompts.CORRECTNESS,
                 max_in_flight: int = 8, diagnostics: Optional[list[str]] = None) -> list[CorrectnessLabel]:
    """Three-way correctness labels from a judge reading retrieved reference passages."""
    if not topic.reference or not topic.reference.strip():
        return [CorrectnessLabel(c.claim_id, "not_enough_information", "no reference") for c in claims]
    retriever = retriever or LexicalRetriever()
    passages = split_passages(topic.reference)

    def one(claim: ClaimRecord) -> CorrectnessLabel:
        ref = "\n\n".join(retriever.rank(claim.text, passages))
        prompt = prompts.render(template, claim=claim.text, reference=ref)
        req = CompletionRequest("correctness_eval", prompt, temperature=0.0, max_tokens=16)
        verdict, raw = _complete_parsed(backend, req, prompts.parse_correctness)
        if verdict is None:
            if diagnostics is not None:
                diagnostics.append(f"claim {claim.claim_id}: unparseable verdict {raw!r}")
            return CorrectnessLabel(claim.claim_id, "not_enough_information", raw)
        return CorrectnessLabel(claim.claim_id, verdict, raw)

    results = _fan_out(one, list(claims), max_in_flight)
    _raise_first(results)
    return results  # type: ignore[return-value]


# method evaluation ------------------------------------------------------

@dataclass
class MethodEvalRow:
    method_name: str
    dataset_tag: str
    orientation: str
    auroc: Optional[float]
    auprc: Optional[float]
    pearson_r: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    p_value: Optional[float]
    n_claims: int
    n_excluded: int
    note: str = ""


def oriented(value: float, orientation: str) -> float:
    return -value if orientation == "uncertain" else value


def method_pairs(vectors: Sequence[ScoreVector], labels: dict[str, int], method: str,
                 orientation: str) -> tuple[list[tuple[float, int]], int]:
    pairs, excluded = [], 0
    for v in vectors:
        y = labels.get(v.claim_id)
        x = v.baselines.get(method)
        if y is None or x is None or (isinstance(x, float) and math.isnan(x)):
            excluded += 1
            continue
        pairs.append((oriented(x, orientation), y))
    return pairs, excluded


def _safe(fn: Callable, pairs, notes: list[str]):
    try:
        return fn(pairs)
    except UndefinedMetric as exc:
        notes.append(str(exc))
        return None


def evaluate_method(vectors: Sequence[ScoreVector], labels: dict[str, int], method: str,
                    orientation: str, dataset_tag: str = "all") -> MethodEvalRow:
    pairs, excluded = method_pairs(vectors, labels, method, orientation)
    notes: list[str] = []
    a = _safe(auroc, pairs, notes) if len(pairs) >= 2 else None
    ap = _safe(auprc, pairs, notes) if len(pairs) >= 2 else None
    stats = _safe(pearson_with_ci, pairs, notes)
    if len(pairs) < 2:
        notes.append("fewer than 2 claims")
    r, lo, hi, p = stats if stats else (None, None, None, None)
    return MethodEvalRow(method, dataset_tag, orientation, a, ap, r, lo, hi, p, len(pairs), excluded,
                         "; ".join(dict.fromkeys(notes)))


def binary_labels(records: RunRecords) -> dict[str, int]:
    """claim_id -> 1/0; claims without a usable label are left out."""
    return {l.claim_id: l.binary for l in records.labels if l.binary is not None}


def evaluate_methods(records: RunRecords, vectors: Sequence[ScoreVector],
                     methods: Optional[Sequence[str]] = None) -> list[MethodEvalRow]:
    """One row per (method, dataset tag), plus an "all" row when there are several tags."""
    if not records.labels:
        raise UndefinedMetric("labels missing")
    labels = binary_labels(records)
    orientation: dict[str, str] = {}
    for v in vectors:
        for k, o in v.orientation.items():
            orientation.setdefault(k, o)
    names = list(methods) if methods else list(orientation)
    tags = sorted({records.topic_by_id[v.topic_id].dataset_tag for v in vectors})
    groups = {tag: [v for v in vectors if records.topic_by_id[v.topic_id].dataset_tag == tag] for tag in tags}
    if len(tags) > 1:
        groups["all"] = list(vectors)
    rows = []
    for m in names:
        if m not in orientation:
            continue
        for tag, vs in groups.items():
            rows.append(evaluate_method(vs, labels, m, orientation[m], tag))
    return rows


def ablate_kernels(records: RunRecords, kernel_specs: Sequence[KernelSpec],
                   direction: str = "preceding") -> list[MethodEvalRow]:
    """IUQ AUROC under each kernel; only W is recomputed, no model calls."""
    labels = binary_labels(records)
    rows = []
    for spec in kernel_specs:
        vectors, _ = score_run(records, ScoreOptions(kernel=spec, direction=direction))
        row = evaluate_method(vectors, labels, "IUQ", "uncertain")
        row.method_name = spec.label
        row.note = "; ".join(x for x in (str(spec), row.note) if x)
        rows.append(row)
    return rows


def ablate_num_generations(records: RunRecords, n_values: Sequence[int], opts: ScoreOptions = ScoreOptions(),
                           methods: Sequence[str] = ("S", "IUQ")) -> list[MethodEvalRow]:
    """Recompute S (and IUQ) from the first n samples only, for every n."""
    labels = binary_labels(records)
    n_max = max((r.sample_index + 1 for r in records.responses), default=0)
    rows = []
    for n in n_values:
        if n > n_max:
            for m in methods:
                rows.append(MethodEvalRow(m, f"n={n}", "", None, None, None, None, None, None, 0, 0,
                                          f"skipped: run has only {n_max} samples"))
            continue
        sub = ScoreOptions(kernel=opts.kernel, direction=opts.direction, n_first=n,
                           include_own_response=opts.include_own_response)
        vectors, _ = score_run(records, sub)
        for m in methods:
            orient = vectors[0].orientation.get(m, "confident") if vectors else "confident"
            rows.append(evaluate_method(vectors, labels, m, orient, f"n={n}"))
    return rows


def compare_iuq_rev(records: RunRecords, opts: ScoreOptions = ScoreOptions()) -> list[dict]:
    """S, IUQ and IUQ-rev AUROC per dataset tag, with deltas relative to IUQ in percent."""
    vectors, _ = score_run(records, opts)
    rows = evaluate_methods(records, vectors, ["S", "IUQ", "IUQ-rev"])
    by_tag: dict[str, dict[str, Optional[float]]] = {}
    for r in rows:
        by_tag.setdefault(r.dataset_tag, {})[r.method_name] = r.auroc
    out = []
    for tag, vals in by_tag.items():
        iuq = vals.get("IUQ")
        flags = []
        if "IUQ-rev" not in vals:
            flags.append("subsequent direction missing")
        vacuous = [x for x in records.contradictions if x.direction == "subsequent"]
        if vacuous and all(x.vacuous for x in vacuous):
            flags.append("all subsequent contexts vacuous")
        entry = {"dataset_tag": tag, "S": vals.get("S"), "IUQ": iuq, "IUQ-rev": vals.get("IUQ-rev"),
                 "S_delta_pct": None, "IUQ-rev_delta_pct": None, "flags": "; ".join(flags)}
        if iuq:
            for key in ("S", "IUQ-rev"):
                if vals.get(key) is not None:
                    entry[f"{key}_delta_pct"] = 100.0 * (vals[key] - iuq) / iuq
        out.append(entry)
    return out


def label_stats(records: RunRecords) -> Counter:
    return Counter(l.label for l in records.labels)


# tables -----------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def rows_to_dicts(rows: Sequence) -> list[dict]:
    return [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]


def write_table(rows: Sequence, delimiter: str = "\t") -> str:
    dicts = rows_to_dicts(rows)
    if not dicts:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    header = list(dicts[0])
    w.writerow(header)
    for d in dicts:
        w.writerow([_cell(d.get(k)) for k in header])
    return buf.getvalue()


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        if re.fullmatch(r"[-+]?\d+", text):
            return int(text)
        return float(text)
    except ValueError:
        return text


def read_table(text: str, delimiter: str = "\t") -> list[dict]:
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    rows = list(reader)
    if not rows:
        return []
    header = rows[0]
    return [{k: _parse_cell(v) for k, v in zip(header, row)} for row in rows[1:]]


def read_eval_rows(text: str, delimiter: str = "\t") -> list[MethodEvalRow]:
    names = [f.name for f in fields(MethodEvalRow)]
    out = []
    for d in read_table(text, delimiter):
        kwargs = {k: d.get(k) for k in names}
        for k in ("method_name", "dataset_tag", "orientation", "note"):
            kwargs[k] = "" if kwargs[k] is None else str(kwargs[k])
        for k in ("n_claims", "n_excluded"):
            kwargs[k] = int(kwargs[k] or 0)
        for k in ("auroc", "auprc", "pearson_r", "ci_low", "ci_high", "p_value"):
            kwargs[k] = None if kwargs[k] is None else float(kwargs[k])
        out.append(MethodEvalRow(**kwargs))
    return out


def render_text(rows: Sequence, columns: Optional[Sequence[str]] = None, precision: int = 3) -> str:
    """Aligned plain-text table; missing values print as '-'."""
    dicts = rows_to_dicts(rows)
    if not dicts:
        return "(no rows)\n"
    columns = list(columns or dicts[0])

    def fmt(v) -> str:
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.{precision}f}"
        return str(v)

    body = [[fmt(d.get(c)) for c in columns] for d in dicts]
    widths = [max(len(c), *(len(r[i]) for r in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in body]
    return "\n".join(lines) + "\n"


def render_eval(rows: Sequence[MethodEvalRow]) -> str:
    """Method rows with AUROC/AUPRC and r [CI] in one column."""
    table = []
    for r in rows:
        corr = "-"
        if r.pearson_r is not None:
            corr = f"{r.pearson_r:.3f} [{r.ci_low:.3f}, {r.ci_high:.3f}]"
        table.append({"method": r.method_name, "dataset": r.dataset_tag, "orientation": r.orientation,
                      "AUROC": r.auroc, "AUPRC": r.auprc, "r [95% CI]": corr, "p": r.p_value,
                      "n": r.n_claims, "excluded": r.n_excluded})
    return render_text(table)
