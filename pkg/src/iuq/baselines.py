"""Reference uncertainty methods computed from the same stored artifacts."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import kernels

log = logging.getLogger(__name__)

ALIGN_THRESHOLD = 0.6


def claim_entailment_s(verdicts: Sequence[bool]) -> float:
    """Fraction of responses whose judge verdict entails the claim."""
    if not verdicts:
        raise ValueError("need at least one verdict")
    return sum(bool(v) for v in verdicts) / len(verdicts)


@dataclass
class EntailmentGraph:
    """Bipartite claim/response graph; edges only join a claim to a response."""

    claims: list[str] = field(default_factory=list)
    responses: list[str] = field(default_factory=list)
    edges: set[tuple[str, str]] = field(default_factory=set)

    def add_edge(self, claim: str, response: str) -> None:
        if claim not in self.claims or response not in self.responses:
            raise KeyError(f"edge ({claim}, {response}) must join a known claim to a known response")
        self.edges.add((claim, response))

    @property
    def nodes(self) -> list[tuple[str, str]]:
        return [("c", c) for c in self.claims] + [("r", r) for r in self.responses]

    def csr(self) -> tuple[list[int], list[int]]:
        index = {node: i for i, node in enumerate(self.nodes)}
        adj: list[list[int]] = [[] for _ in index]
        for c, r in sorted(self.edges):
            a, b = index[("c", c)], index[("r", r)]
            adj[a].append(b)
            adj[b].append(a)
        indptr = [0]
        indices: list[int] = []
        for nbrs in adj:
            indices.extend(nbrs)
            indptr.append(len(indices))
        return indptr, indices


def closeness_centrality(graph: EntailmentGraph) -> dict[str, float]:
    """Closeness of every claim node, Wasserman-Faust scaled for disconnected graphs."""
    indptr, indices = graph.csr()
    values = kernels.closeness(indptr, indices)
    return {c: values[i] for i, c in enumerate(graph.claims)}


def frequency_from_verdicts(verdicts: Sequence[bool]) -> float:
    if not verdicts:
        raise ValueError("need at least one alternative response")
    return sum(bool(v) for v in verdicts) / len(verdicts)


def frequency_scoring(claim, alternatives, backend, cfg=None) -> float:
    """Share of alternative responses the support judge says imply the claim."""
    from .pipeline import evaluate_entailment

    if not alternatives:
        raise ValueError("need at least one alternative response")
    verdicts = []
    for r in alternatives:
        verdict, parsed = evaluate_entailment(claim, r, backend, cfg, judge="support")
        if not parsed:
            log.warning("support verdict for %s unparseable; counted as not supporting", claim.claim_id)
        verdicts.append(verdict)
    return frequency_from_verdicts(verdicts)


# token alignment --------------------------------------------------------

_NORM = re.compile(r"[^\w]+")


def _norm(token: str) -> str:
    return _NORM.sub("", token.lower())


def align_claim(claim_text: str, token_logprobs) -> Optional[list[float]]:
    """Logprobs of the response span best matching the claim, or None.

    The span is the longest common contiguous run of normalized tokens; it
    counts as aligned when it covers at least 60% of the claim's tokens.
    """
    if not token_logprobs:
        return None
    claim = [t for t in (_norm(x) for x in claim_text.split()) if t]
    resp = [_norm(t) for t, _ in token_logprobs]
    if not claim:
        return None
    best, end = 0, 0
    prev = [0] * (len(claim) + 1)
    for i in range(1, len(resp) + 1):
        cur = [0] * (len(claim) + 1)
        ri = resp[i - 1]
        if ri:
            for j in range(1, len(claim) + 1):
                if ri == claim[j - 1]:
                    cur[j] = prev[j - 1] + 1
                    if cur[j] > best:
                        best, end = cur[j], i
        prev = cur
    if best / len(claim) < ALIGN_THRESHOLD:
        return None
    return [float(lp) for _, lp in token_logprobs[end - best:end]]


def max_token_entropy(claim_text: str, token_logprobs) -> Optional[float]:
    """Largest single-token surprisal over the aligned span; None if unaligned."""
    span = align_claim(claim_text, token_logprobs)
    if span is None:
        return None
    return max(-lp for lp in span) + 0.0


def perplexity(claim_text: str, token_logprobs) -> Optional[float]:
    span = align_claim(claim_text, token_logprobs)
    if span is None:
        return None
    return math.exp(sum(-lp for lp in span) / len(span))


# external scores --------------------------------------------------------

ORIENTATIONS = {"confident": "confident", "higher-is-confident": "confident",
                "uncertain": "uncertain", "higher-is-uncertain": "uncertain"}


@dataclass
class ExternalScores:
    method: str
    orientation: str
    scores: dict[str, float]
    rejected: list[str]
    warnings: list[str]


def parse_external_scores(text: str, known_ids: Optional[Iterable[str]] = None) -> ExternalScores:
    """Read a two-column (claim_id, score) file.

    The first line names the method and orientation, e.g.
    ``# method=CCP orientation=uncertain``; a ``claim_id,score`` header row may
    follow. Comma or tab delimited. Duplicate ids keep the last row.
    """
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("external score file must start with '# method=<name> orientation=<dir>'")
    meta = dict(re.findall(r"(\w+)\s*=\s*([\w\-]+)", lines[0]))
    if "method" not in meta or meta.get("orientation") not in ORIENTATIONS:
        raise ValueError(f"bad header line {lines[0]!r}")
    body = "\n".join(lines[1:])
    delim = "\t" if "\t" in body else ","
    known = set(known_ids) if known_ids is not None else None
    scores: dict[str, float] = {}
    rejected: list[str] = []
    warnings: list[str] = []
    for row in csv.reader(io.StringIO(body), delimiter=delim):
        if not row or not row[0].strip():
            continue
        cid = row[0].strip()
        if cid == "claim_id":
            continue
        try:
            value = float(row[1])
        except (IndexError, ValueError):
            rejected.append(f"{cid}: unreadable score")
            continue
        if known is not None and cid not in known:
            rejected.append(f"{cid}: unknown claim_id")
            continue
        if cid in scores:
            warnings.append(f"{cid}: duplicate row, last value kept")
        scores[cid] = value
    return ExternalScores(meta["method"], ORIENTATIONS[meta["orientation"]], scores, rejected, warnings)


def ingest_external_scores(method_name: Optional[str], path: str | Path, run_dir: str | Path,
                           known_ids: Optional[Iterable[str]] = None) -> ExternalScores:
    """Parse a score file and persist it in the run's ``external_scores.json``."""
    parsed = parse_external_scores(Path(path).read_text(), known_ids)
    if method_name:
        parsed.method = method_name
    target = Path(run_dir) / "external_scores.json"
    existing = json.loads(target.read_text()) if target.exists() else {}
    existing[parsed.method] = {"orientation": parsed.orientation, "scores": parsed.scores}
    target.write_text(json.dumps(existing, indent=2, sort_keys=True))
    for msg in parsed.rejected:
        log.warning("rejected row: %s", msg)
    for msg in parsed.warnings:
        log.warning("%s", msg)
    return parsed


def load_external_scores(run_dir: str | Path) -> dict[str, dict]:
    target = Path(run_dir) / "external_scores.json"
    return json.loads(target.read_text()) if target.exists() else {}
