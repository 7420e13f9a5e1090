"""Faithfulness landscapes, distribution summaries and cost reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean, pvariance
from typing import Optional, Sequence

import numpy as np

from .backend import STAGE_LABELS, ledger_report
from .scoring import claim_f_values
from .types import RunRecords, ScoreVector

DEFAULT_BINS = 20


def interpolate(seq: Sequence[float], length: int) -> list[float]:
    """Linearly resample ``seq`` onto ``length`` evenly spaced points; endpoints are kept."""
    if not seq:
        raise ValueError("cannot interpolate an empty sequence")
    if length < 1:
        raise ValueError("target length must be positive")
    n = len(seq)
    if n == 1:
        return [float(seq[0])] * length
    if length == 1:
        return [float(seq[0])]
    out = []
    for k in range(length):
        pos = k * (n - 1) / (length - 1)
        lo = min(int(math.floor(pos)), n - 2)
        frac = pos - lo
        out.append(float(seq[lo]) if frac == 0 else float(seq[lo]) + (float(seq[lo + 1]) - float(seq[lo])) * frac)
    out[-1] = float(seq[-1])
    return out


@dataclass
class Landscape:
    dataset_tag: str
    topics: list[str]
    grid: list[list[Optional[float]]]
    flagged: list[str] = field(default_factory=list)

    @property
    def n_columns(self) -> int:
        return max((len(r) for r in self.grid), default=0)

    @property
    def scale_max(self) -> float:
        vals = [v for row in self.grid for v in row if v is not None]
        return max(vals, default=0.0)

    def to_rows(self) -> list[dict]:
        cols = self.n_columns
        out = []
        for topic, row in zip(self.topics, self.grid):
            d: dict = {"topic_id": topic}
            for j in range(cols):
                d[f"c{j}"] = row[j] if j < len(row) else None
            out.append(d)
        return out


def landscape(records: RunRecords, vectors: Sequence[ScoreVector], dataset_tag: Optional[str] = None) -> Landscape:
    """Topic x claim-index grid of W, samples resampled to the longest then averaged."""
    by_response: dict[str, list[ScoreVector]] = {}
    for v in vectors:
        by_response.setdefault(v.response_id, []).append(v)
    topics = [t for t in records.topics if dataset_tag is None or t.dataset_tag == dataset_tag]
    out = Landscape(dataset_tag or "all", [], [])
    for t in topics:
        seqs = []
        for r in records.responses_by_topic.get(t.topic_id, []):
            vs = sorted(by_response.get(r.response_id, []), key=lambda v: v.index)
            if vs:
                seqs.append([v.w_weight for v in vs])
        if not seqs:
            out.flagged.append(t.topic_id)
            out.topics.append(t.topic_id)
            out.grid.append([])
            continue
        width = max(len(s) for s in seqs)
        stacked = [interpolate(s, width) for s in seqs]
        out.topics.append(t.topic_id)
        out.grid.append([fmean(col) for col in zip(*stacked)])
    # rows cover only topics with a scored response; flagged ones are listed separately
    keep = [i for i, row in enumerate(out.grid) if row]
    out.topics = [out.topics[i] for i in keep]
    out.grid = [out.grid[i] for i in keep]
    return out


def render_heatmap(land: Landscape, path: str | Path) -> Path:
    """Write the landscape as a vector heatmap; colour scale runs from 0 to the run's max W."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cols = max(land.n_columns, 1)
    data = np.full((max(len(land.grid), 1), cols), np.nan)
    for i, row in enumerate(land.grid):
        data[i, :len(row)] = row
    vmax = land.scale_max or 1.0
    fig, ax = plt.subplots(figsize=(max(4, cols * 0.35), max(3, len(land.grid) * 0.25)))
    im = ax.imshow(data, aspect="auto", cmap="viridis", vmin=0.0, vmax=vmax, interpolation="nearest")
    ax.set_xlabel("claim index")
    ax.set_ylabel("topic")
    ax.set_title(f"unfaithfulness weighting W ({land.dataset_tag}), scale [0, {vmax:.3g}]")
    fig.colorbar(im, ax=ax)
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path


# distribution -----------------------------------------------------------

@dataclass
class FaithfulnessStats:
    dataset_tag: str
    bin_edges: list[float]
    counts: list[int]
    mean_within_response_variance: Optional[float]
    n_claims: int
    n_responses: int


def histogram(values: Sequence[float], bins: int = DEFAULT_BINS) -> tuple[list[float], list[int]]:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=(0.0, 1.0))
    return [float(e) for e in edges], [int(c) for c in counts]


def faithfulness_stats(records: RunRecords, bins: int = DEFAULT_BINS,
                       direction: str = "preceding") -> list[FaithfulnessStats]:
    """Histogram of every claim F and the mean population variance of F inside a response."""
    f_values = claim_f_values(records, direction)
    out = []
    for tag in sorted({t.dataset_tag for t in records.topics}):
        values: list[float] = []
        variances: list[float] = []
        for t in records.topics:
            if t.dataset_tag != tag:
                continue
            for r in records.responses_by_topic.get(t.topic_id, []):
                fs = [f_values[c.claim_id] for c in records.claims_by_response.get(r.response_id, [])
                      if f_values.get(c.claim_id) is not None]
                values.extend(fs)
                if fs:
                    variances.append(pvariance(fs))
        edges, counts = histogram(values, bins)
        out.append(FaithfulnessStats(tag, edges, counts, fmean(variances) if variances else None,
                                     len(values), len(variances)))
    return out


def render_stats(stats: Sequence[FaithfulnessStats]) -> str:
    lines = []
    for s in stats:
        var = "-" if s.mean_within_response_variance is None else f"{s.mean_within_response_variance:.4f}"
        lines.append(f"dataset {s.dataset_tag}: {s.n_claims} claims, {s.n_responses} responses, "
                     f"mean within-response variance {var}")
        peak = max(s.counts, default=0) or 1
        for lo, hi, c in zip(s.bin_edges, s.bin_edges[1:], s.counts):
            lines.append(f"  [{lo:.2f}, {hi:.2f}) {c:6d} {'#' * round(40 * c / peak)}")
    lines.append("variance is the population variance of F within each response, averaged over responses")
    return "\n".join(lines) + "\n"


def plot_stats(stats: Sequence[FaithfulnessStats], path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    for s in stats:
        centers = [(a + b) / 2 for a, b in zip(s.bin_edges, s.bin_edges[1:])]
        ax.step(centers, s.counts, where="mid", label=s.dataset_tag)
    ax.set_xlabel("claim faithfulness F")
    ax.set_ylabel("claims")
    ax.legend()
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return path


# cost -------------------------------------------------------------------

def cost_report(manifest: dict) -> list[dict]:
    """Per-stage token rows in generation-to-judging order, then a total row.

    The per-topic average divides by the run's topic count (every topic with a status entry
    when the manifest predates that field).
    """
    n_topics = manifest.get("n_topics") or len(manifest.get("status") or {})
    return ledger_report(manifest.get("ledger") or {}, n_topics)


def render_cost(rows: Sequence[dict]) -> str:
    from .evaluation import render_text

    return render_text(rows)


__all__ = [
    "STAGE_LABELS", "Landscape", "FaithfulnessStats", "interpolate", "landscape", "render_heatmap",
    "faithfulness_stats", "render_stats", "plot_stats", "cost_report", "render_cost", "histogram",
]
