"""Claim-level uncertainty for long-form generations by interrogating the model.

Each claim of a sampled response is turned into questions, answered without
context, and the answers are checked against the claims that came before it.
The resulting faithfulness is propagated forward along the response and
combined with cross-sample entailment into a per-claim uncertainty.
"""
from __future__ import annotations

from .kernels import BACKEND as KERNEL_BACKEND
from .pipeline import PipelineConfig, run_pipeline
from .scoring import (
    ScoreOptions,
    answer_entropy,
    claim_faithfulness,
    claim_uncertainty,
    score_run,
    unfaithfulness_weighting,
)
from .store import load_run, open_run
from .types import KernelSpec, RunRecords

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND", "KernelSpec", "PipelineConfig", "RunRecords", "ScoreOptions",
    "answer_entropy", "claim_faithfulness", "claim_uncertainty", "load_run", "open_run",
    "run_pipeline", "score_run", "unfaithfulness_weighting",
]
