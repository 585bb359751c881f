"""Multi-pass augmented generative error correction (MPA GER) for ASR transcripts."""

from .alignment import Alignment, EditCounts, EditOp, align, edit_counts, edit_distance
from .corpus import Corpus, Hypothesis, HypothesisSet, Utterance, load_jsonl, load_trn, save_jsonl, save_trn, select_streams
from .llm_client import (
    BackendConfig,
    GuardPolicy,
    HttpBackend,
    MockBackend,
    PromptTemplate,
    build_prompt,
    correct,
    guard_output,
    load_template,
)
from .pipeline import GerRun, MpaScheme, RunReport, llm_ger, run_baseline_rover, run_mpa
from .rover import TransitionNetwork, VoteOptions, build_wtn, rover_combine, vote
from .scoring import CerReport, bucket_report, corpus_cer, score_pair
from .stats import DegenerateTestError, paired_ttest
from .textnorm import NormalizationOptions, TokenSequence, normalize, tokenize

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "BackendConfig",
    "CerReport",
    "Corpus",
    "DegenerateTestError",
    "EditCounts",
    "EditOp",
    "GerRun",
    "GuardPolicy",
    "HttpBackend",
    "Hypothesis",
    "HypothesisSet",
    "MockBackend",
    "MpaScheme",
    "NormalizationOptions",
    "PromptTemplate",
    "RunReport",
    "TokenSequence",
    "TransitionNetwork",
    "Utterance",
    "VoteOptions",
    "align",
    "bucket_report",
    "build_prompt",
    "build_wtn",
    "corpus_cer",
    "correct",
    "edit_counts",
    "edit_distance",
    "guard_output",
    "llm_ger",
    "load_jsonl",
    "load_template",
    "load_trn",
    "normalize",
    "paired_ttest",
    "rover_combine",
    "run_baseline_rover",
    "run_mpa",
    "save_jsonl",
    "save_trn",
    "score_pair",
    "select_streams",
    "tokenize",
    "vote",
]
