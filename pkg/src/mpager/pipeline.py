"""LLM GER and multi-pass augmented (MPA) GER over a corpus.

An MPA run sends candidate lists to one or more LLM backends, guards every
output against its anchor (the ASR 1-best), and ROVER-merges
``[anchor, output_1, ..., output_k]`` per utterance. The anchor always goes
first so it is the network base.

Two candidate sources are supported per GER run:

* ``n_best_of_one_system``: ranks 1..N of a single system;
* ``one_best_of_n_systems``: rank-1 outputs of N systems, presented to the
  LLM exactly like an N-best list.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .corpus import MISSING_ERROR, MISSING_SKIP, Corpus, CorpusError, StreamSpec, select_streams
from .llm_client import (
    Backend,
    ConfigError,
    EmptyCompletionError,
    GuardPolicy,
    HttpBackend,
    LLMError,
    MockBackend,
    PromptTemplate,
    TransportError,
    backend_from_config,
    correct,
    guard_output,
    load_template,
)
from .rover import VoteOptions, rover_combine
from .scoring import CerReport, UttScore, corpus_cer, score_pair
from .textnorm import CHAR, DEFAULT_OPTIONS, MODES, NormalizationOptions, normalize, tokenize

log = logging.getLogger(__name__)

N_BEST_OF_ONE_SYSTEM = "n_best_of_one_system"
ONE_BEST_OF_N_SYSTEMS = "one_best_of_n_systems"
SOURCES = (N_BEST_OF_ONE_SYSTEM, ONE_BEST_OF_N_SYSTEMS)

ANCHOR = "anchor"
MERGED = "merged"


@dataclass(frozen=True)
class GerRun:
    name: str
    source: str
    streams: tuple
    backend: str
    template: str = "english"

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        if self.source not in SOURCES:
            raise ConfigError(f"run {self.name}: unknown candidate source {self.source!r}")
        if not self.streams:
            raise ConfigError(f"run {self.name}: no source streams")
        if self.name in (ANCHOR, MERGED):
            raise ConfigError(f"run name {self.name!r} is reserved")
        specs = [StreamSpec.parse(s) for s in self.streams]
        if self.source == N_BEST_OF_ONE_SYSTEM and len({s.system for s in specs}) != 1:
            raise ConfigError(f"run {self.name}: n-best streams must come from one system")
        if self.source == ONE_BEST_OF_N_SYSTEMS:
            if any(s.rank != 1 for s in specs) or len({s.system for s in specs}) != len(specs):
                raise ConfigError(f"run {self.name}: 1-best streams must be rank 1 of distinct systems")


@dataclass(frozen=True)
class MpaScheme:
    anchor: str
    ger_runs: tuple
    merge: VoteOptions = VoteOptions()
    guard: GuardPolicy = GuardPolicy()
    mode: str = CHAR
    normalize_llm_inputs: bool = False
    norm: NormalizationOptions = DEFAULT_OPTIONS
    missing: str = MISSING_ERROR

    def __post_init__(self):
        object.__setattr__(self, "ger_runs", tuple(self.ger_runs))
        StreamSpec.parse(self.anchor)
        if not self.ger_runs:
            raise ConfigError("scheme needs at least one GER run")
        names = [r.name for r in self.ger_runs]
        if len(set(names)) != len(names):
            raise ConfigError("GER run names must be unique")
        if self.mode not in MODES:
            raise ConfigError(f"unknown token mode {self.mode!r}")
        if self.missing not in (MISSING_ERROR, MISSING_SKIP):
            raise ConfigError(f"unknown missing-stream policy {self.missing!r}")

    def streams(self) -> list:
        out = [self.anchor]
        for r in self.ger_runs:
            out.extend(s for s in r.streams if s not in out)
        return out


@dataclass(frozen=True)
class GerOutcome:
    text: str
    accepted: bool
    reasons: tuple = ()
    raw: Optional[str] = None

    @property
    def fell_back(self) -> bool:
        return not self.accepted


def llm_ger(
    candidates: Sequence[str],
    backend: Backend,
    template: PromptTemplate,
    guard: GuardPolicy = GuardPolicy(),
    anchor: Optional[str] = None,
    utt_id: Optional[str] = None,
) -> GerOutcome:
    """Prompt, correct, guard. Any per-utterance failure degrades to the anchor.

    ``anchor`` defaults to ``candidates[0]``.
    """
    if not candidates:
        raise ValueError("llm_ger needs at least one candidate")
    anchor = candidates[0] if anchor is None else anchor
    try:
        raw = correct(candidates, backend, template, utt_id)
    except TransportError as e:
        log.warning("utt %s: transport failure, using anchor (%s)", utt_id, e)
        return GerOutcome(anchor, False, ("transport_error",))
    except EmptyCompletionError:
        log.warning("utt %s: empty completion, using anchor", utt_id)
        return GerOutcome(anchor, False, ("empty_completion",))
    except LLMError as e:
        log.warning("utt %s: %s, using anchor", utt_id, e)
        return GerOutcome(anchor, False, ("llm_error",))
    decision = guard_output(anchor, raw, guard)
    if not decision.accepted:
        log.info("utt %s: guard rejected output (%s)", utt_id, decision.reason)
    return GerOutcome(decision.text, decision.accepted, decision.reasons, raw)


def merge_texts(texts: Sequence[str], opts: VoteOptions = VoteOptions(), mode: str = CHAR) -> str:
    return rover_combine([tokenize(t, mode) for t in texts], opts).text()


@dataclass
class UttResult:
    utt_id: str
    anchor: str
    merge_inputs: list
    merged: str
    outputs: dict = field(default_factory=dict)
    decisions: dict = field(default_factory=dict)
    reference: Optional[str] = None
    scores: dict = field(default_factory=dict)

    @property
    def fell_back(self) -> bool:
        return any(not d["accepted"] for d in self.decisions.values())

    def to_dict(self) -> dict:
        d = {
            "utt_id": self.utt_id,
            "anchor": self.anchor,
            "outputs": self.outputs,
            "decisions": self.decisions,
            "merge_inputs": self.merge_inputs,
            "merged": self.merged,
        }
        if self.reference is not None:
            d["reference"] = self.reference
            d["scores"] = {k: v.to_dict() for k, v in self.scores.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UttResult":
        return cls(
            utt_id=d["utt_id"], anchor=d["anchor"], merge_inputs=d["merge_inputs"], merged=d["merged"],
            outputs=d.get("outputs", {}), decisions=d.get("decisions", {}), reference=d.get("reference"),
            scores={k: UttScore.from_dict(v) for k, v in d.get("scores", {}).items()},
        )


@dataclass
class RunReport:
    utterances: list
    config: dict
    skipped: list = field(default_factory=list)
    backend_stats: dict = field(default_factory=dict)

    def stream_names(self) -> list:
        if not self.utterances:
            return []
        return list(self.utterances[0].scores)

    def cer(self, stream: str = MERGED) -> Optional[CerReport]:
        records = [u.scores[stream] for u in self.utterances if stream in u.scores]
        if not records or all(r.flagged for r in records):
            return None
        return corpus_cer(records)

    def cer_reports(self) -> dict:
        out = {}
        for s in self.stream_names():
            rep = self.cer(s)
            if rep is not None:
                out[s] = rep
        return out

    @property
    def fallback_count(self) -> int:
        return sum(1 for u in self.utterances if u.fell_back)

    def lines(self) -> list:
        return [json.dumps(u.to_dict(), ensure_ascii=False, sort_keys=True) for u in self.utterances]

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.config, ensure_ascii=False, sort_keys=True).encode("utf-8"))
        h.update(b"\n")
        for line in self.lines():
            h.update(line.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "config": self.config,
            "digest": self.digest,
            "utterances": len(self.utterances),
            "skipped": self.skipped,
            "fallback_utterances": self.fallback_count,
            "backend_stats": self.backend_stats,
            "corpus_cer": {k: v.corpus_cer for k, v in self.cer_reports().items()},
        }

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.jsonl", "w", encoding="utf-8", newline="\n") as f:
            for line in self.lines():
                f.write(line + "\n")
        with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(self.summary(), ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def read_report(path) -> RunReport:
    """Load a written run (a directory holding report.jsonl, or the file itself)."""
    p = Path(path)
    if p.is_dir():
        p = p / "report.jsonl"
    utts = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").split("\n"), 1):
        if line.strip():
            try:
                utts.append(UttResult.from_dict(json.loads(line)))
            except (ValueError, KeyError) as e:
                raise CorpusError(f"{p}:{lineno}: bad report record ({e})") from None
    config = {}
    summary = p.parent / "summary.json"
    if summary.is_file():
        config = json.loads(summary.read_text(encoding="utf-8")).get("config", {})
    return RunReport(utts, config)


def _score_streams(result: UttResult, streams: dict, norm, mode):
    for name, text in streams.items():
        result.scores[name] = score_pair(result.reference, text, norm, mode, result.utt_id)


def _map_utterances(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _backend_config(b: Backend) -> dict:
    d = {"type": b.name}
    if isinstance(b, MockBackend):
        d["mode"] = b.mode
    if isinstance(b, HttpBackend):
        d["endpoint_url"] = b.config.endpoint_url
        d["model_name"] = b.config.model_name
        d["temperature"] = b.config.temperature
        d["max_output_tokens"] = b.config.max_output_tokens
    return d


def scheme_config(scheme: MpaScheme, backends: dict) -> dict:
    d = asdict(scheme)
    d["norm"]["punctuation_set"] = (
        None if scheme.norm.punctuation_set is None else "".join(sorted(scheme.norm.punctuation_set))
    )
    d["backends"] = {name: _backend_config(backends[name]) for name in sorted({r.backend for r in scheme.ger_runs})}
    # plain JSON types, so a report read back from disk compares equal
    return json.loads(json.dumps(d))


def run_mpa(
    corpus: Corpus,
    scheme: MpaScheme,
    backends: dict,
    templates: Optional[dict] = None,
    workers: int = 1,
) -> RunReport:
    """Run every GER pass of ``scheme`` and ROVER-merge the anchor with their outputs."""
    templates = dict(templates or {})
    for r in scheme.ger_runs:
        if r.backend not in backends:
            raise ConfigError(f"run {r.name}: unknown backend {r.backend!r}")
        if r.template not in templates:
            templates[r.template] = load_template(r.template)

    streams = scheme.streams()
    selected = select_streams(corpus, streams, missing=scheme.missing)
    skipped = [u for u in corpus.ids() if u not in selected]
    col = {s: k for k, s in enumerate(streams)}

    def process(utt_id):
        texts = selected[utt_id]
        anchor = texts[0]
        outputs, decisions = {}, {}
        for run in scheme.ger_runs:
            cands = [texts[col[s]] for s in run.streams]
            if scheme.normalize_llm_inputs:
                cands = [normalize(c, scheme.norm) for c in cands]
            o = llm_ger(cands, backends[run.backend], templates[run.template], scheme.guard, anchor, utt_id)
            outputs[run.name] = o.text
            decisions[run.name] = {"accepted": o.accepted, "reasons": list(o.reasons)}
        inputs = [anchor] + [outputs[r.name] for r in scheme.ger_runs]
        res = UttResult(utt_id, anchor, inputs, merge_texts(inputs, scheme.merge, scheme.mode), outputs, decisions)
        res.reference = corpus[utt_id].reference
        if res.reference is not None:
            _score_streams(res, {ANCHOR: anchor, **outputs, MERGED: res.merged}, scheme.norm, scheme.mode)
        return res

    results = _map_utterances(process, list(selected), workers)

    stats = {}
    for r in scheme.ger_runs:
        st = stats.setdefault(r.backend, {"requests": 0, "transport_failures": 0})
        for u in results:
            st["requests"] += 1
            if "transport_error" in u.decisions[r.name]["reasons"]:
                st["transport_failures"] += 1
    return RunReport(results, scheme_config(scheme, backends), skipped, stats)


def run_baseline_rover(
    corpus: Corpus,
    streams: Sequence[str],
    merge: VoteOptions = VoteOptions(),
    mode: str = CHAR,
    norm: NormalizationOptions = DEFAULT_OPTIONS,
    missing: str = MISSING_ERROR,
    workers: int = 1,
) -> RunReport:
    """ROVER directly over ASR streams (first stream is the base), no LLM stage."""
    streams = list(streams)
    selected = select_streams(corpus, streams, missing=missing)
    skipped = [u for u in corpus.ids() if u not in selected]

    def process(utt_id):
        texts = selected[utt_id]
        res = UttResult(utt_id, texts[0], list(texts), merge_texts(texts, merge, mode))
        res.reference = corpus[utt_id].reference
        if res.reference is not None:
            named = {ANCHOR: texts[0]}
            named.update({s: t for s, t in zip(streams[1:], texts[1:])})
            named[MERGED] = res.merged
            _score_streams(res, named, norm, mode)
        return res

    results = _map_utterances(process, list(selected), workers)
    config = {"baseline_rover": {"streams": streams, "merge": asdict(merge), "mode": mode}}
    config = json.loads(json.dumps(config))
    return RunReport(results, config, skipped)


# ---- scheme files -------------------------------------------------------------------

def _resolve_path(base: Optional[Path], value: str) -> str:
    p = Path(value)
    if base is not None and not p.is_absolute():
        p = base / p
    return str(p)


def scheme_from_dict(data: dict, base_dir=None, env=None, overrides=None):
    """Parse a scheme document into ``(scheme, backends, templates)``.

    Relative ``outputs_path`` and template paths resolve against ``base_dir``.
    """
    base = Path(base_dir) if base_dir is not None else None
    try:
        runs = [
            GerRun(r["name"], r["source"], tuple(r["streams"]), r["backend"], r.get("template", "english"))
            for r in data["ger_runs"]
        ]
        norm_d = dict(data.get("norm", {}))
        if norm_d.get("punctuation_set") is not None:
            norm_d["punctuation_set"] = frozenset(norm_d["punctuation_set"])
        scheme = MpaScheme(
            anchor=data["anchor"],
            ger_runs=runs,
            merge=VoteOptions(**data.get("merge", {})),
            guard=GuardPolicy(**data.get("guard", {})),
            mode=data.get("mode", CHAR),
            normalize_llm_inputs=bool(data.get("normalize_llm_inputs", False)),
            norm=NormalizationOptions(**norm_d),
            missing=data.get("missing", MISSING_ERROR),
        )
    except KeyError as e:
        raise ConfigError(f"scheme is missing field {e}") from None
    except (TypeError, ValueError, CorpusError) as e:
        raise ConfigError(f"bad scheme: {e}") from None

    backends = {}
    for name, cfg in (data.get("backends") or {}).items():
        cfg = dict(cfg)
        if "outputs_path" in cfg:
            cfg["outputs_path"] = _resolve_path(base, cfg["outputs_path"])
        try:
            backends[name] = backend_from_config(cfg, env=env, overrides=overrides)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"backend {name}: {e}") from None
    templates = {}
    for name, ref in (data.get("templates") or {}).items():
        templates[name] = load_template(ref if ref in ("english", "english_japanese") else _resolve_path(base, ref))
    for r in scheme.ger_runs:
        if r.backend not in backends:
            raise ConfigError(f"run {r.name}: backend {r.backend!r} is not defined")
        if r.template not in templates:
            templates[r.template] = load_template(r.template)
    return scheme, backends, templates


def load_scheme(path, env=None, overrides=None):
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read scheme {path}: {e}") from None
    return scheme_from_dict(data, base_dir=p.parent, env=env, overrides=overrides)
