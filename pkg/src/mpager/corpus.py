"""Utterances, hypothesis streams, and their JSONL / trn file formats.

JSONL: one JSON object per line, UTF-8, LF endings. A hypothesis record is
``{"utt_id", "system", "rank", "text"}`` with an optional ``"score"``; a
record may also carry ``"reference"``. A record with ``"reference"`` and no
``"system"`` only sets the reference.

trn (SCTK convention): ``text (utt_id)`` per line.

Stream specifiers name a hypothesis by ``system@rank`` (``system`` alone
means rank 1) or name a derived stream registered by the caller.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

PathLike = Union[str, Path]


class CorpusError(ValueError):
    """Malformed corpus input; messages carry file and line numbers where known."""


@dataclass(frozen=True)
class Hypothesis:
    system: str
    rank: int
    text: str
    score: Optional[float] = None


@dataclass
class HypothesisSet:
    utt_id: str
    entries: list = field(default_factory=list)

    def get(self, system: str, rank: int = 1) -> Optional[Hypothesis]:
        for e in self.entries:
            if e.system == system and e.rank == rank:
                return e
        return None

    def systems(self) -> list:
        seen = []
        for e in self.entries:
            if e.system not in seen:
                seen.append(e.system)
        return seen

    def nbest(self, system: str) -> list:
        return sorted((e for e in self.entries if e.system == system), key=lambda e: e.rank)

    def add(self, hyp: Hypothesis):
        if self.get(hyp.system, hyp.rank) is not None:
            raise CorpusError(f"duplicate hypothesis ({self.utt_id}, {hyp.system}, {hyp.rank})")
        self.entries.append(hyp)

    def validate(self):
        for s in self.systems():
            if self.get(s, 1) is None:
                raise CorpusError(f"utterance {self.utt_id}: system {s!r} has no rank-1 hypothesis")


@dataclass
class Utterance:
    utt_id: str
    reference: Optional[str] = None
    hyps: HypothesisSet = None

    def __post_init__(self):
        if self.hyps is None:
            self.hyps = HypothesisSet(self.utt_id)


@dataclass
class Corpus:
    utterances: list = field(default_factory=list)

    def __post_init__(self):
        self._index = {}
        for k, u in enumerate(self.utterances):
            if u.utt_id in self._index:
                raise CorpusError(f"duplicate utt_id {u.utt_id!r}")
            self._index[u.utt_id] = k

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, utt_id: str) -> Utterance:
        return self.utterances[self._index[utt_id]]

    def __contains__(self, utt_id) -> bool:
        return utt_id in self._index

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.utterances == other.utterances

    def ids(self) -> list:
        return [u.utt_id for u in self.utterances]

    def get_or_add(self, utt_id: str) -> Utterance:
        if utt_id not in self._index:
            self._index[utt_id] = len(self.utterances)
            self.utterances.append(Utterance(utt_id))
        return self[utt_id]

    def references(self) -> dict:
        return {u.utt_id: u.reference for u in self.utterances if u.reference is not None}

    def attach_references(self, refs: Iterable[tuple]):
        for utt_id, text in refs:
            if utt_id not in self:
                raise CorpusError(f"reference for unknown utterance {utt_id!r}")
            self[utt_id].reference = text


def _read_lines(path: PathLike) -> list:
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}: not valid UTF-8 ({e})") from None
    return text.split("\n")


def _parse_record(path, lineno, line) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
    if not isinstance(rec, dict):
        raise CorpusError(f"{path}:{lineno}: record is not a JSON object")
    if not isinstance(rec.get("utt_id"), str) or not rec["utt_id"]:
        raise CorpusError(f"{path}:{lineno}: missing utt_id")
    return rec


def load_jsonl(path: PathLike, references: Optional[PathLike] = None) -> Corpus:
    """Read a hypothesis JSONL file; ``references`` optionally names a trn file."""
    corpus = Corpus()
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        rec = _parse_record(path, lineno, line)
        utt = corpus.get_or_add(rec["utt_id"])
        if "reference" in rec:
            ref = rec["reference"]
            if not isinstance(ref, str):
                raise CorpusError(f"{path}:{lineno}: reference must be a string")
            if utt.reference is not None and utt.reference != ref:
                raise CorpusError(f"{path}:{lineno}: conflicting reference for {utt.utt_id!r}")
            utt.reference = ref
        if "system" not in rec:
            if "reference" not in rec:
                raise CorpusError(f"{path}:{lineno}: record has neither system nor reference")
            continue
        try:
            rank = rec.get("rank", 1)
            if isinstance(rank, bool) or not isinstance(rank, int) or rank < 1:
                raise ValueError("rank must be a positive integer")
            score = rec.get("score")
            if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
                raise ValueError("score must be a number")
            if not isinstance(rec.get("text"), str) or not isinstance(rec["system"], str):
                raise ValueError("system and text must be strings")
            hyp = Hypothesis(rec["system"], rank, rec["text"], None if score is None else float(score))
        except ValueError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from None
        try:
            utt.hyps.add(hyp)
        except CorpusError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from None
    for u in corpus:
        u.hyps.validate()
    if references is not None:
        corpus.attach_references(load_trn(references))
    return corpus


def _dump(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False)


def save_jsonl(corpus: Corpus, path: PathLike):
    lines = []
    for u in corpus:
        if u.reference is not None:
            lines.append(_dump({"utt_id": u.utt_id, "reference": u.reference}))
        for e in u.hyps.entries:
            rec = {"utt_id": u.utt_id, "system": e.system, "rank": e.rank, "text": e.text}
            if e.score is not None:
                rec["score"] = e.score
            lines.append(_dump(rec))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


_TRN_LINE = re.compile(r"^(.*?)[ \t]*\(([^()\s]+)\)[ \t\r]*$")


def parse_trn_line(line: str) -> tuple:
    m = _TRN_LINE.match(line)
    if m is None:
        raise CorpusError("missing trailing (utt_id)")
    return m.group(2), m.group(1)


def load_trn(path: PathLike) -> list:
    """Return ``[(utt_id, text), ...]`` in file order. Blank lines are skipped."""
    out = []
    seen = set()
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        try:
            utt_id, text = parse_trn_line(line)
        except CorpusError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from None
        if utt_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        out.append((utt_id, text))
    return out


def format_trn_line(utt_id: str, text: str) -> str:
    if "\n" in text or "\r" in text:
        raise ValueError(f"{utt_id}: trn text cannot contain line breaks")
    if re.search(r"[()\s]", utt_id) or not utt_id:
        raise ValueError(f"utt_id {utt_id!r} cannot be written to trn")
    return f"{text} ({utt_id})" if text else f"({utt_id})"


def save_trn(items: Iterable[tuple], path: PathLike):
    """Write ``(utt_id, text)`` pairs. Surrounding whitespace in text does not survive a reload."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt_id, text in items:
            f.write(format_trn_line(utt_id, text) + "\n")


# ---- stream selection -------------------------------------------------------

MISSING_ERROR = "error"
MISSING_SKIP = "skip"


@dataclass(frozen=True)
class StreamSpec:
    system: str
    rank: int = 1

    @classmethod
    def parse(cls, spec: str) -> "StreamSpec":
        if "@" in spec:
            system, _, rank = spec.rpartition("@")
            if not system or not rank.isdigit() or int(rank) < 1:
                raise CorpusError(f"bad stream specifier {spec!r}")
            return cls(system, int(rank))
        if not spec:
            raise CorpusError("empty stream specifier")
        return cls(spec, 1)

    def __str__(self):
        return f"{self.system}@{self.rank}"


def resolve(corpus_utt: Utterance, spec: str, derived: Optional[dict] = None) -> Optional[str]:
    """Text of one stream for one utterance, or None when absent."""
    if derived and spec in derived:
        return derived[spec].get(corpus_utt.utt_id)
    s = StreamSpec.parse(spec)
    hyp = corpus_utt.hyps.get(s.system, s.rank)
    return None if hyp is None else hyp.text


def select_streams(
    corpus: Corpus,
    scheme: list,
    derived: Optional[dict] = None,
    missing: str = MISSING_ERROR,
) -> dict:
    """Map utt_id to the candidate texts named by ``scheme``, in scheme order.

    ``derived`` maps extra stream names to ``{utt_id: text}``. A specifier that
    resolves for no utterance at all is an error; an utterance lacking a stream
    is an error under ``missing="error"`` and dropped under ``"skip"``.
    """
    if missing not in (MISSING_ERROR, MISSING_SKIP):
        raise ValueError(f"unknown missing-stream policy {missing!r}")
    if not scheme:
        raise CorpusError("empty stream scheme")
    out = {}
    found = {spec: False for spec in scheme}
    problems = []
    for u in corpus:
        texts = [resolve(u, spec, derived) for spec in scheme]
        for spec, t in zip(scheme, texts):
            if t is not None:
                found[spec] = True
        if None in texts:
            problems.append((u.utt_id, scheme[texts.index(None)]))
        else:
            out[u.utt_id] = texts
    unresolved = [s for s, ok in found.items() if not ok]
    if unresolved and len(corpus):
        raise CorpusError(f"stream(s) {', '.join(unresolved)} resolve for no utterance")
    if problems and missing == MISSING_ERROR:
        utt, spec = problems[0]
        raise CorpusError(
            f"utterance {utt!r} has no stream {spec!r} ({len(problems)} utterance(s) affected)"
        )
    return out
