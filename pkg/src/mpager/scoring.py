"""Character error rate: per-utterance records, corpus totals, length buckets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from .alignment import align, edit_counts
from .stats import TTestResult, paired_ttest
from .textnorm import CHAR, DEFAULT_OPTIONS, NormalizationOptions, normalize, tokenize

DEFAULT_BUCKET_WIDTH = 10


@dataclass(frozen=True)
class UttScore:
    utt_id: str
    hits: int
    subs: int
    dels: int
    ins: int
    ref_len: int
    # None when the normalized reference is empty; such records are flagged
    cer: Optional[float]

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins

    @property
    def flagged(self) -> bool:
        return self.ref_len == 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UttScore":
        return cls(
            str(d["utt_id"]), int(d["hits"]), int(d["subs"]), int(d["dels"]),
            int(d["ins"]), int(d["ref_len"]), d.get("cer"),
        )


@dataclass(frozen=True)
class Totals:
    hits: int = 0
    subs: int = 0
    dels: int = 0
    ins: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins


@dataclass
class CerReport:
    per_utterance: list
    corpus_cer: float
    totals: Totals
    flagged: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "corpus_cer": self.corpus_cer,
            "totals": asdict(self.totals),
            "flagged": list(self.flagged),
            "per_utterance": [r.to_dict() for r in self.per_utterance],
        }


def score_pair(
    ref: str,
    hyp: str,
    norm: NormalizationOptions = DEFAULT_OPTIONS,
    mode: str = CHAR,
    utt_id: str = "",
) -> UttScore:
    r = tokenize(normalize(ref, norm), mode)
    h = tokenize(normalize(hyp, norm), mode)
    c = edit_counts(align(r, h))
    cer = c.errors / c.ref_len if c.ref_len else None
    return UttScore(utt_id, c.hits, c.subs, c.dels, c.ins, c.ref_len, cer)


def _sum(records: Iterable[UttScore]) -> Totals:
    hits = subs = dels = ins = ref_len = 0
    for r in records:
        hits += r.hits
        subs += r.subs
        dels += r.dels
        ins += r.ins
        ref_len += r.ref_len
    return Totals(hits, subs, dels, ins, ref_len)


def corpus_cer(records: Sequence[UttScore]) -> CerReport:
    """Pool error counts over total reference length (not a mean of utterance CERs).

    Records with an empty reference are excluded and listed in ``flagged``.
    """
    records = list(records)
    valid = [r for r in records if not r.flagged]
    if not valid:
        raise ValueError("corpus has no utterance with a non-empty reference")
    totals = _sum(valid)
    return CerReport(
        per_utterance=records,
        corpus_cer=totals.errors / totals.ref_len,
        totals=totals,
        flagged=[r.utt_id for r in records if r.flagged],
    )


def score_corpus(
    refs: dict,
    hyps: dict,
    norm: NormalizationOptions = DEFAULT_OPTIONS,
    mode: str = CHAR,
) -> CerReport:
    """Score every utterance in ``refs``; a hypothesis missing from ``hyps`` is a KeyError."""
    missing = [u for u in refs if u not in hyps]
    if missing:
        raise KeyError(f"no hypothesis for utterance(s): {', '.join(missing[:5])}")
    return corpus_cer([score_pair(refs[u], hyps[u], norm, mode, u) for u in refs])


@dataclass(frozen=True)
class Bucket:
    lo: int
    hi: int  # inclusive
    count: int
    errors: int
    ref_len: int

    @property
    def cer(self) -> Optional[float]:
        return self.errors / self.ref_len if self.ref_len else None

    @property
    def label(self) -> str:
        return f"{self.lo}-{self.hi}"


@dataclass
class BucketReport:
    bucket_width: int
    buckets: list

    def to_dict(self) -> dict:
        return {
            "bucket_width": self.bucket_width,
            "buckets": [
                {"range": [b.lo, b.hi], "count": b.count, "errors": b.errors,
                 "ref_len": b.ref_len, "cer": b.cer}
                for b in self.buckets
            ],
        }


def bucket_report(records: Sequence[UttScore], bucket_width: int = DEFAULT_BUCKET_WIDTH) -> BucketReport:
    """Group utterances by ``ref_len // bucket_width`` and pool CER within each bucket.

    Buckets run contiguously from 0 to the longest reference, empty ones
    included. Flagged (empty-reference) records count toward bucket 0 but add
    no errors.
    """
    if bucket_width < 1:
        raise ValueError("bucket_width must be >= 1")
    records = list(records)
    if not records:
        return BucketReport(bucket_width, [])
    n_buckets = max(r.ref_len for r in records) // bucket_width + 1
    counts = [0] * n_buckets
    errors = [0] * n_buckets
    lengths = [0] * n_buckets
    for r in records:
        k = r.ref_len // bucket_width
        counts[k] += 1
        if not r.flagged:
            errors[k] += r.errors
            lengths[k] += r.ref_len
    buckets = [
        Bucket(k * bucket_width, (k + 1) * bucket_width - 1, counts[k], errors[k], lengths[k])
        for k in range(n_buckets)
    ]
    return BucketReport(bucket_width, buckets)


def compare_reports(a: Sequence[UttScore], b: Sequence[UttScore], metric: str = "cer") -> TTestResult:
    """Paired t-test of two systems, pairing records by utt_id.

    ``metric`` is ``"cer"`` (per-utterance CER) or ``"errors"`` (raw error
    counts). Flagged records are skipped.
    """
    if metric not in ("cer", "errors"):
        raise ValueError(f"unknown metric {metric!r}")
    bmap = {r.utt_id: r for r in b}
    amap = {r.utt_id: r for r in a}
    if set(amap) != set(bmap):
        raise ValueError("reports cover different utterances")
    xs, ys = [], []
    for r in a:
        other = bmap[r.utt_id]
        if r.flagged or other.flagged:
            continue
        xs.append(getattr(r, metric))
        ys.append(getattr(other, metric))
    return paired_ttest(xs, ys)


def format_table(rows: Sequence[Sequence], headers: Sequence[str]) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for k, row in enumerate(cells):
        lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cer_table(report: CerReport) -> str:
    rows = [
        (r.utt_id, r.ref_len, r.subs, r.dels, r.ins,
         "-" if r.cer is None else f"{100 * r.cer:.2f}")
        for r in report.per_utterance
    ]
    t = report.totals
    rows.append(("TOTAL", t.ref_len, t.subs, t.dels, t.ins, f"{100 * report.corpus_cer:.2f}"))
    return format_table(rows, ("utt_id", "ref_len", "sub", "del", "ins", "CER[%]"))


def bucket_table(report: BucketReport) -> str:
    rows = [
        (b.label, b.count, "-" if b.cer is None else f"{100 * b.cer:.2f}")
        for b in report.buckets
    ]
    return format_table(rows, ("ref_len", "count", "CER[%]"))
