"""ROVER: align several hypotheses into a token transition network, then vote.

The network is seeded with the first hypothesis. Every later hypothesis is
aligned against the slots with the same unit-cost DP used for plain
alignment, except that a token matches a slot when it equals any arc there,
and skipping a slot that already holds a NULL arc is free. Unmatched tokens
open a new slot in which all earlier inputs get a NULL arc. Ties between
equally cheap alignments go to the one that lands the most tokens on the
base hypothesis's arcs, so copies of the base never drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .textnorm import CHAR, TokenSequence

NULL = None

TIE_BREAK_POLICIES = ("non_null_then_earliest",)


@dataclass
class Arc:
    token: Optional[str]
    votes: int = 0
    conf_sum: float = 0.0
    first_input: int = 0

    @property
    def is_null(self) -> bool:
        return self.token is None


@dataclass
class Slot:
    arcs: list = field(default_factory=list)

    def arc(self, token) -> Optional[Arc]:
        for a in self.arcs:
            if a.token == token:
                return a
        return None

    def add(self, token, input_idx: int, confidence: float = 0.0, votes: int = 1):
        a = self.arc(token)
        if a is None:
            a = Arc(token, 0, 0.0, input_idx)
            self.arcs.append(a)
        a.votes += votes
        a.conf_sum += confidence * votes if token is not None else 0.0

    @property
    def votes(self) -> int:
        return sum(a.votes for a in self.arcs)

    def has_null(self) -> bool:
        return self.arc(NULL) is not None

    def tokens(self) -> set:
        return {a.token for a in self.arcs if a.token is not None}


@dataclass
class TransitionNetwork:
    slots: list
    num_inputs: int
    mode: str = CHAR

    def vote_table(self) -> list:
        """Per slot, a ``{token: votes}`` dict (``None`` is the NULL arc)."""
        return [{a.token: a.votes for a in s.arcs} for s in self.slots]


@dataclass(frozen=True)
class VoteOptions:
    alpha: float = 1.0
    null_confidence: float = 0.0
    tie_break: str = "non_null_then_earliest"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tie_break not in TIE_BREAK_POLICIES:
            raise ValueError(f"unknown tie_break policy {self.tie_break!r}")


def _as_sequence(h) -> TokenSequence:
    if isinstance(h, TokenSequence):
        return h
    return TokenSequence(tuple(h), CHAR)


def _align_to_network(slots: list, tokens: Sequence[str]) -> list:
    """Return (slot_index | None, token | None) pairs in forward order.

    ``(i, tok)`` places tok in slot i, ``(i, None)`` gives slot i a NULL arc,
    ``(None, tok)`` opens a new slot for tok.

    Among alignments of minimal edit cost, the one placing the most tokens on
    the base hypothesis's own arcs wins. Both objectives are folded into one
    integer cost, ``edits * scale - base_hits``.
    """
    n, m = len(slots), len(tokens)
    slot_tokens = [s.tokens() for s in slots]
    base_token = [_base_token(s) for s in slots]
    scale = n + m + 1
    skip_cost = [0 if s.has_null() else scale for s in slots]

    def diag(i, j):
        tok = tokens[j - 1]
        if tok not in slot_tokens[i - 1]:
            return scale
        return -1 if tok == base_token[i - 1] else 0

    table = [[0] * (m + 1) for _ in range(n + 1)]
    for j in range(1, m + 1):
        table[0][j] = j * scale
    for i in range(1, n + 1):
        prev, row = table[i - 1], table[i]
        skip = skip_cost[i - 1]
        row[0] = prev[0] + skip
        for j in range(1, m + 1):
            best = prev[j - 1] + diag(i, j)
            c = prev[j] + skip
            if c < best:
                best = c
            c = row[j - 1] + scale
            if c < best:
                best = c
            row[j] = best

    path = []
    i, j = n, m
    while i > 0 or j > 0:
        here = table[i][j]
        if i > 0 and j > 0 and table[i - 1][j - 1] + diag(i, j) == here:
            path.append((i - 1, tokens[j - 1]))
            i -= 1
            j -= 1
        elif i > 0 and table[i - 1][j] + skip_cost[i - 1] == here:
            path.append((i - 1, None))
            i -= 1
        else:
            path.append((None, tokens[j - 1]))
            j -= 1
    path.reverse()
    return path


def _base_token(slot: Slot):
    for a in slot.arcs:
        if a.first_input == 0 and a.token is not None:
            return a.token
    return None


def build_wtn(hyps: Sequence, confidences: Optional[Sequence[Sequence[float]]] = None) -> TransitionNetwork:
    """Fold hypotheses into a transition network, first hypothesis as the base.

    ``confidences``, when given, holds one list of per-token confidences per
    hypothesis. Missing confidences count as 1.0.
    """
    if not hyps:
        raise ValueError("build_wtn needs at least one hypothesis")
    seqs = [_as_sequence(h) for h in hyps]
    mode = seqs[0].mode
    if any(s.mode != mode for s in seqs):
        raise ValueError("all hypotheses must share a token mode")
    if confidences is not None:
        if len(confidences) != len(seqs):
            raise ValueError("need one confidence list per hypothesis")
        for s, c in zip(seqs, confidences):
            if len(c) != len(s):
                raise ValueError("confidence list length differs from its hypothesis")
            if not all(math.isfinite(x) for x in c):
                raise ValueError("confidences must be finite")

    def conf(k, j):
        return 1.0 if confidences is None else float(confidences[k][j])

    slots = []
    for j, tok in enumerate(seqs[0].tokens):
        s = Slot()
        s.add(tok, 0, conf(0, j))
        slots.append(s)

    for k in range(1, len(seqs)):
        toks = seqs[k].tokens
        merged = []
        j = 0
        for slot_idx, tok in _align_to_network(slots, toks):
            if slot_idx is None:
                s = Slot()
                s.add(NULL, 0, votes=k)
                s.add(tok, k, conf(k, j))
                merged.append(s)
                j += 1
            else:
                s = slots[slot_idx]
                if tok is None:
                    s.add(NULL, k)
                else:
                    s.add(tok, k, conf(k, j))
                    j += 1
                merged.append(s)
        slots = merged
    return TransitionNetwork(slots, len(seqs), mode)


def _arc_score(arc: Arc, num_inputs: int, opts: VoteOptions) -> float:
    freq = arc.votes / num_inputs
    if opts.alpha == 1.0:
        return freq
    c = opts.null_confidence if arc.is_null else arc.conf_sum / arc.votes
    return opts.alpha * freq + (1.0 - opts.alpha) * c


def vote(wtn: TransitionNetwork, opts: VoteOptions = VoteOptions()) -> TokenSequence:
    out = []
    for slot in wtn.slots:
        best = max(
            slot.arcs,
            key=lambda a: (_arc_score(a, wtn.num_inputs, opts), not a.is_null, -a.first_input),
        )
        if not best.is_null:
            out.append(best.token)
    return TokenSequence(tuple(out), wtn.mode)


def rover_combine(hyps: Sequence, opts: VoteOptions = VoteOptions(), confidences=None) -> TokenSequence:
    return vote(build_wtn(hyps, confidences), opts)
