"""Unit-cost minimum edit distance alignment.

The DP table fill and traceback run as numba kernels over integer-encoded
tokens; :func:`align` handles encoding and builds the :class:`EditOp` list.
Ties between minimal paths are broken at every cell during traceback by
preferring the diagonal (COR/SUB), then DEL, then INS.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from numba import njit

from .textnorm import TokenSequence

COR, SUB, INS, DEL = "COR", "SUB", "INS", "DEL"

# op codes produced by the traceback kernel
OP_COR, OP_SUB, OP_DEL, OP_INS = 0, 1, 2, 3
_CODE_NAMES = (COR, SUB, DEL, INS)


class EditOp(NamedTuple):
    kind: str
    ref_token: Optional[str] = None
    hyp_token: Optional[str] = None


@dataclass(frozen=True)
class EditCounts:
    hits: int
    subs: int
    dels: int
    ins: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins


@dataclass(frozen=True)
class Alignment:
    ops: tuple
    distance: int

    def ref_tokens(self) -> list:
        return [op.ref_token for op in self.ops if op.kind != INS]

    def hyp_tokens(self) -> list:
        return [op.hyp_token for op in self.ops if op.kind != DEL]


@njit(cache=True)
def fill_table(ref, hyp):
    """Levenshtein DP table; ``table[i, j]`` is the distance of ref[:i] vs hyp[:j]."""
    n = ref.shape[0]
    m = hyp.shape[0]
    table = np.empty((n + 1, m + 1), dtype=np.int32)
    for i in range(n + 1):
        table[i, 0] = i
    for j in range(m + 1):
        table[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = table[i - 1, j - 1] + (1 if ref[i - 1] != hyp[j - 1] else 0)
            cost = table[i - 1, j] + 1
            if cost < best:
                best = cost
            cost = table[i, j - 1] + 1
            if cost < best:
                best = cost
            table[i, j] = best
    return table


@njit(cache=True)
def trace_ops(ref, hyp, table):
    """Walk back from the bottom-right corner and return op codes in forward order."""
    i = ref.shape[0]
    j = hyp.shape[0]
    out = np.empty(i + j, dtype=np.int8)
    k = 0
    while i > 0 or j > 0:
        here = table[i, j]
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if table[i - 1, j - 1] + (0 if same else 1) == here:
                out[k] = OP_COR if same else OP_SUB
                k += 1
                i -= 1
                j -= 1
                continue
        if i > 0 and table[i - 1, j] + 1 == here:
            out[k] = OP_DEL
            k += 1
            i -= 1
            continue
        out[k] = OP_INS
        k += 1
        j -= 1
    return out[:k][::-1].copy()


def encode_pair(ref: Sequence[str], hyp: Sequence[str]):
    vocab: dict = {}
    r = np.fromiter((vocab.setdefault(t, len(vocab)) for t in ref), dtype=np.int64, count=len(ref))
    h = np.fromiter((vocab.setdefault(t, len(vocab)) for t in hyp), dtype=np.int64, count=len(hyp))
    return r, h


def _tokens(seq) -> tuple:
    return seq.tokens if isinstance(seq, TokenSequence) else tuple(seq)


def align(ref: Union[TokenSequence, Sequence[str]], hyp: Union[TokenSequence, Sequence[str]]) -> Alignment:
    """Align ``hyp`` against ``ref`` with unit SUB/INS/DEL costs.

    Plain sequences of strings are accepted too. Two :class:`TokenSequence`
    inputs must share a token mode.
    """
    if isinstance(ref, TokenSequence) and isinstance(hyp, TokenSequence) and ref.mode != hyp.mode:
        raise ValueError(f"token mode mismatch: {ref.mode} vs {hyp.mode}")
    ref_toks, hyp_toks = _tokens(ref), _tokens(hyp)
    r, h = encode_pair(ref_toks, hyp_toks)
    table = fill_table(r, h)
    codes = trace_ops(r, h, table)

    ops = []
    i = j = 0
    for code in codes.tolist():
        if code == OP_COR or code == OP_SUB:
            ops.append(EditOp(_CODE_NAMES[code], ref_toks[i], hyp_toks[j]))
            i += 1
            j += 1
        elif code == OP_DEL:
            ops.append(EditOp(DEL, ref_toks[i], None))
            i += 1
        else:
            ops.append(EditOp(INS, None, hyp_toks[j]))
            j += 1
    return Alignment(tuple(ops), int(table[-1, -1]))


def edit_distance(ref, hyp) -> int:
    r, h = encode_pair(_tokens(ref), _tokens(hyp))
    return int(fill_table(r, h)[-1, -1])


def edit_counts(a: Alignment) -> EditCounts:
    hits = subs = dels = ins = 0
    for op in a.ops:
        if op.kind == COR:
            hits += 1
        elif op.kind == SUB:
            subs += 1
        elif op.kind == DEL:
            dels += 1
        else:
            ins += 1
    return EditCounts(hits, subs, dels, ins, hits + subs + dels)
