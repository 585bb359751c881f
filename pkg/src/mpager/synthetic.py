"""Seeded synthetic corpora for experiments and tests.

Noise model: each character has a fixed confusable partner (think homophone
kanji such as 経/鏡). ``confusion`` noise replaces a character by its
partner, so independent streams that err at the same position agree on the
wrong character. ``uniform`` noise draws any other character instead.
"""

from __future__ import annotations

import random
from typing import Optional

from .corpus import Corpus, Hypothesis, Utterance

# kana plus homophone-ish kanji pairs; partners are (0,1), (2,3), ...
ALPHABET = (
    "あいうえおかきくけこさしすせそたちつてとなにぬねのはひふへほまみむめもらりるれろ"
    "拘高束速経鏡条丈件険導道入乳量料化花図頭"
)
if len(ALPHABET) % 2 or len(set(ALPHABET)) != len(ALPHABET):
    raise RuntimeError("synthetic alphabet must hold an even number of distinct characters")

PARTNER = {ALPHABET[i]: ALPHABET[i ^ 1] for i in range(len(ALPHABET))}

CONFUSION = "confusion"
UNIFORM = "uniform"


def random_text(rng: random.Random, length: int) -> str:
    return "".join(rng.choice(ALPHABET) for _ in range(length))


def corrupt(rng: random.Random, text: str, p: float, noise: str = CONFUSION) -> str:
    """Substitute each character independently with probability ``p``."""
    out = []
    for ch in text:
        if rng.random() < p:
            if noise == CONFUSION:
                ch = PARTNER[ch]
            elif noise == UNIFORM:
                ch = rng.choice([c for c in ALPHABET if c != ch])
            else:
                raise ValueError(f"unknown noise model {noise!r}")
        out.append(ch)
    return "".join(out)


def multi_stream_corpus(
    n_utts: int = 500,
    length: int = 40,
    error_rates=(0.1, 0.1, 0.1),
    seed: int = 0,
    noise: str = CONFUSION,
    systems: Optional[list] = None,
) -> Corpus:
    """References plus one rank-1 hypothesis per system, each with i.i.d. substitution noise."""
    rng = random.Random(seed)
    systems = systems or [f"sys{chr(ord('A') + k)}" for k in range(len(error_rates))]
    utts = []
    for k in range(n_utts):
        ref = random_text(rng, length)
        u = Utterance(f"utt{k:05d}", ref)
        for sysname, p in zip(systems, error_rates):
            u.hyps.add(Hypothesis(sysname, 1, corrupt(rng, ref, p, noise)))
        utts.append(u)
    return Corpus(utts)


def repetition(prefix: str, phrase: str, times: int = 11) -> str:
    """A looping output: ``prefix`` followed by ``phrase`` repeated ``times`` times."""
    return prefix + phrase * times
