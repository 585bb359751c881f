"""Text normalization and tokenization shared by scoring and combination.

Normalization folds full-width forms to their half-width equivalents, strips
punctuation and collapses whitespace. It is idempotent. Tokenization turns a
normalized string into a :class:`TokenSequence`, either one token per
character (for CER) or one token per whitespace-separated word.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Optional

CHAR = "char"
WHITESPACE = "whitespace"
MODES = (CHAR, WHITESPACE)

# Japanese marks that are stripped in addition to the Unicode P* categories.
# Most are already P*, listed explicitly so a custom set can start from them.
JAPANESE_PUNCTUATION = frozenset("。、「」・！？")

_WS_RUN = re.compile(r"\s+")


def _build_width_table() -> dict[int, str]:
    table = {0x3000: " "}
    for cp in range(0xFF01, 0xFFEF):
        ch = chr(cp)
        folded = unicodedata.normalize("NFKC", ch)
        if folded != ch:
            table[cp] = folded
    return table


_WIDTH_TABLE = _build_width_table()


def fold_width(text: str) -> str:
    """Map the Halfwidth and Fullwidth Forms block (plus U+3000) to canonical forms.

    Full-width ASCII becomes ASCII, half-width katakana becomes regular
    katakana. Voicing marks split off by the mapping are recomposed with NFC.
    """
    folded = text.translate(_WIDTH_TABLE)
    if folded is text or folded == text:
        return text
    return unicodedata.normalize("NFC", folded)


def is_default_punctuation(ch: str) -> bool:
    return ch in JAPANESE_PUNCTUATION or unicodedata.category(ch).startswith("P")


@dataclass(frozen=True)
class NormalizationOptions:
    """Switches for :func:`normalize`.

    ``punctuation_set=None`` selects the default: every character in a Unicode
    ``P*`` category plus :data:`JAPANESE_PUNCTUATION`.
    """

    fold_width: bool = True
    strip_punctuation: bool = True
    punctuation_set: Optional[frozenset] = None
    collapse_whitespace: bool = True

    def __post_init__(self):
        if self.punctuation_set is not None:
            object.__setattr__(self, "punctuation_set", frozenset(self.punctuation_set))
            if self.strip_punctuation and not self.punctuation_set:
                raise ValueError("punctuation_set must be non-empty when strip_punctuation is set")

    def is_punctuation(self, ch: str) -> bool:
        if self.punctuation_set is None:
            return is_default_punctuation(ch)
        return ch in self.punctuation_set


DEFAULT_OPTIONS = NormalizationOptions()
IDENTITY_OPTIONS = NormalizationOptions(
    fold_width=False, strip_punctuation=False, collapse_whitespace=False
)


def normalize(text: str, opts: NormalizationOptions = DEFAULT_OPTIONS) -> str:
    if opts.fold_width:
        text = fold_width(text)
    if opts.strip_punctuation:
        text = "".join(ch for ch in text if not opts.is_punctuation(ch))
    if opts.collapse_whitespace:
        text = _WS_RUN.sub(" ", text).strip()
    return text


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple = field(default_factory=tuple)
    mode: str = CHAR

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.mode not in MODES:
            raise ValueError(f"unknown token mode {self.mode!r}")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, idx):
        return self.tokens[idx]

    def text(self) -> str:
        """Join tokens back into a string (no separator in char mode)."""
        sep = "" if self.mode == CHAR else " "
        return sep.join(self.tokens)

    @classmethod
    def of(cls, tokens: Iterable[str], mode: str = CHAR) -> "TokenSequence":
        return cls(tuple(tokens), mode)


def tokenize(text: str, mode: str = CHAR) -> TokenSequence:
    if mode == CHAR:
        return TokenSequence(tuple(ch for ch in text if not ch.isspace()), CHAR)
    if mode == WHITESPACE:
        return TokenSequence(tuple(text.split()), WHITESPACE)
    raise ValueError(f"unknown token mode {mode!r}")
