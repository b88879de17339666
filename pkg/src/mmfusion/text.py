"""Text normalization and subword tokenization.

The pipeline is: normalize (configurable cleaning rules) -> tokenize
(greedy longest-match against a trained subword vocabulary) -> fixed-length
id sequence with an attention mask.

Vocabulary layout: ids are dense, the first four are reserved specials
(PAD=0, UNK=1, CLS=2, SEP=3), and word-internal subwords carry a "##"
prefix. Training is a pair-merge procedure over the corpus word multiset:
repeatedly merge the most frequent adjacent symbol pair (ties broken by
lexicographic pair order) until the target size is reached or no pair
occurs at least twice. Every base character and every merge enters the
vocabulary in both word-initial and "##" continuation form.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

CONTINUATION_PREFIX = "##"

# ASCII punctuation plus marks common in Bengali social media text
DEFAULT_PUNCTUATION = string.punctuation + "।॥‘’“”–—…"

_EMOJI_RANGES = ((0x1F000, 0x1FAFF), (0x2600, 0x27BF))
_EMOJI_SINGLES = frozenset({0xFE0F, 0x200D, 0x20E3})


def _is_emoji(ch: str) -> bool:
    cp = ord(ch)
    if cp in _EMOJI_SINGLES:
        return True
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


# --------------------------------------------------------------------------
# normalization

@dataclass
class NormalizerConfig:
    """Cleaning rules applied before tokenization.

    punctuation: characters replaced by a space.
    emoji_policy: "strip" removes emoji; "map" substitutes emoji_map entries
        (unmapped emoji are stripped).
    misspellings: whole-word replacement table applied after splitting.
    transliterate: optional str -> str hook run first; None is the identity.
    """

    punctuation: str = DEFAULT_PUNCTUATION
    emoji_policy: str = "strip"
    emoji_map: dict[str, str] = field(default_factory=dict)
    misspellings: dict[str, str] = field(default_factory=dict)
    transliterate: Callable[[str], str] | None = None

    def __post_init__(self):
        if self.emoji_policy not in ("strip", "map"):
            raise ConfigError(f"emoji_policy must be 'strip' or 'map', got {self.emoji_policy!r}")


def normalize_text(raw: str, rules: NormalizerConfig | None = None) -> str:
    """Apply cleaning rules; an empty result is legal."""
    if rules is None:
        rules = NormalizerConfig()
    s = rules.transliterate(raw) if rules.transliterate is not None else raw
    punct = set(rules.punctuation)
    out: list[str] = []
    for ch in s:
        if _is_emoji(ch):
            if rules.emoji_policy == "map":
                mapped = rules.emoji_map.get(ch)
                out.append(f" {mapped} " if mapped else " ")
            else:
                out.append(" ")
        elif ch in punct:
            out.append(" ")
        else:
            out.append(ch)
    words = "".join(out).split()
    if rules.misspellings:
        words = [rules.misspellings.get(w, w) for w in words]
    return " ".join(words)


# --------------------------------------------------------------------------
# vocabulary

class Vocabulary:
    """Dense token table with fixed special ids and ## continuation forms."""

    __slots__ = ("tokens", "index", "max_piece_chars")

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise DataError(f"first four tokens must be {SPECIAL_TOKENS}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise DataError(f"duplicate tokens: {dupes[:5]}")
        for t in tokens[4:]:
            if not t or t == CONTINUATION_PREFIX:
                raise DataError(f"token {t!r} does not decode to a non-empty string")
            if "\n" in t or any(c.isspace() for c in t):
                raise DataError(f"token {t!r} contains whitespace")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self.max_piece_chars = max(
            (len(t) - 2 if t.startswith(CONTINUATION_PREFIX) and len(t) > 2 else len(t)
             for t in tokens[4:]),
            default=1,
        )

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def train_vocabulary(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Build a subword vocabulary by greedy pair merging.

    Works on the word multiset, so the result is independent of corpus
    order. Each merge adds two tokens (plain and "##" form); merging stops
    once another pair of tokens would exceed target_size or no symbol pair
    occurs at least twice.
    """
    words: Counter[str] = Counter()
    for line in corpus:
        words.update(line.split())
    if not words:
        raise DataError("cannot train a vocabulary on an empty corpus")
    chars = sorted({c for w in words for c in w})
    floor = 4 + 2 * len(chars)
    if target_size < floor:
        raise ConfigError(
            f"target_size {target_size} cannot hold the 4 specials plus both forms "
            f"of {len(chars)} base characters (needs at least {floor})"
        )

    tokens = list(SPECIAL_TOKENS)
    for c in chars:
        tokens.append(c)
        tokens.append(CONTINUATION_PREFIX + c)
    seen = set(tokens)

    seqs: dict[str, tuple[str, ...]] = {w: tuple(w) for w in words}
    while len(tokens) + 2 <= target_size:
        pairs: Counter[tuple[str, str]] = Counter()
        for w, syms in seqs.items():
            n = words[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += n
        if not pairs:
            break
        (a, b), count = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if count < 2:
            break
        merged = a + b
        for form in (merged, CONTINUATION_PREFIX + merged):
            if form not in seen:
                tokens.append(form)
                seen.add(form)
        new_seqs = {}
        for w, syms in seqs.items():
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            new_seqs[w] = tuple(out)
        seqs = new_seqs
    return Vocabulary(tokens)


# --------------------------------------------------------------------------
# tokenization

@dataclass
class TokenSequence:
    """Fixed-length id sequence. ids[0] is CLS; padding has mask 0."""

    ids: np.ndarray
    attention_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _segment_word(word: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match pieces; each maximal unmatched span becomes one UNK."""
    out: list[int] = []
    i, n = 0, len(word)
    first = True
    in_unknown = False
    while i < n:
        match_id = None
        match_end = i
        for j in range(min(n, i + vocab.max_piece_chars), i, -1):
            cand = word[i:j] if first else CONTINUATION_PREFIX + word[i:j]
            idx = vocab.index.get(cand)
            if idx is not None and idx >= 4:
                match_id, match_end = idx, j
                break
        if match_id is not None:
            out.append(match_id)
            i = match_end
            in_unknown = False
        else:
            if not in_unknown:
                out.append(UNK_ID)
                in_unknown = True
            i += 1
        first = False
    return out


def tokenize(text: str, vocab: Vocabulary, max_len: int = 64) -> TokenSequence:
    """CLS + greedy subword ids, truncated to max_len and PAD-filled."""
    if max_len < 2:
        raise ConfigError(f"max_len must be at least 2, got {max_len}")
    ids = [CLS_ID]
    for word in text.split():
        ids.extend(_segment_word(word, vocab))
        if len(ids) >= max_len:
            break
    ids = ids[:max_len]
    mask = [1] * len(ids) + [0] * (max_len - len(ids))
    ids = ids + [PAD_ID] * (max_len - len(ids))
    return TokenSequence(np.asarray(ids, dtype=np.int64), np.asarray(mask, dtype=np.int64))


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Inverse of tokenize on in-vocabulary text: pieces rejoin into words."""
    words: list[str] = []
    for i in ids:
        i = int(i)
        if i in (PAD_ID, CLS_ID, SEP_ID):
            continue
        tok = vocab.tokens[i] if 0 <= i < len(vocab.tokens) else UNK_TOKEN
        if tok.startswith(CONTINUATION_PREFIX) and len(tok) > 2 and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)
