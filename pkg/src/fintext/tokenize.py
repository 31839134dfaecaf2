"""Subword vocabulary training and expansion, dictionary segmentation, the
greedy longest-coverage merged tokenizer, and stopword filtering.

Base units are whitespace-delimited words for space-separated text and single
codepoints for CJK text; the entity dictionary matches raw character
sequences (including internal spaces), so multi-character names survive as
one token.
"""

from __future__ import annotations

import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from fintext.errors import ValidationError

CONTINUATION = "##"
DEFAULT_UNK = "[UNK]"

_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2B73F),
    (0x2B740, 0x2B81F),
    (0x2B820, 0x2CEAF),
    (0xF900, 0xFAFF),
    (0x2F800, 0x2FA1F),
)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokens_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Base units with character offsets: words for spaced text, single
    codepoints for CJK runs."""
    units: list[tuple[str, int, int]] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if is_cjk(ch):
            units.append((ch, i, i + 1))
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace() and not is_cjk(text[j]):
            j += 1
        units.append((text[i:j], i, j))
        i = j
    return units


def basic_units(text: str) -> list[str]:
    return [u for u, _, _ in tokens_with_offsets(text)]


@dataclass
class SubwordVocabulary:
    """Ordered subword inventory with ``##`` continuation forms."""

    tokens: list[str]
    unk_token: str = DEFAULT_UNK
    base_size: int = 0
    expanded_size: int = 0

    def __post_init__(self):
        if self.unk_token not in self.tokens:
            self.tokens = [self.unk_token] + list(self.tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("subword vocabulary has duplicate tokens")
        if self.base_size == 0 and self.expanded_size == 0:
            self.base_size = self.expanded_size = len(self.tokens)
        self._index = set(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def load(cls, path: str | Path, unk_token: str = DEFAULT_UNK) -> "SubwordVocabulary":
        tokens = [
            line for line in Path(path).read_text(encoding="utf-8").splitlines() if line
        ]
        return cls(tokens=tokens, unk_token=unk_token)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


class EntityDictionary:
    """Curated entries stored in a prefix trie over raw characters."""

    _END = object()

    def __init__(self, entries: Iterable[str], source: str = ""):
        self.entries: set[str] = set()
        self.source = source
        self._trie: dict = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: str) -> None:
        if not entry:
            raise ValidationError("dictionary entries must be non-empty")
        node = self._trie
        for ch in entry:
            node = node.setdefault(ch, {})
        node[EntityDictionary._END] = True
        self.entries.add(entry)

    def __contains__(self, entry: str) -> bool:
        return entry in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def longest_match(self, text: str, start: int) -> int:
        """End index of the longest entry starting at ``start``; ``start`` if none."""
        node = self._trie
        best = start
        i = start
        while i < len(text) and text[i] in node:
            node = node[text[i]]
            i += 1
            if EntityDictionary._END in node:
                best = i
        return best

    @classmethod
    def load(cls, path: str | Path, source: str = "") -> "EntityDictionary":
        entries = [
            line for line in Path(path).read_text(encoding="utf-8").splitlines() if line
        ]
        return cls(entries, source=source or str(path))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(sorted(self.entries)) + "\n", encoding="utf-8")


@dataclass
class MergedTokenizer:
    """Dictionary trie + subword vocabulary + stopword list."""

    dictionary: EntityDictionary
    subwords: SubwordVocabulary
    stopwords: set[str] = field(default_factory=set)


def load_stopwords(path: str | Path) -> set[str]:
    return {
        line for line in Path(path).read_text(encoding="utf-8").splitlines() if line
    }


# ---------------------------------------------------------------------------
# WordPiece training
# ---------------------------------------------------------------------------


def _initial_symbols(word: str) -> list[str]:
    return [word[0]] + [CONTINUATION + ch for ch in word[1:]]


def _strip_marker(symbol: str) -> str:
    return symbol[len(CONTINUATION):] if symbol.startswith(CONTINUATION) else symbol


def train_wordpiece_expansion(
    corpus: Iterable[str],
    base: SubwordVocabulary,
    new_tokens: int = 14000,
    min_freq: int = 2,
) -> SubwordVocabulary:
    """Grow ``base`` by merging adjacent symbol pairs by likelihood score.

    Each iteration merges the pair maximizing
    ``freq(pair) / (freq(left) * freq(right))`` among pairs with frequency at
    least ``min_freq`` (ties broken lexicographically), until ``new_tokens``
    symbols beyond the base vocabulary exist or no pair qualifies. Merging
    stops short with a warning when candidates run out.
    """
    if new_tokens < 0:
        raise ValidationError(f"new_tokens must be >= 0, got {new_tokens}")
    if new_tokens == 0:
        return base
    word_counts = Counter(corpus)
    if not word_counts:
        raise ValidationError("corpus token stream is empty")

    seqs: list[list[str]] = []
    counts: list[int] = []
    for word, count in word_counts.items():
        seqs.append(_initial_symbols(word))
        counts.append(count)

    symbol_freq: Counter[str] = Counter()
    pair_freq: Counter[tuple[str, str]] = Counter()
    pair_words: defaultdict[tuple[str, str], set[int]] = defaultdict(set)

    def account(widx: int, sign: int) -> None:
        seq, c = seqs[widx], counts[widx] * sign
        for sym in seq:
            symbol_freq[sym] += c
        for pair in zip(seq, seq[1:]):
            pair_freq[pair] += c
            if sign > 0:
                pair_words[pair].add(widx)

    for widx in range(len(seqs)):
        account(widx, +1)

    def merge_in_seq(seq: list[str], pair: tuple[str, str], merged: str) -> list[str]:
        out: list[str] = []
        i = 0
        while i < len(seq):
            if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
                out.append(merged)
                i += 2
            else:
                out.append(seq[i])
                i += 1
        return out

    added: list[str] = []
    base_set = set(base.tokens)
    while len(added) < new_tokens:
        candidates = [
            (pair, freq) for pair, freq in pair_freq.items() if freq >= min_freq
        ]
        if not candidates:
            break
        best_pair = None
        best_score = -1.0
        for pair, freq in candidates:
            score = freq / (symbol_freq[pair[0]] * symbol_freq[pair[1]])
            if score > best_score or (score == best_score and pair < best_pair):
                best_score, best_pair = score, pair
        merged = best_pair[0] + _strip_marker(best_pair[1])
        for widx in sorted(pair_words[best_pair]):
            account(widx, -1)
            seqs[widx] = merge_in_seq(seqs[widx], best_pair, merged)
            account(widx, +1)
        # drop exhausted bookkeeping so the candidate scan stays tight
        for pair in [p for p, f in pair_freq.items() if f <= 0]:
            del pair_freq[pair]
            pair_words.pop(pair, None)
        if merged not in base_set and merged not in added:
            added.append(merged)
    if len(added) < new_tokens:
        warnings.warn(
            f"vocabulary expansion exhausted candidate pairs: added {len(added)} "
            f"of {new_tokens} requested tokens",
            stacklevel=2,
        )
    return SubwordVocabulary(
        tokens=list(base.tokens) + added,
        unk_token=base.unk_token,
        base_size=len(base.tokens),
        expanded_size=len(base.tokens) + len(added),
    )


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _greedy_pieces(
    unit: str, vocab: SubwordVocabulary, continuation: bool
) -> list[tuple[str, int]] | None:
    """Greedy longest-prefix split of ``unit`` into (token, char length) pairs.

    ``continuation`` marks the first piece as word-interior. Returns None when
    some position has no vocabulary match (the unit has no decomposition).
    """
    out: list[tuple[str, int]] = []
    pos = 0
    while pos < len(unit):
        chosen = None
        for end in range(len(unit), pos, -1):
            candidate = unit[pos:end]
            if pos > 0 or continuation:
                candidate = CONTINUATION + candidate
            if candidate in vocab:
                chosen = (candidate, end - pos)
                break
        if chosen is None:
            return None
        out.append(chosen)
        pos += chosen[1]
    return out


def _wordpiece_unit(unit: str, vocab: SubwordVocabulary) -> list[str]:
    pieces = _greedy_pieces(unit, vocab, continuation=False)
    if pieces is None:
        return [vocab.unk_token]
    return [token for token, _ in pieces]


def subword_tokenize(text: str, vocab: SubwordVocabulary) -> list[str]:
    tokens: list[str] = []
    for unit in basic_units(text):
        tokens.extend(_wordpiece_unit(unit, vocab))
    return tokens


def _unit_end(text: str, start: int) -> int:
    if is_cjk(text[start]):
        return start + 1
    end = start
    while end < len(text) and not text[end].isspace() and not is_cjk(text[end]):
        end += 1
    return end


def _at_unit_start(text: str, pos: int) -> bool:
    if pos == 0 or is_cjk(text[pos]):
        return True
    prev = text[pos - 1]
    return prev.isspace() or is_cjk(prev)


def _subword_candidate(
    text: str, start: int, vocab: SubwordVocabulary
) -> tuple[str, int]:
    """Next subword token from ``start`` and the position it covers up to.

    The remainder of the current unit must decompose fully for a subword
    piece to be offered; otherwise the candidate is the unk token spanning
    the whole remainder, mirroring plain subword tokenization.
    """
    unit_end = _unit_end(text, start)
    pieces = _greedy_pieces(
        text[start:unit_end], vocab, continuation=not _at_unit_start(text, start)
    )
    if pieces is None:
        return vocab.unk_token, unit_end
    token, length = pieces[0]
    return token, start + length


def merged_tokenize_with_spans(
    text: str, tokenizer: MergedTokenizer
) -> list[tuple[str, int, int]]:
    """Greedy longest-coverage segmentation returning (token, start, end).

    At each position the candidates are the longest dictionary match and the
    next subword token; the one covering more characters wins and equal
    coverage goes to the dictionary.
    """
    out: list[tuple[str, int, int]] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        dict_end = tokenizer.dictionary.longest_match(text, i)
        sub_token, sub_end = _subword_candidate(text, i, tokenizer.subwords)
        if dict_end - i >= sub_end - i and dict_end > i:
            out.append((text[i:dict_end], i, dict_end))
            i = dict_end
        else:
            out.append((sub_token, i, sub_end))
            i = sub_end
    return out


def merged_tokenize(text: str, tokenizer: MergedTokenizer) -> list[str]:
    return [token for token, _, _ in merged_tokenize_with_spans(text, tokenizer)]


def remove_stopwords(tokens: Sequence[str], stopwords: set[str]) -> list[str]:
    """Order-preserving filter keeping tokens not in ``stopwords``."""
    return [t for t in tokens if t not in stopwords]
