"""Word-level vocabulary with a byte fallback.

Layout: pad=0, eos=1, ``<extra_id_0..99>`` at 2..101, the 256 bytes at
102..357, then ten "spaced" digits, ten "glued" digits, four punctuation
marks, and the closed word set of the corpus generator.

Whitespace is never a token. Each token class carries an implicit separator
(a space before words and spaced digits, nothing before punctuation, glued
digits and bytes, nothing after a byte). The encoder picks token variants so
the implicit separators reproduce the input; anything else (odd spacing,
unknown words) is spelled out in bytes, so ``detokenize(tokenize(s)) == s``
holds for every string.
"""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from ..model.config import EOS_ID, PAD_ID
from .lexicon import closed_word_set

NUM_SENTINELS = 100
SENTINEL_BASE = 2
BYTE_BASE = SENTINEL_BASE + NUM_SENTINELS
DIGIT_SPACED_BASE = BYTE_BASE + 256
DIGIT_GLUED_BASE = DIGIT_SPACED_BASE + 10
GLUE_CHARS = (",", ".", "?", ":")
GLUE_BASE = DIGIT_GLUED_BASE + 10
WORD_BASE = GLUE_BASE + len(GLUE_CHARS)

_SPECIAL, _WORD, _GLUED, _BYTE = 0, 1, 2, 3

_PIECE = re.compile(r"(\s*)(<extra_id_\d{1,2}>|\d|[,.?:]|[^\s\d,.?:]+)")


def sentinel(k: int) -> str:
    if not 0 <= k < NUM_SENTINELS:
        raise ValueError(f"sentinel index {k} outside 0..{NUM_SENTINELS - 1}")
    return f"<extra_id_{k}>"


class Tokenizer:
    def __init__(self, words: Iterable[str] | None = None):
        words = list(closed_word_set() if words is None else words)
        self.words = words
        self._word_id = {w: WORD_BASE + i for i, w in enumerate(words)}
        for i in range(NUM_SENTINELS):
            self._word_id[sentinel(i)] = SENTINEL_BASE + i
        self._glue_id = {c: GLUE_BASE + i for i, c in enumerate(GLUE_CHARS)}
        self.vocab_size = WORD_BASE + len(words)

    # -- token classes -----------------------------------------------------
    def _kind(self, tid: int) -> int:
        if tid in (PAD_ID, EOS_ID):
            return _SPECIAL
        if BYTE_BASE <= tid < DIGIT_SPACED_BASE:
            return _BYTE
        if DIGIT_GLUED_BASE <= tid < WORD_BASE:
            return _GLUED
        return _WORD  # sentinels, spaced digits, words

    @staticmethod
    def _implicit(prev: int | None, kind: int) -> str:
        if prev is None or prev == _BYTE or kind in (_GLUED, _BYTE):
            return ""
        return " "

    def _piece_text(self, tid: int) -> str:
        if SENTINEL_BASE <= tid < BYTE_BASE:
            return sentinel(tid - SENTINEL_BASE)
        if DIGIT_SPACED_BASE <= tid < DIGIT_GLUED_BASE:
            return str(tid - DIGIT_SPACED_BASE)
        if DIGIT_GLUED_BASE <= tid < GLUE_BASE:
            return str(tid - DIGIT_GLUED_BASE)
        if GLUE_BASE <= tid < WORD_BASE:
            return GLUE_CHARS[tid - GLUE_BASE]
        if WORD_BASE <= tid < self.vocab_size:
            return self.words[tid - WORD_BASE]
        raise ValueError(f"token id {tid} outside vocabulary of size {self.vocab_size}")

    # -- encoding ----------------------------------------------------------
    def _options(self, piece: str) -> list[tuple[int, int]]:
        """(kind, id) variants that render ``piece`` as a single token."""
        if piece.isdigit() and len(piece) == 1 and piece in "0123456789":
            d = int(piece)
            return [(_WORD, DIGIT_SPACED_BASE + d), (_GLUED, DIGIT_GLUED_BASE + d)]
        if piece in self._glue_id:
            return [(_GLUED, self._glue_id[piece])]
        if piece in self._word_id:
            return [(_WORD, self._word_id[piece])]
        return []

    @staticmethod
    def _bytes(s: str) -> list[int]:
        return [BYTE_BASE + b for b in s.encode("utf-8")]

    def tokenize(self, text: str) -> list[int]:
        ids: list[int] = []
        prev: int | None = None
        pos = 0
        for m in _PIECE.finditer(text):
            space, piece = m.group(1), m.group(2)
            pos = m.end()
            opts = self._options(piece)
            choice = next(((k, t) for k, t in opts if self._implicit(prev, k) == space), None)
            if choice is None and space:
                ids += self._bytes(space)
                prev = _BYTE
                choice = next(((k, t) for k, t in opts if self._implicit(prev, k) == ""), None)
            if choice is None:
                ids += self._bytes(piece)
                prev = _BYTE
            else:
                ids.append(choice[1])
                prev = choice[0]
        ids += self._bytes(text[pos:])  # trailing whitespace
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        out: list[str] = []
        pending = bytearray()
        prev: int | None = None
        for tid in ids:
            tid = int(tid)
            kind = self._kind(tid)
            if kind == _SPECIAL:
                continue
            if kind == _BYTE:
                pending.append(tid - BYTE_BASE)
                prev = _BYTE
                continue
            if pending:
                out.append(pending.decode("utf-8", errors="replace"))
                pending.clear()
            out.append(self._implicit(prev, kind) + self._piece_text(tid))
            prev = kind
        if pending:
            out.append(pending.decode("utf-8", errors="replace"))
        return "".join(out)

    def encode_target(self, text: str) -> list[int]:
        """Token ids followed by EOS, as used for decoder targets."""
        return self.tokenize(text) + [EOS_ID]

    def decode_output(self, ids: Sequence[int]) -> str:
        """Text of a generated sequence, cut at the first EOS."""
        ids = list(ids)
        if EOS_ID in ids:
            ids = ids[:ids.index(EOS_ID)]
        return self.detokenize(ids)


_DEFAULT: Tokenizer | None = None


def default_tokenizer() -> Tokenizer:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Tokenizer()
    return _DEFAULT


def tokenize(text: str) -> list[int]:
    return default_tokenizer().tokenize(text)


def detokenize(ids: Sequence[int]) -> str:
    return default_tokenizer().detokenize(ids)
