"""Closed word sets for the synthetic corpus: classes, colours, glyphs, toy languages."""

from __future__ import annotations

import numpy as np

# Canonical palette order; object-aware answers list classes in this order.
CLASSES = (
    "ball", "cube", "cone", "ring", "cross", "gem", "bar", "pillar",
    "frame", "wedge", "stripes", "checker", "dots", "kite", "arch", "hook",
)

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 220),
    "yellow": (235, 210, 40),
    "purple": (150, 60, 190),
    "orange": (240, 140, 30),
    "white": (250, 250, 250),
    "black": (15, 15, 15),
}
BACKGROUND = (128, 128, 128)
GLYPH_INK = (40, 40, 40)
GLYPH_PAPER = (235, 235, 235)

GLYPHS = (
    "AA", "BB", "CC", "DD", "EF", "GH", "JK", "LM", "NP", "QR", "ST", "UV",
    "WX", "YZ", "AB", "CD", "MN", "PQ", "RS", "TU", "VW", "XY", "ZA", "KL",
)

LANGUAGES = ("EN", "XA", "XB", "XC", "XD", "XE", "XF", "XG")

# Words that appear inside captions and questions; these get per-language forms.
CONTENT_WORDS = (
    ("Photo", "of", "a", "and", "near", "with", "sign", "what", "color", "is", "the", "how", "many")
    + CLASSES + tuple(COLORS)
)

# Prompt scaffolding; always English.
TEMPLATE_WORDS = (
    "Generate", "the", "alt_text", "in", "at", "ocr_text", "Answer", "a", "question", "for",
    "List", "objects", "present", "Is", "image", "Which", "of", "are", "detect", "and", "Yes", "No",
)

_SYLLABLES = (
    "ka", "lo", "mi", "nu", "pe", "ri", "so", "tu", "va", "ze", "bo", "da",
    "fi", "gu", "he", "jo", "ke", "lu", "ma", "ne", "po", "ru", "si", "to",
)


def _build_ciphers() -> dict[str, dict[str, str]]:
    taken = set(CONTENT_WORDS) | set(TEMPLATE_WORDS) | set(GLYPHS) | set(LANGUAGES)
    ciphers = {"EN": {w: w for w in CONTENT_WORDS}}
    for li, lang in enumerate(LANGUAGES[1:], start=1):
        rng = np.random.default_rng(7919 * li)
        table = {}
        for w in CONTENT_WORDS:
            n_syl = 2 if len(w) <= 4 else 3
            while True:
                form = "".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), n_syl))
                if form not in taken:
                    break
            taken.add(form)
            table[w] = form
        ciphers[lang] = table
    return ciphers


CIPHERS = _build_ciphers()
_DECIPHER = {lang: {v: k for k, v in t.items()} for lang, t in CIPHERS.items()}


def translate(text: str, lang: str) -> str:
    """Word-level cipher of an English caption/question into toy language ``lang``."""
    if lang not in CIPHERS:
        raise KeyError(f"unknown language {lang!r}")
    table = CIPHERS[lang]
    return " ".join(table.get(w, w) for w in text.split(" "))


def untranslate(text: str, lang: str) -> str:
    table = _DECIPHER[lang]
    return " ".join(table.get(w, w) for w in text.split(" "))


def closed_word_set() -> list[str]:
    """Every whole word the generators can emit, in a fixed order."""
    words: list[str] = []
    seen = set()
    for w in (*TEMPLATE_WORDS, *LANGUAGES, *CONTENT_WORDS, *GLYPHS,
              *(f for lang in LANGUAGES[1:] for f in CIPHERS[lang].values())):
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words
