"""A thin text-in/text-out view of a checkpoint, used by every evaluator."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from ..model import ModelConfig, bind, generate, score_candidates
from ..tasks.vocab import Tokenizer, default_tokenizer

LogitsTransform = Callable[[np.ndarray], np.ndarray]


class TextModel:
    """Wraps (config, params) so evaluators work on strings and images."""

    def __init__(self, cfg: ModelConfig, params: Mapping[str, np.ndarray], tokenizer: Tokenizer | None = None):
        self.cfg = cfg
        self.tokenizer = tokenizer or default_tokenizer()
        self._p = bind(params)

    def _image(self, image) -> np.ndarray:
        return np.asarray(getattr(image, "data", image), dtype=self.cfg.dtype)

    @property
    def resolution(self) -> int:
        return self.cfg.vit.image_resolution

    def generate_text(self, image, prompt: str, mode: str = "greedy", k: int = 1,
                      max_len: int | None = None) -> str:
        ids = generate(self.cfg, self._p, self._image(image), self.tokenizer.tokenize(prompt), mode=mode, k=k, max_len=max_len)
        return self.tokenizer.decode_output(ids)

    def score_texts(self, image, prompt: str, candidates: Sequence[str],
                    transform: LogitsTransform | None = None) -> np.ndarray:
        """log p(candidate + EOS | image, prompt) for each candidate string."""
        cands = [self.tokenizer.encode_target(c) for c in candidates]
        return score_candidates(self.cfg, self._p, self._image(image), self.tokenizer.tokenize(prompt), cands,
                                require_eos=True, transform=transform)
