"""Synthetic scene corpus, the eight task templates, mixture sampling, filtering and dedup."""

from .corpus import (Corpus, CorpusConfig, Record, build_corpus, candidate_scenes, expand, load_corpus,
                     load_image, pair_score, write_corpus)
from .filtering import (EMBED_DIM, ScoredPair, cosine, hamming, image_embedding, keep_count, near_dedup,
                        phash, quality_filter, score_pair, text_embedding)
from .lexicon import CLASSES, COLORS, GLYPHS, LANGUAGES, translate, untranslate
from .mixture import (HIGH_RES_MIXTURE, HIGH_RES_WEIGHTS, PRETRAIN_MIXTURE, PRETRAIN_WEIGHTS, MixtureError,
                      MixtureSpec, sample_mixture)
from .scenes import (GlyphSpec, ObjectSpec, SceneError, SceneSpec, alt_text, english_alt_text, random_scene,
                     reading_order, render_array, render_scene)
from .templates import (SLOT, TASKS, Example, TaskError, answer_question, corruption_fraction, dequantize_coord,
                        detection_target, format_boxes, gen_caption, gen_detection, gen_object_aware, gen_ocr,
                        gen_span_corruption, gen_split_cap, gen_vqa, gen_vqg, make_example, noise_mask,
                        object_aware_answer, parse_boxes, quantize_coord, questions, splice_spans, supports,
                        text_document, validate_example)
from .vocab import Tokenizer, default_tokenizer, detokenize, sentinel, tokenize

__all__ = [name for name in dir() if not name.startswith("_")]
