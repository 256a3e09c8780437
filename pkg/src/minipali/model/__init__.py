"""Image encoder, text encoder-decoder, decoding and checkpoints."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import EOS_ID, PAD_ID, VIT_PRESETS, EncDecConfig, ModelConfig, ViTConfig, toy_config
from .encdec import (
    MissingEOS,
    TextTooLong,
    VisualTokens,
    decode_teacher_forced,
    encode,
    encode_multimodal,
    forward_logits,
    sequence_loss,
    token_accuracy,
    visual_tokens,
)
from .generate import generate, greedy_decode, beam_decode, encode_inputs, score_candidate, score_candidates
from .params import ModelParams, Parameter, bind, count_params, init_params, param_shapes, parameters
from .vit import PositionalGridMismatch, patchify, resize_positional_embeddings, vit_forward

__all__ = [
    "Checkpoint", "CheckpointError", "EOS_ID", "PAD_ID", "VIT_PRESETS", "EncDecConfig", "MissingEOS",
    "ModelConfig", "ModelParams", "Parameter", "PositionalGridMismatch", "TextTooLong", "ViTConfig",
    "VisualTokens", "beam_decode", "bind", "count_params", "decode_teacher_forced", "encode",
    "encode_inputs", "encode_multimodal", "forward_logits", "generate", "greedy_decode", "init_params",
    "load_checkpoint", "param_shapes", "parameters", "patchify", "resize_positional_embeddings",
    "save_checkpoint", "score_candidate", "score_candidates", "sequence_loss", "token_accuracy",
    "toy_config", "visual_tokens", "vit_forward",
]
