"""Adafactor, learning-rate schedules, two-phase pre-training, fine-tuning and checkpoint souping."""

from .loop import (FINETUNE_PRESETS, Batch, CorpusSampler, ExampleSampler, FinetunePreset, MetricsLog,
                   PhaseConfig, ResolutionMismatch, SoupError, finetune, get_preset, loss_and_grads,
                   make_batch, phase2_default, run_phase, run_pretraining, soup, soup_checkpoints, train_step)
from .optim import AdafactorState, adafactor_init, adafactor_update
from .schedule import Schedule, lr_at_step

__all__ = [name for name in dir() if not name.startswith("_")]
