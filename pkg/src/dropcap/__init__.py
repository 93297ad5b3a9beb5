"""GRU caption decoder with inference-time hidden-state dropout.

Trains an image-conditioned GRU language model from scratch (numpy only),
degrades generation by dropping hidden units at inference, and measures the
damage with corpus BLEU-4, METEOR, word-distribution KL divergence, generated
vocabulary size and length-limit exceedance.
"""

from .corpus import (
    CaptionRecord,
    FeatureStore,
    Vocabulary,
    build_vocab,
    load_captions,
    load_embeddings,
    load_features,
    save_captions,
    save_features,
    synth_corpus,
    tokenize,
)
from .decoder import CaptionModel, GenerationResult, greedy_generate, perplexity, teacher_forced_loss
from .harness import SweepConfig, evaluate_cell, load_sweep_config, run_sweep
from .metrics import (
    MetricsReport,
    WordDistribution,
    bleu4,
    corpus_meteor,
    diversity_stats,
    kl_divergence,
    meteor,
    word_distribution,
)
from .neural import GruParams, dropout_mask, grad_check, gru_backprop, gru_step
from .rng import RngStream
from .trainer import AdamState, TrainConfig, adam_step, load_checkpoint, save_checkpoint, train

__all__ = [
    "AdamState", "CaptionModel", "CaptionRecord", "FeatureStore", "GenerationResult",
    "GruParams", "MetricsReport", "RngStream", "SweepConfig", "TrainConfig",
    "Vocabulary", "WordDistribution", "adam_step", "bleu4", "build_vocab",
    "corpus_meteor", "diversity_stats", "dropout_mask", "evaluate_cell",
    "grad_check", "greedy_generate", "gru_backprop", "gru_step", "kl_divergence",
    "load_captions", "load_checkpoint", "load_embeddings", "load_features",
    "load_sweep_config", "meteor", "perplexity", "run_sweep", "save_captions",
    "save_checkpoint", "save_features", "synth_corpus", "teacher_forced_loss",
    "tokenize", "train", "word_distribution",
]
