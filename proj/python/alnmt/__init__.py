"""Transformer NMT with pool-based active learning."""

from ._alnmt import (
    ConfigError,
    Model,
    apply_bpe,
    brevity_penalty,
    config_defaults,
    corpus_bleu,
    detokenize,
    learn_bpe,
    learn_run_bpe,
    least_confidence,
    margin,
    perplexity,
    prepare,
    test,
    toy_pairs,
    train,
    translate,
)

__all__ = [
    "ConfigError",
    "Model",
    "apply_bpe",
    "brevity_penalty",
    "config_defaults",
    "corpus_bleu",
    "detokenize",
    "learn_bpe",
    "learn_run_bpe",
    "least_confidence",
    "margin",
    "perplexity",
    "prepare",
    "test",
    "toy_pairs",
    "train",
    "translate",
]
