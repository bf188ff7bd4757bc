"""Desk-scale lab for language-to-time-series transfer experiments."""

from .embedding import EmbeddingAdapter, embed, init_adapter_from_pretrained, init_adapter_random
from .head import CategoricalHead, SeriesModel, forecast, head_logits, nll_loss
from .model import ModelConfig, forward, init_random, param_count, tier_config
from .tensor import Tensor, backward, grad_check, no_grad
from .tokenizers import (
    BinSpec,
    LagSet,
    NormalizationStats,
    TokenSequence,
    detokenize_bin,
    normalize_window,
    tokenize_bin,
    tokenize_lag,
    tokenize_naive,
)
from .transfer import (
    LossCurve,
    TransferReport,
    aggregate_seeds,
    effective_transfer,
    inverse_query,
    loss_difference,
    monotone_envelope,
)

__version__ = "0.1.0"
