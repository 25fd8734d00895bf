"""Instrumented toy diffusion runner emitting attnsep manifest/dump pairs."""

__version__ = "0.1.0"

from .extract import (BatchResult, ExtractionError, ExtractResult,
                      generate_and_dump, list_hookable_layers, run_extract)
from .hooks import AttentionTap, HookCapture, HookError, find_cross_attention
from .model import (DEFAULT_MODEL_ID, CrossAttention, ModelError, ModelSpec,
                    TinyDenoiser, build_model)
from .tokenizer import Token, tokenize, word_id

__all__ = [
    "AttentionTap", "BatchResult", "CrossAttention", "DEFAULT_MODEL_ID",
    "ExtractResult", "ExtractionError", "HookCapture", "HookError",
    "ModelError", "ModelSpec", "TinyDenoiser", "Token", "build_model",
    "find_cross_attention", "generate_and_dump", "list_hookable_layers",
    "run_extract", "tokenize", "word_id",
]
