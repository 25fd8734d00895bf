"""Cross-attention separation toolkit.

Measures how sharply text-to-image diffusion models keep content words and
style descriptors apart spatially: per-token attribution maps are built
from recorded cross-attention, thresholded into masks, and compared via
IoU against a background-word baseline.
"""

__version__ = "0.1.0"

from .corpus import (OffsetToken, PromptSpec, StyleDescriptor,
                     annotate_token_spans, generate_corpus, render_prompt)
from .dump import (AttentionDump, AttentionRecord, DumpFormatError,
                   read_dump, read_dump_file, write_dump, write_dump_file)
from .heatmap import (AttributionMap, UpsampleSpec, bicubic_upsample,
                      fused_map, token_map)
from .manifest import (GenerationConfig, Manifest, TokenInfo, load_manifest,
                       save_manifest, validate_pair)
from .masks import (BinaryMask, SeparationRecord, ThresholdPolicy,
                    baseline_miou, iou, separation_record, threshold_mask)
from .pipeline import RunConfig, run_analyze
from .stats import (EffectSizeResult, PairedSample, TTestResult, effect_size,
                    paired_t_test, regularized_incomplete_beta, threshold_sweep)
