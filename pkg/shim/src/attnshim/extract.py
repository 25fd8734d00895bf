"""Run the denoiser over prompts and write (manifest, dump) pairs.

The emitted files are the analysis engine's input contract: manifest.json
with token spans, dump.bin with one record per (layer, timestep, head)
holding post-softmax attention probabilities, plus the decoded image and a
layers.json sidecar mapping layer ids back to module paths.

Only the conditional branch of classifier-free guidance is recorded; the
unconditional branch attends to an empty prompt and would dilute token
attribution.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from attnsep.corpus import (OffsetToken, PromptSpec, TokenizationMismatch,
                            annotate_token_spans)
from attnsep.dump import AttentionDump, AttentionRecord, write_dump_file
from attnsep.manifest import (GenerationConfig, Manifest, TokenInfo,
                              save_manifest, validate_pair)

from .hooks import AttentionTap, HookError, find_cross_attention
from .model import DEFAULT_MODEL_ID, TinyDenoiser, build_model
from .tokenizer import BOS_ID, EOS_ID, Token, token_ids, tokenize

DEFAULT_STEPS = 30
DEFAULT_GUIDANCE = 7.5


class ExtractionError(Exception):
    pass


@dataclass(frozen=True)
class ExtractResult:
    prompt_id: int | None
    out_dir: Path
    manifest_path: Path
    dump_path: Path
    image_path: Path
    layers_path: Path


@dataclass
class BatchResult:
    results: list[ExtractResult]
    failures: list[tuple[str, str]]  # (pair name, diagnostic)

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def _torch_seed(seed: int) -> int:
    # dump seeds are u64; torch wants a signed 64-bit value
    return seed - (1 << 64) if seed >= (1 << 63) else seed


def probe_layer_dims(model: TinyDenoiser) -> list[dict]:
    """Inventory of cross-attention layers with spatial dims and heads,
    observed from a throwaway forward pass."""
    layers = find_cross_attention(model)
    if not layers:
        raise HookError("model has no cross-attention layers")
    for _, mod in layers:
        mod.keep_probs = True
    try:
        with torch.no_grad():
            spec = model.spec
            latent = torch.zeros(1, spec.latent_channels, spec.latent_size,
                                 spec.latent_size)
            text = model.encode_text([BOS_ID, EOS_ID])
            model(latent, torch.ones(1), text)
        out = []
        for layer_id, (path, mod) in enumerate(layers):
            h, w = mod.spatial
            out.append({"layer_id": layer_id, "path": path,
                        "heads": mod.n_heads, "height": h, "width": w})
        return out
    finally:
        for _, mod in layers:
            mod.keep_probs = False
            mod.last_probs = None
            mod.spatial = None


def list_hookable_layers(model_id: str = DEFAULT_MODEL_ID) -> list[dict]:
    return probe_layer_dims(build_model(model_id))


def _sample(model: TinyDenoiser, tap: AttentionTap, ids: list[int],
            steps: int, seed: int, guidance: float) -> torch.Tensor:
    spec = model.spec
    gen = torch.Generator().manual_seed(_torch_seed(seed))
    latent = torch.randn(1, spec.latent_channels, spec.latent_size,
                         spec.latent_size, generator=gen)
    text_c = model.encode_text(ids)
    text_u = model.encode_text([BOS_ID, EOS_ID])
    with torch.no_grad():
        for i in range(steps):
            t_frac = torch.tensor([1.0 - i / steps])
            tap.begin_step(i)
            tap.recording = False
            eps_u = model(latent, t_frac, text_u)
            tap.recording = True
            eps_c = model(latent, t_frac, text_c)
            eps = eps_u + guidance * (eps_c - eps_u)
            latent = latent - eps / steps
        image = model.decode_image(latent)
    return image


def _records_from_captures(tap: AttentionTap,
                           n_tokens: int) -> list[AttentionRecord]:
    records = []
    for cap in tap.captures:
        if cap.probs.shape[-1] != n_tokens:
            raise ExtractionError(
                f"layer {cap.path} attended over {cap.probs.shape[-1]} "
                f"tokens, prompt has {n_tokens}")
        for head in range(cap.probs.shape[0]):
            values = cap.probs[head].reshape(cap.height, cap.width, n_tokens)
            # storage clamp; softmax output is already in range
            values = np.clip(values, 0.0, 1.0).astype(np.float32)
            records.append(AttentionRecord(layer_id=cap.layer_id,
                                           timestep=cap.timestep,
                                           head=head, values=values))
    return records


def _save_image(image: torch.Tensor, path: Path) -> None:
    arr = (image.clamp(0, 1) * 255).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB").save(path)


def generate_and_dump(prompt: PromptSpec, out_dir, *,
                      model: TinyDenoiser | None = None,
                      model_id: str = DEFAULT_MODEL_ID,
                      steps: int = DEFAULT_STEPS, seed: int = 0,
                      layer_paths: list[str] | None = None,
                      guidance: float = DEFAULT_GUIDANCE) -> ExtractResult:
    """Generate one image, recording conditional-branch cross-attention.

    Raises ExtractionError when the prompt cannot be mapped onto token
    spans or the emitted pair would not validate.
    """
    if steps < 1:
        raise ExtractionError("steps must be >= 1")
    if model is None:
        model = build_model(model_id)
    tokens = tokenize(prompt.prompt_text)
    offset_tokens = [OffsetToken(t.text, t.start, t.end, t.special)
                     for t in tokens]
    try:
        content_span, style_span = annotate_token_spans(prompt, offset_tokens)
    except TokenizationMismatch as exc:
        raise ExtractionError(f"tokenization mismatch: {exc}") from exc

    with AttentionTap(model, layer_paths) as tap:
        image = _sample(model, tap, token_ids(tokens), steps, seed, guidance)
        dump = AttentionDump(
            records=_records_from_captures(tap, len(tokens)),
            image_width=model.spec.image_size,
            image_height=model.spec.image_size,
            model_id=model_id, seed=seed)
        layer_table = [{"layer_id": info.layer_id, "path": info.path,
                        "heads": info.n_heads} for info in tap.layers]

    manifest = Manifest(
        prompt=prompt.prompt_text, template_id=prompt.template_id,
        tokens=[TokenInfo(t.text, t.special) for t in tokens],
        content_span=content_span, style_span=style_span,
        content_label=prompt.content_label, style_label=prompt.style_label,
        style_kind=prompt.style_kind,
        generation=GenerationConfig(steps=steps, guidance=guidance,
                                    model_id=model_id))
    report = validate_pair(dump, manifest)
    if not report.ok:
        lines = "; ".join(f"{f.code}: {f.message}" for f in report.findings)
        raise ExtractionError(f"emitted pair would not validate: {lines}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ExtractResult(prompt_id=prompt.prompt_id, out_dir=out_dir,
                           manifest_path=out_dir / "manifest.json",
                           dump_path=out_dir / "dump.bin",
                           image_path=out_dir / "image.png",
                           layers_path=out_dir / "layers.json")
    save_manifest(manifest, result.manifest_path)
    write_dump_file(dump, result.dump_path)
    _save_image(image, result.image_path)
    with open(result.layers_path, "w", encoding="utf-8") as fh:
        json.dump({"model_id": model_id, "layers": layer_table}, fh, indent=2)
        fh.write("\n")
    return result


def run_extract(prompts: list[PromptSpec], out_root, *,
                model_id: str = DEFAULT_MODEL_ID, steps: int = DEFAULT_STEPS,
                seed: int = 0, layer_paths: list[str] | None = None,
                guidance: float = DEFAULT_GUIDANCE) -> BatchResult:
    """Extract a batch; one prompt failing does not stop the others."""
    model = build_model(model_id)
    out_root = Path(out_root)
    results, failures = [], []
    for i, prompt in enumerate(prompts):
        pid = prompt.prompt_id if prompt.prompt_id is not None else i
        name = f"pair_{pid:05d}"
        try:
            results.append(generate_and_dump(
                prompt, out_root / name, model=model, model_id=model_id,
                steps=steps, seed=(seed + pid) % (1 << 64),
                layer_paths=layer_paths, guidance=guidance))
        except (ExtractionError, HookError, RuntimeError, OSError) as exc:
            failures.append((name, f"{type(exc).__name__}: {exc}"))
    return BatchResult(results=results, failures=failures)
