"""Miniature text-conditioned denoiser with real multi-head cross-attention.

Full latent-diffusion checkpoints are far too heavy for desk-scale
conformance runs, and the extraction machinery only needs the shape of the
problem to be honest: a denoising loop whose layers softmax-attend over
prompt tokens, per head, at more than one spatial resolution. This model
keeps exactly that and nothing else. Weights are derived deterministically
from the model id, so "loading" a model id always yields the same network
on every machine.
"""

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from .tokenizer import VOCAB_SIZE

DEFAULT_MODEL_ID = "tiny-unet-64"
MAX_TOKENS = 77


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelSpec:
    latent_channels: int
    latent_size: int
    image_size: int
    d_text: int
    width_hi: int   # channels at full latent resolution
    width_lo: int   # channels after the downsample
    heads_hi: int
    heads_lo: int
    heads_mid: int


MODEL_SPECS = {
    "tiny-unet-64": ModelSpec(latent_channels=8, latent_size=16,
                              image_size=64, d_text=48,
                              width_hi=32, width_lo=64,
                              heads_hi=4, heads_lo=4, heads_mid=2),
}


def model_seed(model_id: str) -> int:
    digest = hashlib.blake2s(model_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class CrossAttention(nn.Module):
    """Multi-head attention from spatial features (queries) to token
    embeddings (keys/values), with a residual connection.

    Hook contract: when ``keep_probs`` is set, the post-softmax probability
    tensor of shape (batch, heads, h*w, n_tokens) is stashed on
    ``last_probs`` and the spatial dims on ``spatial`` during forward, so a
    forward hook can pick both up.
    """

    is_cross_attention = True

    def __init__(self, d_model: int, d_text: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must divide evenly into heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.norm = nn.GroupNorm(4, d_model)
        self.to_q = nn.Linear(d_model, d_model, bias=False)
        self.to_k = nn.Linear(d_text, d_model, bias=False)
        self.to_v = nn.Linear(d_text, d_model, bias=False)
        self.to_out = nn.Linear(d_model, d_model)
        self.keep_probs = False
        self.last_probs: torch.Tensor | None = None
        self.spatial: tuple[int, int] | None = None

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        n = text.shape[1]
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))
        k, v = self.to_k(text), self.to_v(text)

        def split(t, length):
            return t.view(b, length, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = split(q, h * w), split(k, n), split(v, n)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        probs = logits.softmax(dim=-1)
        if self.keep_probs:
            self.last_probs = probs.detach()
            self.spatial = (h, w)
        out = (probs @ v).transpose(1, 2).reshape(b, h * w, -1)
        out = self.to_out(out).transpose(1, 2).view(b, c, h, w)
        return x + out


def _time_embedding(t_frac: torch.Tensor, dim: int) -> torch.Tensor:
    # sinusoidal features of the normalized step position
    half = dim // 2
    freqs = torch.exp(torch.arange(half, dtype=torch.float32)
                      * (-math.log(1000.0) / max(half - 1, 1)))
    angles = t_frac[:, None] * freqs[None, :] * 1000.0
    return torch.cat([angles.sin(), angles.cos()], dim=1)


class TinyDenoiser(nn.Module):
    """Noise predictor: conv trunk with cross-attention at 16x16 and 8x8."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.token_emb = nn.Embedding(VOCAB_SIZE, spec.d_text)
        self.pos_emb = nn.Embedding(MAX_TOKENS, spec.d_text)
        self.text_norm = nn.LayerNorm(spec.d_text)

        self.time_mlp = nn.Linear(spec.width_hi, spec.width_hi)
        self.conv_in = nn.Conv2d(spec.latent_channels, spec.width_hi, 3,
                                 padding=1)
        self.attn_hi = CrossAttention(spec.width_hi, spec.d_text,
                                      spec.heads_hi)
        self.down = nn.Conv2d(spec.width_hi, spec.width_lo, 3, stride=2,
                              padding=1)
        self.attn_lo = CrossAttention(spec.width_lo, spec.d_text,
                                      spec.heads_lo)
        self.attn_mid = CrossAttention(spec.width_lo, spec.d_text,
                                       spec.heads_mid)
        self.up = nn.Conv2d(spec.width_lo, spec.width_hi, 3, padding=1)
        self.conv_out = nn.Conv2d(spec.width_hi, spec.latent_channels, 3,
                                  padding=1)
        self.decoder = nn.Conv2d(spec.latent_channels, 3, 3, padding=1)
        self.act = nn.SiLU()

    def encode_text(self, ids: list[int]) -> torch.Tensor:
        if len(ids) > MAX_TOKENS:
            raise ModelError(f"prompt has {len(ids)} tokens, max {MAX_TOKENS}")
        idx = torch.tensor(ids, dtype=torch.long)[None, :]
        pos = torch.arange(idx.shape[1], dtype=torch.long)[None, :]
        return self.text_norm(self.token_emb(idx) + self.pos_emb(pos))

    def forward(self, latent: torch.Tensor, t_frac: torch.Tensor,
                text: torch.Tensor) -> torch.Tensor:
        x = self.conv_in(latent)
        x = x + self.time_mlp(_time_embedding(t_frac, x.shape[1]))[:, :, None,
                                                                   None]
        x = self.act(x)
        x = self.attn_hi(x, text)
        y = self.act(self.down(x))
        y = self.attn_lo(y, text)
        y = self.attn_mid(y, text)
        y = torch.nn.functional.interpolate(y, scale_factor=2,
                                            mode="nearest")
        x = self.act(self.up(y)) + x
        return self.conv_out(x)

    def decode_image(self, latent: torch.Tensor) -> torch.Tensor:
        """Latent -> (3, image_size, image_size) in [0, 1]."""
        up = torch.nn.functional.interpolate(
            latent, size=(self.spec.image_size, self.spec.image_size),
            mode="bilinear", align_corners=False)
        return self.decoder(up).sigmoid()[0]


def _reset_parameters(model: nn.Module, gen: torch.Generator) -> None:
    # registration order is fixed, so this is reproducible for a given id
    for name, p in model.named_parameters():
        with torch.no_grad():
            if name.endswith(".bias"):
                p.zero_()
            elif "norm" in name and p.dim() == 1:
                p.fill_(1.0).add_(torch.empty_like(p).normal_(
                    0.0, 0.05, generator=gen))
            else:
                p.normal_(0.0, 0.15, generator=gen)


def build_model(model_id: str = DEFAULT_MODEL_ID) -> TinyDenoiser:
    spec = MODEL_SPECS.get(model_id)
    if spec is None:
        known = ", ".join(sorted(MODEL_SPECS))
        raise ModelError(f"unknown model id {model_id!r} (known: {known})")
    model = TinyDenoiser(spec)
    gen = torch.Generator().manual_seed(model_seed(model_id))
    _reset_parameters(model, gen)
    model.eval()
    model.requires_grad_(False)
    return model
