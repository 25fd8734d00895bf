"""Forward-hook recorder for cross-attention probabilities.

Works against any torch module that follows the capture contract (see
``CrossAttention``): ``is_cross_attention`` is truthy, and during forward,
while ``keep_probs`` is set, the module stashes its post-softmax tensor of
shape (batch, heads, h*w, n_tokens) on ``last_probs`` and the spatial dims
on ``spatial``.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn


class HookError(Exception):
    pass


@dataclass(frozen=True)
class LayerInfo:
    layer_id: int
    path: str
    n_heads: int


@dataclass
class HookCapture:
    layer_id: int
    path: str
    timestep: int
    height: int
    width: int
    probs: np.ndarray  # (heads, h*w, n_tokens) float32, conditional branch
    cond_only: bool = True


def find_cross_attention(model: nn.Module) -> list[tuple[str, nn.Module]]:
    """Deterministic (registration-order) inventory of hookable layers."""
    return [(name, mod) for name, mod in model.named_modules()
            if getattr(mod, "is_cross_attention", False)]


class AttentionTap:
    """Context manager that records captures from selected layers.

    Recording is gated twice: per-module ``keep_probs`` (so untapped layers
    never hold tensors) and the tap's own ``recording`` flag, which the
    sampler drops while running the unconditional guidance branch.
    """

    def __init__(self, model: nn.Module,
                 layer_paths: list[str] | None = None):
        inventory = find_cross_attention(model)
        if not inventory:
            raise HookError("model has no cross-attention layers")
        by_path = dict(inventory)
        if layer_paths is None:
            selected = [name for name, _ in inventory]
        else:
            if not layer_paths:
                raise HookError("empty layer selection")
            missing = [p for p in layer_paths if p not in by_path]
            if missing:
                raise HookError(f"unknown layer path(s): {missing}; "
                                f"available: {[n for n, _ in inventory]}")
            # keep inventory order regardless of how the selection was given
            selected = [name for name, _ in inventory if name in
                        set(layer_paths)]
        self.layers = [LayerInfo(i, path, by_path[path].n_heads)
                       for i, path in enumerate(selected)]
        self._modules = [by_path[l.path] for l in self.layers]
        self._handles: list = []
        self.captures: list[HookCapture] = []
        self.recording = True
        self._timestep = 0

    def begin_step(self, timestep: int) -> None:
        self._timestep = timestep

    def _make_hook(self, info: LayerInfo):
        def hook(module, args, output):
            if not self.recording:
                return
            if module.last_probs is None or module.spatial is None:
                raise HookError(f"layer {info.path} ran without stashing "
                                "probabilities")
            probs = module.last_probs
            h, w = module.spatial
            if probs.shape[0] != 1:
                raise HookError("tap expects batch size 1")
            self.captures.append(HookCapture(
                layer_id=info.layer_id, path=info.path,
                timestep=self._timestep, height=h, width=w,
                probs=probs[0].to(torch.float32).cpu().numpy()))
            module.last_probs = None
        return hook

    def __enter__(self) -> "AttentionTap":
        for info, mod in zip(self.layers, self._modules):
            mod.keep_probs = True
            self._handles.append(mod.register_forward_hook(
                self._make_hook(info)))
        return self

    def __exit__(self, *exc) -> None:
        for mod in self._modules:
            mod.keep_probs = False
            mod.last_probs = None
        for handle in self._handles:
            handle.remove()
        self._handles.clear()
