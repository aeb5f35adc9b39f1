"""Minimal LoRA adapters for GPT-2 style attention projections.

Wraps the ``Conv1D`` modules (``c_attn``/``c_proj``) with a low-rank update
``x @ A @ B * (alpha / r)``. ``B`` starts at zero, so an untrained adapter is
an exact no-op; disabling the adapters recovers the frozen base model, which
doubles as the DPO reference without keeping a second copy in memory.
"""

from __future__ import annotations

from contextlib import contextmanager

import torch
from torch import nn
from transformers.pytorch_utils import Conv1D


class LoRAConv1D(nn.Module):
    def __init__(self, base: Conv1D, r: int, alpha: int):
        super().__init__()
        if r < 1:
            raise ValueError("LoRA rank must be at least 1")
        self.base = base
        self.r = r
        self.scaling = alpha / r
        in_features, out_features = base.weight.shape
        self.lora_a = nn.Parameter(torch.randn(in_features, r) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(r, out_features))
        self.enabled = True

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.base(x)
        if self.enabled:
            out = out + (x @ self.lora_a @ self.lora_b) * self.scaling
        return out


def apply_lora(
    model: nn.Module,
    r: int = 16,
    alpha: int = 32,
    target_names: tuple[str, ...] = ("c_attn", "c_proj"),
) -> list[nn.Parameter]:
    """Freeze the base model and inject adapters; returns trainable params."""
    for param in model.parameters():
        param.requires_grad_(False)
    trainable: list[nn.Parameter] = []
    for module in list(model.modules()):
        for name, child in list(module.named_children()):
            if name in target_names and isinstance(child, Conv1D):
                adapter = LoRAConv1D(child, r=r, alpha=alpha)
                setattr(module, name, adapter)
                trainable.extend([adapter.lora_a, adapter.lora_b])
    if not trainable:
        raise ValueError("no LoRA target modules found on the model")
    return trainable


def set_adapters_enabled(model: nn.Module, enabled: bool) -> None:
    for module in model.modules():
        if isinstance(module, LoRAConv1D):
            module.enabled = enabled


@contextmanager
def adapters_disabled(model: nn.Module):
    """Temporarily expose the frozen base model (the DPO reference)."""
    set_adapters_enabled(model, False)
    try:
        yield
    finally:
        set_adapters_enabled(model, True)
