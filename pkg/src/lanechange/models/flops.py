"""Per-layer multiply-accumulate counting.

One multiply-accumulate is reported as one FLOP; an affine batch norm in
inference form costs a scale and a shift per output element.  That is the
convention behind the published GFLOPs of these model families, so totals
are directly comparable with them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import torch
import torch.nn as nn

from .config import ModelConfig


@dataclass
class LayerCount:
    name: str
    kind: str  # "conv", "linear" or "norm"
    flops: int
    out_shape: tuple

    @property
    def spatial(self) -> int:
        """Spatial positions in the layer output (1 for pooled/linear layers)."""
        if len(self.out_shape) == 5:
            return self.out_shape[3] * self.out_shape[4]
        return 1


@dataclass
class FlopReport:
    config: ModelConfig
    layers: List[LayerCount] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    def by_kind(self) -> dict:
        out: dict = {}
        for l in self.layers:
            out[l.kind] = out.get(l.kind, 0) + l.flops
        return out


def _conv_flops(m: nn.Conv3d, out: torch.Tensor) -> int:
    kt, kh, kw = m.kernel_size
    per_output = (m.in_channels // m.groups) * kt * kh * kw
    return out.numel() // out.shape[0] * per_output


def layer_counts(model: nn.Module, x: torch.Tensor, include_norm: bool = True) -> List[LayerCount]:
    """Run ``model`` once on ``x`` and count every conv, linear and batch norm."""
    counts: List[LayerCount] = []
    hooks = []

    def hook(name):
        def fn(mod, inp, out):
            shape = tuple(out.shape[1:])
            if isinstance(mod, nn.Conv3d):
                counts.append(LayerCount(name, "conv", _conv_flops(mod, out), shape))
            elif isinstance(mod, nn.Linear):
                per = out.numel() // out.shape[0]
                counts.append(LayerCount(name, "linear", per * mod.in_features, shape))
            elif include_norm:
                per = 2 if mod.affine else 1
                counts.append(LayerCount(name, "norm", per * out.numel() // out.shape[0], shape))
        return fn

    for name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv3d, nn.Linear, nn.BatchNorm3d)):
            hooks.append(mod.register_forward_hook(hook(name)))
    try:
        with torch.no_grad():
            model(x)
    finally:
        for h in hooks:
            h.remove()
    return counts


def count_flops(cfg: ModelConfig, include_norm: bool = True) -> FlopReport:
    """FLOPs for one clip, traced on the meta device (no real compute)."""
    from .networks import build_model

    with torch.device("meta"):
        model = build_model(cfg).eval()
        x = torch.empty(1, cfg.input_frames, cfg.in_channels, cfg.input_size, cfg.input_size)
    return FlopReport(cfg, layer_counts(model, x, include_norm))
