"""3D action-recognition model zoo: I3D, SlowFast and X3D."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import torch

from .config import (CANONICAL_INPUT, FAMILIES, PRESETS, REFERENCE_GFLOPS, ConfigError,
                     ModelConfig, canonical_config, desk_config, read_config, write_config)
from .flops import FlopReport, count_flops
from .networks import SlowFast, VideoClassifier, X3D, ResNet3D, build_model


@dataclass
class ModelOutput:
    logits: torch.Tensor  # B x K
    probabilities: torch.Tensor  # B x K


def forward(model: VideoClassifier, batch: Union[np.ndarray, torch.Tensor]) -> ModelOutput:
    """Eval-mode prediction on a ``B x F x C x H x W`` batch."""
    if isinstance(batch, np.ndarray):
        batch = torch.from_numpy(np.ascontiguousarray(batch))
    param = next(model.parameters())
    batch = batch.to(dtype=param.dtype, device=param.device)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model(batch)
    finally:
        model.train(was_training)
    return ModelOutput(logits, torch.softmax(logits, dim=1))


def set_temporal_pool_kernel(model: VideoClassifier, k: int) -> VideoClassifier:
    """Pool only the most recent ``k`` temporal positions before the head."""
    model.set_temporal_kernel(k)
    return model


__all__ = [
    "CANONICAL_INPUT", "FAMILIES", "PRESETS", "REFERENCE_GFLOPS", "ConfigError",
    "FlopReport", "ModelConfig", "ModelOutput", "ResNet3D", "SlowFast", "VideoClassifier",
    "X3D", "build_model", "canonical_config", "count_flops", "desk_config", "forward",
    "read_config", "set_temporal_pool_kernel", "write_config",
]
