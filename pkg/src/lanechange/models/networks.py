"""I3D, SlowFast and X3D classifiers.

All three take ``B x F x C x H x W`` clips and share the same tail: a global
average pool whose temporal extent can be shortened to the most recent ``k``
positions, two 1x1x1 projections and a linear classifier.  X3D places its
first projection (``conv_5``) before the pool, as in its reference design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn

from .blocks import (Bottleneck, ClassifierHead, X3DBottleneck, conv3d,
                     init_weights, temporal_tail_mean)
from .config import ConfigError, ModelConfig


@dataclass(frozen=True)
class ResNetLayout:
    depths: Tuple[int, ...]
    stem: int
    outs: Tuple[int, ...]
    inners: Tuple[int, ...]
    head: Tuple[int, ...]


@dataclass(frozen=True)
class X3DLayout:
    depths: Tuple[int, ...]
    stem: int
    outs: Tuple[int, ...]
    inners: Tuple[int, ...]
    conv5: int
    lin5: int
    se_ratio: float = 0.0625


_R50 = ResNetLayout((3, 4, 6, 3), 64, (256, 512, 1024, 2048), (64, 128, 256, 512),
                    (2048, 2048))
RESNET_LAYOUTS = {
    "R50": _R50,
    "R101": ResNetLayout((3, 4, 23, 3), _R50.stem, _R50.outs, _R50.inners, _R50.head),
    "DESK": ResNetLayout((1, 1), 16, (64, 128), (16, 32), (128, 128)),
}


def _x3d(depth_factor: float) -> X3DLayout:
    depths = tuple(int(math.ceil(depth_factor * d)) for d in (1, 2, 5, 3))
    outs = (24, 48, 96, 192)
    inners = tuple(int(2.25 * c) for c in outs)
    return X3DLayout(depths, 24, outs, inners, inners[-1], 2048)


X3D_LAYOUTS = {
    "XS": _x3d(2.2),
    "S": _x3d(2.2),
    "M": _x3d(2.2),
    "L": _x3d(5.0),
    "DESK": X3DLayout((1, 2), 8, (12, 24), (27, 54), 54, 128),
}

# I3D inflates the first 1x1 of a block to 3x1x1 following a per-stage pattern.
I3D_TEMPORAL = ((3,), (3, 1), (3, 1), (1, 3))
SLOW_TEMPORAL = (1, 1, 3, 3)
FAST_TEMPORAL = (3, 3, 3, 3)


class VideoClassifier(nn.Module):
    """Common plumbing: input checks, pooling and the class-score grid."""

    config: ModelConfig
    head: ClassifierHead

    def check_input(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        want = (cfg.input_frames, cfg.in_channels, cfg.input_size, cfg.input_size)
        if x.dim() != 5 or tuple(x.shape[1:]) != want:
            raise ValueError(f"expected B x {' x '.join(map(str, want))} input, "
                             f"got {tuple(x.shape)}")
        return x.permute(0, 2, 1, 3, 4)  # -> B x C x T x H x W

    @property
    def temporal_kernel(self) -> int:
        return self._kernel

    def set_temporal_kernel(self, k: int) -> None:
        extent = self.config.temporal_extent
        if not isinstance(k, int) or not 1 <= k <= extent:
            raise ConfigError(f"temporal pool kernel {k!r} outside [1, {extent}]")
        self._kernel = k

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.backbone(self.check_input(x))
        return self.head(self.pool(feats))

    def pool(self, feats) -> torch.Tensor:
        return temporal_tail_mean(feats, self._kernel)

    def feature_grid(self, x: torch.Tensor) -> torch.Tensor:
        """Last convolutional features as one ``B x C x T x H x W`` grid."""
        return self.backbone(self.check_input(x))

    def class_score_grid(self, x: torch.Tensor) -> torch.Tensor:
        """Per-position class scores ``B x T x H x W x K`` from the head."""
        return self.head.pointwise(self.feature_grid(x))


class ResNet3D(VideoClassifier):
    """Single-pathway I3D ResNet."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        lay = RESNET_LAYOUTS[cfg.preset]
        self.stem = nn.Sequential(
            conv3d(cfg.in_channels, lay.stem, (5, 7, 7), (1, 2, 2)),
            nn.BatchNorm3d(lay.stem), nn.ReLU(),
            nn.MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)))
        self.stages = nn.ModuleList()
        c_in = lay.stem
        for i, (depth, inner, out) in enumerate(zip(lay.depths, lay.inners, lay.outs)):
            pattern = I3D_TEMPORAL[i]
            blocks = [Bottleneck(c_in if b == 0 else out, inner, out, pattern[b % len(pattern)],
                                 (1 if i == 0 else 2) if b == 0 else 1)
                      for b in range(depth)]
            self.stages.append(nn.Sequential(*blocks))
            c_in = out
        self.stage1_pool = nn.MaxPool3d((2, 1, 1), (2, 1, 1))
        self.head = ClassifierHead(c_in, lay.head, cfg.num_classes, cfg.dropout)
        self.feature_dim = c_in
        self._kernel = cfg.pool_kernel
        init_weights(self)

    def backbone(self, x):
        x = self.stem(x)
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i == 0:
                x = self.stage1_pool(x)
        return x


class FuseFastToSlow(nn.Module):
    """Time-strided conv on the fast features, concatenated onto the slow ones."""

    def __init__(self, c_fast: int, alpha: int, ratio: int = 2, kernel: int = 7):
        super().__init__()
        self.conv = nn.Conv3d(c_fast, c_fast * ratio, (kernel, 1, 1), stride=(alpha, 1, 1),
                              padding=(kernel // 2, 0, 0), bias=False)
        self.bn = nn.BatchNorm3d(c_fast * ratio)

    def forward(self, slow, fast):
        lateral = torch.relu(self.bn(self.conv(fast)))
        if lateral.shape[2] != slow.shape[2]:
            raise RuntimeError(f"lateral length {lateral.shape[2]} != slow {slow.shape[2]}")
        return torch.cat([slow, lateral], dim=1), fast


class SlowFast(VideoClassifier):
    """Two-pathway network: slow sees every alpha-th frame at full width, fast
    sees every frame with beta times the channels.

    The slow frames are taken counting back from the last frame, so both
    pathways always see the most recent frame of the clip.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        lay = RESNET_LAYOUTS[cfg.preset]
        a = cfg.alpha
        fast_w = lambda c: max(1, int(round(c * cfg.beta)))
        s_stem, f_stem = lay.stem, fast_w(lay.stem)
        self.slow_stem = nn.Sequential(
            conv3d(cfg.in_channels, s_stem, (1, 7, 7), (1, 2, 2)),
            nn.BatchNorm3d(s_stem), nn.ReLU(), nn.MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)))
        self.fast_stem = nn.Sequential(
            conv3d(cfg.in_channels, f_stem, (5, 7, 7), (1, 2, 2)),
            nn.BatchNorm3d(f_stem), nn.ReLU(), nn.MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)))
        n = len(lay.depths)
        self.fusions = nn.ModuleList([FuseFastToSlow(f_stem, a)])
        self.slow_stages = nn.ModuleList()
        self.fast_stages = nn.ModuleList()
        s_in, f_in = s_stem + 2 * f_stem, f_stem
        for i, (depth, inner, out) in enumerate(zip(lay.depths, lay.inners, lay.outs)):
            f_inner, f_out = fast_w(inner), fast_w(out)
            stride = 1 if i == 0 else 2
            self.slow_stages.append(nn.Sequential(*[
                Bottleneck(s_in if b == 0 else out, inner, out, SLOW_TEMPORAL[i],
                           stride if b == 0 else 1) for b in range(depth)]))
            self.fast_stages.append(nn.Sequential(*[
                Bottleneck(f_in if b == 0 else f_out, f_inner, f_out, FAST_TEMPORAL[i],
                           stride if b == 0 else 1) for b in range(depth)]))
            if i < n - 1:
                self.fusions.append(FuseFastToSlow(f_out, a))
                s_in = out + 2 * f_out
            else:
                s_in = out
            f_in = f_out
        self.slow_dim, self.fast_dim = s_in, f_in
        self.head = ClassifierHead(s_in + f_in, lay.head, cfg.num_classes, cfg.dropout)
        self.feature_dim = s_in + f_in
        self._kernel = cfg.pool_kernel
        init_weights(self)

    def backbone(self, x):
        a = self.config.alpha
        # every alpha-th frame, anchored so the most recent frame is always included
        slow, fast = x[:, :, a - 1::a], x
        slow, fast = self.slow_stem(slow), self.fast_stem(fast)
        slow, fast = self.fusions[0](slow, fast)
        for i, (ss, fs) in enumerate(zip(self.slow_stages, self.fast_stages)):
            slow, fast = ss(slow), fs(fast)
            if fast.shape[2] != a * slow.shape[2]:
                raise RuntimeError("fast pathway length must be alpha x slow length")
            if i + 1 < len(self.fusions):
                slow, fast = self.fusions[i + 1](slow, fast)
        return slow, fast

    def pool(self, feats):
        slow, fast = feats
        k_slow = max(1, math.ceil(self._kernel / self.config.alpha))
        return torch.cat([temporal_tail_mean(slow, k_slow),
                          temporal_tail_mean(fast, self._kernel)], dim=1)

    def feature_grid(self, x):
        slow, fast = self.backbone(self.check_input(x))
        slow = slow.repeat_interleave(self.config.alpha, dim=2)
        return torch.cat([slow, fast], dim=1)


class X3D(VideoClassifier):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        lay = X3D_LAYOUTS[cfg.preset]
        self.stem = nn.Sequential(
            conv3d(cfg.in_channels, lay.stem, (1, 3, 3), (1, 2, 2)),
            conv3d(lay.stem, lay.stem, (5, 1, 1), groups=lay.stem),
            nn.BatchNorm3d(lay.stem), nn.ReLU())
        self.stages = nn.ModuleList()
        c_in = lay.stem
        for depth, inner, out in zip(lay.depths, lay.inners, lay.outs):
            self.stages.append(nn.Sequential(*[
                X3DBottleneck(c_in if b == 0 else out, inner, out, 2 if b == 0 else 1,
                              lay.se_ratio if b % 2 == 0 else 0.0)
                for b in range(depth)]))
            c_in = out
        self.conv5 = nn.Sequential(conv3d(c_in, lay.conv5, (1, 1, 1)),
                                   nn.BatchNorm3d(lay.conv5), nn.ReLU())
        self.head = ClassifierHead(lay.conv5, (lay.lin5,), cfg.num_classes, cfg.dropout)
        self.feature_dim = lay.conv5
        self._kernel = cfg.pool_kernel
        init_weights(self)

    def backbone(self, x):
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return self.conv5(x)


_FAMILY = {"I3D": ResNet3D, "SlowFast": SlowFast, "X3D": X3D}


def build_model(cfg: ModelConfig) -> VideoClassifier:
    if cfg.family == "I3D" and cfg.input_frames < 2:
        raise ConfigError("I3D needs at least 2 input frames")
    return _FAMILY[cfg.family](cfg)
