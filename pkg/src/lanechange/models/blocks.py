from __future__ import annotations

from typing import Sequence, Tuple

import torch
import torch.nn as nn

Triple = Tuple[int, int, int]


def conv3d(c_in: int, c_out: int, kernel: Triple, stride: Triple = (1, 1, 1),
           groups: int = 1, bias: bool = False) -> nn.Conv3d:
    padding = tuple(k // 2 for k in kernel)
    return nn.Conv3d(c_in, c_out, kernel, stride=stride, padding=padding,
                     groups=groups, bias=bias)


class Swish(nn.Module):
    def forward(self, x):
        return x * torch.sigmoid(x)


def round_width(width: float, multiplier: float = 1.0, min_width: int = 8,
                divisor: int = 8) -> int:
    width *= multiplier
    out = max(min_width, int(width + divisor / 2) // divisor * divisor)
    if out < 0.9 * width:
        out += divisor
    return int(out)


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, ratio: float):
        super().__init__()
        hidden = round_width(channels, ratio)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.fc1 = nn.Conv3d(channels, hidden, 1, bias=True)
        self.fc2 = nn.Conv3d(hidden, channels, 1, bias=True)

    def forward(self, x):
        s = torch.relu(self.fc1(self.pool(x)))
        return x * torch.sigmoid(self.fc2(s))


class Bottleneck(nn.Module):
    """ResNet bottleneck: (kt x 1 x 1) -> (1 x 3 x 3, strided) -> (1 x 1 x 1)."""

    def __init__(self, c_in: int, c_inner: int, c_out: int, temporal_kernel: int,
                 spatial_stride: int):
        super().__init__()
        self.conv_a = conv3d(c_in, c_inner, (temporal_kernel, 1, 1))
        self.bn_a = nn.BatchNorm3d(c_inner)
        self.conv_b = conv3d(c_inner, c_inner, (1, 3, 3), (1, spatial_stride, spatial_stride))
        self.bn_b = nn.BatchNorm3d(c_inner)
        self.conv_c = conv3d(c_inner, c_out, (1, 1, 1))
        self.bn_c = nn.BatchNorm3d(c_out)
        self.shortcut = None
        if c_in != c_out or spatial_stride != 1:
            self.shortcut = nn.Sequential(
                conv3d(c_in, c_out, (1, 1, 1), (1, spatial_stride, spatial_stride)),
                nn.BatchNorm3d(c_out))

    def forward(self, x):
        y = torch.relu(self.bn_a(self.conv_a(x)))
        y = torch.relu(self.bn_b(self.conv_b(y)))
        y = self.bn_c(self.conv_c(y))
        skip = x if self.shortcut is None else self.shortcut(x)
        return torch.relu(y + skip)


class X3DBottleneck(nn.Module):
    """Inverted bottleneck with a depthwise 3x3x3 conv, optional SE and swish."""

    def __init__(self, c_in: int, c_inner: int, c_out: int, spatial_stride: int,
                 se_ratio: float):
        super().__init__()
        self.conv_a = conv3d(c_in, c_inner, (1, 1, 1))
        self.bn_a = nn.BatchNorm3d(c_inner)
        self.conv_b = conv3d(c_inner, c_inner, (3, 3, 3), (1, spatial_stride, spatial_stride),
                             groups=c_inner)
        self.bn_b = nn.BatchNorm3d(c_inner)
        self.se = SqueezeExcite(c_inner, se_ratio) if se_ratio > 0 else None
        self.act_b = Swish()
        self.conv_c = conv3d(c_inner, c_out, (1, 1, 1))
        self.bn_c = nn.BatchNorm3d(c_out)
        self.shortcut = None
        if c_in != c_out or spatial_stride != 1:
            self.shortcut = nn.Sequential(
                conv3d(c_in, c_out, (1, 1, 1), (1, spatial_stride, spatial_stride)),
                nn.BatchNorm3d(c_out))

    def forward(self, x):
        y = torch.relu(self.bn_a(self.conv_a(x)))
        y = self.bn_b(self.conv_b(y))
        if self.se is not None:
            y = self.se(y)
        y = self.bn_c(self.conv_c(self.act_b(y)))
        skip = x if self.shortcut is None else self.shortcut(x)
        return torch.relu(y + skip)


def temporal_tail_mean(x: torch.Tensor, k: int) -> torch.Tensor:
    """Average over the last ``k`` time steps and all spatial positions.

    ``B x C x T x H x W`` -> ``B x C x 1 x 1 x 1``.
    """
    return x[:, :, -k:].mean(dim=(2, 3, 4), keepdim=True)


class ClassifierHead(nn.Module):
    """Pooled features -> 1x1x1 projection convs -> dropout -> fully connected.

    The projection is pointwise, so the same head can score every position of
    an unpooled feature grid (used for class activation maps).
    """

    def __init__(self, c_in: int, proj_dims: Sequence[int], num_classes: int,
                 dropout: float):
        super().__init__()
        layers = []
        for d in proj_dims:
            layers += [nn.Conv3d(c_in, d, 1, bias=False), nn.ReLU(inplace=False)]
            c_in = d
        self.projection = nn.Sequential(*layers)
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()
        self.fc = nn.Linear(c_in, num_classes)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        y = self.projection(pooled).flatten(1)
        return self.fc(self.dropout(y))

    def pointwise(self, grid: torch.Tensor) -> torch.Tensor:
        """``B x C x T x H x W`` -> per-position logits ``B x T x H x W x K``."""
        y = self.projection(grid).permute(0, 2, 3, 4, 1)
        return self.fc(y)


def init_weights(model: nn.Module) -> None:
    for m in model.modules():
        if isinstance(m, nn.Conv3d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm3d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.normal_(m.weight, std=0.01)
            nn.init.zeros_(m.bias)
