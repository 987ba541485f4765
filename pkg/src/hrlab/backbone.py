"""Shared-weight multi-scale encoder with per-modality batch normalization.

Convolution weights are shared by both modalities so the encoder learns
geometric structure; normalization statistics and affines are kept per
modality tag so each stream's radiometry is absorbed separately.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError

__all__ = ["ModalityBatchNorm2d", "Encoder", "parameter_census"]

DEFAULT_TAGS = ("a", "b")


class ModalityBatchNorm2d(nn.Module):
    """BatchNorm2d with one statistic/affine set per modality tag.

    With ``shared=True`` a single set serves every tag (the ablation variant);
    the convolutions around it are unaffected either way.
    """

    def __init__(self, num_features: int, tags=DEFAULT_TAGS, eps: float = 1e-5,
                 momentum: float = 0.1, shared: bool = False):
        super().__init__()
        self.tags = tuple(tags)
        self.shared = shared
        keys = ("shared",) if shared else self.tags
        self.norms = nn.ModuleDict(
            {t: nn.BatchNorm2d(num_features, eps=eps, momentum=momentum) for t in keys}
        )

    def forward(self, x: torch.Tensor, tag: str) -> torch.Tensor:
        if tag not in self.tags:
            raise ConfigError(f"unknown modality tag {tag!r}; expected one of {self.tags}")
        key = "shared" if self.shared else tag
        return self.norms[key](x)


class _Stage(nn.Module):
    """Strided conv + norm + activation followed by a residual conv block."""

    def __init__(self, c_in: int, c_out: int, stride: int, tags, msbn_shared: bool):
        super().__init__()
        def norm():
            return ModalityBatchNorm2d(c_out, tags=tags, shared=msbn_shared)

        self.down = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.down_norm = norm()
        self.res_conv1 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.res_norm1 = norm()
        self.res_conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.res_norm2 = norm()
        self.act = nn.LeakyReLU(0.1)

    def forward(self, x: torch.Tensor, tag: str) -> torch.Tensor:
        x = self.act(self.down_norm(self.down(x), tag))
        h = self.act(self.res_norm1(self.res_conv1(x), tag))
        h = self.res_norm2(self.res_conv2(h), tag)
        return self.act(x + h)


class Encoder(nn.Module):
    """Five-stage pyramid encoder; stage i halves resolution for i >= 1."""

    def __init__(self, in_channels: int = 1, widths=(16, 32, 48, 64, 96),
                 tags=DEFAULT_TAGS, msbn: bool = True):
        super().__init__()
        if len(widths) != 5:
            raise ConfigError(f"encoder needs 5 stage widths, got {len(widths)}")
        if any(a > b for a, b in zip(widths, widths[1:])):
            raise ConfigError("stage widths must be non-decreasing")
        self.widths = tuple(widths)
        self.tags = tuple(tags)
        self.msbn = msbn
        stages = []
        c_prev = in_channels
        for i, c in enumerate(widths):
            stages.append(_Stage(c_prev, c, stride=1 if i == 0 else 2, tags=self.tags,
                                 msbn_shared=not msbn))
            c_prev = c
        self.stages = nn.ModuleList(stages)

    def forward(self, image: torch.Tensor, tag: str) -> list[torch.Tensor]:
        """Encode (B, C, H, W) into 5 feature levels at H/2^i for i = 0..4."""
        if image.dim() != 4:
            raise DimensionError(f"expected (B, C, H, W), got shape {tuple(image.shape)}")
        H, W = image.shape[-2:]
        if H % 16 or W % 16:
            raise DimensionError(f"input resolution must be divisible by 16, got {H}x{W}")
        levels = []
        x = image
        for stage in self.stages:
            x = stage(x, tag)
            levels.append(x)
        return levels


def parameter_census(module: nn.Module) -> dict:
    """Count trainable parameters by role: shared convs vs per-tag norm affines."""
    conv = 0
    other = 0
    bn_per_set: dict[str, int] = {}
    for name, m in module.named_modules():
        if isinstance(m, ModalityBatchNorm2d):
            for key, bn in m.norms.items():
                n = sum(p.numel() for p in bn.parameters() if p.requires_grad)
                bn_per_set[key] = bn_per_set.get(key, 0) + n
        elif isinstance(m, (nn.Conv2d, nn.Linear)):
            conv += sum(p.numel() for p in m.parameters() if p.requires_grad)
    total = sum(p.numel() for p in module.parameters() if p.requires_grad)
    other = total - conv - sum(bn_per_set.values())
    return {
        "conv": conv,
        "bn_sets": bn_per_set,
        "n_stat_sets": len(bn_per_set),
        "other": other,
        "total": total,
    }
