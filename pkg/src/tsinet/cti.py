"""Cross-perception temporal integration.

Splits channels into groups, chains depthwise temporal convolutions through
them hierarchically, and fuses each group with its predecessor's output via
two-way attention (a learned convex combination per time step and channel).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import DepthwiseConv1d, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor

INTEGRATION_MODES = ("cross_attention", "independent", "addition")


@dataclass
class CtiConfig:
    channels: int
    groups: int = 4
    temporal_kernel_size: int = 3
    integration_mode: str = "cross_attention"

    def __post_init__(self) -> None:
        if self.groups < 1:
            raise ConfigError("groups must be >= 1")
        if self.channels % self.groups != 0:
            raise ConfigError(
                f"channels {self.channels} not divisible by groups {self.groups}")
        if self.temporal_kernel_size % 2 != 1:
            raise ConfigError("temporal kernel size must be odd")
        if self.integration_mode not in INTEGRATION_MODES:
            raise ConfigError(f"integration_mode must be one of {INTEGRATION_MODES}")

    @property
    def group_channels(self) -> int:
        return self.channels // self.groups


def split_groups(x: Tensor, groups: int) -> list[Tensor]:
    """Contiguous channel slices of [T, C, H, W] or [N, T, C, H, W], in order."""
    axis = x.ndim - 3
    c = x.shape[axis]
    if c % groups != 0:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    cg = c // groups
    index: list = [slice(None)] * x.ndim
    out = []
    for g in range(groups):
        index[axis] = slice(g * cg, (g + 1) * cg)
        out.append(x[tuple(index)])
    return out


def _with_clip_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return x.reshape((1,) + x.shape), False
    if x.ndim == 5:
        return x, True
    raise ShapeError(f"expected [T, C, H, W] or [N, T, C, H, W], got {x.shape}")


class CrossPerceptionTemporalIntegration(Module):
    def __init__(self, config: CtiConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        cg = config.group_channels
        self.temporal_kernels: dict[int, DepthwiseConv1d] = {}
        for g in range(2, config.groups + 1):
            conv = DepthwiseConv1d(cg, config.temporal_kernel_size, dtype=dtype)
            self.register_child(f"temporal_kernels.{g}", conv)
            self.temporal_kernels[g] = conv
        self.integration_fc: dict[int, Linear] = {}
        for g in range(3, config.groups + 1):
            # Two logit maps per channel; zero init gives uniform 0.5/0.5 fusion.
            fc = Linear(cg, 2 * cg, bias=True, zero_init=True, dtype=dtype)
            self.register_child(f"integration_fc.{g}", fc)
            self.integration_fc[g] = fc

    def _temporal_conv(self, x: Tensor, conv: DepthwiseConv1d) -> Tensor:
        n, t, cg, h, w = x.shape
        seq = x.transpose((0, 3, 4, 2, 1)).reshape((n * h * w, cg, t))
        out = conv.forward(seq)
        return out.reshape((n, h, w, cg, t)).transpose((0, 4, 3, 1, 2))

    def cross_perception_integrate(self, t_prev: Tensor, x_g: Tensor, group: int) -> Tensor:
        """Convex combination of a group with its predecessor's output.

        Attention coefficients come from the spatial means of the summed
        inputs through the group's affine map, softmaxed over the two
        candidates; they are broadcast over spatial positions.
        """
        tp, batched = _with_clip_batch(t_prev)
        xg, _ = _with_clip_batch(x_g)
        if tp.shape != xg.shape:
            raise ShapeError(f"integration operands disagree: {tp.shape} vs {xg.shape}")
        fc = self.integration_fc[group]
        n, t, cg, h, w = xg.shape
        pooled = T.global_avg_pool((tp + xg).reshape((n * t, cg, h, w)))
        logits = fc.forward(pooled.reshape((n * t, cg))).reshape((n * t, 2, cg))
        coeff = T.softmax(logits, axis=1)
        alpha = coeff[:, 0, :].reshape((n, t, cg, 1, 1))
        complement = coeff[:, 1, :].reshape((n, t, cg, 1, 1))
        out = alpha * xg + complement * tp
        return out if batched else out.reshape(out.shape[1:])

    def forward(self, x: Tensor) -> Tensor:
        """Integrate [T, C, H, W] or [N, T, C, H, W]; shape is preserved."""
        x5, batched = _with_clip_batch(x)
        cfg = self.config
        if x5.shape[2] != cfg.channels:
            raise ConfigError(
                f"input has {x5.shape[2]} channels, module configured for {cfg.channels}")
        groups = split_groups(x5, cfg.groups)
        outputs = [groups[0]]
        prev = groups[0]
        for g in range(2, cfg.groups + 1):
            x_g = groups[g - 1]
            if g == 2 or cfg.integration_mode == "independent":
                fused = x_g
            elif cfg.integration_mode == "addition":
                fused = prev + x_g
            else:
                fused = self.cross_perception_integrate(prev, x_g, g)
            prev = self._temporal_conv(fused, self.temporal_kernels[g])
            outputs.append(prev)
        out = T.concat(outputs, axis=2)
        return out if batched else out.reshape(out.shape[1:])
