"""Salient motion excitation.

Aligns each frame's features to the next frame via spatial attention,
extracts pyramidal inter-frame differences on channel-reduced features, and
emits per-frame channel attention that excites motion-sensitive channels of
the input residually: out = x + x * att.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module
from .tensor import ConfigError, ShapeError, Tensor

ALIGNMENT_OPS = ("multiply", "add")
MOTION_MODES = ("pyramidal", "simple")


@dataclass
class SmeConfig:
    channels: int
    reduction_ratio: int = 16
    pyramid_depth: int = 4
    motion_kernel_size: int = 3
    alignment_op: str = "multiply"
    motion_mode: str = "pyramidal"
    last_frame_policy: str = "zero_motion"
    share_reduce_projection: bool = True

    def __post_init__(self) -> None:
        if self.channels % self.reduction_ratio != 0:
            raise ConfigError(
                f"channels {self.channels} not divisible by reduction ratio "
                f"{self.reduction_ratio}")
        if self.pyramid_depth < 1:
            raise ConfigError("pyramid depth must be >= 1")
        if self.motion_kernel_size % 2 != 1:
            raise ConfigError("motion kernel size must be odd")
        if self.alignment_op not in ALIGNMENT_OPS:
            raise ConfigError(f"alignment_op must be one of {ALIGNMENT_OPS}")
        if self.motion_mode not in MOTION_MODES:
            raise ConfigError(f"motion_mode must be one of {MOTION_MODES}")
        if self.last_frame_policy != "zero_motion":
            raise ConfigError("last_frame_policy must be 'zero_motion'")

    @property
    def reduced_channels(self) -> int:
        return self.channels // self.reduction_ratio


def _with_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), False
    if x.ndim == 4:
        return x, True
    raise ShapeError(f"expected [C, H, W] or [B, C, H, W], got {x.shape}")


def _attend(query: Tensor, key: Tensor, value: Tensor, alignment_op: str) -> Tensor:
    """Spatial-token attention: query/key give the weights, value is attended.

    Tokens are the H*W spatial positions, each a vector of the channel
    values; scores are scaled by 1/sqrt(channels) and softmax-normalized per
    query row.
    """
    b, c, h, w = query.shape
    if key.shape != query.shape or value.shape != query.shape:
        raise ShapeError(
            f"alignment operands disagree: {query.shape} / {key.shape} / {value.shape}")
    if h * w == 0:
        raise ShapeError("alignment needs at least one spatial position")
    hw = h * w
    tq = query.reshape((b, c, hw)).transpose((0, 2, 1))
    tk = key.reshape((b, c, hw)).transpose((0, 2, 1))
    tv = value.reshape((b, c, hw)).transpose((0, 2, 1))
    scores = T.matmul(tq, tk.transpose((0, 2, 1))) * (1.0 / math.sqrt(c))
    attn = T.softmax(scores, axis=-1)
    attended = T.matmul(attn, tv)
    s = attended.transpose((0, 2, 1)).reshape((b, c, h, w))
    if alignment_op == "multiply":
        return value * s
    return value + s


def saliency_align(x_t: Tensor, x_next: Tensor, alignment_op: str = "multiply") -> Tensor:
    """Align the next frame's features to the current frame.

    Accepts [C, H, W] pairs or batches of pairs [B, C, H, W].
    """
    if alignment_op not in ALIGNMENT_OPS:
        raise ConfigError(f"alignment_op must be one of {ALIGNMENT_OPS}")
    q, batched = _with_batch(x_t)
    k, _ = _with_batch(x_next)
    out = _attend(q, k, k, alignment_op)
    return out if batched else out.reshape(out.shape[1:])


class SalientMotionExcitation(Module):
    def __init__(self, config: SmeConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        c, cr = config.channels, config.reduced_channels
        self.reduce_proj = self.register_child(
            "reduce_proj", Conv2d(c, cr, 1, bias=False, rng=rng, dtype=dtype))
        self.align_reduce_proj = None
        if not config.share_reduce_projection:
            self.align_reduce_proj = self.register_child(
                "align_reduce_proj", Conv2d(c, cr, 1, bias=False, rng=rng, dtype=dtype))
        self.pyramid = []
        for j in range(config.pyramid_depth):
            conv = Conv2d(cr, cr, config.motion_kernel_size, groups=cr, bias=False,
                          rng=rng, dtype=dtype)
            self.register_child(f"pyramid_kernels.{j}", conv)
            self.pyramid.append(conv)
        self.recover_proj = self.register_child(
            "recover_proj", Conv2d(cr, c, 1, bias=True, rng=rng, dtype=dtype))

    # spec surface ------------------------------------------------------
    def reduce_channels(self, x: Tensor) -> Tensor:
        """Pointwise projection [*, C, H, W] -> [*, C/r, H, W]."""
        x4, batched = _with_batch(x)
        out = self.reduce_proj.forward(x4)
        return out if batched else out.reshape(out.shape[1:])

    def pyramidal_motion(self, x_t_r: Tensor, x_aligned: Tensor) -> Tensor:
        """Recursive depthwise convolutions, then summed differences."""
        xt, batched = _with_batch(x_t_r)
        xa, _ = _with_batch(x_aligned)
        if xt.shape != xa.shape:
            raise ShapeError(f"motion operands disagree: {xt.shape} vs {xa.shape}")
        d = self.pyramid[0].forward(xa)
        m = d - xt
        for conv in self.pyramid[1:]:
            d = conv.forward(d + xa)
            m = m + (d - xt)
        return m if batched else m.reshape(m.shape[1:])

    def simple_motion(self, x_t_r: Tensor, x_aligned: Tensor) -> Tensor:
        """Single-convolution motion difference (ablation variant)."""
        xt, batched = _with_batch(x_t_r)
        xa, _ = _with_batch(x_aligned)
        if xt.shape != xa.shape:
            raise ShapeError(f"motion operands disagree: {xt.shape} vs {xa.shape}")
        m = self.pyramid[0].forward(xa) - xt
        return m if batched else m.reshape(m.shape[1:])

    def motion_attention(self, m: Tensor) -> Tensor:
        """Per-frame channel attention: sigmoid(recover(spatial mean))."""
        m4, batched = _with_batch(m)
        att = T.sigmoid(self.recover_proj.forward(T.global_avg_pool(m4)))
        return att if batched else att.reshape(att.shape[1:])

    def forward(self, x: Tensor) -> Tensor:
        """Excite motion-sensitive channels of [T, C, H, W] or [N, T, C, H, W]."""
        if x.ndim == 4:
            return self.forward(x.reshape((1,) + x.shape)).reshape(x.shape)
        if x.ndim != 5:
            raise ShapeError(f"expected [T, C, H, W] or [N, T, C, H, W], got {x.shape}")
        cfg = self.config
        n, t, c, h, w = x.shape
        if c != cfg.channels:
            raise ConfigError(f"input has {c} channels, module configured for {cfg.channels}")
        cr = cfg.reduced_channels
        flat = x.reshape((n * t, c, h, w))
        reduced = self.reduce_proj.forward(flat).reshape((n, t, cr, h, w))
        if t > 1:
            pair_shape = (n * (t - 1), cr, h, w)
            value_prev = reduced[:, :t - 1].reshape(pair_shape)
            value_next = reduced[:, 1:].reshape(pair_shape)
            if self.align_reduce_proj is None:
                q, k = value_prev, value_next
            else:
                align = self.align_reduce_proj.forward(flat).reshape((n, t, cr, h, w))
                q = align[:, :t - 1].reshape(pair_shape)
                k = align[:, 1:].reshape(pair_shape)
            aligned = _attend(q, k, value_next, cfg.alignment_op)
            if cfg.motion_mode == "pyramidal":
                motion = self.pyramidal_motion(value_prev, aligned)
            else:
                motion = self.simple_motion(value_prev, aligned)
            motion = motion.reshape((n, t - 1, cr, h, w))
            last = T.zeros((n, 1, cr, h, w), dtype=x.dtype)
            motion = T.concat([motion, last], axis=1)
        else:
            motion = T.zeros((n, 1, cr, h, w), dtype=x.dtype)
        att = self.motion_attention(motion.reshape((n * t, cr, h, w)))
        out = flat + flat * att
        return out.reshape(x.shape)
