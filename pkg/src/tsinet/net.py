"""Bottleneck blocks with temporal modules, backbone assembly, segment sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .cti import CrossPerceptionTemporalIntegration, CtiConfig
from .layers import BatchNorm2d, Conv2d, Identity, Linear, Module
from .sme import SalientMotionExcitation, SmeConfig
from .tensor import ConfigError, ShapeError, Tensor

FUSION_MODES = ("cascade", "summation", "concatenation")


@dataclass
class BlockConfig:
    in_channels: int
    bottleneck_channels: int
    out_channels: int
    stride: int = 1
    use_sme: bool = True
    use_cti: bool = True
    module_fusion: str = "cascade"
    sme: SmeConfig | None = None
    cti: CtiConfig | None = None
    use_batch_norm: bool = True

    def __post_init__(self) -> None:
        if self.module_fusion not in FUSION_MODES:
            raise ConfigError(f"module_fusion must be one of {FUSION_MODES}")
        if self.use_sme and self.sme is None:
            self.sme = SmeConfig(channels=self.bottleneck_channels)
        if self.use_cti and self.cti is None:
            self.cti = CtiConfig(channels=self.bottleneck_channels)
        if self.use_sme and self.sme.channels != self.bottleneck_channels:
            raise ConfigError("SME channels must equal bottleneck width")
        if self.use_cti and self.cti.channels != self.bottleneck_channels:
            raise ConfigError("CTI channels must equal bottleneck width")
        if (self.module_fusion == "concatenation" and self.use_sme and self.use_cti
                and self.bottleneck_channels % 2 != 0):
            raise ConfigError("concatenation fusion needs an even bottleneck width")


class TsiBottleneckBlock(Module):
    """1x1 reduce -> 3x3 spatial -> temporal modules -> 1x1 restore + shortcut.

    The input arrives as [N*T, C, H, W]; the temporal modules see it reshaped
    to [N, T, C, H, W] with T supplied per call.
    """

    def __init__(self, config: BlockConfig, *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        cin, b, cout = config.in_channels, config.bottleneck_channels, config.out_channels

        def bn(channels: int) -> Module:
            return BatchNorm2d(channels, dtype=dtype) if config.use_batch_norm else Identity()

        self.conv1 = self.register_child("conv1", Conv2d(cin, b, 1, bias=False, rng=rng,
                                                         dtype=dtype))
        self.bn1 = self.register_child("bn1", bn(b))
        self.conv2 = self.register_child("conv2", Conv2d(b, b, 3, stride=config.stride,
                                                         bias=False, rng=rng, dtype=dtype))
        self.bn2 = self.register_child("bn2", bn(b))
        self.sme = None
        if config.use_sme:
            self.sme = self.register_child(
                "sme", SalientMotionExcitation(config.sme, rng=rng, dtype=dtype))
        self.cti = None
        if config.use_cti:
            self.cti = self.register_child(
                "cti", CrossPerceptionTemporalIntegration(config.cti, rng=rng, dtype=dtype))
        self.fuse_proj_sme = self.fuse_proj_cti = None
        if config.module_fusion == "concatenation" and config.use_sme and config.use_cti:
            self.fuse_proj_sme = self.register_child(
                "fuse_proj_sme", Conv2d(b, b // 2, 1, bias=False, rng=rng, dtype=dtype))
            self.fuse_proj_cti = self.register_child(
                "fuse_proj_cti", Conv2d(b, b // 2, 1, bias=False, rng=rng, dtype=dtype))
        self.conv3 = self.register_child("conv3", Conv2d(b, cout, 1, bias=False, rng=rng,
                                                         dtype=dtype))
        self.bn3 = self.register_child("bn3", bn(cout))
        self.shortcut_conv = self.shortcut_bn = None
        if config.stride != 1 or cin != cout:
            self.shortcut_conv = self.register_child(
                "shortcut_conv", Conv2d(cin, cout, 1, stride=config.stride, bias=False,
                                        rng=rng, dtype=dtype))
            self.shortcut_bn = self.register_child("shortcut_bn", bn(cout))

    def _temporal(self, y: Tensor, frames: int) -> Tensor:
        cfg = self.config
        if not (cfg.use_sme or cfg.use_cti):
            return y
        nt, c, h, w = y.shape
        if nt % frames != 0:
            raise ShapeError(f"batch of {nt} rows does not fold into {frames} frames")
        y5 = y.reshape((nt // frames, frames, c, h, w))
        if cfg.use_sme and cfg.use_cti:
            if cfg.module_fusion == "cascade":
                y5 = self.cti.forward(self.sme.forward(y5))
            elif cfg.module_fusion == "summation":
                y5 = self.sme.forward(y5) + self.cti.forward(y5)
            else:
                s = self.fuse_proj_sme.forward(
                    self.sme.forward(y5).reshape((nt, c, h, w))).reshape(
                        (nt // frames, frames, c // 2, h, w))
                t = self.fuse_proj_cti.forward(
                    self.cti.forward(y5).reshape((nt, c, h, w))).reshape(
                        (nt // frames, frames, c // 2, h, w))
                y5 = T.concat([s, t], axis=2)
        elif cfg.use_sme:
            y5 = self.sme.forward(y5)
        else:
            y5 = self.cti.forward(y5)
        return y5.reshape((nt, c, h, w))

    def forward(self, x: Tensor, frames: int) -> Tensor:
        y = T.relu(self.bn1.forward(self.conv1.forward(x)))
        y = T.relu(self.bn2.forward(self.conv2.forward(y)))
        y = self._temporal(y, frames)
        y = self.bn3.forward(self.conv3.forward(y))
        if self.shortcut_conv is not None:
            idn = self.shortcut_bn.forward(self.shortcut_conv.forward(x))
        else:
            idn = x
        return T.relu(y + idn)


# ---------------------------------------------------------------------------
# model specification

@dataclass
class StemSpec:
    channels: int = 16
    kernel: int = 3
    stride: int = 2
    maxpool: bool = False


@dataclass
class StageSpec:
    blocks: int
    channels: int
    stride: int = 1


@dataclass
class ModelSpec:
    frames: int = 8
    num_classes: int = 4
    input_size: int = 32
    input_channels: int = 3
    stem: StemSpec = field(default_factory=StemSpec)
    stages: list[StageSpec] = field(default_factory=lambda: [StageSpec(2, 32, 2),
                                                             StageSpec(2, 64, 2)])
    bottleneck_ratio: int = 4
    tsi_blocks: str | list = "all"
    use_sme: bool = True
    use_cti: bool = True
    module_fusion: str = "cascade"
    use_batch_norm: bool = True
    sme_reduction_ratio: int = 4
    sme_pyramid_depth: int = 4
    sme_kernel: int = 3
    alignment_op: str = "multiply"
    motion_mode: str = "pyramidal"
    sme_share_reduce_projection: bool = True
    cti_groups: int = 4
    cti_kernel: int = 3
    integration_mode: str = "cross_attention"

    def __post_init__(self) -> None:
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if not self.stages:
            raise ConfigError("model needs at least one stage")
        for stage in self.stages:
            if stage.channels % self.bottleneck_ratio != 0:
                raise ConfigError(
                    f"stage width {stage.channels} not divisible by bottleneck ratio "
                    f"{self.bottleneck_ratio}")
        for s, _stage in enumerate(self.stages):
            self.block_config(s, 0)  # validates divisibility and tsi indices eagerly

    def tsi_block_set(self) -> set[tuple[int, int]]:
        """Which (stage, block) positions get temporal modules."""
        if self.tsi_blocks == "all":
            return {(s, b) for s, stage in enumerate(self.stages) for b in range(stage.blocks)}
        if self.tsi_blocks == "none":
            return set()
        out = set()
        for pair in self.tsi_blocks:
            s, b = int(pair[0]), int(pair[1])
            if not (0 <= s < len(self.stages)) or not (0 <= b < self.stages[s].blocks):
                raise ConfigError(f"tsi block index {pair} out of range")
            out.add((s, b))
        return out

    def block_config(self, stage_index: int, block_index: int) -> BlockConfig:
        stage = self.stages[stage_index]
        cin = self.stem.channels if stage_index == 0 else self.stages[stage_index - 1].channels
        if block_index > 0:
            cin = stage.channels
        bottleneck = stage.channels // self.bottleneck_ratio
        stride = stage.stride if block_index == 0 else 1
        is_tsi = (stage_index, block_index) in self.tsi_block_set()
        use_sme = self.use_sme and is_tsi
        use_cti = self.use_cti and is_tsi
        sme = SmeConfig(channels=bottleneck, reduction_ratio=self.sme_reduction_ratio,
                        pyramid_depth=self.sme_pyramid_depth,
                        motion_kernel_size=self.sme_kernel,
                        alignment_op=self.alignment_op, motion_mode=self.motion_mode,
                        share_reduce_projection=self.sme_share_reduce_projection) \
            if use_sme else None
        cti = CtiConfig(channels=bottleneck, groups=self.cti_groups,
                        temporal_kernel_size=self.cti_kernel,
                        integration_mode=self.integration_mode) if use_cti else None
        return BlockConfig(in_channels=cin, bottleneck_channels=bottleneck,
                           out_channels=stage.channels, stride=stride, use_sme=use_sme,
                           use_cti=use_cti, module_fusion=self.module_fusion, sme=sme,
                           cti=cti, use_batch_norm=self.use_batch_norm)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "frames": self.frames,
            "num_classes": self.num_classes,
            "input_size": self.input_size,
            "input_channels": self.input_channels,
            "stem": vars(self.stem).copy(),
            "stages": [vars(s).copy() for s in self.stages],
            "bottleneck_ratio": self.bottleneck_ratio,
            "tsi_blocks": self.tsi_blocks,
            "use_sme": self.use_sme,
            "use_cti": self.use_cti,
            "module_fusion": self.module_fusion,
            "use_batch_norm": self.use_batch_norm,
            "sme_reduction_ratio": self.sme_reduction_ratio,
            "sme_pyramid_depth": self.sme_pyramid_depth,
            "sme_kernel": self.sme_kernel,
            "alignment_op": self.alignment_op,
            "motion_mode": self.motion_mode,
            "sme_share_reduce_projection": self.sme_share_reduce_projection,
            "cti_groups": self.cti_groups,
            "cti_kernel": self.cti_kernel,
            "integration_mode": self.integration_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        data = dict(data)
        data.pop("schema_version", None)
        stem = StemSpec(**data.pop("stem", {}))
        stages = [StageSpec(**s) for s in data.pop("stages")]
        return cls(stem=stem, stages=stages, **data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def desk_spec(**overrides) -> ModelSpec:
    """Small CPU-trainable default; exercises every code path."""
    return ModelSpec(**overrides)


def resnet50_spec(frames: int = 8, num_classes: int = 1000, *, input_size: int = 224,
                  tsi_blocks: str | list = "all", **overrides) -> ModelSpec:
    """Standard 50-layer bottleneck geometry (for profiling, not CPU training)."""
    kwargs = dict(
        frames=frames, num_classes=num_classes, input_size=input_size,
        stem=StemSpec(channels=64, kernel=7, stride=2, maxpool=True),
        stages=[StageSpec(3, 256, 1), StageSpec(4, 512, 2),
                StageSpec(6, 1024, 2), StageSpec(3, 2048, 2)],
        tsi_blocks=tsi_blocks, sme_reduction_ratio=16, cti_groups=4)
    kwargs.update(overrides)
    return ModelSpec(**kwargs)


class TsiNet(Module):
    """Frame-level backbone with temporal consensus over per-frame logits."""

    def __init__(self, spec: ModelSpec, *, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        stem = spec.stem
        self.stem_conv = self.register_child(
            "stem_conv", Conv2d(spec.input_channels, stem.channels, stem.kernel,
                                stride=stem.stride, bias=False, rng=rng, dtype=dtype))
        self.stem_bn = self.register_child(
            "stem_bn", BatchNorm2d(stem.channels, dtype=dtype) if spec.use_batch_norm
            else Identity())
        self.blocks: list[TsiBottleneckBlock] = []
        for s, stage in enumerate(spec.stages):
            for b in range(stage.blocks):
                block = TsiBottleneckBlock(spec.block_config(s, b), rng=rng, dtype=dtype)
                self.register_child(f"stage{s}.block{b}", block)
                self.blocks.append(block)
        self.head = self.register_child(
            "head", Linear(spec.stages[-1].channels, spec.num_classes, rng=rng, dtype=dtype))

    def features(self, frames_batch: Tensor, frames: int) -> Tensor:
        """[N*T, C, H, W] -> pooled feature vectors [N*T, channels]."""
        y = T.relu(self.stem_bn.forward(self.stem_conv.forward(frames_batch)))
        if self.spec.stem.maxpool:
            y = T.maxpool2d(y, 3, 2, 1)
        for block in self.blocks:
            y = block.forward(y, frames)
        pooled = T.global_avg_pool(y)
        return pooled.reshape((y.shape[0], y.shape[1]))

    def forward(self, clips: Tensor) -> Tensor:
        """[N, T, C, H, W] clips -> [N, num_classes] consensus scores."""
        if clips.ndim != 5:
            raise ShapeError(f"expected [N, T, C, H, W] clips, got {clips.shape}")
        n, t, c, h, w = clips.shape
        if c != self.spec.input_channels:
            raise ShapeError(f"clips have {c} channels, model expects "
                             f"{self.spec.input_channels}")
        flat = clips.reshape((n * t, c, h, w))
        feats = self.features(flat, t)
        logits = self.head.forward(feats)
        return T.mean(logits.reshape((n, t, self.spec.num_classes)), axis=1)


# ---------------------------------------------------------------------------
# segment sampling

SAMPLER_MODES = ("random", "center")


@dataclass
class SamplerConfig:
    segments: int
    mode: str = "random"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.segments < 1:
            raise ConfigError("segments must be >= 1")
        if self.mode not in SAMPLER_MODES:
            raise ConfigError(f"sampler mode must be one of {SAMPLER_MODES}")


def segment_sample(num_frames: int, segments: int, mode: str = "center",
                   rng: np.random.Generator | None = None) -> list[int]:
    """One frame index per equal segment of [0, num_frames).

    Random mode draws uniformly inside each segment; center mode takes the
    midpoint. Videos shorter than the segment count repeat the nearest frame.
    """
    if num_frames < 1:
        raise ConfigError("num_frames must be >= 1")
    if mode not in SAMPLER_MODES:
        raise ConfigError(f"sampler mode must be one of {SAMPLER_MODES}")
    if mode == "random" and rng is None:
        raise ConfigError("random sampling needs an rng")
    indices = []
    for i in range(segments):
        start = (i * num_frames) // segments
        end = ((i + 1) * num_frames) // segments
        if end > start:
            if mode == "center":
                indices.append((start + end) // 2)
            else:
                indices.append(int(rng.integers(start, end)))
        else:
            indices.append(min(start, num_frames - 1))
    return indices
