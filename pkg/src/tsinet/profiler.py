"""Analytical multiply-accumulate and parameter counting for a ModelSpec.

Counting convention: 1 MAC = 1 FLOP, counted for convolutions, linear maps,
and the alignment attention matmuls. Elementwise arithmetic, softmax,
normalization, and pooling are tallied separately as non-MAC scalar ops so
the headline number stays comparable to published conv-counted budgets.

The alignment attention matmuls are itemized: the full total includes them at
every resolution (and matches an instrumented execution exactly), while the
comparable headline excludes them at token grids larger than
ALIGNMENT_HEADLINE_TOKEN_LIMIT, the regime published budgets in this model
family provably leave out of their reported figures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .net import BlockConfig, ModelSpec
from .tensor import ConfigError

# Headline rule: alignment matmul cost at token grids above 28x28 is reported
# separately rather than inside the comparable headline.
ALIGNMENT_HEADLINE_TOKEN_LIMIT = 28 * 28

CONVENTION = ("MAC counting (1 MAC = 1 FLOP); elementwise/softmax/normalization in a "
              "separate non-MAC column; headline excludes alignment matmuls at token "
              f"grids larger than {ALIGNMENT_HEADLINE_TOKEN_LIMIT}")


@dataclass
class LayerCount:
    name: str
    kind: str
    output_shape: tuple[int, ...]
    macs: int = 0
    params: int = 0
    other_ops: int = 0
    alignment_tokens: int | None = None  # set on alignment matmul rows

    @property
    def is_alignment(self) -> bool:
        return self.alignment_tokens is not None


@dataclass
class FlopReport:
    frames: int
    input_size: int
    rows: list[LayerCount] = field(default_factory=list)
    convention: str = CONVENTION

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_other_ops(self) -> int:
        return sum(r.other_ops for r in self.rows)

    @property
    def alignment_macs(self) -> int:
        return sum(r.macs for r in self.rows if r.is_alignment)

    @property
    def headline_macs(self) -> int:
        return sum(r.macs for r in self.rows
                   if not (r.is_alignment and r.alignment_tokens >
                           ALIGNMENT_HEADLINE_TOKEN_LIMIT))

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "input_size": self.input_size,
            "convention": self.convention,
            "layers": [{
                "name": r.name, "kind": r.kind, "output_shape": list(r.output_shape),
                "macs": r.macs, "params": r.params, "other_ops": r.other_ops,
                "alignment_tokens": r.alignment_tokens,
            } for r in self.rows],
            "totals": {
                "macs": self.total_macs,
                "headline_macs": self.headline_macs,
                "alignment_macs": self.alignment_macs,
                "params": self.total_params,
                "other_ops": self.total_other_ops,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_text(self) -> str:
        lines = [
            f"input: {self.frames} frames x {self.input_size}x{self.input_size}",
            f"convention: {self.convention}",
            "",
            f"{'layer':<44s} {'kind':<12s} {'output':<18s} {'MACs':>14s} "
            f"{'params':>10s} {'non-MAC':>12s}",
        ]
        for r in self.rows:
            shape = "x".join(str(d) for d in r.output_shape)
            lines.append(f"{r.name:<44s} {r.kind:<12s} {shape:<18s} {r.macs:>14,d} "
                         f"{r.params:>10,d} {r.other_ops:>12,d}")
        lines.append("-" * 116)
        lines.append(f"{'total':<76s} {self.total_macs:>14,d} {self.total_params:>10,d} "
                     f"{self.total_other_ops:>12,d}")
        lines.append(f"alignment matmuls (itemized): {self.alignment_macs:,d} MACs")
        lines.append(f"headline (comparable): {self.headline_macs:,d} MACs "
                     f"= {self.headline_macs / 1e9:.2f} GFLOPs")
        lines.append(f"full total: {self.total_macs / 1e9:.2f} GFLOPs")
        return "\n".join(lines)


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ConfigError(f"kernel {kernel} does not fit input of size {size}")
    return out


def _conv_row(name: str, frames: int, hw: int, cin: int, cout: int, kernel: int, *,
              groups: int = 1, bias: bool = False) -> LayerCount:
    macs = frames * hw * cout * (cin // groups) * kernel * kernel
    params = cout * (cin // groups) * kernel * kernel
    other = 0
    if bias:
        params += cout
        other += frames * hw * cout
    return LayerCount(name, "conv2d", (frames, cout, hw), macs, params, other)


def _bn_row(name: str, frames: int, hw: int, channels: int) -> LayerCount:
    return LayerCount(name, "batch_norm", (frames, channels, hw), 0, 2 * channels,
                      2 * frames * hw * channels)


def _elem_row(name: str, kind: str, frames: int, hw: int, channels: int,
              ops_per_elem: int = 1) -> LayerCount:
    return LayerCount(name, kind, (frames, channels, hw), 0, 0,
                      ops_per_elem * frames * hw * channels)


def count_sme(prefix: str, cfg, frames: int, h: int, w: int) -> list[LayerCount]:
    """Rows for one salient-motion-excitation module at [T, C, h, w]."""
    c, cr = cfg.channels, cfg.reduced_channels
    hw = h * w
    pairs = max(frames - 1, 0)
    rows = [_conv_row(f"{prefix}.reduce_proj", frames, hw, c, cr, 1)]
    if not cfg.share_reduce_projection:
        rows.append(_conv_row(f"{prefix}.align_reduce_proj", frames, hw, c, cr, 1))
    if pairs:
        rows.append(LayerCount(f"{prefix}.align_scores", "attn_matmul",
                               (pairs, hw, hw), pairs * hw * hw * cr, 0,
                               pairs * hw * hw, alignment_tokens=hw))
        rows.append(_elem_row(f"{prefix}.align_softmax", "softmax", pairs, hw * hw, 1, 5))
        rows.append(LayerCount(f"{prefix}.align_attend", "attn_matmul",
                               (pairs, hw, cr), pairs * hw * hw * cr, 0, 0,
                               alignment_tokens=hw))
        rows.append(_elem_row(f"{prefix}.align_combine", "elementwise", pairs, hw, cr))
        kernels = cfg.pyramid_depth if cfg.motion_mode == "pyramidal" else 1
        for j in range(kernels):
            rows.append(_conv_row(f"{prefix}.pyramid_kernels.{j}", pairs, hw, cr, cr,
                                  cfg.motion_kernel_size, groups=cr))
        # running D_k +/- aligned/reference sums: ~3 elementwise ops per stage
        rows.append(_elem_row(f"{prefix}.motion_diffs", "elementwise", pairs, hw, cr,
                              3 * kernels))
        if cfg.motion_mode == "simple":
            extra = cfg.pyramid_depth - 1
            if extra:
                rows.append(LayerCount(f"{prefix}.unused_pyramid", "params_only",
                                       (0,), 0,
                                       extra * cr * cfg.motion_kernel_size ** 2, 0))
    else:
        rows.append(LayerCount(f"{prefix}.pyramid_kernels", "params_only", (0,), 0,
                               cfg.pyramid_depth * cr * cfg.motion_kernel_size ** 2, 0))
    rows.append(LayerCount(f"{prefix}.gap", "gap", (frames, cr, 1), 0, 0,
                           frames * cr * hw))
    rows.append(_conv_row(f"{prefix}.recover_proj", frames, 1, cr, c, 1, bias=True))
    rows.append(_elem_row(f"{prefix}.sigmoid", "sigmoid", frames, 1, c, 4))
    rows.append(_elem_row(f"{prefix}.excite", "elementwise", frames, hw, c, 2))
    return rows


def count_cti(prefix: str, cfg, frames: int, h: int, w: int) -> list[LayerCount]:
    """Rows for one cross-perception-integration module at [T, C, h, w]."""
    cg = cfg.group_channels
    hw = h * w
    rows = []
    for g in range(2, cfg.groups + 1):
        if g >= 3 and cfg.integration_mode == "cross_attention":
            rows.append(LayerCount(f"{prefix}.integration_gap.{g}", "gap",
                                   (frames, cg, 1), 0, 0, 2 * frames * cg * hw))
            rows.append(LayerCount(
                f"{prefix}.integration_fc.{g}", "linear", (frames, 2 * cg),
                frames * cg * 2 * cg, 2 * cg * cg + 2 * cg, frames * 2 * cg))
            rows.append(_elem_row(f"{prefix}.integration_softmax.{g}", "softmax",
                                  frames, 1, 2 * cg, 5))
            rows.append(_elem_row(f"{prefix}.integration_combine.{g}", "elementwise",
                                  frames, hw, cg, 3))
        elif g >= 3 and cfg.integration_mode == "addition":
            rows.append(_elem_row(f"{prefix}.integration_add.{g}", "elementwise",
                                  frames, hw, cg))
        rows.append(LayerCount(f"{prefix}.temporal_kernels.{g}", "conv1d",
                               (frames, cg, hw),
                               frames * hw * cg * cfg.temporal_kernel_size,
                               cg * cfg.temporal_kernel_size, 0))
        if g >= 3 and cfg.integration_mode in ("independent", "addition"):
            # the affine maps exist in every mode; only cross attention runs them
            rows.append(LayerCount(f"{prefix}.integration_fc.{g}", "params_only", (0,),
                                   0, 2 * cg * cg + 2 * cg, 0))
    return rows


def count_block(prefix: str, cfg: BlockConfig, frames: int, h: int, w: int
                ) -> tuple[list[LayerCount], int, int]:
    """Rows for one bottleneck block; returns (rows, out_h, out_w)."""
    cin, b, cout = cfg.in_channels, cfg.bottleneck_channels, cfg.out_channels
    ho = _conv_out(h, 3, cfg.stride, 1)
    wo = _conv_out(w, 3, cfg.stride, 1)
    rows = [_conv_row(f"{prefix}.conv1", frames, h * w, cin, b, 1)]
    if cfg.use_batch_norm:
        rows.append(_bn_row(f"{prefix}.bn1", frames, h * w, b))
    rows.append(_elem_row(f"{prefix}.relu1", "relu", frames, h * w, b))
    rows.append(_conv_row(f"{prefix}.conv2", frames, ho * wo, b, b, 3))
    if cfg.use_batch_norm:
        rows.append(_bn_row(f"{prefix}.bn2", frames, ho * wo, b))
    rows.append(_elem_row(f"{prefix}.relu2", "relu", frames, ho * wo, b))
    if cfg.use_sme:
        rows.extend(count_sme(f"{prefix}.sme", cfg.sme, frames, ho, wo))
    if cfg.use_cti:
        rows.extend(count_cti(f"{prefix}.cti", cfg.cti, frames, ho, wo))
    if cfg.module_fusion == "summation" and cfg.use_sme and cfg.use_cti:
        rows.append(_elem_row(f"{prefix}.fusion_sum", "elementwise", frames, ho * wo, b))
    if cfg.module_fusion == "concatenation" and cfg.use_sme and cfg.use_cti:
        rows.append(_conv_row(f"{prefix}.fuse_proj_sme", frames, ho * wo, b, b // 2, 1))
        rows.append(_conv_row(f"{prefix}.fuse_proj_cti", frames, ho * wo, b, b // 2, 1))
    rows.append(_conv_row(f"{prefix}.conv3", frames, ho * wo, b, cout, 1))
    if cfg.use_batch_norm:
        rows.append(_bn_row(f"{prefix}.bn3", frames, ho * wo, cout))
    if cfg.stride != 1 or cin != cout:
        rows.append(_conv_row(f"{prefix}.shortcut_conv", frames, ho * wo, cin, cout, 1))
        if cfg.use_batch_norm:
            rows.append(_bn_row(f"{prefix}.shortcut_bn", frames, ho * wo, cout))
    rows.append(_elem_row(f"{prefix}.residual_add", "elementwise", frames, ho * wo, cout))
    rows.append(_elem_row(f"{prefix}.relu_out", "relu", frames, ho * wo, cout))
    return rows, ho, wo


def count_model(spec: ModelSpec, frames: int | None = None,
                input_size: int | None = None) -> FlopReport:
    """Per-layer MAC/parameter counts for a model at the given input geometry."""
    frames = spec.frames if frames is None else frames
    size = spec.input_size if input_size is None else input_size
    report = FlopReport(frames=frames, input_size=size)
    stem = spec.stem
    h = w = _conv_out(size, stem.kernel, stem.stride, stem.kernel // 2)
    report.rows.append(_conv_row("stem.conv", frames, h * w, spec.input_channels,
                                 stem.channels, stem.kernel))
    if spec.use_batch_norm:
        report.rows.append(_bn_row("stem.bn", frames, h * w, stem.channels))
    report.rows.append(_elem_row("stem.relu", "relu", frames, h * w, stem.channels))
    if stem.maxpool:
        h = _conv_out(h, 3, 2, 1)
        w = _conv_out(w, 3, 2, 1)
        report.rows.append(_elem_row("stem.maxpool", "maxpool", frames, h * w,
                                     stem.channels, 8))
    for s, stage in enumerate(spec.stages):
        for bi in range(stage.blocks):
            rows, h, w = count_block(f"stage{s}.block{bi}", spec.block_config(s, bi),
                                     frames, h, w)
            report.rows.extend(rows)
    channels = spec.stages[-1].channels
    report.rows.append(LayerCount("head.gap", "gap", (frames, channels, 1), 0, 0,
                                  frames * channels * h * w))
    report.rows.append(LayerCount(
        "head.fc", "linear", (frames, spec.num_classes),
        frames * channels * spec.num_classes,
        channels * spec.num_classes + spec.num_classes, frames * spec.num_classes))
    report.rows.append(LayerCount("head.consensus", "elementwise",
                                  (spec.num_classes,), 0, 0,
                                  frames * spec.num_classes))
    return report
