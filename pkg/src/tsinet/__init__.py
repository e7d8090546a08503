"""Temporal saliency video network toolkit.

A self-contained numpy-backed tensor engine with reverse-mode
differentiation, salient motion excitation and cross-perception temporal
integration modules, a trainable bottleneck backbone, a synthetic
moving-shapes dataset, and an analytical compute profiler.
"""

from .cti import CrossPerceptionTemporalIntegration, CtiConfig, split_groups
from .gradcheck import GradCheckReport, grad_check
from .net import (BlockConfig, ModelSpec, SamplerConfig, StageSpec, StemSpec,
                  TsiBottleneckBlock, TsiNet, desk_spec, resnet50_spec, segment_sample)
from .profiler import FlopReport, count_model
from .sme import SalientMotionExcitation, SmeConfig, saliency_align
from .synthdata import ClipSpec, DatasetConfig, build_dataset, generate_clip, load_split
from .tensor import (ConfigError, GradientTape, NumericError, ShapeError, Tensor,
                     set_debug_checks)
from .train import SGD, TrainConfig, evaluate, fit, train_step

__version__ = "0.1.0"
