"""Minimal layer containers: parameter registration, modes, checkpoint state."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


class Module:
    """Base container. Parameters and children are registered explicitly."""

    def __init__(self) -> None:
        self._params: dict[str, tuple[Tensor, bool]] = {}
        self._children: dict[str, Module] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.training = True

    def register_param(self, name: str, data: np.ndarray, *, decay: bool = True) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = (t, decay)
        return t

    def register_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def register_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + name: t for name, (t, _) in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.parameters(prefix + cname + "."))
        return out

    def decay_param_names(self, prefix: str = "") -> set[str]:
        out = {prefix + name for name, (_, decay) in self._params.items() if decay}
        for cname, child in self._children.items():
            out |= child.decay_param_names(prefix + cname + ".")
        return out

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + name: b for name, b in self._buffers.items()}
        for cname, child in self._children.items():
            out.update(child.buffers(prefix + cname + "."))
        return out

    def set_training(self, training: bool) -> None:
        self.training = training
        for child in self._children.values():
            child.set_training(training)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent state: parameters plus buffers (for checkpoints)."""
        out = {name: t.data for name, t in self.parameters().items()}
        out.update(self.buffers())
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        buffers = self.buffers()
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise T.ConfigError(f"checkpoint is missing tensors: {sorted(missing)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=t.dtype)
            if arr.shape != t.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} != {t.shape}")
            t.data = arr.copy()
        for name, buf in buffers.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} != {buf.shape}")
            buf[...] = arr


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, *,
                 stride: int = 1, padding: int | None = None, groups: int = 1,
                 bias: bool = False, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise T.ConfigError(
                f"conv channels ({in_channels}->{out_channels}) not divisible by groups={groups}")
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        fan_in = (in_channels // groups) * kernel * kernel
        self.weight = self.register_param(
            "weight", he_normal(rng, (out_channels, in_channels // groups, kernel, kernel),
                                fan_in, dtype))
        self.bias = None
        if bias:
            self.bias = self.register_param(
                "bias", np.zeros(out_channels, dtype=dtype), decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding, groups=self.groups)


class DepthwiseConv1d(Module):
    """Temporal depthwise convolution; kernels start as the identity tap."""

    def __init__(self, channels: int, kernel: int = 3, *, dtype=np.float32):
        super().__init__()
        if kernel % 2 != 1:
            raise T.ConfigError(f"temporal kernel size {kernel} must be odd")
        w = np.zeros((channels, 1, kernel), dtype=dtype)
        w[:, 0, kernel // 2] = 1.0
        self.weight = self.register_param("weight", w)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d_temporal(x, self.weight)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, bias: bool = True,
                 zero_init: bool = False, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        if zero_init:
            w = np.zeros((out_features, in_features), dtype=dtype)
        else:
            assert rng is not None
            w = he_normal(rng, (out_features, in_features), in_features, dtype)
        self.weight = self.register_param("weight", w)
        self.bias = None
        if bias:
            self.bias = self.register_param("bias", np.zeros(out_features, dtype=dtype),
                                            decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, *, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.register_param("gamma", np.ones(channels, dtype=dtype), decay=False)
        self.beta = self.register_param("beta", np.zeros(channels, dtype=dtype), decay=False)
        self.state = BatchNormState(channels, dtype=dtype)
        self.register_buffer("running_mean", self.state.mean)
        self.register_buffer("running_var", self.state.var)

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.state, training=self.training,
                            momentum=self.momentum, eps=self.eps)


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x
