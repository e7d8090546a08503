"""SGD-with-momentum training on clip datasets, evaluation, checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .net import ModelSpec, TsiNet, segment_sample
from .tensor import GradientTape, NumericError, Tensor
from .tensorfile import load_named_tensors, save_named_tensors


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_epochs: list[int] = field(default_factory=lambda: [20, 26])
    lr_decay_factor: float = 0.1
    seed: int = 0
    sampler_mode: str = "random"
    target_top1: float | None = None  # stop once validation reaches this

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
            "momentum": self.momentum, "weight_decay": self.weight_decay,
            "lr_decay_epochs": list(self.lr_decay_epochs),
            "lr_decay_factor": self.lr_decay_factor, "seed": self.seed,
            "sampler_mode": self.sampler_mode, "target_top1": self.target_top1,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


class SGD:
    """Mini-batch SGD with momentum; decay-listed weights get L2 shrinkage.

    Update: v <- mu*v + (g + wd*w); w <- w - lr*v. Weight decay applies only
    to the parameter names in ``decay_names`` (conv/FC weights, not
    normalization affine parameters or biases).
    """

    def __init__(self, params: dict[str, Tensor], *, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0, decay_names: set[str] | None = None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_names = decay_names if decay_names is not None else set(params)
        self.velocity = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, Tensor]) -> None:
        for name, p in self.params.items():
            g = grads[name].data
            if self.weight_decay and name in self.decay_names:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    lr = config.lr
    for boundary in config.lr_decay_epochs:
        if epoch >= boundary:
            lr *= config.lr_decay_factor
    return lr


def train_step(model: TsiNet, clips: np.ndarray, labels: np.ndarray,
               optimizer: SGD) -> float:
    """One forward/backward/update pass; returns the step loss."""
    model.set_training(True)
    params = model.parameters()
    x = Tensor(clips)
    with GradientTape() as tape:
        scores = model.forward(x)
        loss = T.cross_entropy(scores, labels)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"training loss is {loss_value}")
        grads = tape.gradients(loss, params)
    optimizer.step(grads)
    return loss_value


def evaluate(model: TsiNet, clips: np.ndarray, labels: np.ndarray,
             batch_size: int = 64) -> dict[str, float]:
    """Deterministic top-1/top-5 accuracy over a split."""
    model.set_training(False)
    n = clips.shape[0]
    num_classes = model.spec.num_classes
    k = min(5, num_classes)
    top1 = top5 = 0
    for start in range(0, n, batch_size):
        batch = clips[start:start + batch_size]
        y = labels[start:start + batch_size]
        scores = model.forward(Tensor(batch)).data
        order = np.argsort(-scores, axis=1)
        top1 += int((order[:, 0] == y).sum())
        top5 += int((order[:, :k] == y[:, None]).any(axis=1).sum())
    return {"top1": top1 / n, "top5": top5 / n}


def config_hash(model_spec: ModelSpec, train_config: TrainConfig) -> str:
    blob = json.dumps({"model": model_spec.to_dict(), "train": train_config.to_dict()},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(directory: str | Path, model: TsiNet, *, train_config: TrainConfig,
                    epoch: int, val_top1: float) -> None:
    directory = Path(directory)
    save_named_tensors(directory / "state", model.state_arrays())
    manifest = {
        "schema_version": 1,
        "config_hash": config_hash(model.spec, train_config),
        "model": model.spec.to_dict(),
        "train": train_config.to_dict(),
        "epoch": epoch,
        "val_top1": val_top1,
    }
    (directory / "checkpoint.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory: str | Path, *, dtype=np.float32) -> tuple[TsiNet, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "checkpoint.json").read_text())
    spec = ModelSpec.from_dict(manifest["model"])
    model = TsiNet(spec, rng=np.random.default_rng(0), dtype=dtype)
    tensors, _ = load_named_tensors(directory / "state")
    model.load_state_arrays({name: t.data for name, t in tensors.items()})
    return model, manifest


@dataclass
class TrainResult:
    best_top1: float
    best_epoch: int
    epochs_run: int
    final_loss: float
    history: list[dict]


def train_variant(dataset_dir: str | Path, model_overrides: dict | None = None,
                  train_overrides: dict | None = None) -> dict:
    """Train one desk-scale configuration on an on-disk dataset.

    Overrides patch the desk defaults. Returns a JSON-friendly summary, so
    sweeps can fan runs out across processes.
    """
    from .net import desk_spec
    from .synthdata import load_split

    spec_dict = desk_spec().to_dict()
    spec_dict.update(model_overrides or {})
    spec = ModelSpec.from_dict(spec_dict)
    config_dict = TrainConfig().to_dict()
    config_dict.update(train_overrides or {})
    config = TrainConfig.from_dict(config_dict)
    train_data = load_split(dataset_dir, "train", verify_digests=False)
    val_data = load_split(dataset_dir, "val", verify_digests=False)
    model = TsiNet(spec, rng=np.random.default_rng(config.seed))
    result = fit(model, train_data, val_data, config)
    return {"best_top1": result.best_top1, "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run, "seed": config.seed}


def fit(model: TsiNet, train_data: tuple[np.ndarray, np.ndarray],
        val_data: tuple[np.ndarray, np.ndarray], config: TrainConfig, *,
        checkpoint_dir: str | Path | None = None,
        metrics_path: str | Path | None = None) -> TrainResult:
    """Full training loop; deterministic for a fixed config seed.

    Clips arrive as [N, L, C, H, W]; when L exceeds the model's frame count,
    segment sampling picks the frames (random per step while training,
    centered for evaluation).
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    frames = model.spec.frames
    if x_val.shape[1] != frames:
        centers = segment_sample(x_val.shape[1], frames, mode="center")
        x_val = x_val[:, centers]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    optimizer = SGD(model.parameters(), lr=config.lr, momentum=config.momentum,
                    weight_decay=config.weight_decay,
                    decay_names=model.decay_param_names())
    metrics_file = None
    if metrics_path:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        metrics_file = open(metrics_path, "w")
    # Hot loop runs without per-op debug validation; a non-finite loss still
    # aborts every step via train_step's explicit check.
    debug_before = T.set_debug_checks(False)

    def emit(record: dict) -> None:
        if metrics_file:
            metrics_file.write(json.dumps(record) + "\n")
            metrics_file.flush()

    n = x_train.shape[0]
    best_top1, best_epoch = -1.0, -1
    history: list[dict] = []
    step = 0
    loss_value = float("nan")
    try:
        for epoch in range(config.epochs):
            optimizer.lr = lr_at_epoch(config, epoch)
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, config.batch_size):
                batch_idx = order[start:start + config.batch_size]
                clips = x_train[batch_idx]
                if clips.shape[1] != frames:
                    rows = [segment_sample(clips.shape[1], frames,
                                           mode=config.sampler_mode, rng=rng)
                            for _ in range(len(batch_idx))]
                    clips = np.take_along_axis(
                        clips, np.asarray(rows)[:, :, None, None, None], axis=1)
                loss_value = train_step(model, clips, y_train[batch_idx], optimizer)
                epoch_losses.append(loss_value)
                step += 1
                emit({"step": step, "epoch": epoch, "loss": loss_value, "top1": None})
            val = evaluate(model, x_val, y_val, batch_size=max(config.batch_size, 64))
            record = {"step": step, "epoch": epoch,
                      "loss": float(np.mean(epoch_losses)), "top1": val["top1"]}
            history.append(record)
            emit(record)
            if val["top1"] > best_top1:
                best_top1, best_epoch = val["top1"], epoch
                if checkpoint_dir is not None:
                    save_checkpoint(checkpoint_dir, model, train_config=config,
                                    epoch=epoch, val_top1=best_top1)
            if config.target_top1 is not None and best_top1 >= config.target_top1:
                break
        if checkpoint_dir is not None and best_epoch < 0:
            save_checkpoint(checkpoint_dir, model, train_config=config, epoch=-1,
                            val_top1=0.0)
    finally:
        T.set_debug_checks(debug_before)
        if metrics_file:
            metrics_file.close()
    return TrainResult(best_top1=max(best_top1, 0.0), best_epoch=best_epoch,
                       epochs_run=len(history), final_loss=loss_value, history=history)
