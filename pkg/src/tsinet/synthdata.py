"""Synthetic labeled video clips: moving shapes over textured backgrounds.

Each clip shows one solid shape translating over a procedural noise texture;
the label is the shape's motion direction. Optional camera jitter translates
the background only, so labels are decided solely by shape motion and camera
motion stays a pure nuisance variable.

Single frames carry no direction information: for every clip, the position
on the non-moving axis is drawn from the same smeared distribution that a
randomly-timed frame of a moving axis follows, so the per-frame position
distribution is identical across direction classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ConfigError
from .tensorfile import file_digest, load_tensor, save_tensor

SHAPE_KINDS = ("square", "disc", "bar")
DIRECTIONS = {
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "static": (0.0, 0.0),
}
SPEED_VARIANTS = {"fast": 2.0, "slow": 0.5}


def parse_motion_class(name: str) -> tuple[tuple[float, float], float]:
    """'up', 'left_fast', 'static', ... -> (direction vector, speed multiplier)."""
    parts = name.split("_")
    direction = parts[0]
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown motion class {name!r}")
    multiplier = 1.0
    if len(parts) == 2:
        if parts[1] not in SPEED_VARIANTS:
            raise ConfigError(f"unknown speed variant in {name!r}")
        multiplier = SPEED_VARIANTS[parts[1]]
    elif len(parts) > 2:
        raise ConfigError(f"unknown motion class {name!r}")
    return DIRECTIONS[direction], multiplier


@dataclass
class ClipSpec:
    frames: int = 8
    size: int = 32
    shape: str = "square"
    motion: str = "up"
    speed: float = 2.0
    camera_jitter: float = 0.0
    texture_seed: int = 0
    shape_size: int = 8

    def __post_init__(self) -> None:
        if self.frames < 1 or self.size < 4:
            raise ConfigError("clip needs frames >= 1 and size >= 4")
        if self.shape not in SHAPE_KINDS:
            raise ConfigError(f"shape must be one of {SHAPE_KINDS}")
        parse_motion_class(self.motion)
        if self.speed < 0 or self.camera_jitter < 0:
            raise ConfigError("speed and jitter must be non-negative")
        if not 2 <= self.shape_size < self.size:
            raise ConfigError("shape size must fit the frame")

    def to_dict(self) -> dict:
        return {
            "frames": self.frames, "size": self.size, "shape": self.shape,
            "motion": self.motion, "speed": self.speed,
            "camera_jitter": self.camera_jitter, "texture_seed": self.texture_seed,
            "shape_size": self.shape_size,
        }


def _texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Spatially correlated RGB noise in [0.2, 0.8]: coarse grid + box smoothing."""
    cell = 4
    coarse = rng.uniform(0.0, 1.0, size=(3, height // cell + 2, width // cell + 2))
    up = np.kron(coarse, np.ones((1, cell, cell)))[:, :height, :width]
    smooth = up.copy()
    for shift in (1, -1):
        smooth += np.roll(up, shift, axis=1) + np.roll(up, shift, axis=2)
    smooth /= 5.0
    return (0.2 + 0.6 * smooth).astype(np.float32)


def _shape_mask(kind: str, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=bool)
    if kind == "square":
        mask[:] = True
    elif kind == "disc":
        yy, xx = np.mgrid[0:size, 0:size]
        center = (size - 1) / 2.0
        mask = (yy - center) ** 2 + (xx - center) ** 2 <= (size / 2.0) ** 2
    else:  # bar
        thickness = max(2, size // 3)
        top = (size - thickness) // 2
        mask[top:top + thickness, :] = True
    return mask


def _axis_offsets(frames: int, step: float) -> np.ndarray:
    return (np.arange(frames) - (frames - 1) / 2.0) * step


def generate_clip(spec: ClipSpec, seed: int) -> np.ndarray:
    """Deterministic [T, 3, H, W] float32 clip in [0, 1] for (spec, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2024]))
    t, size = spec.frames, spec.size
    direction, multiplier = parse_motion_class(spec.motion)
    speed = spec.speed * multiplier

    half = spec.shape_size / 2.0
    travel_half = speed * (t - 1) / 2.0
    lo = half + travel_half
    hi = size - half - travel_half
    if lo > hi:
        raise ConfigError(
            f"speed {speed} over {t} frames cannot keep a {spec.shape_size}px shape "
            f"inside a {size}px frame")

    offsets = _axis_offsets(t, speed)
    centers = np.empty((t, 2))
    for axis in range(2):
        c = rng.uniform(lo, hi)
        if direction[axis] != 0.0:
            centers[:, axis] = c + offsets * direction[axis]
        else:
            # Same smeared distribution a randomly-timed moving frame has, so
            # single-frame positions are identical across classes.
            centers[:, axis] = c + offsets[rng.integers(t)]

    # camera jitter: integer background displacements of the given amplitude
    shifts = np.zeros((t, 2), dtype=int)
    if spec.camera_jitter > 0:
        angles = rng.uniform(0.0, 2.0 * math.pi, size=t - 1) if t > 1 else np.empty(0)
        steps = np.rint(spec.camera_jitter *
                        np.stack([np.cos(angles), np.sin(angles)], axis=1)).astype(int)
        shifts[1:] = np.cumsum(steps, axis=0)

    margin = int(np.abs(shifts).max()) + 1 if t > 1 else 1
    texture_rng = np.random.default_rng(np.random.SeedSequence([spec.texture_seed, 7]))
    field_img = _texture(texture_rng, size + 2 * margin, size + 2 * margin)

    color = rng.uniform(0.0, 1.0, size=3)
    color = 0.5 + np.sign(color - 0.5) * (0.25 + np.abs(color - 0.5) / 2.0)
    mask = _shape_mask(spec.shape, spec.shape_size)

    clip = np.empty((t, 3, size, size), dtype=np.float32)
    for frame in range(t):
        oy, ox = margin + shifts[frame, 1], margin + shifts[frame, 0]
        canvas = field_img[:, oy:oy + size, ox:ox + size].copy()
        top = int(round(centers[frame, 1] - half))
        left = int(round(centers[frame, 0] - half))
        if top < 0 or left < 0 or top + spec.shape_size > size or left + spec.shape_size > size:
            raise ConfigError("shape trajectory left the frame bounds")
        region = canvas[:, top:top + spec.shape_size, left:left + spec.shape_size]
        region[:, mask] = color[:, None].astype(np.float32)
        clip[frame] = canvas
    return np.clip(clip, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dataset builder

@dataclass
class DatasetConfig:
    classes: list[str] = field(default_factory=lambda: ["up", "down", "left", "right"])
    clips_per_class: int = 50
    frames: int = 8
    size: int = 32
    shapes: list[str] = field(default_factory=lambda: list(SHAPE_KINDS))
    speed: float = 2.0
    camera_jitter: float = 0.0
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.classes:
            raise ConfigError("dataset needs at least one class")
        for name in self.classes:
            parse_motion_class(name)
        for kind in self.shapes:
            if kind not in SHAPE_KINDS:
                raise ConfigError(f"shape must be one of {SHAPE_KINDS}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes), "clips_per_class": self.clips_per_class,
            "frames": self.frames, "size": self.size, "shapes": list(self.shapes),
            "speed": self.speed, "camera_jitter": self.camera_jitter,
            "train_fraction": self.train_fraction, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        return cls(**data)


def build_dataset(config: DatasetConfig, out_dir: str | Path) -> dict:
    """Generate, serialize, and index a balanced labeled clip collection."""
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    root_seq = np.random.SeedSequence(config.seed)
    total = len(config.classes) * config.clips_per_class
    clip_seeds = root_seq.generate_state(2 * total, dtype=np.uint32).reshape(total, 2)
    n_train = int(round(config.clips_per_class * config.train_fraction))

    splits: dict[str, list[dict]] = {"train": [], "val": []}
    clip_id = 0
    for label, class_name in enumerate(config.classes):
        for j in range(config.clips_per_class):
            seed, texture_seed = int(clip_seeds[clip_id, 0]), int(clip_seeds[clip_id, 1])
            shape = config.shapes[seed % len(config.shapes)]
            spec = ClipSpec(frames=config.frames, size=config.size, shape=shape,
                            motion=class_name, speed=config.speed,
                            camera_jitter=config.camera_jitter,
                            texture_seed=texture_seed)
            clip = generate_clip(spec, seed)
            rel_path = f"clips/clip_{clip_id:05d}.tsit"
            save_tensor(out_dir / rel_path, clip)
            entry = {
                "path": rel_path,
                "label": label,
                "digest": file_digest(out_dir / rel_path),
                "clip_id": clip_id,
                "seed": seed,
                "spec": spec.to_dict(),
            }
            splits["train" if j < n_train else "val"].append(entry)
            clip_id += 1

    manifest = {
        "schema_version": 1,
        "seed": config.seed,
        "classes": list(config.classes),
        "frames": config.frames,
        "size": config.size,
        "config": config.to_dict(),
        "splits": splits,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_manifest(dataset_dir: str | Path) -> dict:
    return json.loads((Path(dataset_dir) / "manifest.json").read_text())


def load_split(dataset_dir: str | Path, split: str, *,
               verify_digests: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Load every clip of a split into [N, T, 3, H, W] plus labels."""
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir)
    entries = manifest["splits"][split]
    clips, labels = [], []
    for entry in entries:
        path = dataset_dir / entry["path"]
        if verify_digests and file_digest(path) != entry["digest"]:
            raise ConfigError(f"digest mismatch for {path}")
        clips.append(load_tensor(path).data)
        labels.append(entry["label"])
    return np.stack(clips), np.asarray(labels, dtype=np.int64)
