"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, profile, ablate.
Exit codes: 0 success, 1 usage error, 2 validation/acceptance failure,
3 numerical failure (NaN/Inf).
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .cti import CrossPerceptionTemporalIntegration, CtiConfig
from .gradcheck import grad_check
from .net import BlockConfig, ModelSpec, TsiBottleneckBlock, TsiNet, desk_spec, resnet50_spec
from .profiler import count_model
from .sme import SalientMotionExcitation, SmeConfig
from .synthdata import DatasetConfig, build_dataset, load_split
from .tensor import ConfigError, NumericError, ShapeError, Tensor
from .train import TrainConfig, config_hash, evaluate, fit, load_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

OUTPUT_DIR_ENV = "TSINET_OUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1, not argparse's 2
        raise UsageError(message)


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    raise UsageError("--out is required (or set " + OUTPUT_DIR_ENV + ")")


def _model_spec(args) -> ModelSpec:
    if getattr(args, "model", None):
        return ModelSpec.load(args.model)
    preset = getattr(args, "preset", "desk")
    if preset == "desk":
        return desk_spec()
    if preset == "resnet50":
        return resnet50_spec()
    raise UsageError(f"unknown preset {preset!r}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    config = DatasetConfig(
        classes=args.classes.split(","), clips_per_class=args.clips_per_class,
        frames=args.frames, size=args.size, speed=args.speed,
        camera_jitter=args.jitter, train_fraction=args.train_fraction, seed=args.seed)
    manifest = build_dataset(config, out)
    total = sum(len(v) for v in manifest["splits"].values())
    print(f"wrote {total} clips across {len(manifest['classes'])} classes to {out}")
    return EXIT_OK


def _apply_overrides(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    merged.update(overrides)
    return merged


def _train_once(model_spec: ModelSpec, train_config: TrainConfig, data_dir: Path,
                out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        "model": model_spec.to_dict(),
        "train": train_config.to_dict(),
        "data": str(data_dir),
        "config_hash": config_hash(model_spec, train_config),
    }
    (out_dir / "run_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))
    train = load_split(data_dir, "train")
    val = load_split(data_dir, "val")
    model = TsiNet(model_spec, rng=np.random.default_rng(train_config.seed))
    result = fit(model, train, val, train_config, checkpoint_dir=out_dir / "checkpoint",
                 metrics_path=out_dir / "metrics.jsonl")
    summary = {"best_top1": result.best_top1, "best_epoch": result.best_epoch,
               "epochs_run": result.epochs_run, "final_loss": result.final_loss}
    (out_dir / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def cmd_train(args) -> int:
    out = _out_dir(args)
    spec = _model_spec(args)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        momentum=args.momentum, weight_decay=args.weight_decay,
        lr_decay_epochs=[int(e) for e in args.decay_epochs.split(",") if e],
        seed=args.seed, target_top1=args.target_top1)
    summary = _train_once(spec, config, Path(args.data), out)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, manifest = load_checkpoint(args.checkpoint)
    clips, labels = load_split(args.data, args.split)
    if int(labels.max()) >= model.spec.num_classes:
        raise ConfigError(
            f"dataset has label {int(labels.max())} but model predicts "
            f"{model.spec.num_classes} classes")
    if clips.shape[1] != model.spec.frames:
        from .net import segment_sample
        clips = clips[:, segment_sample(clips.shape[1], model.spec.frames, mode="center")]
    metrics = evaluate(model, clips, labels, batch_size=args.batch_size)
    print(json.dumps({"split": args.split, "top1": metrics["top1"],
                      "top5": metrics["top5"],
                      "checkpoint_epoch": manifest["epoch"]}, sort_keys=True))
    return EXIT_OK


def gradcheck_battery(*, tolerance: float = 1e-4, step: float = 1e-5,
                      max_elements: int = 40, seed: int = 0):
    """Standard gradient checks: primitives plus composed temporal modules."""
    rng = np.random.default_rng(seed)
    f64 = np.float64

    def project(out: Tensor, rng_key: int) -> Tensor:
        w = Tensor(np.random.default_rng(rng_key).normal(size=out.shape), dtype=f64)
        return T.sum_(out * w)

    checks = []

    def primitive_case(name, make):
        checks.append((name, make))

    x_mm = Tensor(rng.normal(size=(2, 3, 4)), dtype=f64, requires_grad=True)
    y_mm = Tensor(rng.normal(size=(4, 5)), dtype=f64, requires_grad=True)
    primitive_case("matmul", lambda: ({"a": x_mm, "b": y_mm},
                                      lambda: project(T.matmul(x_mm, y_mm), 1)))

    x_sm = Tensor(rng.normal(size=(3, 6)), dtype=f64, requires_grad=True)
    primitive_case("softmax", lambda: ({"x": x_sm},
                                       lambda: project(T.softmax(x_sm, axis=1), 2)))

    x_sg = Tensor(rng.normal(size=(4, 4)), dtype=f64, requires_grad=True)
    primitive_case("sigmoid", lambda: ({"x": x_sg},
                                       lambda: project(T.sigmoid(x_sg), 3)))

    x_c2 = Tensor(rng.normal(size=(2, 4, 5, 5)), dtype=f64, requires_grad=True)
    w_c2 = Tensor(rng.normal(size=(6, 4, 3, 3)) * 0.4, dtype=f64, requires_grad=True)
    primitive_case("conv2d", lambda: ({"x": x_c2, "w": w_c2},
                                      lambda: project(
                                          T.conv2d(x_c2, w_c2, stride=2, padding=1), 4)))

    x_dw = Tensor(rng.normal(size=(2, 4, 5, 5)), dtype=f64, requires_grad=True)
    w_dw = Tensor(rng.normal(size=(4, 1, 3, 3)) * 0.4, dtype=f64, requires_grad=True)
    primitive_case("conv2d_depthwise",
                   lambda: ({"x": x_dw, "w": w_dw},
                            lambda: project(T.conv2d(x_dw, w_dw, padding=1, groups=4), 5)))

    x_c1 = Tensor(rng.normal(size=(3, 4, 6)), dtype=f64, requires_grad=True)
    w_c1 = Tensor(rng.normal(size=(4, 1, 3)) * 0.4, dtype=f64, requires_grad=True)
    primitive_case("conv1d_temporal",
                   lambda: ({"x": x_c1, "w": w_c1},
                            lambda: project(T.conv1d_temporal(x_c1, w_c1), 6)))

    x_fc = Tensor(rng.normal(size=(5, 7)), dtype=f64, requires_grad=True)
    w_fc = Tensor(rng.normal(size=(3, 7)) * 0.4, dtype=f64, requires_grad=True)
    b_fc = Tensor(rng.normal(size=(3,)), dtype=f64, requires_grad=True)
    primitive_case("linear", lambda: ({"x": x_fc, "w": w_fc, "b": b_fc},
                                      lambda: project(T.linear(x_fc, w_fc, b_fc), 7)))

    x_bn = Tensor(rng.normal(size=(4, 3, 4, 4)), dtype=f64, requires_grad=True)
    g_bn = Tensor(rng.uniform(0.5, 1.5, size=3), dtype=f64, requires_grad=True)
    b_bn = Tensor(rng.normal(size=3), dtype=f64, requires_grad=True)

    def bn_case():
        return ({"x": x_bn, "gamma": g_bn, "beta": b_bn},
                lambda: project(T.batch_norm(x_bn, g_bn, b_bn, T.BatchNormState(3, dtype=f64),
                                             training=True), 8))

    primitive_case("batch_norm", bn_case)

    x_gp = Tensor(rng.normal(size=(2, 5, 3, 3)), dtype=f64, requires_grad=True)
    primitive_case("global_avg_pool", lambda: ({"x": x_gp},
                                               lambda: project(T.global_avg_pool(x_gp), 9)))

    x_ce = Tensor(rng.normal(size=(6, 4)), dtype=f64, requires_grad=True)
    labels = np.array([0, 1, 2, 3, 1, 0])
    primitive_case("cross_entropy", lambda: ({"x": x_ce},
                                             lambda: T.cross_entropy(x_ce, labels)))

    def sme_case():
        module = SalientMotionExcitation(SmeConfig(channels=16, reduction_ratio=4),
                                         rng=np.random.default_rng(11), dtype=f64)
        x = Tensor(rng.normal(size=(2, 16, 4, 4)), dtype=f64, requires_grad=True)
        params = {"input": x, **module.parameters()}
        return (params, lambda: project(module.forward(x), 10))

    checks.append(("sme_forward", sme_case))

    def cti_case():
        module = CrossPerceptionTemporalIntegration(CtiConfig(channels=8, groups=4),
                                                    rng=np.random.default_rng(12), dtype=f64)
        for kernel in module.temporal_kernels.values():
            kernel.weight.data = kernel.weight.data + 0.3 * np.random.default_rng(13).normal(
                size=kernel.weight.shape)
        for fc in module.integration_fc.values():
            fc.weight.data = 0.3 * np.random.default_rng(14).normal(size=fc.weight.shape)
        x = Tensor(rng.normal(size=(4, 8, 3, 3)), dtype=f64, requires_grad=True)
        params = {"input": x, **module.parameters()}
        return (params, lambda: project(module.forward(x), 11))

    checks.append(("cti_forward", cti_case))

    def block_case():
        cfg = BlockConfig(in_channels=8, bottleneck_channels=8, out_channels=8, stride=1,
                          sme=SmeConfig(channels=8, reduction_ratio=4),
                          cti=CtiConfig(channels=8, groups=4))
        block = TsiBottleneckBlock(cfg, rng=np.random.default_rng(15), dtype=f64)
        block.set_training(True)
        x = Tensor(rng.normal(size=(2, 8, 6, 6)), dtype=f64, requires_grad=True)
        params = {"input": x, **block.parameters()}
        return (params, lambda: project(block.forward(x, frames=2), 12))

    checks.append(("tsi_block", block_case))

    reports = {}
    for name, make in checks:
        params, f = make()
        reports[name] = grad_check(f, params, step=step, tolerance=tolerance,
                                   max_elements_per_param=max_elements, seed=seed)
    return reports


def cmd_gradcheck(args) -> int:
    previous = T.set_debug_checks(True)
    try:
        reports = gradcheck_battery(tolerance=args.tolerance, step=args.step,
                                    max_elements=args.max_elements, seed=args.seed)
    finally:
        T.set_debug_checks(previous)
    all_passed = True
    for name, report in reports.items():
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {name:20s} max rel-err {report.max_rel_err:.3e} "
              f"(tolerance {report.tolerance:.1e})")
        all_passed &= report.passed
    return EXIT_OK if all_passed else EXIT_VALIDATION


def cmd_profile(args) -> int:
    spec = _model_spec(args)
    report = count_model(spec, frames=args.frames, input_size=args.size)
    if args.json:
        print(report.to_json())
    else:
        print(report.render_text())
    return EXIT_OK


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    config = json.loads(Path(args.config).read_text())
    seeds = config.get("seeds", [0])
    base_model = config.get("base_model", {})
    base_train = config.get("base_train", {})
    variants = config.get("variants", [])
    rows = []
    for variant in variants:
        name = variant["name"]
        model_dict = _apply_overrides(desk_spec().to_dict(), base_model)
        model_dict = _apply_overrides(model_dict, variant.get("model_overrides", {}))
        train_dict = _apply_overrides(TrainConfig().to_dict(), base_train)
        train_dict = _apply_overrides(train_dict, variant.get("train_overrides", {}))
        top1s = []
        for seed in seeds:
            train_dict_seeded = _apply_overrides(train_dict, {"seed": seed})
            spec = ModelSpec.from_dict(model_dict)
            t_config = TrainConfig.from_dict(train_dict_seeded)
            run_dir = out / f"{name}_seed{seed}"
            summary = _train_once(spec, t_config, Path(args.data), run_dir)
            rows.append({"variant": name, "seed": seed, "top1": summary["best_top1"]})
            top1s.append(summary["best_top1"])
        if top1s:
            rows.append({"variant": name, "seed": "median",
                         "top1": statistics.median(top1s)})
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    print(f"{'variant':<28s} {'seed':>8s} {'top1':>8s}")
    for row in rows:
        print(f"{row['variant']:<28s} {str(row['seed']):>8s} {row['top1']:>8.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="tsinet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic clip dataset")
    p.add_argument("--out", default=None)
    p.add_argument("--classes", default="up,down,left,right")
    p.add_argument("--clips-per-class", type=int, default=50)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--speed", type=float, default=2.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--model", default=None, help="model spec JSON path")
    p.add_argument("--preset", default="desk", choices=["desk", "resnet50"])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--decay-epochs", default="20,26")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-top1", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--max-elements", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("profile", help="analytical MAC/parameter report")
    p.add_argument("--model", default=None)
    p.add_argument("--preset", default="resnet50", choices=["desk", "resnet50"])
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("ablate", help="train a grid of toggled configurations")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
