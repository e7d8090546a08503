"""Optimizer semantics, training-loop determinism, checkpoints."""

import json

import numpy as np
import pytest

import oracles
import tsinet.tensor as T
from tsinet.net import ModelSpec, StageSpec, StemSpec, TsiNet
from tsinet.train import (SGD, TrainConfig, evaluate, fit, load_checkpoint, lr_at_epoch,
                          save_checkpoint, train_step)
from tsinet.tensor import NumericError, Tensor


def tiny_spec(**kw):
    base = dict(frames=2, num_classes=2, input_size=8,
                stem=StemSpec(channels=8, kernel=3, stride=2),
                stages=[StageSpec(1, 8, 1)], sme_reduction_ratio=2, cti_groups=2)
    base.update(kw)
    return ModelSpec(**base)


def tiny_data(rng, n=8, frames=2, size=8, classes=2):
    x = rng.uniform(0, 1, size=(n, frames, 3, size, size)).astype(np.float32)
    y = (np.arange(n) % classes).astype(np.int64)
    return x, y


class TestSGD:
    def test_zero_learning_rate_keeps_parameters_bitwise(self, rng):
        w = Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
        before = w.data.copy()
        opt = SGD({"w": w}, lr=0.0, momentum=0.9, weight_decay=1e-2)
        opt.step({"w": Tensor(rng.normal(size=(3, 4)).astype(np.float32))})
        assert (w.data == before).all()

    def test_matches_closed_form_momentum_steps(self, rng):
        w0 = rng.normal(size=(4,))
        g_seq = [rng.normal(size=(4,)) for _ in range(3)]
        w = Tensor(w0.copy(), dtype=np.float64, requires_grad=True)
        opt = SGD({"w": w}, lr=0.1, momentum=0.9, weight_decay=0.01)
        w_ref, v_ref = w0.copy(), np.zeros(4)
        for g in g_seq:
            opt.step({"w": Tensor(g, dtype=np.float64)})
            w_ref, v_ref = oracles.sgd_momentum_step_loops(w_ref, v_ref, g, 0.1, 0.9, 0.01)
            np.testing.assert_allclose(w.data, w_ref, rtol=1e-12)

    def test_weight_decay_respects_decay_set(self, rng):
        w = Tensor(np.ones(3), dtype=np.float64, requires_grad=True)
        b = Tensor(np.ones(3), dtype=np.float64, requires_grad=True)
        opt = SGD({"w": w, "b": b}, lr=1.0, momentum=0.0, weight_decay=0.5,
                  decay_names={"w"})
        zero = Tensor(np.zeros(3), dtype=np.float64)
        opt.step({"w": zero, "b": zero})
        np.testing.assert_allclose(w.data, np.full(3, 0.5))   # decayed
        np.testing.assert_allclose(b.data, np.ones(3))        # untouched

    def test_quadratic_loss_single_layer_matches_hand_step(self):
        # loss = 0.5 * ||w x - y||^2 for one sample; grad = (w x - y) x^T
        x = np.array([1.0, 2.0])
        y = np.array([1.0])
        w = Tensor(np.array([[0.5, -0.5]]), dtype=np.float64, requires_grad=True)
        with T.GradientTape() as tape:
            pred = T.linear(Tensor(x[None], dtype=np.float64), w)
            err = pred - Tensor(y[None], dtype=np.float64)
            loss = T.sum_(err * err) * 0.5
            grads = tape.gradients(loss, {"w": w})
        resid = (0.5 * 1 - 0.5 * 2) - 1.0
        np.testing.assert_allclose(grads["w"].data, resid * x[None], rtol=1e-12)
        opt = SGD({"w": w}, lr=0.1, momentum=0.9, weight_decay=0.0)
        before = w.data.copy()
        opt.step(grads)
        np.testing.assert_allclose(w.data, before - 0.1 * (resid * x[None]), rtol=1e-12)

    def test_convex_problem_loss_decreases(self, rng):
        # linearly separable toy problem, logistic head
        n = 40
        feats = np.vstack([rng.normal(size=(n // 2, 3)) + 2,
                           rng.normal(size=(n // 2, 3)) - 2]).astype(np.float64)
        labels = np.array([0] * (n // 2) + [1] * (n // 2))
        w = Tensor(np.zeros((2, 3)), dtype=np.float64, requires_grad=True)
        b = Tensor(np.zeros(2), dtype=np.float64, requires_grad=True)
        opt = SGD({"w": w, "b": b}, lr=0.1, momentum=0.9, weight_decay=0.0)
        losses = []
        for _ in range(50):
            with T.GradientTape() as tape:
                loss = T.cross_entropy(T.linear(Tensor(feats, dtype=np.float64), w, b),
                                       labels)
                grads = tape.gradients(loss, {"w": w, "b": b})
            opt.step(grads)
            losses.append(loss.item())
        assert losses[-1] < 0.1 * losses[0]


def test_lr_schedule_steps():
    cfg = TrainConfig(lr=0.1, lr_decay_epochs=[2, 4], lr_decay_factor=0.1)
    assert lr_at_epoch(cfg, 0) == pytest.approx(0.1)
    assert lr_at_epoch(cfg, 2) == pytest.approx(0.01)
    assert lr_at_epoch(cfg, 4) == pytest.approx(0.001)


def test_nan_loss_aborts_with_diagnostic(rng):
    model = TsiNet(tiny_spec(), rng=np.random.default_rng(0))
    model.head.weight.data = np.full_like(model.head.weight.data, 1e30)
    model.head.bias.data = np.array([1e38, -1e38], dtype=np.float32)
    x, y = tiny_data(rng)
    opt = SGD(model.parameters(), lr=0.1)
    debug = T.set_debug_checks(False)
    try:
        with np.errstate(all="ignore"), pytest.raises(NumericError):
            for _ in range(3):
                train_step(model, x, y, opt)
    finally:
        T.set_debug_checks(debug)


class TestFit:
    def test_zero_epochs_checkpoint_equals_initialization(self, tmp_path, rng):
        model = TsiNet(tiny_spec(), rng=np.random.default_rng(3))
        init_state = {k: v.copy() for k, v in model.state_arrays().items()}
        x, y = tiny_data(rng)
        cfg = TrainConfig(epochs=0, batch_size=4, seed=0)
        fit(model, (x, y), (x, y), cfg, checkpoint_dir=tmp_path / "ck")
        restored, _ = load_checkpoint(tmp_path / "ck")
        for name, arr in restored.state_arrays().items():
            np.testing.assert_array_equal(arr, init_state[name])

    def test_same_seed_identical_metrics_and_checkpoints(self, tmp_path, rng):
        x, y = tiny_data(rng, n=12)
        runs = []
        for run in range(2):
            model = TsiNet(tiny_spec(), rng=np.random.default_rng(5))
            cfg = TrainConfig(epochs=2, batch_size=4, lr=0.05, seed=9)
            out = tmp_path / f"run{run}"
            out.mkdir()
            fit(model, (x, y), (x, y), cfg, checkpoint_dir=out / "ck",
                metrics_path=out / "metrics.jsonl")
            runs.append(out)
        m0 = (runs[0] / "metrics.jsonl").read_text()
        m1 = (runs[1] / "metrics.jsonl").read_text()
        assert m0 == m1
        s0, _ = load_checkpoint(runs[0] / "ck")
        s1, _ = load_checkpoint(runs[1] / "ck")
        for name, arr in s0.state_arrays().items():
            assert (arr == s1.state_arrays()[name]).all(), name

    def test_metrics_schema(self, tmp_path, rng):
        model = TsiNet(tiny_spec(), rng=np.random.default_rng(1))
        x, y = tiny_data(rng)
        fit(model, (x, y), (x, y), TrainConfig(epochs=1, batch_size=4, seed=0),
            metrics_path=tmp_path / "m.jsonl")
        lines = [json.loads(line) for line in
                 (tmp_path / "m.jsonl").read_text().splitlines()]
        assert all(set(line) == {"step", "epoch", "loss", "top1"} for line in lines)
        assert lines[-1]["top1"] is not None

    def test_target_top1_stops_early(self, rng):
        model = TsiNet(tiny_spec(), rng=np.random.default_rng(1))
        x, y = tiny_data(rng)
        cfg = TrainConfig(epochs=50, batch_size=4, lr=0.0, seed=0, target_top1=0.0)
        result = fit(model, (x, y), (x, y), cfg)
        assert result.epochs_run == 1

    def test_longer_clips_are_segment_sampled(self, rng):
        model = TsiNet(tiny_spec(), rng=np.random.default_rng(1))
        x = rng.uniform(0, 1, size=(6, 5, 3, 8, 8)).astype(np.float32)  # 5 > 2 frames
        y = (np.arange(6) % 2).astype(np.int64)
        result = fit(model, (x, y), (x, y), TrainConfig(epochs=1, batch_size=3, seed=0))
        assert result.epochs_run == 1


def test_memorized_tiny_set_evaluates_to_100_percent(rng):
    spec = tiny_spec(num_classes=2)
    model = TsiNet(spec, rng=np.random.default_rng(4))
    x, y = tiny_data(rng, n=8)
    cfg = TrainConfig(epochs=40, batch_size=8, lr=0.05, weight_decay=0.0,
                      lr_decay_epochs=[30], seed=1, target_top1=1.0)
    result = fit(model, (x, y), (x, y), cfg)
    assert result.best_top1 == 1.0


def test_random_weights_on_balanced_set_score_chance(rng):
    spec = tiny_spec(num_classes=4)
    model = TsiNet(spec, rng=np.random.default_rng(8))
    x = rng.uniform(0, 1, size=(400, 2, 3, 8, 8)).astype(np.float32)
    y = (np.arange(400) % 4).astype(np.int64)
    top1 = evaluate(model, x, y)["top1"]
    assert 0.20 <= top1 <= 0.30  # 25% chance level +/- 5 points


def test_evaluate_deterministic_and_top5(rng):
    spec = tiny_spec(num_classes=2)
    model = TsiNet(spec, rng=np.random.default_rng(0))
    x, y = tiny_data(rng, n=10)
    a = evaluate(model, x, y)
    b = evaluate(model, x, y)
    assert a == b
    assert a["top5"] == 1.0  # 2 classes, top-min(5, classes) saturates


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    model = TsiNet(tiny_spec(), rng=np.random.default_rng(2))
    x, y = tiny_data(rng)
    opt = SGD(model.parameters(), lr=0.05)
    train_step(model, x, y, opt)
    save_checkpoint(tmp_path / "ck", model, train_config=TrainConfig(), epoch=0,
                    val_top1=0.5)
    restored, manifest = load_checkpoint(tmp_path / "ck")
    assert manifest["val_top1"] == 0.5
    for name, arr in model.state_arrays().items():
        assert (restored.state_arrays()[name] == arr).all(), name
    model.set_training(False)
    restored.set_training(False)
    out_a = model.forward(Tensor(x)).data
    out_b = restored.forward(Tensor(x)).data
    assert (out_a == out_b).all()
