"""Alternating minimax training: the generator climbs the two-level
discrepancy between the full-precision network and its quantized copy, then
the quantized copy descends it. Plus teacher pretraining, the fine-tuning
reference, calibration, and evaluation.

Stage discipline per iteration: fresh noise for each stage; the generator
updates first, the adaptive layer weights update right after from that
batch's relation-map gaps, then the quantized model takes its step on new
noise with the updated weights. Parameter freezing is enforced by toggling
``requires_grad``; batch-norm running statistics and activation-range
trackers are buffers, not parameters, and adapt in train mode by design.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .checkpoint import load_state, model_state, save_model
from .config import RunConfig, TrainConfig
from .data import Dataset
from .errors import ConfigError, DivergenceError, DomainError, ModelError
from .losses import (ActivationStats, AdaptiveWeightState, activation_regularizer,
                     feature_discrepancy, loss_de, loss_kt, output_discrepancy)
from .metrics import MetricsRecord, MetricsWriter
from .models import Generator, ModelGraph, build_generator, forward_with_taps, set_requires_grad
from .optim import SGD, Adam
from .quantize import QuantSpec, quantize_model
from .ppm import write_ppm_grid

CALIBRATION_SAMPLES = 512
EVAL_BATCH = 256
EXPORT_SAMPLES = 64


def params_digest(model: ModelGraph) -> str:
    """Byte-level hash of the learnable parameters, in declaration order."""
    h = hashlib.sha256()
    for name, t in model.named_parameters():
        h.update(name.encode())
        h.update(t.data.tobytes())
    return h.hexdigest()


def decayed_lr(base: float, epoch: int, decay_epochs: int, factor: float = 0.1) -> float:
    """Learning rate after the decay events that happened up to ``epoch``."""
    return base * factor ** (epoch // decay_epochs)


def _check_finite(value: float, what: str, context: str) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value}) during {context}")


def _noise(rng, batch: int, dim: int) -> ad.Tensor:
    return ad.Tensor(rng.standard_normal((batch, dim)).astype(np.float32))


def discrepancy_estimation_step(p: ModelGraph, q: ModelGraph, g: Generator,
                                w_state: AdaptiveWeightState, cfg: RunConfig,
                                rng, opt_g: Adam,
                                noise: Optional[ad.Tensor] = None) -> dict:
    """Generator ascent on the discrepancy; quantized parameters fixed."""
    p.eval()
    q.eval()
    g.train()
    set_requires_grad(q, False)
    set_requires_grad(g, True)
    z = noise if noise is not None else _noise(rng, cfg.train.batch_size, g.noise_dim)
    with ad.Tape() as tape:
        x = g.forward(z)
        p_out, p_taps, p_act = forward_with_taps(p, x)
        q_out, q_taps, _ = forward_with_taps(q, x)
        d_o = output_discrepancy(p_out, q_out)
        gaps: Optional[list[float]] = None
        if cfg.disable_df:
            d_f = ad.Tensor(0.0)
        else:
            d_f, gaps = feature_discrepancy(p_taps, q_taps, w_state, gram=cfg.gram_mode)
        if cfg.disable_la:
            l_a = ad.Tensor(0.0)
        else:
            l_a = activation_regularizer(ActivationStats(p_act))
        loss = loss_de(d_o, d_f, l_a, cfg.train.alpha, cfg.train.beta)
        _check_finite(loss.item(), "generator loss", "discrepancy estimation")
        opt_g.zero_grad()
        tape.backward(loss)
        opt_g.step()
    if gaps is not None:
        w_state.update(gaps)
    return {"loss_de": loss.item(), "d_o": d_o.item(), "d_f": d_f.item(),
            "l_a": l_a.item(), "omegas": tuple(w_state.weights)}


def knowledge_transfer_step(p: ModelGraph, q: ModelGraph, g: Generator,
                            w_state: AdaptiveWeightState, cfg: RunConfig,
                            rng, opt_q: SGD,
                            noise: Optional[ad.Tensor] = None) -> dict:
    """Quantized-model descent on the discrepancy; generator fixed. The
    sample batch is generated off-tape, so no gradient ever reaches the
    generator here."""
    p.eval()
    q.train()
    g.train()
    set_requires_grad(g, False)
    set_requires_grad(q, True)
    z = noise if noise is not None else _noise(rng, cfg.train.batch_size, g.noise_dim)
    x = g.forward(z)  # no active tape: constant input
    with ad.Tape() as tape:
        p_out, p_taps, _ = forward_with_taps(p, x)
        q_out, q_taps, _ = forward_with_taps(q, x)
        d_o = output_discrepancy(p_out, q_out)
        if cfg.disable_df:
            d_f = ad.Tensor(0.0)
        else:
            d_f, _ = feature_discrepancy(p_taps, q_taps, w_state, gram=cfg.gram_mode)
        loss = loss_kt(d_o, d_f, cfg.train.alpha)
        _check_finite(loss.item(), "transfer loss", "knowledge transfer")
        opt_q.zero_grad()
        tape.backward(loss)
        opt_q.step()
    return {"loss_kt": loss.item(), "d_o": d_o.item(), "d_f": d_f.item()}


def evaluate(model: ModelGraph, dataset: Dataset, batch_size: int = EVAL_BATCH) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    if len(dataset) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    model.eval()
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = ad.Tensor(dataset.images[start:start + batch_size])
        logits = model.forward(x).data
        correct += int((logits.argmax(axis=1) == dataset.labels[start:start + batch_size]).sum())
    return correct / len(dataset)


def calibrate_uniform(q: ModelGraph, image_shape, rng,
                      num_samples: int = CALIBRATION_SAMPLES, batch: int = 64) -> None:
    """Point the activation-range trackers at uniform-noise inputs: the only
    generator-free calibration signal available without data. Trackers run
    in running-max mode during calibration and end up frozen."""
    q.eval()
    trackers = []
    for layer in q.layers:
        if layer.act_tracker is not None:
            trackers.append(layer.act_tracker)
    for tr in trackers:
        tr.mode = "max"
        tr.unfreeze()
    done = 0
    while done < num_samples:
        n = min(batch, num_samples - done)
        x = ad.Tensor(rng.uniform(-1.0, 1.0, size=(n,) + tuple(image_shape)).astype(np.float32))
        q.forward(x)
        done += n
    for tr in trackers:
        tr.mode = "ema"
        tr.freeze()


@dataclass
class RunResult:
    q: ModelGraph
    generator: Generator
    history: list[MetricsRecord] = field(default_factory=list)
    best_accuracy: float = 0.0
    best_epoch: int = 0


def run(p: ModelGraph, cfg: RunConfig, test_data: Dataset,
        out_dir: Optional[Path] = None,
        log: Optional[Callable[[str], None]] = None) -> RunResult:
    """Full adversarial quantization run: quantize the reference model,
    calibrate activation ranges on uniform noise, then alternate generator
    and quantized-model steps for the configured schedule. Tracks the best
    per-epoch accuracy and returns the model restored to that state."""
    tc = cfg.train
    if cfg.tap_layers is not None:
        p.tap_indices = list(cfg.tap_layers)
        p._validate()
    say = log if log is not None else lambda s: None

    p.eval()
    set_requires_grad(p, False)
    rng = np.random.default_rng([tc.seed, 0])
    init_rng = np.random.default_rng([tc.seed, 1])
    calib_rng = np.random.default_rng([tc.seed, 2])
    sample_rng = np.random.default_rng([tc.seed, 3])

    q = quantize_model(p, QuantSpec(cfg.weight_bits, cfg.activation_bits))
    in_shape = cfg.data.image_shape
    calibrate_uniform(q, in_shape, calib_rng)
    g = build_generator(tc.noise_dim, in_shape, init_rng)

    num_layers = None if cfg.disable_df else len(p.tap_indices)
    w_state = AdaptiveWeightState(max(1, len(p.tap_indices)))
    opt_q = SGD(q.parameters(), tc.lr_q, tc.momentum, tc.weight_decay)
    opt_g = Adam(g.parameters(), tc.lr_g, tc.adam_beta1, tc.adam_beta2)

    result = RunResult(q=q, generator=g, best_accuracy=-1.0)
    writer = MetricsWriter(out_dir / "metrics.csv", num_layers) if out_dir else None
    best_state: Optional[dict] = None
    if tc.epochs == 0:
        # degenerate schedule: the calibrated raw-quantized model is the result
        acc = evaluate(q, test_data)
        result.best_accuracy = acc
        rec = MetricsRecord(kind="eval", epoch=0, accuracy=acc)
        result.history.append(rec)
        if writer:
            writer.write(rec)
            writer.close()
        if out_dir:
            save_model(out_dir / "q_best.bin", q, meta=_model_meta(cfg))
            export_samples(g, EXPORT_SAMPLES, out_dir / "samples.ppm", sample_rng)
        return result
    try:
        for epoch in range(1, tc.epochs + 1):
            w_state.reset_epoch()
            for step in range(1, tc.steps_per_epoch + 1):
                de = discrepancy_estimation_step(p, q, g, w_state, cfg, rng, opt_g)
                kt = knowledge_transfer_step(p, q, g, w_state, cfg, rng, opt_q)
                rec = MetricsRecord(
                    kind="step", epoch=epoch, step=step,
                    loss_de=de["loss_de"], d_o=de["d_o"], d_f=de["d_f"], l_a=de["l_a"],
                    loss_kt=kt["loss_kt"],
                    omegas=None if cfg.disable_df else de["omegas"],
                    lr_g=opt_g.lr, lr_q=opt_q.lr)
                result.history.append(rec)
                if writer:
                    writer.write(rec)
            acc = evaluate(q, test_data)
            rec = MetricsRecord(kind="eval", epoch=epoch, accuracy=acc)
            result.history.append(rec)
            if writer:
                writer.write(rec)
            say(f"epoch {epoch:3d}  acc {acc:.4f}  "
                f"loss_de {de['loss_de']:+.4f}  loss_kt {kt['loss_kt']:.4f}")
            if acc > result.best_accuracy:
                result.best_accuracy = acc
                result.best_epoch = epoch
                best_state = {k: v.copy() for k, v in model_state(q).items()}
                if out_dir:
                    save_model(out_dir / "q_best.bin", q, meta=_model_meta(cfg))
            opt_q.lr = decayed_lr(tc.lr_q, epoch, tc.decay_epochs, tc.lr_decay)
            opt_g.lr = decayed_lr(tc.lr_g, epoch, tc.decay_epochs, tc.lr_decay)
    finally:
        if writer:
            writer.close()

    if best_state is not None:
        load_state(q, best_state)
    if out_dir:
        export_samples(g, EXPORT_SAMPLES, out_dir / "samples.ppm", sample_rng)
    return result


def _model_meta(cfg: RunConfig) -> dict[str, float]:
    return {"num_classes": float(cfg.data.num_classes),
            "channels": float(cfg.data.channels),
            "height": float(cfg.data.height),
            "width": float(cfg.data.width),
            "weight_bits": float(cfg.weight_bits),
            "activation_bits": float(cfg.activation_bits)}


def export_samples(g: Generator, count: int, path, rng) -> Path:
    """Generate ``count`` samples and write them as an 8-wide PPM grid."""
    g.eval()
    z = _noise(rng, count, g.noise_dim)
    images = g.forward(z).data
    return write_ppm_grid(images, path, cols=8)


# ---------------------------------------------------------------------------
# supervised reference training (teacher pretraining and the FT baseline)


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train_supervised(model: ModelGraph, train_data: Dataset, test_data: Dataset,
                     num_classes: int, epochs: int, lr: float, batch_size: int,
                     seed: int, momentum: float = 0.9, weight_decay: float = 5e-4,
                     decay_epochs: int = 10**9, lr_decay: float = 0.1,
                     log: Optional[Callable[[str], None]] = None) -> tuple[float, int]:
    """Squared-error training against one-hot targets; keeps the best
    per-epoch accuracy state loaded in the model. Returns (best accuracy,
    best epoch)."""
    if epochs < 1:
        raise ConfigError(f"supervised training needs at least 1 epoch, got {epochs}")
    say = log if log is not None else lambda s: None
    rng = np.random.default_rng([seed, 4])
    set_requires_grad(model, True)
    opt = SGD(model.parameters(), lr, momentum, weight_decay)
    targets = _one_hot(train_data.labels, num_classes)
    n = len(train_data)
    best_acc, best_epoch = -1.0, 0
    best_state = None
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue  # batch norm needs more than one sample
            x = ad.Tensor(train_data.images[idx])
            y = ad.Tensor(targets[idx])
            with ad.Tape() as tape:
                logits = model.forward(x)
                diff = logits - y
                loss = ad.mean(diff * diff)
                _check_finite(loss.item(), "supervised loss", "reference training")
                opt.zero_grad()
                tape.backward(loss)
                opt.step()
        acc = evaluate(model, test_data)
        say(f"epoch {epoch:3d}  acc {acc:.4f}  loss {loss.item():.5f}")
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best_state = {k: v.copy() for k, v in model_state(model).items()}
        opt.lr = decayed_lr(lr, epoch, decay_epochs, lr_decay)
    if best_state is not None:
        load_state(model, best_state)
    return best_acc, best_epoch
