"""Simulated symmetric k-bit quantization with straight-through gradients.

Weights keep a full-precision shadow tensor that the optimizer updates; the
k-bit view is recomputed every forward from the tensor's own max-abs range.
Activations quantize against a running-range tracker. Rounding is
half-away-from-zero on the symmetric grid {-(2^(k-1)-1), ..., 2^(k-1)-1},
and the gradient passes straight through inside the clamp range. Bit widths
of 32 and above disable quantization entirely (exact pass-through).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ModelError

PASS_THROUGH_EPS = 1e-12
DISABLED_BITS = 32


def _check_bits(k: int, what: str = "bit width") -> None:
    if k >= DISABLED_BITS:
        return
    if not 2 <= k <= 8:
        raise ConfigError(f"{what} must be in [2, 8] (or >= {DISABLED_BITS} to disable), got {k}")


@dataclass(frozen=True)
class QuantSpec:
    """Bit widths for weights and activations; zero point is fixed at 0
    (symmetric scheme)."""

    weight_bits: int
    activation_bits: int
    zero_point: int = field(default=0, init=False)

    def __post_init__(self):
        _check_bits(self.weight_bits, "weight_bits")
        _check_bits(self.activation_bits, "activation_bits")


def qmax(k: int) -> int:
    return 2 ** (k - 1) - 1


def scale_for(max_abs: float, k: int) -> Optional[float]:
    """Scale mapping reals to the k-bit grid; None signals pass-through
    (an all-zero tensor quantizes to itself)."""
    if k < 2:
        raise ConfigError(f"bit width must be at least 2, got {k}")
    if max_abs < PASS_THROUGH_EPS:
        return None
    return qmax(k) / max_abs


def _round_half_away(t: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(t) + 0.5), t)


def quantize_value(v: float, s: float, k: int) -> int:
    """Round v onto the k-bit integer grid with scale s."""
    q = math.floor(abs(s * v) + 0.5)
    q = int(math.copysign(q, s * v))
    m = qmax(k)
    return max(-m, min(m, q))


def fake_quant_array(x: np.ndarray, k: int, max_abs: Optional[float] = None) -> np.ndarray:
    """Quantize-then-dequantize a plain array (no tape)."""
    if k >= DISABLED_BITS:
        return x
    if max_abs is None:
        max_abs = float(np.abs(x).max()) if x.size else 0.0
    s = scale_for(max_abs, k)
    if s is None:
        return x
    m = x.dtype.type(qmax(k))
    q = np.clip(_round_half_away(x * x.dtype.type(s)), -m, m)
    return q / x.dtype.type(s)


class ActRangeTracker:
    """Running estimate of an activation tensor's max-abs range.

    ``mode="max"`` takes the running maximum (non-decreasing until frozen);
    ``mode="ema"`` smooths batch maxima exponentially. Frozen trackers never
    change, which is the evaluation contract.
    """

    def __init__(self, momentum: float = 0.99, mode: str = "ema"):
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"tracker momentum must be in (0,1), got {momentum}")
        if mode not in ("ema", "max"):
            raise ConfigError(f"tracker mode must be 'ema' or 'max', got {mode!r}")
        self.running_max = 0.0
        self.momentum = momentum
        self.mode = mode
        self.frozen = False
        self._seen = False

    def observe(self, batch_max: float) -> None:
        if self.frozen:
            return
        if self.mode == "max":
            self.running_max = max(self.running_max, batch_max)
        else:
            if not self._seen:
                self.running_max = batch_max
            else:
                self.running_max = self.momentum * self.running_max + (1 - self.momentum) * batch_max
        self._seen = True

    def freeze(self) -> None:
        self.frozen = True

    def unfreeze(self) -> None:
        self.frozen = False


@dataclass
class FakeQuantParam:
    """Full-precision shadow weights behind a k-bit view. The shadow is the
    tensor the optimizer updates; the quantized view is derived per forward."""

    shadow: ad.Tensor
    bits: int
    last_scale: Optional[float] = None

    def __post_init__(self):
        _check_bits(self.bits)


def fake_quant(x: ad.Tensor, k: int, tracker: Optional[ActRangeTracker] = None) -> ad.Tensor:
    """Quantize-dequantize on the tape with a straight-through gradient:
    identity where |x| <= range, zero outside. Without a tracker the range is
    the tensor's own max-abs (weight path, nothing clamps); with one, the
    tracker is first updated unless frozen (activation path)."""
    if k >= DISABLED_BITS:
        return x
    if tracker is None:
        rng_max = ad.max_abs(x)
    else:
        if not tracker.frozen:
            tracker.observe(ad.max_abs(x))
        rng_max = tracker.running_max
    s = scale_for(rng_max, k)
    if s is None:
        return x
    out = fake_quant_array(x.data, k, rng_max)
    mask = np.abs(x.data) <= x.dtype.type(rng_max)
    return ad.record("fake_quant", (x,), out, lambda g: (g * mask,))


def fake_quant_weight(param: FakeQuantParam) -> ad.Tensor:
    """k-bit view of the shadow weights; records the scale used."""
    if param.bits >= DISABLED_BITS:
        param.last_scale = None
        return param.shadow
    rng_max = ad.max_abs(param.shadow)
    param.last_scale = scale_for(rng_max, param.bits)
    return fake_quant(param.shadow, param.bits)


def quantize_model(p, spec: QuantSpec):
    """Deep-copied model whose conv/linear weights sit behind FakeQuantParam
    shadows and whose nonlinear activation outputs pass through tracked fake
    quantization. Batch-norm parameters stay full precision; shadows start
    from p's weights."""
    from .models import ModelGraph  # local import to avoid a cycle

    if not isinstance(p, ModelGraph):
        raise ModelError(f"quantize_model expects a ModelGraph, got {type(p).__name__}")
    q = copy.deepcopy(p)
    weight_kinds = ("conv2d", "conv2d_transpose", "linear")
    act_kinds = ("relu", "leaky_relu", "tanh")
    passthrough = ("batchnorm2d", "avgpool", "flatten", "reshape", "fake_quant_activation")
    for i, layer in enumerate(q.layers):
        if layer.kind in weight_kinds:
            layer.weight_quant = FakeQuantParam(layer.weight, spec.weight_bits)
        elif layer.kind in act_kinds:
            layer.act_quant_bits = spec.activation_bits
            layer.act_tracker = ActRangeTracker()
        elif layer.kind not in passthrough:
            raise ModelError(f"layer {i} ({layer.kind}): unsupported layer kind for quantization")
    return q
