"""Two-level discrepancy machinery: output gap, channel relation maps with
adaptive per-layer weights, activation regularization, and the two stage
losses of the minimax game.

A channel relation map is the CxC matrix of cosine similarities between a
feature map's flattened channels. Comparing relation maps instead of raw
features makes the gap insensitive to the different numeric spans of a
full-precision network and its quantized copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, ShapeError

ZERO_NORM_EPS = 1e-8


def crm(feature_map: ad.Tensor, gram: bool = False) -> ad.Tensor:
    """Channel relation map of a (C,H,W) map, or one map per sample for a
    batched (B,C,H,W) input. Entries touching a channel with norm below
    1e-8 are zero (including that channel's diagonal). With ``gram=True``
    the raw inner-product matrix is returned instead (ablation)."""
    if feature_map.ndim == 3:
        batched = False
        c = feature_map.shape[0]
        b = 1
    elif feature_map.ndim == 4:
        batched = True
        b, c = feature_map.shape[:2]
    else:
        raise ShapeError(f"crm expects a 3-d or 4-d feature map, got {feature_map.shape}")

    fd = feature_map.data.reshape(b, c, -1)
    s = np.matmul(fd, fd.transpose(0, 2, 1))

    if gram:
        out = s if batched else s[0]

        def backward_gram(g):
            g3 = g.reshape(b, c, c)
            gf = np.matmul(g3 + g3.transpose(0, 2, 1), fd)
            return (gf.reshape(feature_map.shape),)

        return ad.record("crm_gram", (feature_map,), out, backward_gram)

    n = np.sqrt((fd * fd).sum(axis=2))
    mask = n >= ZERO_NORM_EPS
    all_alive = bool(mask.all())
    ns = n if all_alive else np.where(mask, n, 1.0)
    rec = 1.0 / ns
    rdenom = rec[:, :, None] * rec[:, None, :]
    r = s * rdenom
    if not all_alive:
        pair_mask = (mask[:, :, None] & mask[:, None, :])
        r *= pair_mask
    out = r if batched else r[0]

    def backward(g):
        g3 = g.reshape(b, c, c)
        if not all_alive:
            g3 = g3 * pair_mask
        h = g3 * rdenom
        gf = np.matmul(h + h.transpose(0, 2, 1), fd)
        coef = ((g3 + g3.transpose(0, 2, 1)) * r).sum(axis=2) * (rec * rec)
        gf -= coef[:, :, None] * fd
        if not all_alive:
            gf *= mask[:, :, None]
        return (gf.reshape(feature_map.shape),)

    return ad.record("crm", (feature_map,), out, backward)


def output_discrepancy(p_out: ad.Tensor, q_out: ad.Tensor) -> ad.Tensor:
    """Batch-mean, element-mean L1 distance between the two outputs."""
    if p_out.shape != q_out.shape:
        raise ShapeError(f"output shapes disagree: {p_out.shape} vs {q_out.shape}")
    return ad.mean(ad.abs_(p_out - q_out))


@dataclass
class AdaptiveWeightState:
    """Per-layer EMA of relation-map gaps, softmaxed into weights that sum
    to one. Reset to uniform at every epoch start."""

    num_layers: int
    ema_momentum: float = 0.9
    ema: Optional[np.ndarray] = field(default=None, init=False)
    weights: tuple[float, ...] = field(init=False)
    step_count: int = field(default=0, init=False)

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"need at least one tapped layer, got {self.num_layers}")
        if not 0.0 < self.ema_momentum < 1.0:
            raise ConfigError(f"ema momentum must be in (0,1), got {self.ema_momentum}")
        self.weights = (1.0 / self.num_layers,) * self.num_layers

    def reset_epoch(self) -> None:
        self.ema = None
        self.step_count = 0
        self.weights = (1.0 / self.num_layers,) * self.num_layers

    def update(self, gaps: Sequence[float]) -> None:
        if len(gaps) != self.num_layers:
            raise ContractError(f"expected {self.num_layers} gaps, got {len(gaps)}")
        gaps = np.asarray(gaps, dtype=np.float64)
        if (gaps < 0).any():
            raise ContractError(f"gaps must be non-negative, got {gaps.tolist()}")
        if self.ema is None:
            self.ema = gaps.copy()
        else:
            self.ema = self.ema_momentum * self.ema + (1 - self.ema_momentum) * gaps
        shifted = self.ema - self.ema.max()
        e = np.exp(shifted)
        self.weights = tuple((e / e.sum()).tolist())
        self.step_count += 1


def update_adaptive_weights(state: AdaptiveWeightState, gaps: Sequence[float]) -> AdaptiveWeightState:
    state.update(gaps)
    return state


def feature_discrepancy(p_taps: Sequence[ad.Tensor], q_taps: Sequence[ad.Tensor],
                        weights: AdaptiveWeightState | Sequence[float],
                        gram: bool = False) -> tuple[ad.Tensor, list[float]]:
    """Weighted, channel-count-normalized L1 distance between relation maps
    across tapped layers, plus the raw (unweighted, unnormalized) batch-mean
    gap per layer that feeds the adaptive-weight update."""
    w = weights.weights if isinstance(weights, AdaptiveWeightState) else tuple(weights)
    if len(p_taps) != len(q_taps):
        raise ShapeError(f"tap lists disagree: {len(p_taps)} vs {len(q_taps)}")
    if len(p_taps) != len(w):
        raise ShapeError(f"{len(w)} weights for {len(p_taps)} tapped layers")
    if not p_taps:
        raise ContractError("feature_discrepancy needs at least one tapped layer")
    total = None
    gaps: list[float] = []
    for p_map, q_map, w_l in zip(p_taps, q_taps, w):
        if p_map.shape != q_map.shape:
            raise ShapeError(f"tap shapes disagree: {p_map.shape} vs {q_map.shape}")
        batch = p_map.shape[0] if p_map.ndim == 4 else 1
        channels = p_map.shape[1] if p_map.ndim == 4 else p_map.shape[0]
        diff = ad.l1_norm(crm(p_map, gram=gram) - crm(q_map, gram=gram))
        gap = ad.scale(diff, 1.0 / batch)
        gaps.append(gap.item())
        term = ad.scale(gap, w_l / channels ** 2)
        total = term if total is None else total + term
    return total, gaps


@dataclass
class ActivationStats:
    """Batched activation maps (B, M, H, W) from the reference network's last
    convolution; M is the number of maps per sample."""

    maps: ad.Tensor

    def __post_init__(self):
        if self.maps.ndim != 4:
            raise ContractError(f"activation maps must be 4-d batched, got {self.maps.shape}")
        if self.maps.shape[1] < 1:
            raise ContractError("need at least one activation map")

    @property
    def num_maps(self) -> int:
        return self.maps.shape[1]


def activation_regularizer(stats: ActivationStats) -> ad.Tensor:
    """Negative mean L1 norm of the activation maps, batch-averaged. More
    strongly activated maps give a smaller (more negative) value."""
    b = stats.maps.shape[0]
    return ad.scale(ad.l1_norm(stats.maps), -1.0 / (b * stats.num_maps))


def _check_coeffs(alpha: float, beta: float = 0.0) -> None:
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss coefficients must be non-negative, got alpha={alpha} beta={beta}")


def loss_de(d_o: ad.Tensor, d_f: ad.Tensor, l_a: ad.Tensor,
            alpha: float, beta: float) -> ad.Tensor:
    """Generator objective: drive the two-level discrepancy up while keeping
    samples inside the reference network's working domain."""
    _check_coeffs(alpha, beta)
    return (-d_o) - ad.scale(d_f, alpha) + ad.scale(l_a, beta)


def loss_kt(d_o: ad.Tensor, d_f: ad.Tensor, alpha: float) -> ad.Tensor:
    """Student objective: drive the two-level discrepancy down."""
    _check_coeffs(alpha)
    return d_o + ad.scale(d_f, alpha)
