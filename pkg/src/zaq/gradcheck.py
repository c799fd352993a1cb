"""Central-finite-difference verification of analytic gradients.

Every check builds a scalar loss from seeded random inputs kept away from
subgradient kinks, computes analytic gradients on a fresh tape, and compares
them against central differences with step 1e-3. The same suite runs in
float32 (tolerance 1e-3) and float64 (tolerance 1e-6).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

STEP = 1e-3
TOL32 = 1e-3
TOL64 = 1e-6


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err <= self.tol


def numeric_gradient(value_fn: Callable[[], float], t: ad.Tensor,
                     step: float = STEP) -> np.ndarray:
    """Central differences of ``value_fn`` w.r.t. every element of ``t``,
    mutating ``t.data`` in place and restoring it afterwards."""
    flat = t.data.reshape(-1)
    grad = np.zeros_like(flat, dtype=np.float64)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up = value_fn()
        flat[i] = saved - step
        down = value_fn()
        flat[i] = saved
        grad[i] = (up - down) / (2 * step)
    return grad.reshape(t.shape)


def compare_gradients(loss_fn: Callable[[], ad.Tensor],
                      wrt: Sequence[ad.Tensor],
                      step: float = STEP) -> float:
    """Max relative error between tape gradients and central differences
    over all tensors in ``wrt``."""
    for t in wrt:
        t.zero_grad()
    with ad.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.array(t.grad, dtype=np.float64) for t in wrt]

    def value() -> float:
        return loss_fn().item()

    worst = 0.0
    for t, a in zip(wrt, analytic):
        n = numeric_gradient(value, t, step)
        denom = max(np.abs(a).max(), np.abs(n).max(), 1e-12)
        worst = max(worst, float(np.abs(a - n).max() / denom))
    return worst


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    """Uniform values in [-1,-margin] U [margin,1]; keeps |x| clear of
    subgradient kinks by more than the finite-difference step."""
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _param(rng, shape, margin=0.05) -> ad.Tensor:
    return ad.Tensor(_away_from_zero(rng, shape, margin), requires_grad=True)


def _primitive_checks(rng: np.random.Generator) -> list[tuple[str, Callable, list]]:
    checks = []

    a = _param(rng, (3, 4))
    b = _param(rng, (3, 4))
    checks.append(("add", lambda: ad.sum_((a + b) * (a + b)), [a, b]))

    c = _param(rng, (3, 4))
    d = _param(rng, (3, 4))
    checks.append(("sub", lambda: ad.sum_((c - d) * c), [c, d]))

    e = _param(rng, (2, 5))
    f = _param(rng, (2, 5))
    checks.append(("mul", lambda: ad.sum_(e * f), [e, f]))

    g1 = _param(rng, (2, 5))
    # divisor magnitudes in [1.5, 2.5]: keeps the 1/y curvature term of the
    # central difference below the float64 tolerance
    g2_mag = rng.uniform(1.5, 2.5, size=(2, 5))
    g2_sign = np.where(rng.uniform(size=(2, 5)) < 0.5, -1.0, 1.0)
    g2 = ad.Tensor(g2_mag * g2_sign, requires_grad=True)
    checks.append(("div", lambda: ad.sum_(g1 / g2), [g1, g2]))

    h = _param(rng, (7,))
    checks.append(("neg", lambda: ad.sum_((-h) * h), [h]))

    i = _param(rng, (6,))
    checks.append(("abs", lambda: ad.sum_(ad.abs_(i) * i), [i]))

    j = _param(rng, (8,))
    checks.append(("relu", lambda: ad.sum_(ad.relu(j) * j), [j]))

    k = _param(rng, (8,))
    checks.append(("leaky_relu", lambda: ad.sum_(ad.leaky_relu(k) * k), [k]))

    l = _param(rng, (8,))
    checks.append(("tanh", lambda: ad.sum_(ad.tanh_(l) * l), [l]))

    m = _param(rng, (5,))
    checks.append(("scale", lambda: ad.sum_(ad.scale(m, 2.5) * m), [m]))

    sc = _param(rng, (1,))
    ten = _param(rng, (3, 3))
    checks.append(("scalar_broadcast", lambda: ad.sum_((ten * sc) + sc), [ten, sc]))

    bias = _param(rng, (3,))
    feat = _param(rng, (2, 3, 2, 2))
    checks.append(("channel_bias", lambda: ad.sum_((feat + bias) * feat), [feat, bias]))

    ma = _param(rng, (3, 4))
    mb = _param(rng, (4, 2))
    checks.append(("matmul", lambda: ad.sum_((ma @ mb) * (ma @ mb)), [ma, mb]))

    cx = _param(rng, (1, 2, 4, 4))
    cw = _param(rng, (3, 2, 3, 3))
    checks.append(("conv2d", lambda: ad.sum_(ad.conv2d(cx, cw, 1, 1) * ad.conv2d(cx, cw, 1, 1)),
                   [cx, cw]))

    sx = _param(rng, (2, 2, 5, 5))
    sw = _param(rng, (3, 2, 3, 3))
    checks.append(("conv2d_stride2", lambda: ad.sum_(ad.conv2d(sx, sw, 2, 1) * ad.conv2d(sx, sw, 2, 1)),
                   [sx, sw]))

    tx = _param(rng, (1, 3, 3, 3))
    tw = _param(rng, (3, 2, 4, 4))
    checks.append(("conv2d_transpose",
                   lambda: ad.sum_(ad.conv2d_transpose(tx, tw, 2, 1) * ad.conv2d_transpose(tx, tw, 2, 1)),
                   [tx, tw]))

    bx = _param(rng, (2, 3, 2, 2))
    bg = _param(rng, (3,), margin=0.5)
    bb = _param(rng, (3,))
    rm = np.zeros(3, dtype=ad.default_dtype())
    rv = np.ones(3, dtype=ad.default_dtype())
    # a plain quadratic loss on normalized outputs is nearly input-invariant;
    # weight the elements so the input gradient stays O(1)
    bn_coef = ad.Tensor(rng.uniform(0.5, 1.5, size=(2, 3, 2, 2)))

    def bn_train_loss():
        y = ad.batchnorm2d(bx, bg, bb, rm.copy(), rv.copy(), train=True)
        return ad.sum_(y * bn_coef)

    checks.append(("batchnorm2d_train", bn_train_loss, [bx, bg, bb]))

    ex = _param(rng, (2, 3, 2, 2))
    eg = _param(rng, (3,), margin=0.5)
    eb = _param(rng, (3,))
    erm = rng.uniform(-0.5, 0.5, 3).astype(ad.default_dtype())
    erv = rng.uniform(0.5, 1.5, 3).astype(ad.default_dtype())

    def bn_eval_loss():
        y = ad.batchnorm2d(ex, eg, eb, erm, erv, train=False)
        return ad.sum_(y * y)

    checks.append(("batchnorm2d_eval", bn_eval_loss, [ex, eg, eb]))

    px = _param(rng, (2, 2, 4, 4))
    checks.append(("avgpool2d", lambda: ad.sum_(ad.avgpool2d(px) * ad.avgpool2d(px)), [px]))

    rx = _param(rng, (2, 3, 2, 2))
    checks.append(("reshape", lambda: ad.sum_(ad.reshape(rx, (2, 12)) * ad.reshape(rx, (2, 12))),
                   [rx]))

    fx = _param(rng, (2, 2, 3, 3))
    checks.append(("flatten", lambda: ad.sum_(ad.flatten(fx) * ad.flatten(fx)), [fx]))

    ax = _param(rng, (2, 3, 4))
    checks.append(("sum_axes", lambda: ad.sum_(ad.sum_(ax, axes=(0, 2)) * ad.sum_(ax, axes=(0, 2))),
                   [ax]))

    mx = _param(rng, (3, 4))
    checks.append(("mean", lambda: ad.mean(mx * mx), [mx]))

    l1x = _param(rng, (9,))
    checks.append(("l1_norm", lambda: ad.l1_norm(l1x) * ad.l1_norm(l1x), [l1x]))

    l2x = _param(rng, (9,))
    checks.append(("l2_norm", lambda: ad.l2_norm(l2x) * ad.l2_norm(l2x), [l2x]))

    return checks


def _loss_checks(rng: np.random.Generator) -> list[tuple[str, Callable, list]]:
    from . import losses

    checks = []

    def shifted_square(r):
        # smooth everywhere, unlike an L1 readout whose kinks sit wherever
        # a relation-map entry crosses zero
        d = r - 0.3
        return ad.sum_(d * d)

    fm = ad.Tensor(1.5 * _away_from_zero(rng, (4, 2, 2), 0.3), requires_grad=True)
    checks.append(("crm", lambda: shifted_square(losses.crm(fm)), [fm]))

    bfm = ad.Tensor(1.5 * _away_from_zero(rng, (2, 3, 2, 2), 0.3), requires_grad=True)
    checks.append(("crm_batched", lambda: shifted_square(losses.crm(bfm)), [bfm]))

    gfm = _param(rng, (3, 2, 2), margin=0.2)
    checks.append(("crm_gram", lambda: shifted_square(losses.crm(gfm, gram=True)), [gfm]))

    po = _param(rng, (3, 4))
    qo = _param(rng, (3, 4))
    checks.append(("output_discrepancy", lambda: losses.output_discrepancy(po, qo), [po, qo]))

    hp = _param(rng, (2, 3, 2, 2))
    checks.append(("activation_regularizer",
                   lambda: losses.activation_regularizer(losses.ActivationStats(hp)), [hp]))

    p1 = ad.Tensor(0.8 * _away_from_zero(rng, (1, 2, 2, 2), 0.3), requires_grad=True)
    q1 = ad.Tensor(0.8 * _away_from_zero(rng, (1, 2, 2, 2), 0.3), requires_grad=True)
    p2 = ad.Tensor(0.8 * _away_from_zero(rng, (1, 3, 2, 2), 0.3), requires_grad=True)
    q2 = ad.Tensor(0.8 * _away_from_zero(rng, (1, 3, 2, 2), 0.3), requires_grad=True)
    w = losses.AdaptiveWeightState(2)
    w.update([1.0, 2.0])
    checks.append(("feature_discrepancy",
                   lambda: losses.feature_discrepancy([p1, p2], [q1, q2], w)[0],
                   [p1, q1, p2, q2]))

    return checks


COMPOSITE_SEED = 28


def _composite_checks(rng: np.random.Generator) -> list[tuple[str, Callable, list]]:
    """L_DE and L_KT through a tiny generator / full-precision / student
    stack, quantization disabled so the losses are differentiable. Uses its
    own seed: the L1 losses need outputs kept away from their kinks."""
    from . import losses
    from .models import ModelGraph, Conv2d, Linear, ReLU, Tanh, Flatten, Reshape, forward_with_taps

    rng = np.random.default_rng(COMPOSITE_SEED)

    def tiny_net(r: np.random.Generator) -> ModelGraph:
        layers = [
            Conv2d(2, 3, kernel=3, stride=1, pad=1,
                   weight=0.4 * _away_from_zero(r, (3, 2, 3, 3), 0.2), bias=None),
            Tanh(),
            Conv2d(3, 2, kernel=3, stride=1, pad=1,
                   weight=0.4 * _away_from_zero(r, (2, 3, 3, 3), 0.2), bias=None),
            Tanh(),
            Flatten(),
            Linear(2 * 4 * 4, 3, weight=0.3 * _away_from_zero(r, (2 * 4 * 4, 3), 0.2),
                   bias=np.zeros(3)),
        ]
        return ModelGraph(layers, tap_indices=[1, 3], last_conv_index=2)

    def tiny_gen(r: np.random.Generator) -> ModelGraph:
        layers = [
            Linear(5, 2 * 4 * 4, weight=0.4 * _away_from_zero(r, (5, 2 * 4 * 4), 0.2),
                   bias=np.zeros(2 * 4 * 4)),
            Reshape((2, 4, 4)),
            Tanh(),
        ]
        return ModelGraph(layers, tap_indices=[], last_conv_index=None)

    p = tiny_net(rng)
    q = tiny_net(rng)
    g = tiny_gen(rng)
    for m in (p, q, g):
        m.eval()
    z = ad.Tensor(_away_from_zero(rng, (2, 5), 0.1))
    w = losses.AdaptiveWeightState(2)
    w.update([0.5, 1.5])

    def two_level(alpha: float):
        x = g.forward(z)
        p_out, p_taps, p_act = forward_with_taps(p, x)
        q_out, q_taps, _ = forward_with_taps(q, x)
        d_o = losses.output_discrepancy(p_out, q_out)
        d_f, _ = losses.feature_discrepancy(p_taps, q_taps, w)
        l_a = losses.activation_regularizer(losses.ActivationStats(p_act))
        return d_o, d_f, l_a

    def de_loss():
        d_o, d_f, l_a = two_level(0.1)
        return losses.loss_de(d_o, d_f, l_a, alpha=0.1, beta=0.05)

    def kt_loss():
        d_o, d_f, _ = two_level(0.1)
        return losses.loss_kt(d_o, d_f, alpha=0.1)

    g_params = [t for _, t in g.named_parameters()]
    q_params = [t for _, t in q.named_parameters()]
    return [
        ("composite_loss_de_wrt_generator", de_loss, g_params),
        ("composite_loss_kt_wrt_student", kt_loss, q_params),
    ]


def check_names() -> list[str]:
    """Names of every check in the suite, without running the comparisons."""
    with ad.precision(np.float32):
        rng = np.random.default_rng(0)
        groups = (_primitive_checks(rng), _loss_checks(rng), _composite_checks(rng))
    return [name for group in groups for (name, _, _) in group]


def run_suite(dtype=np.float32, seed: int = 20240817) -> list[CheckResult]:
    tol = TOL64 if np.dtype(dtype) == np.float64 else TOL32
    results = []
    with ad.precision(dtype):
        rng = np.random.default_rng(seed)
        groups = (_primitive_checks(rng), _loss_checks(rng), _composite_checks(rng))
        for group in groups:
            for name, loss_fn, wrt in group:
                err = compare_gradients(loss_fn, wrt)
                results.append(CheckResult(name, err, tol))
    return results
