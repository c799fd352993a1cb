"""Layered model graphs: the toy teacher, the upsampling generator, and the
tapped forward pass that exposes intermediate feature maps.

A ModelGraph is an ordered list of layers plus tap points. Quantized copies
share the same layer indices as their full-precision source: weight
quantization wraps a layer's weight tensor, activation quantization is an
attachment applied to the layer's output, so tap indices stay valid.
"""

from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ModelError, ShapeError
from .quantize import ActRangeTracker, FakeQuantParam, fake_quant, fake_quant_weight

_ACTIVATION_KINDS = ("batchnorm2d", "relu", "leaky_relu", "tanh", "fake_quant_activation")


class Layer:
    kind = "layer"

    def __init__(self):
        self.weight_quant: Optional[FakeQuantParam] = None
        self.act_quant_bits: Optional[int] = None
        self.act_tracker: Optional[ActRangeTracker] = None

    def forward(self, x: ad.Tensor, train: bool) -> ad.Tensor:
        raise NotImplementedError

    def named_params(self) -> Iterator[tuple[str, ad.Tensor]]:
        return iter(())

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        if self.act_tracker is not None:
            yield "act_tracker.running_max", np.array([self.act_tracker.running_max],
                                                      dtype=np.float32)

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        if name == "act_tracker.running_max" and self.act_tracker is not None:
            self.act_tracker.running_max = float(value[0])
            self.act_tracker._seen = True
        else:
            raise ModelError(f"unknown buffer {name!r} for layer kind {self.kind}")


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_ch, out_ch, kernel, stride=1, pad=0, weight=None, bias=None):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        if weight is None:
            weight = np.zeros((out_ch, in_ch, kernel, kernel))
        self.weight = ad.Tensor(weight, requires_grad=True)
        self.bias = None if bias is None else ad.Tensor(bias, requires_grad=True)

    def forward(self, x, train):
        w = fake_quant_weight(self.weight_quant) if self.weight_quant else self.weight
        y = ad.conv2d(x, w, self.stride, self.pad)
        return y + self.bias if self.bias is not None else y

    def named_params(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias


class ConvTranspose2d(Layer):
    kind = "conv2d_transpose"

    def __init__(self, in_ch, out_ch, kernel, stride=1, pad=0, weight=None, bias=None):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        if weight is None:
            weight = np.zeros((in_ch, out_ch, kernel, kernel))
        self.weight = ad.Tensor(weight, requires_grad=True)
        self.bias = None if bias is None else ad.Tensor(bias, requires_grad=True)

    def forward(self, x, train):
        w = fake_quant_weight(self.weight_quant) if self.weight_quant else self.weight
        y = ad.conv2d_transpose(x, w, self.stride, self.pad)
        return y + self.bias if self.bias is not None else y

    def named_params(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features, out_features, weight=None, bias=None):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        if weight is None:
            weight = np.zeros((in_features, out_features))
        self.weight = ad.Tensor(weight, requires_grad=True)
        self.bias = None if bias is None else ad.Tensor(bias, requires_grad=True)

    def forward(self, x, train):
        w = fake_quant_weight(self.weight_quant) if self.weight_quant else self.weight
        y = x @ w
        return y + self.bias if self.bias is not None else y

    def named_params(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias


class BatchNorm2d(Layer):
    kind = "batchnorm2d"

    def __init__(self, channels, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.gamma = ad.Tensor(np.ones(channels), requires_grad=True)
        self.beta = ad.Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=ad.default_dtype())
        self.running_var = np.ones(channels, dtype=ad.default_dtype())

    def forward(self, x, train):
        return ad.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, train, self.momentum)

    def named_params(self):
        yield "gamma", self.gamma
        yield "beta", self.beta

    def named_buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var
        yield from super().named_buffers()

    def load_buffer(self, name, value):
        if name == "running_mean":
            self.running_mean[...] = value
        elif name == "running_var":
            self.running_var[...] = value
        else:
            super().load_buffer(name, value)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        return ad.relu(x)


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train):
        return ad.leaky_relu(x, self.slope)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, train):
        return ad.tanh_(x)


class AvgPool2d(Layer):
    kind = "avgpool"

    def __init__(self, window=2):
        super().__init__()
        self.window = window

    def forward(self, x, train):
        return ad.avgpool2d(x, self.window)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train):
        return ad.flatten(x)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, target: Sequence[int]):
        super().__init__()
        self.target = tuple(target)

    def forward(self, x, train):
        return ad.reshape(x, (x.shape[0],) + self.target)


class FakeQuantActivation(Layer):
    """Standalone activation quantization node for hand-built graphs."""

    kind = "fake_quant_activation"

    def __init__(self, bits: int, tracker: Optional[ActRangeTracker] = None):
        super().__init__()
        self.bits = bits
        self.tracker = tracker if tracker is not None else ActRangeTracker()

    def forward(self, x, train):
        return fake_quant(x, self.bits, self.tracker)

    def named_buffers(self):
        yield "tracker.running_max", np.array([self.tracker.running_max], dtype=np.float32)

    def load_buffer(self, name, value):
        if name == "tracker.running_max":
            self.tracker.running_max = float(value[0])
            self.tracker._seen = True
        else:
            raise ModelError(f"unknown buffer {name!r} for layer kind {self.kind}")


class ModelGraph:
    """Sequential network with tap points for intermediate feature maps."""

    def __init__(self, layers: Sequence[Layer], tap_indices: Sequence[int] = (),
                 last_conv_index: Optional[int] = None):
        self.layers = list(layers)
        self.tap_indices = list(tap_indices)
        self.last_conv_index = last_conv_index
        self.mode = "train"
        self._validate()

    def _validate(self):
        n = len(self.layers)
        for a, b in zip(self.tap_indices, self.tap_indices[1:]):
            if a >= b:
                raise ModelError(f"tap indices must be strictly increasing, got {self.tap_indices}")
        for t in self.tap_indices:
            if not 0 <= t < n:
                raise ModelError(f"tap index {t} out of range for {n} layers")
        if self.last_conv_index is not None:
            if not 0 <= self.last_conv_index < n:
                raise ModelError(f"last_conv_index {self.last_conv_index} out of range")
            if self.layers[self.last_conv_index].kind not in ("conv2d", "conv2d_transpose"):
                raise ModelError("last_conv_index must refer to a convolution layer")

    @property
    def last_act_index(self) -> Optional[int]:
        """Index of the layer whose output is the last convolution's
        post-activation map (the convolution itself if nothing follows)."""
        if self.last_conv_index is None:
            return None
        i = self.last_conv_index
        while i + 1 < len(self.layers) and self.layers[i + 1].kind in _ACTIVATION_KINDS:
            i += 1
        return i

    def train(self) -> "ModelGraph":
        self.mode = "train"
        for layer in self.layers:
            for tr in _layer_trackers(layer):
                tr.unfreeze()
        return self

    def eval(self) -> "ModelGraph":
        self.mode = "eval"
        for layer in self.layers:
            for tr in _layer_trackers(layer):
                tr.freeze()
        return self

    def named_parameters(self) -> Iterator[tuple[str, ad.Tensor]]:
        for i, layer in enumerate(self.layers):
            for name, t in layer.named_params():
                yield f"layers.{i}.{name}", t

    def parameters(self) -> list[ad.Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, b in layer.named_buffers():
                yield f"layers.{i}.{name}", b

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        out, _, _ = forward_with_taps(self, x)
        return out


def _layer_trackers(layer: Layer):
    if layer.act_tracker is not None:
        yield layer.act_tracker
    if isinstance(layer, FakeQuantActivation):
        yield layer.tracker


def set_requires_grad(model: ModelGraph, flag: bool) -> None:
    for p in model.parameters():
        p.requires_grad = flag
        if not flag:
            p.grad = None


def forward_with_taps(model: ModelGraph, x: ad.Tensor):
    """Single forward pass returning (output, tapped feature maps, last
    convolution's post-activation map). All three share the active tape."""
    train = model.mode == "train"
    taps_at = set(model.tap_indices)
    last_at = model.last_act_index
    taps: dict[int, ad.Tensor] = {}
    last_act = None
    h = x
    for i, layer in enumerate(model.layers):
        try:
            h = layer.forward(h, train)
            if layer.act_quant_bits is not None:
                h = fake_quant(h, layer.act_quant_bits, layer.act_tracker)
        except ShapeError as exc:
            raise ModelError(f"layer {i} ({layer.kind}): {exc}") from exc
        if i in taps_at:
            taps[i] = h
        if i == last_at:
            last_act = h
    ordered = [taps[i] for i in model.tap_indices]
    for t in ordered:
        if t.ndim != 4:
            raise ModelError("tapped layers must produce 4-d feature maps")
    return h, ordered, last_act


# ---------------------------------------------------------------------------
# builders


def _he_conv(rng, out_ch, in_ch, k):
    std = np.sqrt(2.0 / (in_ch * k * k))
    return rng.normal(0.0, std, size=(out_ch, in_ch, k, k))


def build_teacher(num_classes: int, rng: np.random.Generator,
                  in_shape: tuple[int, int, int] = (3, 16, 16)) -> ModelGraph:
    """Small block CNN: three conv/BN/relu/pool blocks (16, 32, 64 channels),
    a final 64-channel conv+relu, then a linear head. Taps sit at the end of
    each of the four blocks."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    c, h, w = in_shape
    if h % 8 or w % 8:
        raise ConfigError(f"teacher input spatial size must be divisible by 8, got {h}x{w}")
    chans = [c, 16, 32, 64]
    layers: list[Layer] = []
    for i in range(3):
        layers += [
            Conv2d(chans[i], chans[i + 1], kernel=3, stride=1, pad=1,
                   weight=_he_conv(rng, chans[i + 1], chans[i], 3)),
            BatchNorm2d(chans[i + 1]),
            ReLU(),
            AvgPool2d(2),
        ]
    layers += [
        Conv2d(64, 64, kernel=3, stride=1, pad=1, weight=_he_conv(rng, 64, 64, 3),
               bias=np.zeros(64)),
        ReLU(),
        Flatten(),
    ]
    feat = 64 * (h // 8) * (w // 8)
    layers.append(Linear(feat, num_classes,
                         weight=rng.normal(0.0, np.sqrt(1.0 / feat), size=(feat, num_classes)),
                         bias=np.zeros(num_classes)))
    return ModelGraph(layers, tap_indices=[3, 7, 11, 13], last_conv_index=12)


class Generator(ModelGraph):
    """Noise-to-image network; output values lie in [-1, 1]."""

    def __init__(self, layers, noise_dim: int, out_shape: tuple[int, int, int]):
        super().__init__(layers, tap_indices=[], last_conv_index=None)
        self.noise_dim = noise_dim
        self.out_shape = out_shape


def build_generator(noise_dim: int, out_shape: tuple[int, int, int],
                    rng: np.random.Generator) -> Generator:
    """Project-and-upsample stack: linear to 128x(H/4)x(W/4), batch norm,
    two stride-2 transposed convolutions with BN + leaky relu, a 3x3
    convolution to the output channels, and tanh. Weights start from
    N(0, 0.02^2); BN scales from N(1, 0.02^2)."""
    if noise_dim < 1:
        raise ConfigError(f"noise_dim must be positive, got {noise_dim}")
    c, h, w = out_shape
    if c < 1 or h < 4 or w < 4 or h % 4 or w % 4:
        raise ConfigError(f"generator output spatial size must be a multiple of 4, got {out_shape}")
    base = 128
    h0, w0 = h // 4, w // 4
    std = 0.02

    def dcgan_bn(channels):
        bn = BatchNorm2d(channels)
        bn.gamma = ad.Tensor(rng.normal(1.0, std, size=channels), requires_grad=True)
        return bn

    layers: list[Layer] = [
        Linear(noise_dim, base * h0 * w0,
               weight=rng.normal(0.0, std, size=(noise_dim, base * h0 * w0))),
        Reshape((base, h0, w0)),
        dcgan_bn(base),
        ConvTranspose2d(base, base // 2, kernel=4, stride=2, pad=1,
                        weight=rng.normal(0.0, std, size=(base, base // 2, 4, 4))),
        dcgan_bn(base // 2),
        LeakyReLU(0.2),
        ConvTranspose2d(base // 2, base // 4, kernel=4, stride=2, pad=1,
                        weight=rng.normal(0.0, std, size=(base // 2, base // 4, 4, 4))),
        dcgan_bn(base // 4),
        LeakyReLU(0.2),
        Conv2d(base // 4, c, kernel=3, stride=1, pad=1,
               weight=rng.normal(0.0, std, size=(c, base // 4, 3, 3)), bias=np.zeros(c)),
        Tanh(),
    ]
    return Generator(layers, noise_dim, out_shape)
