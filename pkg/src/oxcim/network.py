"""Network descriptions and the exact digital forward pass.

A network is an ordered list of layers (conv / maxpool / dense / activation)
plus one trit weight tensor per parametric layer.  Convolutions execute as
matrix products through im2col lowering, which is also how they later land
on crossbar tiles: the lowered weight matrix is (k*k*in_ch) x out_ch and a
patch matrix of the input is multiplied against it.

Hidden pre-activations are integer popcounts with magnitude up to the
layer's fan-in, so before an activation they are divided by a fixed
per-layer scale of sqrt(fan_in), which keeps them on the unit-ish range the
ternary dead-band threshold r is defined on.  The binary activation is a
pure sign and does not care about the scale; the same scale choice feeds
the hardware gain calibration so the digital and analog paths agree.  The
scale carries a relative 2**-20 nudge: a perfectly square fan-in (e.g.
400) would otherwise put integer popcounts exactly on the dead-band edge
r * scale, where the analog path's last-ulp rounding could disagree with
the exact digital decision.

Grayscale inputs enter through thermometric encoding: channel k of a pixel
is set iff the pixel meets threshold k, giving 8 monotone binary channels
that map to +/-1 activations (0 -> -1) downstream.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .device import sigmoid_ideal
from .errors import ConfigError, DomainError, ShapeError
from .quant import Precision, TernaryTensor, act_binary, act_ternary

N_THERMO_CHANNELS = 8
# keeps integer popcounts strictly off the ternary dead-band boundary
SCALE_NUDGE = 1.0 + 2.0 ** -20
# Equally spaced at 32 except the top level, which saturates at 255 so the
# brightest pixel activates every channel.
DEFAULT_THERMO_THRESHOLDS = (32, 64, 96, 128, 160, 192, 224, 255)


@dataclass(frozen=True)
class ThermometricEncoder:
    channels: int = N_THERMO_CHANNELS
    thresholds: tuple = DEFAULT_THERMO_THRESHOLDS

    def __post_init__(self):
        if len(self.thresholds) != self.channels:
            raise ConfigError("need one threshold per channel")
        if any(a >= b for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ConfigError("thresholds must be strictly increasing")


def encode_thermometric(image, encoder=None):
    """Grayscale 2-D image (0..255) -> (channels, H, W) binary array.

    out[c, i, j] = 1 iff image[i, j] >= thresholds[c]; per pixel the code is
    monotone in c (a thermometer).
    """
    enc = encoder or ThermometricEncoder()
    img = np.asarray(image)
    if img.ndim != 2:
        raise ShapeError("expected a 2-D grayscale image")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 255:
        raise DomainError("pixel values must lie in [0, 255]")
    thr = np.asarray(enc.thresholds).reshape(-1, 1, 1)
    return (img[None, :, :] >= thr).astype(np.uint8)


def thermometric_trits(image, encoder=None):
    """Thermometric encoding mapped to +/-1 trit activations (0 -> -1)."""
    bits = encode_thermometric(image, encoder)
    return (bits.astype(np.int8) * 2 - 1)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool2D:
    size: int


@dataclass(frozen=True)
class Dense:
    out_units: int


@dataclass(frozen=True)
class Activation:
    kind: str  # 'binary' | 'ternary' | 'sigmoid_output'
    r: float = 0.5

    def __post_init__(self):
        if self.kind not in ("binary", "ternary", "sigmoid_output"):
            raise ConfigError(f"unknown activation kind {self.kind!r}")
        if self.kind == "ternary" and not (self.r > 0.0):
            raise ConfigError("ternary activation needs r > 0")


def im2col(x, kernel, stride=1):
    """(C, H, W) -> (P, C*k*k) patch matrix, P ordered row-major over output.

    Patch element order is (channel, kernel row, kernel col), matching
    conv_weight_matrix below.
    """
    c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"kernel {kernel} exceeds input {h}x{w}")
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    win = win[:, ::stride, ::stride, :, :]  # (C, oh, ow, k, k)
    _, oh, ow, _, _ = win.shape
    return win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kernel * kernel), (oh, ow)


def conv_weight_matrix(w):
    """(O, C, k, k) conv weights -> (C*k*k, O) lowered matrix."""
    o = w.shape[0]
    return w.reshape(o, -1).T


def conv_output_shape(input_shape, conv):
    c, h, w = input_shape
    oh = (h - conv.kernel) // conv.stride + 1
    ow = (w - conv.kernel) // conv.stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv kernel {conv.kernel} does not fit input {input_shape}")
    return (conv.out_channels, oh, ow)


def lower_conv_to_matmul(conv, input_shape):
    """Lowered weight-matrix dims and the patch-extraction plan for a conv."""
    c, h, w = input_shape
    out_shape = conv_output_shape(input_shape, conv)
    rows = c * conv.kernel * conv.kernel
    return {
        "weight_matrix_shape": (rows, conv.out_channels),
        "patch_count": out_shape[1] * out_shape[2],
        "output_shape": out_shape,
        "kernel": conv.kernel,
        "stride": conv.stride,
    }


def maxpool(x, size):
    """Non-overlapping max pool over trit maps; order is -1 < 0 < +1."""
    c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"pool size {size} does not divide {h}x{w}")
    return x.reshape(c, h // size, size, w // size, size).max(axis=(2, 4))


# ---------------------------------------------------------------------------
# Network description
# ---------------------------------------------------------------------------


@dataclass
class NetworkDescription:
    precision: Precision
    input_shape: tuple          # (C, H, W)
    layers: list = field(default_factory=list)
    weights: list = field(default_factory=list)  # parallel to layers; None for non-parametric

    def __post_init__(self):
        if len(self.weights) != len(self.layers):
            raise ConfigError("weights list must parallel the layer list")
        self.validate_chain()

    def validate_chain(self):
        """Walk the layer chain, checking shapes, weights and activation order.

        Returns the output length.  Raises if anything is inconsistent.
        """
        shape = tuple(self.input_shape)
        pending_act = False
        fan_in = None
        self._scales = [None] * len(self.layers)
        for i, layer in enumerate(self.layers):
            w = self.weights[i]
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: conv needs 3-D input, got {shape}")
                if pending_act:
                    raise ConfigError(f"layer {i}: missing activation before conv")
                fan_in = shape[0] * layer.kernel * layer.kernel
                self._check_weights(i, w, (layer.out_channels, shape[0],
                                           layer.kernel, layer.kernel))
                shape = conv_output_shape(shape, layer)
                pending_act = True
            elif isinstance(layer, Dense):
                if pending_act:
                    raise ConfigError(f"layer {i}: missing activation before dense")
                fan_in = int(np.prod(shape))
                self._check_weights(i, w, (fan_in, layer.out_units))
                shape = (layer.out_units,)
                pending_act = True
            elif isinstance(layer, Activation):
                if not pending_act:
                    raise ConfigError(f"layer {i}: activation without a preceding "
                                      "conv/dense")
                if w is not None:
                    raise ConfigError(f"layer {i}: activation carries no weights")
                self._scales[i] = float(np.sqrt(fan_in)) * SCALE_NUDGE
                pending_act = False
                if layer.kind == "binary" and self.precision is not Precision.BINARY:
                    raise ConfigError(f"layer {i}: binary activation in a "
                                      f"{self.precision.value} net")
                if layer.kind == "ternary" and self.precision is not Precision.TERNARY:
                    raise ConfigError(f"layer {i}: ternary activation in a "
                                      f"{self.precision.value} net")
            elif isinstance(layer, MaxPool2D):
                if pending_act:
                    raise ConfigError(f"layer {i}: missing activation before pool")
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: pool needs 3-D input, got {shape}")
                if shape[1] % layer.size or shape[2] % layer.size:
                    raise ShapeError(f"layer {i}: pool {layer.size} does not divide "
                                     f"{shape[1]}x{shape[2]}")
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            else:
                raise ConfigError(f"layer {i}: unknown layer {layer!r}")
        if pending_act:
            raise ConfigError("network must end with an activation")
        if not self.layers or not isinstance(self.layers[-1], Activation) \
                or self.layers[-1].kind != "sigmoid_output":
            raise ConfigError("network must end with a sigmoid_output activation")
        if len(shape) != 1:
            raise ShapeError(f"network output must be a vector, got {shape}")
        return shape[0]

    def _check_weights(self, i, w, expected_shape):
        if w is None:
            return  # architecture-only description; require_weights() gates use
        if not isinstance(w, TernaryTensor):
            raise ConfigError(f"layer {i}: weights must be a TernaryTensor")
        if w.precision is not self.precision:
            raise ConfigError(f"layer {i}: weight precision {w.precision.value} "
                              f"!= network precision {self.precision.value}")
        if tuple(w.shape) != tuple(expected_shape):
            raise ShapeError(f"layer {i}: weight shape {w.shape} != {expected_shape}")

    def require_weights(self):
        missing = [i for i in self.parametric_indices() if self.weights[i] is None]
        if missing:
            raise ConfigError(f"layers {missing} have no trained weights")

    def scale_for(self, act_index):
        """Pre-activation scale (sqrt fan-in) for the activation at act_index."""
        self.validate_chain()
        s = self._scales[act_index]
        if s is None:
            raise ConfigError(f"layer {act_index} is not an activation")
        return s

    def parametric_indices(self):
        return [i for i, l in enumerate(self.layers)
                if isinstance(l, (Conv2D, Dense))]

    def n_outputs(self):
        return self.validate_chain()

    def total_weight_count(self):
        return sum(self.weights[i].size for i in self.parametric_indices())


def hidden_activation_kind(precision):
    return "binary" if precision is Precision.BINARY else "ternary"


def lenet(precision, r=0.5, input_shape=(N_THERMO_CHANNELS, 32, 32), weights=None):
    """The LeNet-style reference architecture used throughout this project.

    conv(6,5x5) -> pool2 -> conv(16,5x5) -> pool2 -> dense 120 -> dense 84
    -> dense 10, hidden activations per the precision, sigmoid output.
    """
    hid = hidden_activation_kind(precision)
    layers = [
        Conv2D(6, 5), Activation(hid, r), MaxPool2D(2),
        Conv2D(16, 5), Activation(hid, r), MaxPool2D(2),
        Dense(120), Activation(hid, r),
        Dense(84), Activation(hid, r),
        Dense(10), Activation("sigmoid_output"),
    ]
    if weights is None:
        weights = [None] * len(layers)
    return NetworkDescription(precision, input_shape, layers, weights)


# ---------------------------------------------------------------------------
# Exact digital forward pass
# ---------------------------------------------------------------------------


def _apply_hidden_activation(layer, u, precision):
    out = act_binary(u) if layer.kind == "binary" else act_ternary(u, layer.r)
    allowed = precision.allowed_values
    if not np.isin(out, allowed).all():
        raise DomainError(f"activation produced values outside {allowed}")
    return out


def forward_ideal(net, x):
    """Digital-oracle forward pass: exact integer popcounts everywhere.

    x is a trit array matching net.input_shape.  Returns the sigmoid output
    scores (floats in (0,1)); the predicted class is argmax with ties going
    to the lowest index.
    """
    arr = x.data if isinstance(x, TernaryTensor) else np.asarray(x, dtype=np.int8)
    if tuple(arr.shape) != tuple(net.input_shape):
        raise ShapeError(f"input shape {arr.shape} != {net.input_shape}")
    if not np.isin(arr, net.precision.allowed_values).all():
        raise DomainError("input holds values outside the network precision")
    net.require_weights()
    net.validate_chain()
    val = arr
    pre = None          # pending pre-activation popcounts
    pre_spatial = None  # (oh, ow) if the popcounts came from a conv
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Conv2D):
            patches, (oh, ow) = im2col(val, layer.kernel, layer.stride)
            wmat = conv_weight_matrix(net.weights[i].data)
            # float64 matmul of small integers is exact and fast
            pre = patches.astype(np.float64) @ wmat.astype(np.float64)
            pre_spatial = (oh, ow)
        elif isinstance(layer, Dense):
            flat = val.reshape(-1).astype(np.float64)
            pre = flat @ net.weights[i].data.astype(np.float64)
            pre_spatial = None
        elif isinstance(layer, Activation):
            scale = net._scales[i]
            if layer.kind == "sigmoid_output":
                return sigmoid_ideal(pre / scale)
            act = _apply_hidden_activation(layer, pre / scale, net.precision)
            if pre_spatial is not None:
                oh, ow = pre_spatial
                val = act.reshape(oh, ow, -1).transpose(2, 0, 1)
            else:
                val = act
            pre = None
        elif isinstance(layer, MaxPool2D):
            val = maxpool(val, layer.size)
    raise ConfigError("network ended without a sigmoid_output activation")


def predict_ideal(net, x):
    return int(np.argmax(forward_ideal(net, x)))
