"""Small numpy CNN stack with hand-written reverse mode.

Activations are plain ``numpy`` arrays in NCHW layout. Parameters live in a
flat ``dict`` keyed ``"<layer>.<name>"`` (e.g. ``"0.W"``, ``"0.b"``) so the
optimizer and checkpoint code can treat every model the same way.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError


# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class MaxPool2D:
    size: int = 2


@dataclass(frozen=True)
class AvgPool2D:
    size: int = 2


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5


@dataclass(frozen=True)
class Flatten:
    pass


PARAM_LAYERS = (Conv2D, Dense)


def _out_shape(layer, shape):
    if isinstance(layer, Conv2D):
        if len(shape) != 3:
            raise ShapeError(f"Conv2D needs (C, H, W) input, got {shape}")
        c, h, w = shape
        ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
        wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {layer.kernel} too large for {shape}")
        return (layer.filters, ho, wo)
    if isinstance(layer, (MaxPool2D, AvgPool2D)):
        if len(shape) != 3:
            raise ShapeError(f"pooling needs (C, H, W) input, got {shape}")
        c, h, w = shape
        if h < layer.size or w < layer.size:
            raise ShapeError(f"pool size {layer.size} too large for {shape}")
        return (c, h // layer.size, w // layer.size)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ShapeError(f"Dense needs flat input, got {shape}; add Flatten")
        return (layer.units,)
    return shape


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    num_classes: int
    name: str = "net"
    shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = [tuple(self.input_shape)]
        for layer in self.layers:
            shapes.append(_out_shape(layer, shapes[-1]))
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(f"network ends in {shapes[-1]}, expected ({self.num_classes},)")
        object.__setattr__(self, "shapes", tuple(shapes))

    def param_shapes(self) -> dict[str, tuple]:
        out = {}
        for i, layer in enumerate(self.layers):
            in_shape = self.shapes[i]
            if isinstance(layer, Conv2D):
                out[f"{i}.W"] = (layer.filters, in_shape[0], layer.kernel, layer.kernel)
                out[f"{i}.b"] = (layer.filters,)
            elif isinstance(layer, Dense):
                out[f"{i}.W"] = (in_shape[0], layer.units)
                out[f"{i}.b"] = (layer.units,)
        return out


def count_parameters(net: NetworkSpec) -> dict[str, int]:
    """Trainable parameters per layer, keyed ``"<index>:<LayerKind>"``."""
    counts = {}
    shapes = net.param_shapes()
    for i, layer in enumerate(net.layers):
        if isinstance(layer, PARAM_LAYERS):
            counts[f"{i}:{type(layer).__name__}"] = (
                int(np.prod(shapes[f"{i}.W"])) + int(np.prod(shapes[f"{i}.b"])))
    return counts


def init_params(net: NetworkSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    params = {}
    for key, shape in net.param_shapes().items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape)
            continue
        if len(shape) == 4:
            rf = shape[2] * shape[3]
            fan_in, fan_out = shape[1] * rf, shape[0] * rf
        else:
            fan_in, fan_out = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[key] = rng.uniform(-limit, limit, size=shape)
    return params


# ---------------------------------------------------------------------------
# Teachers
# ---------------------------------------------------------------------------

def build_lenet_teacher(num_classes: int = 10, input_shape=(1, 28, 28)) -> NetworkSpec:
    layers = (
        Conv2D(6, 5), Tanh(), AvgPool2D(2),
        Conv2D(16, 5), Tanh(), AvgPool2D(2),
        Flatten(),
        Dense(120), Tanh(),
        Dense(84), Tanh(),
        Dense(num_classes),
    )
    return NetworkSpec(tuple(input_shape), layers, num_classes, name="lenet")


def build_alexnet_teacher(num_classes: int = 10, input_shape=(1, 28, 28),
                          width: float = 1.0, dropout: float = 0.5) -> NetworkSpec:
    """Three-conv AlexNet variant for 28x28 inputs.

    ``width`` scales every channel and hidden size; ``width=1`` is the
    full-size network, smaller values give a desk-scale variant.
    """
    def w(n):
        return max(1, int(round(n * width)))

    layers = (
        Conv2D(w(64), 3, padding=1), ReLU(), MaxPool2D(2),
        Conv2D(w(192), 3, padding=1), ReLU(), MaxPool2D(2),
        Conv2D(w(384), 3, padding=1), ReLU(),
        Flatten(),
        Dropout(dropout), Dense(w(4096)), ReLU(),
        Dropout(dropout), Dense(w(4096)), ReLU(),
        Dense(num_classes),
    )
    return NetworkSpec(tuple(input_shape), layers, num_classes, name="alexnet")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _conv_windows(x, layer):
    if layer.padding:
        p = layer.padding
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    k, s = layer.kernel, layer.stride
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    return x.shape, win


def _conv_forward(x, W, b, layer):
    padded_shape, win = _conv_windows(x, layer)
    out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # (B, Ho, Wo, F)
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out), (padded_shape, win)


def _conv_backward(dout, W, cache, layer):
    padded_shape, win = cache
    dW = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # (F, C, k, k)
    db = dout.sum(axis=(0, 2, 3))
    k, s = layer.kernel, layer.stride
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros(padded_shape)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(dout, W[:, :, i, j], axes=([1], [0]))  # (B, Ho, Wo, C)
            dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += contrib.transpose(0, 3, 1, 2)
    p = layer.padding
    if p:
        dxp = dxp[:, :, p:-p, p:-p]
    return dxp, dW, db


def _pool_view(x, size):
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    xc = x[:, :, :ho * size, :wo * size]
    return xc.reshape(b, c, ho, size, wo, size)


def _pool_forward(x, layer):
    v = _pool_view(x, layer.size)
    if isinstance(layer, AvgPool2D):
        return v.mean(axis=(3, 5)), x.shape
    out = v.max(axis=(3, 5))
    return out, (x.shape, v, out)


def _pool_backward(dout, layer, cache):
    s = layer.size
    if isinstance(layer, AvgPool2D):
        shape = cache
        g = np.repeat(np.repeat(dout / (s * s), s, axis=2), s, axis=3)
    else:
        shape, v, out = cache
        mask = v == out[:, :, :, None, :, None]
        # ties: keep the first maximum only
        flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(*out.shape, s * s)
        first = np.zeros_like(flat)
        np.put_along_axis(first, flat.argmax(axis=-1)[..., None], True, axis=-1)
        first = first.reshape(*out.shape, s, s).transpose(0, 1, 2, 4, 3, 5)
        g = (first * dout[:, :, :, None, :, None]).reshape(
            out.shape[0], out.shape[1], out.shape[2] * s, out.shape[3] * s)
    dx = np.zeros(shape)
    dx[:, :, :g.shape[2], :g.shape[3]] = g
    return dx


def softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: NetworkSpec, params: dict, batch: np.ndarray, *, training: bool = False,
            rng: np.random.Generator | None = None, return_cache: bool = False):
    """Logits of shape ``(B, C)``; dropout is active only when ``training``."""
    x = np.asarray(batch, dtype=float)
    if x.shape[1:] != net.shapes[0]:
        raise ShapeError(f"batch shape {x.shape[1:]} does not match network input {net.shapes[0]}")
    if training and rng is None:
        rng = np.random.default_rng()
    caches = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Conv2D):
            x, c = _conv_forward(x, params[f"{i}.W"], params[f"{i}.b"], layer)
        elif isinstance(layer, Dense):
            c = x
            x = x @ params[f"{i}.W"] + params[f"{i}.b"]
        elif isinstance(layer, (MaxPool2D, AvgPool2D)):
            x, c = _pool_forward(x, layer)
        elif isinstance(layer, ReLU):
            c = x > 0
            x = x * c
        elif isinstance(layer, Tanh):
            x = np.tanh(x)
            c = x
        elif isinstance(layer, Softmax):
            x = softmax_rows(x)
            c = x
        elif isinstance(layer, Flatten):
            c = x.shape
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Dropout):
            if training and layer.rate > 0:
                c = (rng.random(x.shape) >= layer.rate) / (1.0 - layer.rate)
                x = x * c
            else:
                c = None
        else:
            raise ConfigError(f"unsupported layer {layer!r}")
        caches.append(c)
    return (x, caches) if return_cache else x


def backward(net: NetworkSpec, params: dict, caches: list, dlogits: np.ndarray):
    """Return ``(param_grads, input_grad)`` for the cotangent ``dlogits``."""
    grads = {}
    g = np.asarray(dlogits, dtype=float)
    for i in range(len(net.layers) - 1, -1, -1):
        layer, c = net.layers[i], caches[i]
        if isinstance(layer, Conv2D):
            g, grads[f"{i}.W"], grads[f"{i}.b"] = _conv_backward(g, params[f"{i}.W"], c, layer)
        elif isinstance(layer, Dense):
            grads[f"{i}.W"] = c.T @ g
            grads[f"{i}.b"] = g.sum(axis=0)
            g = g @ params[f"{i}.W"].T
        elif isinstance(layer, (MaxPool2D, AvgPool2D)):
            g = _pool_backward(g, layer, c)
        elif isinstance(layer, ReLU):
            g = g * c
        elif isinstance(layer, Tanh):
            g = g * (1.0 - c * c)
        elif isinstance(layer, Softmax):
            g = c * (g - np.sum(g * c, axis=-1, keepdims=True))
        elif isinstance(layer, Flatten):
            g = g.reshape(c)
        elif isinstance(layer, Dropout):
            if c is not None:
                g = g * c
    return grads, g


def predict(net: NetworkSpec, params: dict, batch: np.ndarray, batch_size: int = 500) -> np.ndarray:
    """Inference-mode logits, evaluated in chunks."""
    chunks = [forward(net, params, batch[i:i + batch_size])
              for i in range(0, len(batch), batch_size)]
    return np.concatenate(chunks, axis=0)
