"""Network layers, forward/backward passes, and SGD-with-momentum training.

Layer stacks are described by small spec dataclasses (Conv, ReLU, MaxPool,
FullyConnected, Softmax) and realized by :class:`Network`, which owns the
parameter tensors. The functional ops at module level accept either a single
sample or a leading batch axis; Network always works batched internally.

Checkpoints are written with a versioned magic string followed by a JSON
header (architecture plus optional centering info) and the parameter tensors
in layer order.
"""

import json
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from attrivis import _kernels
from attrivis.errors import (
    ConfigError,
    DegenerateLabels,
    EmptyDataset,
    InvalidShape,
    IoError,
    ShapeMismatch,
)
from attrivis.seeding import derive_seed
from attrivis.tensor import Tensor, read_tensor, write_tensor

NET_MAGIC = b"ATTRIVIS-NET-v1\n"


# ---------------------------------------------------------------------------
# layer specs

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel_size: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.out_channels < 1 or self.kernel_size < 1 or self.stride < 1:
            raise InvalidShape("conv out_channels, kernel_size and stride must be >= 1")
        if self.pad < 0:
            raise InvalidShape("conv pad must be >= 0")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int
    stride: int

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise InvalidShape("pool window and stride must be >= 1")


@dataclass(frozen=True)
class FullyConnected:
    out_units: int

    def __post_init__(self):
        if self.out_units < 1:
            raise InvalidShape("fully connected layer needs out_units >= 1")


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Union[Conv, ReLU, MaxPool, FullyConnected, Softmax]

_KIND_NAMES = {Conv: "conv", ReLU: "relu", MaxPool: "maxpool",
               FullyConnected: "fc", Softmax: "softmax"}


def layer_to_dict(spec: LayerSpec) -> dict:
    d = {"kind": _KIND_NAMES[type(spec)]}
    d.update(vars(spec))
    return d


def layer_from_dict(d: dict) -> LayerSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    for cls, name in _KIND_NAMES.items():
        if name == kind:
            return cls(**d)
    raise IoError(f"unknown layer kind in checkpoint header: {kind!r}")


def layer_output_shapes(input_shape, layers):
    """Walk the stack symbolically, returning the output shape of each layer.

    Raises InvalidShape when a layer cannot be applied at its position
    (pool window larger than the plane, conv output collapsing to nothing,
    softmax on fewer than 2 units or before the end of the stack).
    """
    shape = tuple(int(s) for s in input_shape)
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise InvalidShape(f"input shape must be (channels, height, width), got {shape}")
    shapes = []
    for pos, spec in enumerate(layers):
        if isinstance(spec, Conv):
            if len(shape) != 3:
                raise InvalidShape("conv layer needs a (c, h, w) input")
            c, h, w = shape
            oh = (h + 2 * spec.pad - spec.kernel_size) // spec.stride + 1
            ow = (w + 2 * spec.pad - spec.kernel_size) // spec.stride + 1
            if oh < 1 or ow < 1:
                raise InvalidShape(
                    f"conv kernel {spec.kernel_size} with pad {spec.pad} does not fit "
                    f"a {h}x{w} input"
                )
            shape = (spec.out_channels, oh, ow)
        elif isinstance(spec, MaxPool):
            if len(shape) != 3:
                raise InvalidShape("maxpool layer needs a (c, h, w) input")
            c, h, w = shape
            if spec.window > h or spec.window > w:
                raise InvalidShape(f"pool window {spec.window} exceeds {h}x{w} input")
            shape = (c, (h - spec.window) // spec.stride + 1,
                     (w - spec.window) // spec.stride + 1)
        elif isinstance(spec, FullyConnected):
            shape = (spec.out_units,)
        elif isinstance(spec, Softmax):
            n = int(np.prod(shape))
            if n < 2:
                raise InvalidShape("softmax needs at least 2 input units")
            if pos != len(layers) - 1:
                raise InvalidShape("softmax must be the terminal layer")
            shape = (n,)
        elif isinstance(spec, ReLU):
            pass
        else:
            raise InvalidShape(f"unknown layer spec {spec!r}")
        shapes.append(shape)
    return shapes


# ---------------------------------------------------------------------------
# functional ops

def _batched(x, sample_ndim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == sample_ndim:
        return np.ascontiguousarray(x)[None], True
    if x.ndim == sample_ndim + 1:
        return np.ascontiguousarray(x), False
    raise InvalidShape(f"expected a {sample_ndim}-d sample or a batch, got ndim {x.ndim}")


def conv_forward(x, weights, bias, stride=1, pad=0):
    """Cross-correlate x with the filter bank; zero padding, bias per channel."""
    xb, squeeze = _batched(x, 3)
    w = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    b = np.ascontiguousarray(np.asarray(bias, dtype=np.float64))
    if w.ndim != 4 or b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ShapeMismatch(f"bad filter bank shapes {w.shape} / {b.shape}")
    if xb.shape[1] != w.shape[1]:
        raise ShapeMismatch(
            f"input has {xb.shape[1]} channels but filters expect {w.shape[1]}"
        )
    oh = (xb.shape[2] + 2 * pad - w.shape[2]) // stride + 1
    ow = (xb.shape[3] + 2 * pad - w.shape[3]) // stride + 1
    if oh < 1 or ow < 1:
        raise InvalidShape("convolution output would be empty")
    out = _kernels.conv_forward(xb, w, b, int(stride), int(pad))
    return out[0] if squeeze else out


def conv_backward(grad_out, cached_input, weights, stride=1, pad=0):
    gb_, squeeze = _batched(grad_out, 3)
    xb, _ = _batched(cached_input, 3)
    w = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    expect = conv_output_shape(xb.shape[1:], w.shape, stride, pad)
    if gb_.shape[1:] != expect or gb_.shape[0] != xb.shape[0]:
        raise ShapeMismatch(
            f"grad_out shape {gb_.shape[1:]} does not match conv output {expect}"
        )
    gx, gw, gbias = _kernels.conv_backward(gb_, xb, w, int(stride), int(pad))
    return (gx[0] if squeeze else gx), gw, gbias


def conv_output_shape(input_shape, weight_shape, stride, pad):
    c, h, w = input_shape
    co, ci, kh, kw = weight_shape
    if c != ci:
        raise ShapeMismatch(f"input has {c} channels but filters expect {ci}")
    return (co, (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1)


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, cached_x):
    grad_out = np.asarray(grad_out, dtype=np.float64)
    cached_x = np.asarray(cached_x, dtype=np.float64)
    if grad_out.shape != cached_x.shape:
        raise ShapeMismatch("relu grad and cached input shapes differ")
    return np.where(cached_x > 0, grad_out, 0.0)


def maxpool_forward(x, window, stride):
    """Per-window maximum plus switches: the flat row*width+col input index of
    each maximum, lowest index winning ties."""
    xb, squeeze = _batched(x, 3)
    if window > xb.shape[2] or window > xb.shape[3]:
        raise InvalidShape(
            f"pool window {window} exceeds {xb.shape[2]}x{xb.shape[3]} input"
        )
    out, switches = _kernels.maxpool_forward(xb, int(window), int(stride))
    if squeeze:
        return out[0], switches[0]
    return out, switches


def maxpool_backward(grad_out, switches, in_h, in_w):
    gb_, squeeze = _batched(grad_out, 3)
    sw = np.ascontiguousarray(np.asarray(switches, dtype=np.int64))
    if sw.ndim == 3:
        sw = sw[None]
    if sw.shape != gb_.shape:
        raise ShapeMismatch("switch record shape does not match grad_out")
    out = _kernels.maxpool_scatter(gb_, sw, int(in_h), int(in_w))
    return out[0] if squeeze else out


def fc_forward(x, weights, bias):
    xb, squeeze = _batched(x, 1)
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if w.ndim != 2 or xb.shape[1] != w.shape[1]:
        raise ShapeMismatch(
            f"fc input length {xb.shape[1]} does not match weight shape {w.shape}"
        )
    out = xb @ w.T + b
    return out[0] if squeeze else out


def fc_backward(grad_out, cached_x, weights):
    gb_, squeeze = _batched(grad_out, 1)
    xb, _ = _batched(cached_x, 1)
    w = np.asarray(weights, dtype=np.float64)
    if gb_.shape[1] != w.shape[0] or xb.shape[1] != w.shape[1]:
        raise ShapeMismatch("fc backward shapes inconsistent with weights")
    gx = gb_ @ w
    gw = gb_.T @ xb
    gbias = gb_.sum(axis=0)
    return (gx[0] if squeeze else gx), gw, gbias


def softmax(logits):
    xb, squeeze = _batched(logits, 1)
    if xb.shape[1] < 2:
        raise InvalidShape("softmax needs at least 2 logits")
    shifted = xb - xb.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, grad_logits); the gradient already includes the 1/batch
    factor, so it feeds the backward pass directly.
    """
    lb, _ = _batched(logits, 1)
    y = np.asarray(labels)
    if y.shape != (lb.shape[0],):
        raise ShapeMismatch("one label per row of logits required")
    shifted = lb - lb.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(lb.shape[0]), y]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    grad = probs.copy()
    grad[np.arange(lb.shape[0]), y] -= 1.0
    return loss, grad / lb.shape[0]


# ---------------------------------------------------------------------------
# the network

@dataclass
class ForwardCache:
    """Everything the backward pass and the deconvolution pass need.

    inputs[i] / outputs[i] are the batched tensors entering and leaving
    layer i; switches[i] is present for MaxPool layers only.
    """
    inputs: list
    outputs: list
    switches: dict


class Network:
    """An ordered layer stack with its parameters.

    Parameters live in ``params``, a list aligned with ``layers``; entries
    are dicts with "w" and "b" for Conv and FullyConnected layers and None
    otherwise. Until :meth:`init_params` (or a checkpoint load) fills them
    in, the network cannot run.
    """

    def __init__(self, input_shape, layers):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise InvalidShape("network must end in a softmax layer")
        self.shapes = layer_output_shapes(self.input_shape, self.layers)
        self.params = [None] * len(self.layers)

    # -- parameters ---------------------------------------------------------

    def init_params(self, seed: int):
        """Uniform init in +-sqrt(6/(fan_in+fan_out)), zero biases, seeded."""
        in_shape = self.input_shape
        for i, spec in enumerate(self.layers):
            if isinstance(spec, Conv):
                ci = in_shape[0]
                k = spec.kernel_size
                fan_in = ci * k * k
                fan_out = spec.out_channels * k * k
                rng = np.random.default_rng(derive_seed(seed, "init", i))
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                self.params[i] = {
                    "w": rng.uniform(-limit, limit, (spec.out_channels, ci, k, k)),
                    "b": np.zeros(spec.out_channels),
                }
            elif isinstance(spec, FullyConnected):
                fan_in = int(np.prod(in_shape))
                fan_out = spec.out_units
                rng = np.random.default_rng(derive_seed(seed, "init", i))
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                self.params[i] = {
                    "w": rng.uniform(-limit, limit, (fan_out, fan_in)),
                    "b": np.zeros(fan_out),
                }
            in_shape = self.shapes[i]
        return self

    def param_layers(self):
        return [i for i, p in enumerate(self.params) if p is not None]

    # -- running ------------------------------------------------------------

    def forward_batch(self, images: Tensor):
        """Run a (N, C, H, W) batch, returning (probabilities, ForwardCache)."""
        x = np.ascontiguousarray(np.asarray(images, dtype=np.float64))
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatch(
                f"batch shape {x.shape} does not match input {self.input_shape}"
            )
        inputs, outputs, switches = [], [], {}
        for i, spec in enumerate(self.layers):
            inputs.append(x)
            if isinstance(spec, Conv):
                p = self._need_params(i)
                x = _kernels.conv_forward(x, p["w"], p["b"], spec.stride, spec.pad)
            elif isinstance(spec, ReLU):
                x = np.maximum(x, 0.0)
            elif isinstance(spec, MaxPool):
                x, sw = _kernels.maxpool_forward(x, spec.window, spec.stride)
                switches[i] = sw
            elif isinstance(spec, FullyConnected):
                p = self._need_params(i)
                x = x.reshape(x.shape[0], -1) @ p["w"].T + p["b"]
            elif isinstance(spec, Softmax):
                x = softmax(x)
            outputs.append(x)
        return x, ForwardCache(inputs, outputs, switches)

    def forward(self, image: Tensor):
        """Single-image forward: (probabilities, switch list, ForwardCache)."""
        img = np.asarray(image, dtype=np.float64)
        if img.shape != self.input_shape:
            raise ShapeMismatch(
                f"image shape {img.shape} does not match input {self.input_shape}"
            )
        probs, cache = self.forward_batch(img[None])
        sw = [cache.switches[i][0] for i in sorted(cache.switches)]
        return probs[0], sw, cache

    def backward_batch(self, cache: ForwardCache, grad_logits):
        """Gradients for every parameter given d(loss)/d(logits).

        Returns a list aligned with layers: None for parameterless layers,
        {"w": gw, "b": gb} otherwise.
        """
        grads = [None] * len(self.layers)
        g = np.asarray(grad_logits, dtype=np.float64)
        for i in range(len(self.layers) - 2, -1, -1):
            spec = self.layers[i]
            x_in = cache.inputs[i]
            if isinstance(spec, Conv):
                g = np.ascontiguousarray(g)
                gx, gw, gb = _kernels.conv_backward(g, x_in, self.params[i]["w"],
                                                    spec.stride, spec.pad)
                grads[i] = {"w": gw, "b": gb}
                g = gx
            elif isinstance(spec, ReLU):
                g = np.where(x_in > 0, g, 0.0)
            elif isinstance(spec, MaxPool):
                g = _kernels.maxpool_scatter(np.ascontiguousarray(g),
                                             cache.switches[i],
                                             x_in.shape[2], x_in.shape[3])
            elif isinstance(spec, FullyConnected):
                flat = x_in.reshape(x_in.shape[0], -1)
                w = self.params[i]["w"]
                grads[i] = {"w": g.T @ flat, "b": g.sum(axis=0)}
                g = (g @ w).reshape(x_in.shape)
        return grads

    def _need_params(self, i):
        p = self.params[i]
        if p is None:
            raise ConfigError(
                f"layer {i} has no parameters; call init_params or load a checkpoint"
            )
        return p


def forward(net: Network, image: Tensor):
    return net.forward(image)


def build_network(input_shape=(3, 60, 60), conv_channels=(16, 32, 64),
                  kernel_size=5, pool_window=2, pool_stride=2,
                  fc_units=256, classes=2, pad=None) -> Network:
    """The standard stack: (Conv, ReLU, MaxPool) x 3, FC, ReLU, FC, Softmax."""
    if pad is None:
        pad = kernel_size // 2
    layers = []
    for ch in conv_channels:
        layers += [Conv(ch, kernel_size, stride=1, pad=pad), ReLU(),
                   MaxPool(pool_window, pool_stride)]
    layers += [FullyConnected(fc_units), ReLU(), FullyConnected(classes), Softmax()]
    return Network(input_shape, layers)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 60
    weight_decay: float = 0.001
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not (0 <= self.momentum < 1):
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


def train(net: Network, dataset: Tensor, labels, config: TrainConfig,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> Network:
    """SGD with momentum on softmax cross-entropy.

    Update rule per parameter: v <- momentum*v - lr*(grad + weight_decay*w),
    then w <- w + v. Weight decay is applied to weights only, never biases.
    Epoch shuffling is driven entirely by config.seed; the last mini-batch
    keeps its natural (smaller) size. The network is updated in place and
    returned.
    """
    x = np.ascontiguousarray(np.asarray(dataset, dtype=np.float64))
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if x.ndim != 4 or x.shape[1:] != net.input_shape:
        raise ShapeMismatch(
            f"dataset shape {x.shape} does not match input {net.input_shape}"
        )
    if y.shape != (x.shape[0],):
        raise ShapeMismatch("need exactly one label per image")
    if not np.isin(y, (0, 1)).all():
        raise DegenerateLabels("training labels must be 0 or 1")
    y = y.astype(np.int64)

    velocity = {i: {"w": np.zeros_like(net.params[i]["w"]),
                    "b": np.zeros_like(net.params[i]["b"])}
                for i in net.param_layers()}

    n = x.shape[0]
    for epoch in range(config.epochs):
        order = np.random.default_rng(
            derive_seed(config.seed, "epoch", epoch)).permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            _, cache = net.forward_batch(xb)
            logits = cache.inputs[-1]
            loss, dlogits = softmax_cross_entropy(logits, yb)
            grads = net.backward_batch(cache, dlogits)
            for i in net.param_layers():
                p, v, g = net.params[i], velocity[i], grads[i]
                v["w"] = config.momentum * v["w"] - config.learning_rate * (
                    g["w"] + config.weight_decay * p["w"])
                v["b"] = config.momentum * v["b"] - config.learning_rate * g["b"]
                p["w"] = p["w"] + v["w"]
                p["b"] = p["b"] + v["b"]
            total += loss * len(idx)
            seen += len(idx)
        if on_epoch is not None:
            on_epoch(epoch, total / seen)
    return net


# ---------------------------------------------------------------------------
# checkpoints

def save_network(net: Network, path, centering=None):
    """Write magic, JSON header (architecture + centering), then parameters."""
    header = {
        "input_shape": list(net.input_shape),
        "layers": [layer_to_dict(s) for s in net.layers],
        "centering": centering,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(NET_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for i in net.param_layers():
            write_tensor(f, net.params[i]["w"])
            write_tensor(f, net.params[i]["b"])


def load_network(path):
    """Read a checkpoint; returns (Network, centering)."""
    with open(path, "rb") as f:
        magic = f.read(len(NET_MAGIC))
        if magic != NET_MAGIC:
            raise IoError(f"{path} is not a network checkpoint (bad magic)")
        raw = f.read(4)
        if len(raw) != 4:
            raise IoError(f"truncated checkpoint header in {path}")
        (hlen,) = struct.unpack("<I", raw)
        blob = f.read(hlen)
        if len(blob) != hlen:
            raise IoError(f"truncated checkpoint header in {path}")
        try:
            header = json.loads(blob)
        except ValueError as e:
            raise IoError(f"unreadable checkpoint header in {path}: {e}") from e
        net = Network(header["input_shape"],
                      [layer_from_dict(d) for d in header["layers"]])
        for i, spec in enumerate(net.layers):
            if not isinstance(spec, (Conv, FullyConnected)):
                continue
            w = read_tensor(f)
            b = read_tensor(f)
            if isinstance(spec, Conv) and w.ndim != 4:
                raise IoError("checkpoint weight rank does not match conv layer")
            if isinstance(spec, FullyConnected) and w.ndim != 2:
                raise IoError("checkpoint weight rank does not match fc layer")
            net.params[i] = {"w": w, "b": b}
        trailing = f.read(1)
        if trailing:
            raise IoError(f"unexpected trailing bytes in checkpoint {path}")
    return net, header.get("centering")
