"""Deconvolutional projection of class evidence back to pixel space.

Starting from one class unit of the final fully connected layer, the
unit's activation is pushed backward: transposed weight multiplication
through FC layers, rectification (deconvnet rule) or forward-gating
(backprop rule) through ReLUs, unpooling into the recorded switch
locations, and transposed convolution through the filter banks. The
final-layer weights can be masked to their positive or negative part
first, which splits the projection into excitatory and inhibitory
evidence; biases never participate in masked passes.
"""

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from attrivis import _kernels
from attrivis.errors import ConfigError, CorruptSwitches, EmptyClass, ShapeMismatch
from attrivis.errors import DegenerateNetworkWarning
from attrivis.nn import Conv, FullyConnected, MaxPool, Network, ReLU, Softmax
from attrivis.pngio import write_png


class MaskMode(enum.Enum):
    FULL = "full"
    POSITIVE_ONLY = "positive"
    NEGATIVE_ONLY = "negative"

    @staticmethod
    def parse(name: str) -> "MaskMode":
        for m in MaskMode:
            if m.value == name:
                return m
        raise ConfigError(f"unknown mask mode {name!r}; "
                          f"use full, positive, or negative")


RELU_RULES = ("deconvnet", "backprop")


@dataclass
class FeatureImage:
    image: np.ndarray  # (3, H, W), signed
    attribute: str
    mask_mode: MaskMode
    class_index: int
    n_examples_averaged: int


@dataclass
class TargetActivations:
    """Exactly-summed pre-softmax activation of one class unit, split by
    final-layer weight sign. full includes the bias; positive and negative
    do not, so full == positive + negative + bias."""
    full: float
    positive: float
    negative: float
    bias: float


# ---------------------------------------------------------------------------

def unpool(pooled, switches, original_shape):
    """Write each pooled value at its recorded flat index, zero elsewhere."""
    p = np.asarray(pooled, dtype=np.float64)
    sw = np.asarray(switches, dtype=np.int64)
    squeeze = p.ndim == 3
    if squeeze:
        p = p[None]
        sw = sw[None] if sw.ndim == 3 else sw
    if sw.shape != p.shape:
        raise CorruptSwitches("switch record shape does not match pooled tensor")
    if len(original_shape) < 2:
        raise ShapeMismatch("original_shape needs spatial dimensions")
    in_h, in_w = int(original_shape[-2]), int(original_shape[-1])
    if sw.size and (sw.min() < 0 or sw.max() >= in_h * in_w):
        raise CorruptSwitches(
            f"switch index outside the original {in_h}x{in_w} plane")
    out = _kernels.maxpool_scatter(np.ascontiguousarray(p),
                                   np.ascontiguousarray(sw), in_h, in_w)
    return out[0] if squeeze else out


def _final_fc_index(net: Network) -> int:
    if len(net.layers) < 2 or not isinstance(net.layers[-2], FullyConnected):
        raise ConfigError(
            "deconvolution expects a fully connected layer directly before "
            "the softmax")
    return len(net.layers) - 2


def _all_params_zero(net: Network) -> bool:
    idxs = net.param_layers()
    if not idxs:
        return True
    return all(not net.params[i]["w"].any() and not net.params[i]["b"].any()
               for i in idxs)


def target_activations(net: Network, image, class_index: int) -> TargetActivations:
    """Split one class unit's activation by the sign of its weights.

    The per-term products are formed once and summed exactly (math.fsum),
    so the partition identity holds to within a couple of ulps.
    """
    L = _final_fc_index(net)
    _, cache = net.forward_batch(np.asarray(image, dtype=np.float64)[None])
    x = cache.inputs[L].reshape(-1)
    w = net.params[L]["w"]
    if not 0 <= class_index < w.shape[0]:
        raise ConfigError(f"class_index {class_index} out of range")
    row = w[class_index]
    bias = float(net.params[L]["b"][class_index])
    terms = row * x
    pos = math.fsum(terms[row > 0])
    neg = math.fsum(terms[row < 0])
    full = math.fsum(list(terms) + [bias])
    return TargetActivations(full=full, positive=pos, negative=neg, bias=bias)


def _masked_row(row, mode: MaskMode):
    if mode is MaskMode.FULL:
        return row
    if mode is MaskMode.POSITIVE_ONLY:
        return np.maximum(row, 0.0)
    return np.minimum(row, 0.0)


def deconv_single(net: Network, image, class_index: int,
                  mode: MaskMode = MaskMode.FULL,
                  relu_rule: str = "deconvnet") -> FeatureImage:
    """Project one class unit's (optionally masked) activation to pixels.

    The unit keeps its activation value and every other activation is
    zeroed, so the returned projection scales linearly with the target
    activation; a zero target yields an exactly zero image.
    """
    if relu_rule not in RELU_RULES:
        raise ConfigError(f"relu_rule must be one of {RELU_RULES}")
    img = np.asarray(image, dtype=np.float64)
    if img.shape != net.input_shape:
        raise ShapeMismatch(
            f"image shape {img.shape} does not match input {net.input_shape}")
    if _all_params_zero(net):
        warnings.warn("network parameters are all zero; projection is empty",
                      DegenerateNetworkWarning)
        return FeatureImage(np.zeros(net.input_shape), "", mode,
                            class_index, 1)

    L = _final_fc_index(net)
    _, cache = net.forward_batch(img[None])
    x_fc = cache.inputs[L].reshape(-1)
    w = net.params[L]["w"]
    if not 0 <= class_index < w.shape[0]:
        raise ConfigError(f"class_index {class_index} out of range")
    row = _masked_row(w[class_index], mode)
    terms = w[class_index] * x_fc
    if mode is MaskMode.FULL:
        act = math.fsum(list(terms) + [float(net.params[L]["b"][class_index])])
    elif mode is MaskMode.POSITIVE_ONLY:
        act = math.fsum(terms[w[class_index] > 0])
    else:
        act = math.fsum(terms[w[class_index] < 0])

    g = (act * row)[None, :]  # backward signal entering the final FC
    for i in range(L - 1, -1, -1):
        spec = net.layers[i]
        x_in = cache.inputs[i]
        if isinstance(spec, FullyConnected):
            g = (g @ net.params[i]["w"]).reshape(x_in.shape)
        elif isinstance(spec, ReLU):
            if relu_rule == "deconvnet":
                g = np.maximum(g, 0.0)
            else:
                g = np.where(x_in > 0, g, 0.0)
        elif isinstance(spec, MaxPool):
            g = unpool(np.ascontiguousarray(g.reshape(cache.outputs[i].shape)),
                       cache.switches[i], x_in.shape[2:])
        elif isinstance(spec, Conv):
            g = _kernels.conv_input_grad(
                np.ascontiguousarray(g.reshape(cache.outputs[i].shape)),
                net.params[i]["w"], x_in.shape[2], x_in.shape[3],
                spec.stride, spec.pad)
        else:
            raise ConfigError(f"cannot project through layer {spec!r}")
        g = g.reshape(x_in.shape)
    return FeatureImage(image=g[0], attribute="", mask_mode=mode,
                        class_index=class_index, n_examples_averaged=1)


def mean_feature(net: Network, images, attribute: str, class_index: int,
                 mode: MaskMode = MaskMode.FULL,
                 relu_rule: str = "deconvnet") -> FeatureImage:
    """Mean deconv projection over a stack of same-class images."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[0] == 0:
        raise EmptyClass(
            f"no images for attribute {attribute!r} class {class_index}")
    total = np.zeros(net.input_shape)
    for k in range(arr.shape[0]):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateNetworkWarning)
            fi = deconv_single(net, arr[k], class_index, mode, relu_rule)
        total += fi.image
    return FeatureImage(image=total / arr.shape[0], attribute=attribute,
                        mask_mode=mode, class_index=class_index,
                        n_examples_averaged=arr.shape[0])


def channel_energy_report(fi: FeatureImage) -> np.ndarray:
    """Fraction of absolute energy per channel; all zeros for a zero image."""
    a = np.abs(fi.image)
    total = a.sum()
    if total == 0:
        return np.zeros(a.shape[0])
    return a.sum(axis=(1, 2)) / total


def render_png(fi: FeatureImage, path) -> None:
    """Symmetric normalization v -> 128 + 127*v/max|v|, one scale for all
    channels; an all-zero image renders as uniform gray."""
    v = fi.image
    peak = np.abs(v).max()
    if peak == 0:
        out = np.full(v.shape, 128.0)
    else:
        out = 128.0 + 127.0 * v / peak
    write_png(path, out)
