"""Linear SVM baseline on flattened preprocessed pixels.

Primal stochastic subgradient descent (Pegasos-style): step size 1/(lambda*t),
one example per step, with the standard projection onto the ball of radius
1/sqrt(lambda) that keeps the first steps from blowing up. The bias is
trained as an appended constant feature, so it is regularized along with
the weights.
"""

import struct
from dataclasses import dataclass

import numpy as np

from attrivis.errors import ConfigError, DegenerateLabels, IoError, ShapeMismatch
from attrivis.seeding import derive_seed
from attrivis.tensor import read_tensor, write_tensor

SVM_MAGIC = b"ATTRIVIS-SVM-v1\n"


@dataclass
class LinearModel:
    weights: np.ndarray  # flattened input length
    bias: float
    regularization: float
    seed: int


def _objective(w, lam, X, y):
    margins = 1.0 - y * (X @ w)
    return 0.5 * lam * float(w @ w) + float(np.maximum(margins, 0.0).mean())


def svm_train(images, labels, lam: float = 1e-4, epochs: int = 20,
              seed: int = 0, on_epoch=None) -> LinearModel:
    """Train on (N, ...) images with labels in {-1, +1}.

    Deterministic given the seed. on_epoch, if given, is called after each
    epoch with (epoch, objective-of-averaged-iterate); the averaged iterate
    is the mean of all per-step weight vectors so far, whose objective is
    the quantity Pegasos actually drives down.
    """
    X = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ShapeMismatch("one label per image required")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise DegenerateLabels("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("both classes must be present")
    if lam <= 0:
        raise ConfigError("lambda must be positive")
    if epochs < 1:
        raise ConfigError("need at least one epoch")

    n = X.shape[0]
    Xa = np.hstack([X, np.ones((n, 1))])
    d = Xa.shape[1]
    w = np.zeros(d)
    wsum = np.zeros(d)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for epoch in range(epochs):
        order = np.random.default_rng(
            derive_seed(seed, "svm_epoch", epoch)).permutation(n)
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (w @ Xa[i]) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * Xa[i]
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            wsum += w
        if on_epoch is not None:
            on_epoch(epoch, _objective(wsum / t, lam, Xa, y))
    return LinearModel(weights=w[:-1].copy(), bias=float(w[-1]),
                       regularization=lam, seed=seed)


def svm_predict(model: LinearModel, image):
    """(label, margin) for one image: label 1 iff w.x + b >= 0."""
    x = np.asarray(image, dtype=np.float64).ravel()
    if x.shape != model.weights.shape:
        raise ShapeMismatch(
            f"image has {x.shape[0]} values, model expects "
            f"{model.weights.shape[0]}")
    margin = float(model.weights @ x + model.bias)
    return (1 if margin >= 0 else 0), margin


def svm_decision(model: LinearModel, images):
    """Vectorized margins for a stack of images."""
    X = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if X.shape[1] != model.weights.shape[0]:
        raise ShapeMismatch(
            f"images have {X.shape[1]} values each, model expects "
            f"{model.weights.shape[0]}")
    return X @ model.weights + model.bias


def save_svm(model: LinearModel, path) -> None:
    with open(path, "wb") as f:
        f.write(SVM_MAGIC)
        write_tensor(f, model.weights)
        f.write(struct.pack("<d", model.bias))
        f.write(struct.pack("<d", model.regularization))
        f.write(struct.pack("<Q", model.seed % (1 << 64)))


def load_svm(path) -> LinearModel:
    with open(path, "rb") as f:
        if f.read(len(SVM_MAGIC)) != SVM_MAGIC:
            raise IoError(f"{path} is not a linear model file (bad magic)")
        w = read_tensor(f)
        tail = f.read(8 + 8 + 8)
        if len(tail) != 24:
            raise IoError(f"truncated linear model file {path}")
        bias, reg = struct.unpack("<dd", tail[:16])
        (seed,) = struct.unpack("<Q", tail[16:])
        if f.read(1):
            raise IoError(f"unexpected trailing bytes in {path}")
    return LinearModel(weights=w, bias=bias, regularization=reg, seed=seed)
