"""Shared test utilities: finite-difference gradients and tiny datasets."""
import numpy as np

from attrivis import nn
from attrivis.data import write_manifest
from attrivis.pngio import write_png


def numerical_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = f(x)
        flat[i] = keep - h
        lo = f(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_err(analytic, numeric):
    """Max-norm relative error between two gradient tensors."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def tiny_net(seed=0, input_shape=(1, 6, 6), conv_channels=(2,), kernel_size=3,
             fc_units=4, classes=2):
    net = nn.build_network(input_shape=input_shape, conv_channels=conv_channels,
                           kernel_size=kernel_size, fc_units=fc_units,
                           classes=classes)
    net.init_params(seed)
    return net


def blob_task(n=200, side=8, seed=0):
    """Linearly separable two-blob images: class 1 is brighter on the left."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.normal(0.0, 0.3, size=(n, 1, side, side))
    images[labels == 1, :, :, : side // 2] += 2.0
    images[labels == 0, :, :, side // 2:] += 2.0
    return images, labels


def write_tiny_dataset(root, n_images=6, attributes=("calm",), n_raters=3,
                       side=24, seed=0):
    """PNG files + long-form manifest, small enough for parser tests."""
    rng = np.random.default_rng(seed)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n_images):
        image_id = f"img{i:03d}"
        path = img_dir / f"{image_id}.png"
        write_png(path, rng.uniform(0, 255, size=(3, side, side)))
        for attr in attributes:
            base = rng.uniform(0, 1)
            for r in range(n_raters):
                score = base + rng.normal(0, 0.05)
                rows.append((image_id, str(path), attr, r, repr(float(score))))
    manifest = root / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
