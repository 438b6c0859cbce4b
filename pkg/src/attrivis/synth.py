"""Procedural face-like image generator with known signal regions.

Each image is a jittered oval "face" over a dark background plus, per
attribute, a latent score u ~ uniform[0,1] rendered into that attribute's
rectangle. Linear attributes shift the region's intensity by
strength*(2u-1); nonlinear ones draw an XOR-style pair of patches whose
signs agree exactly when u >= 0.5, so no single patch carries the class.
Rater scores are the latent plus per-rater Gaussian noise.

Everything is driven by counter-derived substreams of one seed, so
generation is reproducible image by image and byte-identical across runs.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from attrivis import pngio
from attrivis.data import DatasetManifest, FaceExample, write_manifest
from attrivis.errors import InvalidSpec
from attrivis.seeding import derive_seed

IMAGE_SIDE = 60
DEFAULT_STRENGTH = 60.0


@dataclass(frozen=True)
class Region:
    """Pixel rectangle [row0, row1) x [col0, col1) in 60x60 coordinates."""
    row0: int
    row1: int
    col0: int
    col1: int

    def __post_init__(self):
        ok = (0 <= self.row0 < self.row1 <= IMAGE_SIDE
              and 0 <= self.col0 < self.col1 <= IMAGE_SIDE)
        if not ok:
            raise InvalidSpec(f"region {self} does not fit a "
                              f"{IMAGE_SIDE}x{IMAGE_SIDE} image")

    def overlaps(self, other: "Region") -> bool:
        return (self.row0 < other.row1 and other.row0 < self.row1
                and self.col0 < other.col1 and other.col0 < self.col1)

    def mask(self) -> np.ndarray:
        m = np.zeros((IMAGE_SIDE, IMAGE_SIDE), dtype=bool)
        m[self.row0:self.row1, self.col0:self.col1] = True
        return m

    def encode(self) -> str:
        return f"{self.row0}:{self.row1}:{self.col0}:{self.col1}"

    @staticmethod
    def decode(s: str) -> "Region":
        parts = [int(p) for p in s.split(":")]
        if len(parts) != 4:
            raise InvalidSpec(f"bad region encoding {s!r}")
        return Region(*parts)


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    region: Region
    signal_strength: float = DEFAULT_STRENGTH
    nonlinear: bool = False

    def __post_init__(self):
        if self.signal_strength < 0:
            raise InvalidSpec("signal_strength must be >= 0")
        if not self.name:
            raise InvalidSpec("attribute name must be nonempty")


@dataclass(frozen=True)
class SynthSpec:
    n_images: int
    attributes: Tuple[AttributeSpec, ...]
    n_raters: int = 5
    rater_noise_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise InvalidSpec("n_images must be >= 1")
        if self.n_raters < 1:
            raise InvalidSpec("n_raters must be >= 1")
        if self.rater_noise_sd < 0:
            raise InvalidSpec("rater_noise_sd must be >= 0")
        names = [a.name for a in self.attributes]
        if len(names) != len(set(names)):
            raise InvalidSpec("attribute names must be unique")
        for a in self.attributes:
            if not a.nonlinear:
                continue
            for b in self.attributes:
                if b is not a and a.region.overlaps(b.region):
                    raise InvalidSpec(
                        f"nonlinear attribute {a.name!r} region overlaps "
                        f"{b.name!r}; the pattern would be corrupted")


# ---------------------------------------------------------------------------
# rendering

_FACE_LEVEL = 150.0
_BACKGROUND_LEVEL = 60.0


def _base_face(rng: np.random.Generator) -> np.ndarray:
    """Oval face with jittered geometry, illumination, and tint."""
    img = np.full((3, IMAGE_SIDE, IMAGE_SIDE), _BACKGROUND_LEVEL)
    yy, xx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE]
    cy = 30.0 + rng.uniform(-1.5, 1.5)
    cx = 30.0 + rng.uniform(-1.5, 1.5)
    ay = 25.0 + rng.uniform(-2.0, 2.0)
    ax = 19.0 + rng.uniform(-2.0, 2.0)
    inside = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
    img[:, inside] = _FACE_LEVEL
    img += rng.uniform(-10.0, 10.0)              # illumination
    img += rng.uniform(-8.0, 8.0, size=(3, 1, 1))  # tint
    img += rng.normal(0.0, 6.0, size=img.shape)  # pixel noise
    return img


def _apply_linear(img, region: Region, strength: float, latent: float):
    img[:, region.row0:region.row1, region.col0:region.col1] += (
        strength * (2.0 * latent - 1.0))


def _apply_xor(img, region: Region, strength: float, latent: float,
               rng: np.random.Generator):
    mid = (region.col0 + region.col1) // 2
    agree = latent >= 0.5
    left = 1.0 if rng.uniform() < 0.5 else -1.0
    right = left if agree else -left
    img[:, region.row0:region.row1, region.col0:mid] += strength * left
    img[:, region.row0:region.row1, mid:region.col1] += strength * right


def render_image(spec: SynthSpec, index: int, latents: dict) -> np.ndarray:
    """One quantized (3, 60, 60) image; latents maps attribute name -> u."""
    rng = np.random.default_rng(derive_seed(spec.seed, "image", index))
    img = _base_face(rng)
    for attr in spec.attributes:
        u = latents[attr.name]
        if attr.signal_strength == 0:
            continue
        if attr.nonlinear:
            coin = np.random.default_rng(
                derive_seed(spec.seed, "xorcoin", attr.name, index))
            _apply_xor(img, attr.region, attr.signal_strength, u, coin)
        else:
            _apply_linear(img, attr.region, attr.signal_strength, u)
    return np.clip(np.rint(img), 0, 255).astype(np.float64)


# ---------------------------------------------------------------------------
# generation

def generate(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write images/, manifest.csv, and ground_truth.csv under out_dir.

    Returns the manifest built from the in-memory quantized images, which
    is identical to re-loading manifest.csv from disk.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    examples: List[FaceExample] = []
    manifest_rows = []
    truth_rows = []
    for i in range(spec.n_images):
        image_id = f"img{i:05d}"
        latents = {}
        ratings = {}
        for attr in spec.attributes:
            arng = np.random.default_rng(
                derive_seed(spec.seed, "latent", attr.name, i))
            u = float(arng.uniform())
            latents[attr.name] = u
            nrng = np.random.default_rng(
                derive_seed(spec.seed, "raters", attr.name, i))
            noise = nrng.normal(0.0, spec.rater_noise_sd, size=spec.n_raters) \
                if spec.rater_noise_sd > 0 else np.zeros(spec.n_raters)
            ratings[attr.name] = u + noise
            truth_rows.append((image_id, attr.name, repr(u), attr.region.encode()))

        img = render_image(spec, i, latents)
        rel = f"images/{image_id}.png"
        pngio.write_png(out / rel, img)
        examples.append(FaceExample(image_id=image_id, image=img, ratings=ratings))
        for attr in spec.attributes:
            for r in range(spec.n_raters):
                manifest_rows.append(
                    (image_id, rel, attr.name, r, repr(float(ratings[attr.name][r]))))

    write_manifest(out / "manifest.csv", manifest_rows)
    with open(out / "ground_truth.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["image_id", "attribute", "latent", "region"])
        w.writerows(truth_rows)

    return DatasetManifest(
        examples=examples,
        attributes=[a.name for a in spec.attributes],
        raters_per_attribute={a.name: spec.n_raters for a in spec.attributes},
        rater_indices={a.name: list(range(spec.n_raters)) for a in spec.attributes},
    )


def load_ground_truth(path):
    """Read the sidecar; returns {attribute: ({image_id: latent}, Region)}."""
    table = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            latents, region = table.setdefault(
                row["attribute"], ({}, Region.decode(row["region"])))
            latents[row["image_id"]] = float(row["latent"])
    return table
