"""Dataset ingestion, label construction, preprocessing, and CV splits.

The manifest is a long-form CSV (one row per image/attribute/rater) with
columns ``image_id, image_path, attribute, rater_index, score``. Images are
8-bit RGB PNGs, decoded to (3, H, W) float64 tensors on the 0..255 scale.

Label construction has two routes: :func:`binarize` median-splits continuous
mean ratings into exactly equal classes, and :func:`balance_binary`
down-samples the larger class when the ratings are already 0/1.
"""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from attrivis import pngio
from attrivis.errors import (
    ConfigError,
    DegenerateAttribute,
    EmptyDataset,
    InvalidImage,
    InvalidSplit,
    IoError,
    ParseError,
)
from attrivis.seeding import derive_seed
from attrivis.tensor import Tensor, read_tensor, write_tensor

MANIFEST_COLUMNS = ["image_id", "image_path", "attribute", "rater_index", "score"]
CACHE_MAGIC = b"ATTRIVIS-CACHE-v1\n"


@dataclass
class FaceExample:
    image_id: str
    image: Tensor  # (3, H, W), 0..255
    ratings: Dict[str, np.ndarray]  # attribute -> per-rater scores


@dataclass
class DatasetManifest:
    examples: List[FaceExample]
    attributes: List[str]
    raters_per_attribute: Dict[str, int]
    rater_indices: Dict[str, List[int]] = field(default_factory=dict)

    def ids(self) -> List[str]:
        return [ex.image_id for ex in self.examples]

    def ratings_matrix(self, attribute: str) -> np.ndarray:
        """(n_examples, n_raters) score matrix, raters in sorted index order."""
        if attribute not in self.attributes:
            raise ConfigError(f"unknown attribute {attribute!r}")
        return np.stack([ex.ratings[attribute] for ex in self.examples])


@dataclass
class FoldAssignment:
    fold_of: Dict[str, int]
    k: int

    def members(self, fold: int) -> List[str]:
        return [i for i, f in self.fold_of.items() if f == fold]


# ---------------------------------------------------------------------------
# labels

def binarize(mean_ratings, rng_seed: int) -> np.ndarray:
    """Median-split mean ratings into exactly equal 0/1 classes.

    The top floor(n/2) by mean rating become class 1. Boundary ties are
    resolved by ranking a seeded random permutation of the items with a
    stable sort, so equal means are ordered randomly but reproducibly.
    With odd n the middle item of that ranking is dropped: its label is
    set to -1 and it belongs to neither class.
    """
    means = np.asarray(mean_ratings, dtype=np.float64)
    n = means.shape[0]
    if n < 2:
        raise DegenerateAttribute("need at least 2 examples to binarize")
    rng = np.random.default_rng(derive_seed(rng_seed, "binarize"))
    perm = rng.permutation(n)
    ranked = perm[np.argsort(-means[perm], kind="stable")]
    labels = np.zeros(n, dtype=np.int64)
    labels[ranked[: n // 2]] = 1
    if n % 2:
        labels[ranked[n // 2]] = -1
    return labels


def balance_binary(image_ids: Sequence[str], labels, rng_seed: int) -> List[str]:
    """Down-sample the larger class so both classes have equal size.

    Returns the retained image_ids in their original order; removal within
    the larger class is uniform at random and seeded.
    """
    ids = list(image_ids)
    y = np.asarray(labels)
    if len(ids) != y.shape[0]:
        raise ConfigError("one label per image_id required")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateAttribute("both classes must be present to balance")
    rng = np.random.default_rng(derive_seed(rng_seed, "balance"))
    keep = np.ones(len(ids), dtype=bool)
    big, small = (pos, neg) if len(pos) > len(neg) else (neg, pos)
    drop = rng.choice(big, size=len(big) - len(small), replace=False)
    keep[drop] = False
    return [i for i, k in zip(ids, keep) if k]


def attribute_is_binary(manifest: DatasetManifest, attribute: str) -> bool:
    """True when every rater score for the attribute is 0 or 1."""
    m = manifest.ratings_matrix(attribute)
    return bool(np.isin(m, (0.0, 1.0)).all())


# ---------------------------------------------------------------------------
# preprocessing

@dataclass(frozen=True)
class Centering:
    """Mean to subtract after crop/resize; computed on training data only."""
    mode: str  # "per_channel" or "scalar"
    values: tuple

    def to_dict(self) -> dict:
        return {"mode": self.mode, "values": list(self.values)}

    @staticmethod
    def from_dict(d) -> "Centering":
        if d is None:
            return None
        return Centering(mode=d["mode"], values=tuple(float(v) for v in d["values"]))


def compute_centering(images, mode: str = "per_channel") -> Centering:
    """Mean of a stack of (3, H, W) images, per channel or one scalar."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if mode == "per_channel":
        return Centering("per_channel", tuple(float(v) for v in x.mean(axis=(0, 2, 3))))
    if mode == "scalar":
        return Centering("scalar", (float(x.mean()),))
    raise ConfigError(f"unknown centering mode {mode!r}")


def center_crop(image: Tensor) -> Tensor:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise InvalidImage(f"expected a (3, H, W) image, got shape {img.shape}")
    _, h, w = img.shape
    if h < 2 or w < 2:
        raise InvalidImage(f"image {h}x{w} is too small to preprocess")
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return img[:, top : top + side, left : left + side]


def bilinear_resize(image: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resampling with half-pixel-centered coordinates.

    Sampling at the same resolution is the identity; constant images stay
    constant (up to rounding) because each interpolation's weights sum to 1.
    """
    img = np.asarray(image, dtype=np.float64)
    c, h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    rows = img[:, y0c, :] * (1 - fy)[None, :, None] + img[:, y1c, :] * fy[None, :, None]
    out = rows[:, :, x0c] * (1 - fx)[None, None, :] + rows[:, :, x1c] * fx[None, None, :]
    return np.ascontiguousarray(out)


def preprocess(image: Tensor, centering: Optional[Centering] = None,
               size: int = 60) -> Tensor:
    """Center square crop, bilinear resize to (3, size, size), subtract mean."""
    out = bilinear_resize(center_crop(image), size, size)
    if centering is not None:
        if centering.mode == "per_channel":
            out = out - np.asarray(centering.values)[:, None, None]
        elif centering.mode == "scalar":
            out = out - centering.values[0]
        else:
            raise ConfigError(f"unknown centering mode {centering.mode!r}")
    return out


def preprocess_all(images, centering: Optional[Centering] = None,
                   size: int = 60) -> Tensor:
    return np.stack([preprocess(im, centering, size) for im in images])


def apply_centering(images: Tensor, centering: Optional[Centering]) -> Tensor:
    """Subtract a stored mean from an already cropped/resized batch."""
    x = np.asarray(images, dtype=np.float64)
    if centering is None:
        return x
    if centering.mode == "per_channel":
        return x - np.asarray(centering.values)[None, :, None, None]
    if centering.mode == "scalar":
        return x - centering.values[0]
    raise ConfigError(f"unknown centering mode {centering.mode!r}")


# ---------------------------------------------------------------------------
# cross-validation

def kfold_split(n: int, k: int = 11, rng_seed: int = 0,
                ids: Optional[Sequence[str]] = None) -> FoldAssignment:
    """Seeded permutation cut into k folds whose sizes differ by at most 1.

    fold_of is keyed by the given ids, or by stringified indices when ids
    is omitted.
    """
    if ids is not None and len(ids) != n:
        raise ConfigError("ids length must equal n")
    if k < 1 or n < k:
        raise InvalidSplit(f"cannot split {n} examples into {k} folds")
    keys = list(ids) if ids is not None else [str(i) for i in range(n)]
    perm = np.random.default_rng(derive_seed(rng_seed, "kfold")).permutation(n)
    fold_of = {}
    start = 0
    for f in range(k):
        size = n // k + (1 if f < n % k else 0)
        for i in perm[start : start + size]:
            fold_of[keys[i]] = f
        start += size
    return FoldAssignment(fold_of=fold_of, k=k)


# ---------------------------------------------------------------------------
# manifest IO

def _fail(path, line_no, msg):
    raise ParseError(f"{path}, line {line_no}: {msg}")


def load_manifest(path, load_images: bool = True) -> DatasetManifest:
    """Read and fully validate a long-form CSV manifest.

    Every image must carry scores for every attribute in the file, from the
    same set of rater indices per attribute. image_path is resolved relative
    to the manifest's directory; PNGs are decoded unless load_images=False
    (used when only ratings are needed).
    """
    path = Path(path)
    # image_id -> path; (image_id, attribute) -> {rater_index: score}
    paths: Dict[str, str] = {}
    scores: Dict[str, Dict[str, Dict[int, float]]] = {}
    order: List[str] = []
    attributes: List[str] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        if [h.strip() for h in header] != MANIFEST_COLUMNS:
            _fail(path, 1, f"header must be {','.join(MANIFEST_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                _fail(path, line_no, f"expected 5 fields, got {len(row)}")
            image_id, image_path, attribute, rater_raw, score_raw = (
                v.strip() for v in row)
            if not image_id or not attribute:
                _fail(path, line_no, "image_id and attribute must be nonempty")
            try:
                rater = int(rater_raw)
            except ValueError:
                _fail(path, line_no, f"rater_index {rater_raw!r} is not an integer")
            if rater < 0:
                _fail(path, line_no, "rater_index must be >= 0")
            try:
                score = float(score_raw)
            except ValueError:
                _fail(path, line_no, f"score {score_raw!r} is not a number")
            if not np.isfinite(score):
                _fail(path, line_no, "score must be finite")
            if image_id in paths:
                if paths[image_id] != image_path:
                    _fail(path, line_no,
                          f"image_id {image_id!r} maps to two different paths")
            else:
                paths[image_id] = image_path
                order.append(image_id)
                scores[image_id] = {}
            if attribute not in attributes:
                attributes.append(attribute)
            per_attr = scores[image_id].setdefault(attribute, {})
            if rater in per_attr:
                _fail(path, line_no,
                      f"duplicate rating for {image_id!r}/{attribute!r} "
                      f"rater {rater}")
            per_attr[rater] = score

    if not order:
        raise EmptyDataset(f"{path} contains a header but no rows")

    rater_indices: Dict[str, List[int]] = {}
    for attr in attributes:
        first = order[0]
        if attr not in scores[first]:
            raise ParseError(
                f"{path}: image {first!r} has no scores for attribute {attr!r}")
        expected = sorted(scores[first][attr])
        for image_id in order:
            got = sorted(scores[image_id].get(attr, {}))
            if got != expected:
                raise ParseError(
                    f"{path}: image {image_id!r} has rater indices {got} for "
                    f"attribute {attr!r}, expected {expected}")
        rater_indices[attr] = expected

    base = path.parent
    examples = []
    for image_id in order:
        if load_images:
            img = pngio.read_png(base / paths[image_id])
        else:
            img = None
        ratings = {
            attr: np.array([scores[image_id][attr][r] for r in rater_indices[attr]])
            for attr in attributes
        }
        examples.append(FaceExample(image_id=image_id, image=img, ratings=ratings))

    return DatasetManifest(
        examples=examples,
        attributes=attributes,
        raters_per_attribute={a: len(rater_indices[a]) for a in attributes},
        rater_indices=rater_indices,
    )


def write_manifest(path, rows) -> None:
    """Write long-form rows: iterable of (image_id, image_path, attribute,
    rater_index, score)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# preprocessed tensor cache

def save_cache(path, ids: Sequence[str], images: Tensor) -> None:
    """Persist preprocessed image tensors keyed by image_id."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.shape[0] != len(ids):
        raise ConfigError("one image per id required")
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<I", len(ids)))
        for i, image_id in enumerate(ids):
            raw = image_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            write_tensor(f, arr[i])


def load_cache(path):
    """Read a cache written by :func:`save_cache`; returns (ids, images)."""
    with open(path, "rb") as f:
        magic = f.read(len(CACHE_MAGIC))
        if magic != CACHE_MAGIC:
            raise IoError(f"{path} is not a preprocessed-image cache (bad magic)")
        raw = f.read(4)
        if len(raw) != 4:
            raise IoError(f"truncated cache header in {path}")
        (count,) = struct.unpack("<I", raw)
        ids, images = [], []
        for _ in range(count):
            lraw = f.read(4)
            if len(lraw) != 4:
                raise IoError(f"truncated cache entry in {path}")
            (idlen,) = struct.unpack("<I", lraw)
            idraw = f.read(idlen)
            if len(idraw) != idlen:
                raise IoError(f"truncated cache entry in {path}")
            ids.append(idraw.decode("utf-8"))
            images.append(read_tensor(f))
    return ids, np.stack(images) if images else np.zeros((0, 3, 60, 60))
