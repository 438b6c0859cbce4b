"""PNG reading and writing on top of Pillow.

Images cross this boundary as (3, H, W) float64 tensors in the 0..255
range (channel-first, RGB order); writing clips and rounds to 8-bit.
"""

import numpy as np
from PIL import Image, UnidentifiedImageError

from attrivis.errors import InvalidImage, MissingImage


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except FileNotFoundError:
        raise MissingImage(f"image file not found: {path}") from None
    except (UnidentifiedImageError, OSError) as e:
        raise InvalidImage(f"cannot decode {path}: {e}") from e
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_png(path, image) -> None:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None].repeat(3, axis=0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise InvalidImage(f"expected a (3, H, W) tensor, got shape {arr.shape}")
    out = np.clip(np.rint(arr), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(out, mode="RGB").save(path, format="PNG")
