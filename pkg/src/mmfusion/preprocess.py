"""Turn raw modality inputs into per-sample units.

Images are held as :class:`GrayImage`, a thin wrapper around a 2-D integer
array that remembers its bit depth. Everything here is a pure function of
its inputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

DEFAULT_BACKGROUND_LEVEL = 220
DEFAULT_MAX_BACKGROUND = 0.2


class ImageTooSmallError(ValueError):
    pass


class UnknownCategoryError(ValueError):
    pass


@dataclass(frozen=True)
class GrayImage:
    """Row-major grid of integer intensities in ``[0, 2**bit_depth - 1]``."""

    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D grid, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.integer):
            if not np.all(np.equal(np.mod(px, 1), 0)):
                raise ValueError("pixel values must be integers")
            px = px.astype(np.int64)
        if self.bit_depth < 1:
            raise ValueError("bit_depth must be >= 1")
        if px.size and (px.min() < 0 or px.max() >= 2 ** self.bit_depth):
            raise ValueError(
                f"pixel values must lie in [0, {2 ** self.bit_depth - 1}] for bit depth {self.bit_depth}"
            )
        px = np.array(px, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def levels(self) -> int:
        return 2 ** self.bit_depth

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class ImageStack:
    slices: tuple
    stack_id: str = ""

    def __post_init__(self):
        slices = tuple(self.slices)
        depths = {s.bit_depth for s in slices}
        if len(depths) > 1:
            raise ValueError(f"slices of stack {self.stack_id!r} mix bit depths {sorted(depths)}")
        object.__setattr__(self, "slices", slices)


@dataclass(frozen=True)
class TabularRecord:
    """Ordered ``(name, value)`` attributes of one patient."""

    attributes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        attrs = tuple((str(k), v) for k, v in self.attributes)
        names = [k for k, _ in attrs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in record: {names}")
        object.__setattr__(self, "attributes", attrs)

    def __getitem__(self, name):
        for k, v in self.attributes:
            if k == name:
                return v
        raise KeyError(name)

    def names(self):
        return [k for k, _ in self.attributes]


# -- image units -------------------------------------------------------------

def extract_patches(image: GrayImage, window: int = 100, stride: int = 60) -> list[GrayImage]:
    """Slide a ``window x window`` box over the image with the given stride.

    Only fully interior positions are used (no padding). Patches come back in
    row-major order of their top-left corners and own their pixels.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    if window > min(image.width, image.height):
        raise ImageTooSmallError(
            f"image too small: {image.width}x{image.height} cannot hold a {window}x{window} window"
        )
    rows = range(0, image.height - window + 1, stride)
    cols = range(0, image.width - window + 1, stride)
    return [
        GrayImage(image.pixels[r:r + window, c:c + window].copy(), image.bit_depth)
        for r in rows
        for c in cols
    ]


def brightness_background(threshold: int = DEFAULT_BACKGROUND_LEVEL) -> Callable[[np.ndarray], np.ndarray]:
    """Predicate marking bright (unstained, glass) pixels as background."""
    def predicate(values):
        return np.asarray(values) >= threshold
    return predicate


def background_fraction(patch: GrayImage, background_predicate=None) -> float:
    if background_predicate is None:
        background_predicate = brightness_background()
    mask = np.asarray(background_predicate(patch.pixels), dtype=bool)
    return float(np.count_nonzero(mask)) / patch.pixels.size


def keep_patch(patch: GrayImage, background_predicate=None,
               max_background: float = DEFAULT_MAX_BACKGROUND) -> bool:
    # patches are dropped only when strictly more than max_background is background
    return background_fraction(patch, background_predicate) <= max_background


def tissue_patches(image: GrayImage, window: int = 100, stride: int = 60,
                   background_predicate=None,
                   max_background: float = DEFAULT_MAX_BACKGROUND) -> list[GrayImage]:
    """:func:`extract_patches` followed by the background filter."""
    return [p for p in extract_patches(image, window, stride)
            if keep_patch(p, background_predicate, max_background)]


def decompose_volume(stack: ImageStack) -> list[tuple[int, GrayImage]]:
    if not stack.slices:
        raise ValueError(f"stack {stack.stack_id!r} has no slices")
    return list(enumerate(stack.slices))


def saturation_channel(rgb) -> GrayImage:
    """HSV saturation of an 8-bit RGB array, rescaled to 8-bit integers."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 array, got shape {rgb.shape}")
    rgb = rgb.astype(np.float64)
    hi = rgb.max(axis=2)
    lo = rgb.min(axis=2)
    sat = np.divide(hi - lo, hi, out=np.zeros_like(hi), where=hi > 0)
    # floor(x + 0.5): half-up rounding, not numpy's banker's rounding
    return GrayImage(np.floor(sat * 255.0 + 0.5).astype(np.int64), 8)


# -- categorical encoding ----------------------------------------------------

def encode_ordinal(value, ordering: Sequence) -> int:
    try:
        return list(ordering).index(value)
    except ValueError:
        raise UnknownCategoryError(f"unknown category {value!r}; expected one of {list(ordering)}") from None


def encode_onehot(value, domain: Sequence) -> np.ndarray:
    out = np.zeros(len(domain), dtype=np.int64)
    out[encode_ordinal(value, domain)] = 1
    return out


@dataclass(frozen=True)
class RecordEncoding:
    """How each tabular attribute becomes numbers.

    ``ordinal`` and ``onehot`` map attribute names to their category lists;
    ``numeric`` lists attributes parsed as floats. Output order is ordinal,
    then one-hot, then numeric, each in declaration order.
    """

    ordinal: dict = field(default_factory=dict)
    onehot: dict = field(default_factory=dict)
    numeric: tuple = ()

    @classmethod
    def from_dict(cls, d):
        return cls(ordinal={k: list(v) for k, v in d.get("ordinal", {}).items()},
                   onehot={k: list(v) for k, v in d.get("onehot", {}).items()},
                   numeric=tuple(d.get("numeric", ())))

    def feature_names(self) -> list[str]:
        names = list(self.ordinal)
        for attr, domain in self.onehot.items():
            names.extend(f"{attr}={cat}" for cat in domain)
        names.extend(self.numeric)
        return names

    def encode(self, record: TabularRecord) -> np.ndarray:
        values = [float(encode_ordinal(record[a], order)) for a, order in self.ordinal.items()]
        for attr, domain in self.onehot.items():
            values.extend(float(v) for v in encode_onehot(record[attr], domain))
        values.extend(float(record[a]) for a in self.numeric)
        return np.array(values, dtype=np.float64)


# -- file input --------------------------------------------------------------

def read_gray_image(path) -> GrayImage:
    """Read an 8/16-bit grayscale PNG or binary PGM."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            px = np.array(im, dtype=np.int64)
            return GrayImage(px, 16)
        if im.mode != "L":
            im = im.convert("L")
        return GrayImage(np.array(im, dtype=np.int64), 8)


def read_rgb_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def read_records(path, id_column: str = "patient_id", delimiter: str = ",") -> dict[str, TabularRecord]:
    """Read a delimited table with a header row, keyed by ``id_column``."""
    out = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh, delimiter=delimiter):
            pid = row.pop(id_column)
            if pid in out:
                raise ValueError(f"{path}: duplicate {id_column} {pid!r}")
            out[pid] = TabularRecord(tuple(row.items()))
    return out
