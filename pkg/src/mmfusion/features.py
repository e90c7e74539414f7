"""Hand-crafted texture and first-order descriptors.

Three families are provided:

* grey-level co-occurrence matrices and six Haralick descriptors computed
  on them (``compute_glcm``, ``haralick``);
* rotation-invariant uniform local binary patterns, LBP^riu2_{P,R}
  (``lbp_code``, ``lbp_histogram``);
* twelve statistics of a normalised histogram (``histogram_stats``).

``pathomics_features`` and ``radiomics_features`` assemble these into the
per-patch (24 values) and per-slice (48 values) vectors.

Image coordinates follow the usual raster convention: ``x`` is the column,
``y`` the row, and ``y`` grows downwards. Angles are measured
counter-clockwise on screen, so 90 degrees points *up* (``dy = -delta``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .preprocess import GrayImage

ORIENTATIONS = (0, 45, 90, 135)
HARALICK_NAMES = ("contrast", "dissimilarity", "homogeneity", "asm", "energy", "correlation")
HISTOGRAM_STAT_NAMES = (
    "mean", "std", "skewness", "kurtosis", "width", "energy", "entropy",
    "max_prob", "max_value", "max_energy", "n_rel_max", "rel_max_energy",
)
DEFAULT_GLCM_LEVELS = 32
# Interpolated differences that are zero in exact arithmetic can come out as
# +-1e-17; integer images never produce a true nonzero difference this small.
LBP_TIE_EPS = 1e-9

_UNIT_OFFSETS = {0: (1, 0), 45: (1, -1), 90: (0, -1), 135: (-1, -1)}


@dataclass(frozen=True)
class FeatureVector:
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if len(names) != values.size:
            raise ValueError(f"{len(names)} names for {values.size} values")
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(values)):
            bad = [n for n, v in zip(names, values) if not np.isfinite(v)]
            raise ValueError(f"non-finite feature values: {bad}")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.names == other.names and np.array_equal(self.values, other.values)

    __hash__ = None

    def prefixed(self, prefix: str) -> "FeatureVector":
        return FeatureVector(tuple(f"{prefix}{n}" for n in self.names), self.values)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


def concat(vectors: Iterable[FeatureVector]) -> FeatureVector:
    vectors = list(vectors)
    names = sum((v.names for v in vectors), ())
    values = np.concatenate([v.values for v in vectors]) if vectors else np.empty(0)
    return FeatureVector(names, values)


# -- GLCM --------------------------------------------------------------------

@dataclass(frozen=True)
class GlcmParams:
    delta: int = 1
    theta: int = 0
    levels: int = DEFAULT_GLCM_LEVELS

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.theta not in _UNIT_OFFSETS:
            raise ValueError(f"theta must be one of {ORIENTATIONS}, got {self.theta}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    @property
    def offset(self) -> tuple[int, int]:
        """``(dx, dy)`` in pixels."""
        ux, uy = _UNIT_OFFSETS[self.theta]
        return ux * self.delta, uy * self.delta


@dataclass(frozen=True)
class Glcm:
    counts: np.ndarray
    params: GlcmParams
    total_pairs: int


def quantize(image: GrayImage, levels: int) -> np.ndarray:
    """Linearly map intensities onto ``levels`` bins (identity if the image
    already has no more than ``levels`` grey values)."""
    if levels >= image.levels:
        return image.pixels.astype(np.int64)
    return (image.pixels.astype(np.int64) * levels) // image.levels


def compute_glcm(image: GrayImage, params: GlcmParams) -> Glcm:
    """Directed co-occurrence counts of quantised grey levels.

    ``counts[i, j]`` is the number of positions where ``I(x, y) == i`` and
    ``I(x + dx, y + dy) == j`` with both pixels inside the image.
    """
    q = quantize(image, params.levels)
    dx, dy = params.offset
    h, w = q.shape
    if abs(dx) >= w or abs(dy) >= h:
        raise ValueError(
            f"offset {(dx, dy)} leaves no valid pixel pair in a {w}x{h} image"
        )
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    yn = slice(ys.start + dy, ys.stop + dy)
    xn = slice(xs.start + dx, xs.stop + dx)
    src = q[ys, xs].ravel()
    dst = q[yn, xn].ravel()
    n = params.levels
    counts = np.bincount(src * n + dst, minlength=n * n).reshape(n, n)
    return Glcm(counts, params, int(src.size))


def haralick(glcm: Glcm) -> FeatureVector:
    if glcm.total_pairs <= 0:
        raise ValueError("GLCM holds no pixel pairs")
    p = glcm.counts / glcm.total_pairs
    n = p.shape[0]
    gi, gj = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    diff = gi - gj
    contrast = float(np.sum(p * diff ** 2))
    dissimilarity = float(np.sum(p * np.abs(diff)))
    homogeneity = float(np.sum(p / (1.0 + diff ** 2)))
    asm = float(np.sum(p ** 2))
    energy = math.sqrt(asm)
    mu_i = float(np.sum(gi * p))
    mu_j = float(np.sum(gj * p))
    var_i = float(np.sum(p * (gi - mu_i) ** 2))
    var_j = float(np.sum(p * (gj - mu_j) ** 2))
    if var_i * var_j == 0.0:
        # single-valued marginal: the ratio is 0/0, treat as perfectly correlated
        correlation = 1.0
    else:
        correlation = float(np.sum(p * (gi - mu_i) * (gj - mu_j)) / math.sqrt(var_i * var_j))
    return FeatureVector(HARALICK_NAMES,
                         [contrast, dissimilarity, homogeneity, asm, energy, correlation])


def glcm_features(image: GrayImage, delta: int = 1, levels: int = DEFAULT_GLCM_LEVELS,
                  orientations: Sequence[int] = ORIENTATIONS) -> FeatureVector:
    blocks = []
    for theta in orientations:
        fv = haralick(compute_glcm(image, GlcmParams(delta, theta, levels)))
        blocks.append(fv.prefixed(f"glcm{theta}_"))
    return concat(blocks)


def pathomics_features(patch: GrayImage, levels: int = DEFAULT_GLCM_LEVELS, delta: int = 1) -> FeatureVector:
    """Six Haralick descriptors at each of the four orientations: 24 values."""
    return glcm_features(patch, delta=delta, levels=levels)


# -- LBP ---------------------------------------------------------------------

@dataclass(frozen=True)
class LbpParams:
    points: int = 8
    radius: float = 1

    def __post_init__(self):
        if self.points < 4:
            raise ValueError("points must be >= 4")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")

    @property
    def n_codes(self) -> int:
        return self.points + 2

    @property
    def margin(self) -> int:
        return int(math.ceil(self.radius - 1e-9))


@dataclass(frozen=True)
class LbpHistogram:
    bins: np.ndarray
    params: LbpParams

    @property
    def total(self) -> int:
        return int(self.bins.sum())

    def normalized(self) -> np.ndarray:
        return self.bins / self.bins.sum()


def _sample_points(params: LbpParams):
    """Neighbour positions ``(dy, dx)``; angle 0 points right, angles grow
    counter-clockwise (upwards on screen)."""
    ang = 2.0 * np.pi * np.arange(params.points) / params.points
    # snap cos/sin round-off so axis-aligned neighbours land exactly on pixels
    dy = np.round(-params.radius * np.sin(ang), 9)
    dx = np.round(params.radius * np.cos(ang), 9)
    return dy, dx


def _bilinear_terms(dy: float, dx: float):
    """Integer corner offsets and weights for bilinear sampling at (dy, dx)."""
    y0, x0 = math.floor(dy), math.floor(dx)
    fy, fx = dy - y0, dx - x0
    terms = []
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            wt = wy * wx
            if wt != 0.0:
                terms.append((y0 + oy, x0 + ox, wt))
    return terms


def riu2_code(neighbors, center) -> int:
    """LBP^riu2 code from sampled neighbour values (in angular order)."""
    bits = (np.asarray(neighbors, dtype=np.float64) - center >= -LBP_TIE_EPS).astype(np.int64)
    return _riu2_from_bits(bits[None, :])[0]


def _riu2_from_bits(bits: np.ndarray) -> np.ndarray:
    # bits: (n_pixels, P)
    transitions = np.abs(bits - np.roll(bits, 1, axis=1)).sum(axis=1)
    p = bits.shape[1]
    return np.where(transitions <= 2, bits.sum(axis=1), p + 1)


def _neighbor_differences(pixels: np.ndarray, params: LbpParams, rows: slice, cols: slice) -> np.ndarray:
    """``g_p - g_c`` for every centre in the given region, shape (n, P).

    Differences are interpolated directly so a flat neighbourhood gives an
    exact zero regardless of the bilinear weights.
    """
    px = pixels.astype(np.float64)
    h, w = px.shape
    center = px[rows, cols]
    out = np.empty(center.shape + (params.points,))
    for p, (dy, dx) in enumerate(zip(*_sample_points(params))):
        acc = np.zeros_like(center)
        for oy, ox, wt in _bilinear_terms(dy, dx):
            r = slice(rows.start + oy, rows.stop + oy)
            c = slice(cols.start + ox, cols.stop + ox)
            if r.start < 0 or c.start < 0 or r.stop > h or c.stop > w:
                raise ValueError("LBP neighbourhood falls outside the image")
            acc += wt * (px[r, c] - center)
        out[..., p] = acc
    return out.reshape(-1, params.points)


def lbp_code(image: GrayImage, center: tuple[int, int], params: LbpParams = LbpParams()) -> int:
    """Code in ``[0, P + 1]`` of the pixel at ``center = (x, y)``."""
    x, y = center
    m = params.margin
    if not (m <= x < image.width - m and m <= y < image.height - m):
        raise ValueError(f"neighbourhood of radius {params.radius} around {center} is out of bounds")
    diffs = _neighbor_differences(image.pixels, params, slice(y, y + 1), slice(x, x + 1))
    return int(_riu2_from_bits((diffs >= -LBP_TIE_EPS).astype(np.int64))[0])


def lbp_codes(image: GrayImage, params: LbpParams = LbpParams()) -> np.ndarray:
    """Code map over every centre with a complete neighbourhood."""
    m = params.margin
    h, w = image.height - 2 * m, image.width - 2 * m
    if h < 1 or w < 1:
        raise ValueError(f"{image.width}x{image.height} image has no pixel with a full radius-{params.radius} neighbourhood")
    diffs = _neighbor_differences(image.pixels, params, slice(m, m + h), slice(m, m + w))
    return _riu2_from_bits((diffs >= -LBP_TIE_EPS).astype(np.int64)).reshape(h, w)


def lbp_histogram(image: GrayImage, params: LbpParams = LbpParams()) -> LbpHistogram:
    codes = lbp_codes(image, params)
    return LbpHistogram(np.bincount(codes.ravel(), minlength=params.n_codes), params)


# -- first-order statistics --------------------------------------------------

def histogram_stats(p, values=None, with_smoothness: bool = False) -> FeatureVector:
    """Twelve descriptors of a probability histogram ``p`` over ``values``.

    Moments are plain central moments (not standardised). ``width`` is the
    index span between the first and last populated bins, ``max_energy`` sums
    ``p**2`` over the two bins either side of the absolute maximum, and the
    relative maxima are strict interior peaks.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("histogram must be a non-empty 1-D array")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"histogram is not normalised (sum={p.sum()!r})")
    r = np.arange(p.size, dtype=np.float64) if values is None else np.asarray(values, dtype=np.float64)
    if r.shape != p.shape:
        raise ValueError("values and probabilities differ in length")

    mean = float(np.sum(r * p))
    dev = r - mean
    var = float(np.sum(dev ** 2 * p))
    skew = float(np.sum(dev ** 3 * p))
    kurt = float(np.sum(dev ** 4 * p))
    nz = np.flatnonzero(p > 0)
    width = float(nz[-1] - nz[0])
    energy = float(np.sum(p ** 2))
    pos = p[p > 0]
    entropy = float(-np.sum(pos * np.log2(pos))) + 0.0
    k = int(np.argmax(p))
    around = p[max(0, k - 2):k + 3]
    interior = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] > p[2:])) + 1
    values_out = [
        mean, math.sqrt(var), skew, kurt, width, energy, entropy,
        float(p[k]), float(r[k]), float(np.sum(around ** 2)),
        float(interior.size), float(np.sum(p[interior] ** 2)),
    ]
    names = HISTOGRAM_STAT_NAMES
    if with_smoothness:
        names = names + ("smoothness",)
        values_out.append(1.0 - 1.0 / (1.0 + var))
    return FeatureVector(names, values_out)


def gray_histogram(image: GrayImage) -> np.ndarray:
    counts = np.bincount(image.pixels.ravel(), minlength=image.levels)
    return counts / counts.sum()


def radiomics_features(slice_: GrayImage, levels: int = DEFAULT_GLCM_LEVELS,
                       lbp: LbpParams = LbpParams(), with_smoothness: bool = False) -> FeatureVector:
    """First-order grey statistics, GLCM/Haralick and LBP-histogram statistics."""
    gray = histogram_stats(gray_histogram(slice_), with_smoothness=with_smoothness)
    texture = glcm_features(slice_, levels=levels)
    lbp_stats = histogram_stats(lbp_histogram(slice_, lbp).normalized(), with_smoothness=with_smoothness)
    return concat([gray.prefixed("gray_"), texture, lbp_stats.prefixed("lbp_")])


# -- feature tables ----------------------------------------------------------

TABLE_KEYS = ("sample_id", "patient_id", "modality", "label")


def write_feature_table(path, rows: Sequence[tuple[str, str, str, str, FeatureVector]]) -> None:
    """Write ``(sample_id, patient_id, modality, label, vector)`` rows as CSV."""
    if not rows:
        raise ValueError("no rows to write")
    names = rows[0][4].names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_KEYS + names)
        for *keys, fv in rows:
            if fv.names != names:
                raise ValueError(f"sample {keys[0]!r} has a different feature layout")
            w.writerow([*keys, *(repr(float(v)) for v in fv.values)])


def read_feature_table(path) -> list[tuple[str, str, str, str, FeatureVector]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:4]) != TABLE_KEYS:
            raise ValueError(f"{path}: header must start with {','.join(TABLE_KEYS)}")
        names = tuple(header[4:])
        return [(*row[:4], FeatureVector(names, [float(v) for v in row[4:]])) for row in reader]
