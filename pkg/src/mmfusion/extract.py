"""From raw cohort files to per-modality feature tables.

A cohort description names the patients and, for each modality, where its
raw inputs live and how to read them:

``pathology``
    ``<dir>/<patient_id>/*.png|*.ppm`` colour crops. Each crop is cut into
    sliding-window patches; texture is measured on the HSV saturation
    channel and background is judged on the luminance of the same patch.
``ct``
    ``<dir>/<patient_id>/*.png|*.pgm`` slices of one contoured volume,
    read in file-name order.
``records``
    one delimited table with a header row, encoded per ``encoding``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import features as ft
from .preprocess import (DEFAULT_BACKGROUND_LEVEL, DEFAULT_MAX_BACKGROUND, GrayImage, ImageStack,
                         RecordEncoding, brightness_background, decompose_volume, extract_patches,
                         keep_patch, read_gray_image, read_records, saturation_channel)

INPUT_KINDS = ("pathology", "ct", "records")
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".tif", ".tiff")


class ExtractionError(ValueError):
    """Raised with one message per input that could not be processed."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class FeatureParams:
    window: int = 100
    stride: int = 60
    background_level: int = DEFAULT_BACKGROUND_LEVEL
    max_background: float = DEFAULT_MAX_BACKGROUND
    delta: int = 1
    glcm_levels: int = ft.DEFAULT_GLCM_LEVELS
    lbp_points: int = 8
    lbp_radius: float = 1
    with_smoothness: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown feature parameters {sorted(unknown)}")
        p = cls(**d)
        if p.window < 1 or p.stride < 1 or p.delta < 1 or p.glcm_levels < 2:
            raise ValueError("window, stride and delta must be >= 1 and glcm_levels >= 2")
        if not 0.0 <= p.max_background <= 1.0:
            raise ValueError("max_background must lie in [0, 1]")
        return p

    def to_dict(self) -> dict:
        return asdict(self)


def _image_files(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def luminance(rgb) -> GrayImage:
    """8-bit luma (ITU-R 601 weights, as PIL's ``"L"`` conversion)."""
    return GrayImage(np.array(Image.fromarray(np.asarray(rgb, dtype=np.uint8)).convert("L"), dtype=np.int64), 8)


def pathology_samples(rgb, params: FeatureParams) -> list[ft.FeatureVector]:
    """Feature vectors of the tissue patches of one colour crop."""
    sat = saturation_channel(rgb)
    lum = luminance(rgb)
    is_background = brightness_background(params.background_level)
    out = []
    for s_patch, l_patch in zip(extract_patches(sat, params.window, params.stride),
                                extract_patches(lum, params.window, params.stride)):
        if keep_patch(l_patch, is_background, params.max_background):
            out.append(ft.pathomics_features(s_patch, levels=params.glcm_levels, delta=params.delta))
    return out


def ct_samples(stack: ImageStack, params: FeatureParams) -> list[ft.FeatureVector]:
    lbp = ft.LbpParams(params.lbp_points, params.lbp_radius)
    return [ft.radiomics_features(s, levels=params.glcm_levels, lbp=lbp, with_smoothness=params.with_smoothness)
            for _, s in decompose_volume(stack)]


def _read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def _extract_images(modality, source, patients, base, params, problems):
    folder = base / source["dir"]
    rows = []
    for pid, label in patients:
        pdir = folder / pid
        if not pdir.is_dir():
            problems.append(f"{modality}: {pdir}: missing patient directory")
            continue
        files = _image_files(pdir)
        if not files:
            problems.append(f"{modality}: {pdir}: no image files")
            continue
        if source["kind"] == "pathology":
            n_before = len(rows)
            for f in files:
                try:
                    vecs = pathology_samples(_read_rgb(f), params)
                except (OSError, ValueError) as exc:
                    problems.append(f"{modality}: {f}: {exc}")
                    continue
                rows.extend((f"{pid}/{modality}/{f.stem}/{k}", pid, modality, label, v) for k, v in enumerate(vecs))
            if len(rows) == n_before:
                problems.append(f"{modality}: {pdir}: no patch passed the background filter")
        else:
            try:
                stack = ImageStack(tuple(read_gray_image(f) for f in files), pid)
                vecs = ct_samples(stack, params)
            except (OSError, ValueError) as exc:
                problems.append(f"{modality}: {pdir}: {exc}")
                continue
            rows.extend((f"{pid}/{modality}/{f.stem}", pid, modality, label, v) for f, v in zip(files, vecs))
    return rows


def _extract_records(modality, source, patients, base, problems):
    path = base / source["table"]
    try:
        records = read_records(path, source.get("id_column", "patient_id"))
        encoding = RecordEncoding.from_dict(source.get("encoding", {}))
    except (OSError, ValueError, KeyError) as exc:
        problems.append(f"{modality}: {path}: {exc}")
        return []
    names = tuple(encoding.feature_names())
    if not names:
        problems.append(f"{modality}: encoding selects no attributes")
        return []
    rows = []
    for pid, label in patients:
        if pid not in records:
            problems.append(f"{modality}: {path}: no record for patient {pid!r}")
            continue
        try:
            values = encoding.encode(records[pid])
        except (KeyError, ValueError) as exc:
            problems.append(f"{modality}: {path}: patient {pid!r}: {exc}")
            continue
        rows.append((f"{pid}/{modality}/0", pid, modality, label, ft.FeatureVector(names, values)))
    return rows


def extract_cohort(cohort: dict, base: Path, out_dir: Path, params: FeatureParams = FeatureParams()) -> dict:
    """Write ``<out_dir>/<modality>.csv`` for every modality and return a
    run manifest that points at them (paths relative to ``out_dir``).

    Every unreadable input is collected; if any occurred nothing is written
    and :class:`ExtractionError` lists them all.
    """
    classes = list(cohort.get("classes", ["not-adaptive", "adaptive"]))
    patients = [(str(p["id"]), str(p["label"])) for p in cohort.get("patients", [])]
    if not patients:
        raise ValueError("cohort lists no patients")
    inputs = cohort.get("inputs", {})
    if not inputs:
        raise ValueError("cohort declares no modality inputs")
    problems, tables = [], {}
    for modality in sorted(inputs):
        source = inputs[modality]
        kind = source.get("kind")
        if kind not in INPUT_KINDS:
            raise ValueError(f"modality {modality!r}: kind must be one of {INPUT_KINDS}, got {kind!r}")
        if kind == "records":
            tables[modality] = _extract_records(modality, source, patients, base, problems)
        else:
            tables[modality] = _extract_images(modality, source, patients, base, params, problems)
    if problems:
        raise ExtractionError(problems)
    out_dir.mkdir(parents=True, exist_ok=True)
    for modality, rows in tables.items():
        ft.write_feature_table(out_dir / f"{modality}.csv", rows)
    return {
        "format": "mmfusion-manifest/1",
        "classes": classes,
        "modalities": list(inputs),
        "patients": [{"id": pid, "label": lab} for pid, lab in patients],
        "features": {m: f"{m}.csv" for m in inputs},
        "feature_params": params.to_dict(),
    }


def write_manifest(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
