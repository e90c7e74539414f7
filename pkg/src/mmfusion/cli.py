"""Command-line front end.

    mmfusion synth   [--config C] [--seed S] [--out DIR]
    mmfusion extract  --config C  [--out DIR]
    mmfusion run      --config C  [--seed S] [--workers N] [--out DIR]
    mmfusion compare  RESULTS_DIR [--against OTHER_DIR] [--config C] [--out DIR]

The configuration is one JSON document; relative paths in it are resolved
against the directory holding it. Exit codes: 0 success, 2 usage or
configuration error, 3 data error, 4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import fusion
from .evaluate import (EARLY_MODES, EARLY_PREFIX, TEMPLATE_SOURCES, ConfigError, DataError, ExperimentConfig,
                       InvariantViolation, default_subsets, load_manifest, make_synthetic_manifest,
                       manifest_to_dict, run_grid)
from .extract import ExtractionError, FeatureParams, extract_cohort, write_manifest
from .forest import ForestParams, TrainingError
from .report import ResultSet, early_table, grid_table, unimodal_table, write_compare, write_table

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4

CONFIG_KEYS = {
    "manifest", "cohort", "out", "seed", "workers", "subsets", "aggregations", "rules", "early_modes",
    "unimodal", "cells", "forest", "template_source", "features", "synth", "alpha", "two_sided",
}
DEFAULT_SYNTH = {"n_patients": 40, "informativeness": {"pathomics": 3.0, "radiomics": 2.0, "semantic": 1.0}}


@dataclass
class RunConfig:
    """Resolved configuration. ``cells``, when set, replaces the generated
    grid with an explicit list of ``{"modalities", "aggregation", "rule"}``."""

    base: Path = Path(".")
    manifest: Optional[Path] = None
    cohort: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = 0
    workers: int = 1
    subsets: Optional[list] = None
    aggregations: tuple = fusion.AGGREGATIONS
    rules: tuple = fusion.LATE_RULES
    early_modes: tuple = ("concat", "kronecker")
    unimodal: bool = True
    cells: Optional[list] = None
    forest: ForestParams = ForestParams()
    template_source: str = "oob"
    features: FeatureParams = FeatureParams()
    synth: dict = field(default_factory=lambda: dict(DEFAULT_SYNTH))
    alpha: dict = field(default_factory=lambda: {"friedman": 0.1, "wilcoxon": 0.1, "sign": 0.05})
    two_sided: bool = False

    def describe(self) -> dict:
        """The settings that determine results, for provenance in outputs."""
        return {"seed": self.seed, "forest": self.forest.to_dict(), "template_source": self.template_source}


def _path(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _tuple_of(name, value, allowed):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{name} must be a non-empty list")
    bad = [v for v in value if v not in allowed]
    if bad:
        raise ConfigError(f"{name}: unknown entries {bad}; expected a subset of {list(allowed)}")
    return tuple(value)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} does not exist") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: cannot parse config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return config_from_dict(doc, p.parent)


def config_from_dict(doc: dict, base: Path = Path(".")) -> RunConfig:
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = RunConfig(base=base)
    if "manifest" in doc:
        cfg.manifest = _path(base, doc["manifest"])
    if "cohort" in doc:
        cfg.cohort = _path(base, doc["cohort"])
    if "out" in doc:
        cfg.out = _path(base, doc["out"])
    for key in ("seed", "workers"):
        if key in doc:
            if not isinstance(doc[key], int) or doc[key] < (0 if key == "seed" else 1):
                raise ConfigError(f"{key} must be a {'non-negative' if key == 'seed' else 'positive'} integer")
            setattr(cfg, key, doc[key])
    if "subsets" in doc:
        subs = doc["subsets"]
        if not isinstance(subs, list) or not subs or not all(isinstance(s, list) and len(s) >= 2 for s in subs):
            raise ConfigError("subsets must be a non-empty list of modality lists with at least two entries each")
        cfg.subsets = [tuple(s) for s in subs]
    if "aggregations" in doc:
        cfg.aggregations = _tuple_of("aggregations", doc["aggregations"], fusion.AGGREGATIONS)
    if "rules" in doc:
        cfg.rules = _tuple_of("rules", doc["rules"], fusion.LATE_RULES)
    if "early_modes" in doc:
        modes = doc["early_modes"]
        cfg.early_modes = () if modes == [] else _tuple_of("early_modes", modes, EARLY_MODES)
    if "unimodal" in doc:
        cfg.unimodal = bool(doc["unimodal"])
    if "cells" in doc:
        if not isinstance(doc["cells"], list) or not doc["cells"]:
            raise ConfigError("cells must be a non-empty list")
        cfg.cells = doc["cells"]
    if "forest" in doc:
        try:
            cfg.forest = ForestParams(**{k: v for k, v in doc["forest"].items() if k != "rng_seed"})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"forest: {exc}") from exc
    if "template_source" in doc:
        if doc["template_source"] not in TEMPLATE_SOURCES:
            raise ConfigError(f"template_source must be one of {TEMPLATE_SOURCES}")
        cfg.template_source = doc["template_source"]
    if "features" in doc:
        try:
            cfg.features = FeatureParams.from_dict(doc["features"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"features: {exc}") from exc
    if "synth" in doc:
        cfg.synth = {**DEFAULT_SYNTH, **doc["synth"]}
    if "alpha" in doc:
        extra = set(doc["alpha"]) - set(cfg.alpha)
        if extra:
            raise ConfigError(f"alpha: unknown tests {sorted(extra)}")
        cfg.alpha.update(doc["alpha"])
        if not all(0 < v < 1 for v in cfg.alpha.values()):
            raise ConfigError("alpha levels must lie in (0, 1)")
    if "two_sided" in doc:
        cfg.two_sided = bool(doc["two_sided"])
    return cfg


def build_grid(cfg: RunConfig, modalities) -> tuple[list[ExperimentConfig], list[ExperimentConfig]]:
    """Return ``(multimodal cells, unimodal baseline cells)``; validates all
    of them before anything is trained."""
    shared = {"forest": cfg.forest, "seed": cfg.seed, "template_source": cfg.template_source}
    unimodal = []
    if cfg.unimodal:
        unimodal = [ExperimentConfig((m,), a, "mean", **shared) for m in modalities for a in cfg.aggregations]
    if cfg.cells is not None:
        cells = []
        for k, c in enumerate(cfg.cells):
            try:
                cells.append(ExperimentConfig(tuple(c["modalities"]), c.get("aggregation", "A1"),
                                              c.get("rule", "mean"), **shared))
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"cells[{k}]: malformed cell {c!r}") from exc
    else:
        subsets = cfg.subsets if cfg.subsets is not None else default_subsets(modalities)
        cells = [ExperimentConfig(s, a, r, **shared) for a in cfg.aggregations for r in cfg.rules for s in subsets]
        cells += [ExperimentConfig(s, "A1", EARLY_PREFIX + m, **shared) for m in cfg.early_modes for s in subsets]
    ids = [c.cell_id for c in cells]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate grid cells {dupes}")
    for c in cells + unimodal:
        missing = [m for m in c.modalities if m not in modalities]
        if missing:
            raise ConfigError(f"{c.cell_id}: modalities {missing} are not in the manifest")
    return cells, unimodal


# -- commands ----------------------------------------------------------------

def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _safe_name(cell_id: str) -> str:
    return cell_id.replace("|", "__").replace(":", "-")


def cmd_synth(cfg: RunConfig) -> Path:
    s = cfg.synth
    try:
        ds = make_synthetic_manifest(int(s["n_patients"]), s.get("informativeness"), cfg.seed, s.get("layout"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from exc
    doc = manifest_to_dict(ds)
    doc["synth"] = {"seed": cfg.seed, **s}
    target = (cfg.out or Path("synth")) / "manifest.json"
    _dump(target, doc)
    return target


def cmd_extract(cfg: RunConfig) -> Path:
    if cfg.cohort is None:
        raise ConfigError("extract needs a 'cohort' file in the config")
    if not cfg.cohort.is_file():
        raise ConfigError(f"cohort file {cfg.cohort} does not exist")
    try:
        cohort = json.loads(cfg.cohort.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{cfg.cohort}: {exc}") from exc
    try:
        doc = extract_cohort(cohort, cfg.cohort.parent, cfg.out or Path("features"), cfg.features)
    except ExtractionError:
        raise
    except (ValueError, KeyError) as exc:
        raise DataError(f"{cfg.cohort}: {exc}") from exc
    target = (cfg.out or Path("features")) / "manifest.json"
    write_manifest(doc, target)
    return target


def cmd_run(cfg: RunConfig) -> Path:
    if cfg.manifest is None:
        raise ConfigError("run needs a 'manifest' in the config")
    if not cfg.manifest.is_file():
        raise ConfigError(f"manifest {cfg.manifest} does not exist")
    ds = load_manifest(cfg.manifest)
    cells, unimodal = build_grid(cfg, ds.modalities)
    # one forest schedule for everything keeps training shared across cells
    results = run_grid(ds, cells + unimodal, workers=cfg.workers)
    multi, uni = results[:len(cells)], results[len(cells):]

    out = cfg.out or Path("results")
    cell_docs = [r.to_dict() for r in multi]
    uni_docs = [r.to_dict() for r in uni]
    for d in cell_docs + uni_docs:
        _dump(out / "cells" / f"{_safe_name(d['cell'])}.json", d)
    _dump(out / "results.json", {
        "format": "mmfusion-results/1",
        "settings": cfg.describe(),
        "patients": list(ds.patient_ids),
        "modalities": list(ds.modalities),
        "cells": cell_docs,
        "unimodal": uni_docs,
    })
    rs = ResultSet({"cells": cell_docs, "unimodal": uni_docs})
    if rs.late:
        write_table(out, "grid", *grid_table(rs))
    if rs.early:
        write_table(out, "early", *early_table(rs))
    if rs.unimodal:
        write_table(out, "unimodal", *unimodal_table(rs))
    return out


def _load_results(d: Path) -> ResultSet:
    f = d / "results.json"
    if not f.is_file():
        raise ConfigError(f"{d} holds no results.json")
    try:
        return ResultSet(json.loads(f.read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{f}: {exc}") from exc


def cmd_compare(cfg: RunConfig, results: Path, against: Optional[Path] = None) -> list[str]:
    rs = _load_results(results)
    other = _load_results(against) if against is not None else None
    a = cfg.alpha
    return write_compare(rs, cfg.out or results / "compare", other, a["friedman"], a["wilcoxon"], a["sign"],
                         cfg.two_sided)


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="parallel fold workers (output does not depend on it)")
    common.add_argument("--out", help="output directory (overrides the config)")
    parser = argparse.ArgumentParser(prog="mmfusion", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic manifest")
    sub.add_parser("extract", parents=[common], help="extract feature tables from a cohort")
    sub.add_parser("run", parents=[common], help="evaluate the experiment grid")
    p = sub.add_parser("compare", parents=[common], help="statistical reports on run results")
    p.add_argument("results", help="directory written by 'run'")
    p.add_argument("--against", help="second results directory for the cross-run sign tests")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg.workers = args.workers
        if args.out is not None:
            cfg.out = Path(args.out)
        if args.command == "synth":
            print(cmd_synth(cfg))
        elif args.command == "extract":
            print(cmd_extract(cfg))
        elif args.command == "run":
            print(cmd_run(cfg))
        else:
            results = Path(args.results)
            for name in cmd_compare(cfg, results, Path(args.against) if args.against else None):
                print((cfg.out or results / "compare") / f"{name}.txt")
    except ConfigError as exc:
        print(f"mmfusion: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExtractionError as exc:
        for problem in exc.problems:
            print(f"mmfusion: {problem}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, TrainingError, OSError, ValueError) as exc:
        print(f"mmfusion: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantViolation as exc:
        print(f"mmfusion: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
