"""Leave-one-patient-out experiments, AUC and rank summaries.

A :class:`DatasetManifest` holds, per modality and patient, a matrix of
sample feature vectors (patches, slices or a single tabular record). An
:class:`ExperimentConfig` names one cell of the experiment grid: a modality
subset, an aggregation rule (``"A1"`` feature mean, ``"A2"`` score mean)
and either a late-fusion rule or an early-fusion mode (``"early:concat"``,
``"early:kronecker"``, ``"early:kronecker_plain"``).

Classifiers depend only on (fold, modality, aggregation) for late fusion and
on (fold, mode, subset) for early fusion, so :func:`run_grid` trains each of
them once per fold and reuses it for every rule.
"""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fusion
from .features import FeatureVector, read_feature_table
from .forest import ForestParams, TrainingError, train_forest
from .stats import RankMatrix, average_ranks

MANIFEST_FORMAT = "mmfusion-manifest/1"
DEFAULT_CLASSES = ("not-adaptive", "adaptive")
POSITIVE = 1
EARLY_PREFIX = "early:"
EARLY_MODES = ("concat", "kronecker", "kronecker_plain")
TEMPLATE_SOURCES = ("oob", "resubstitution")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class InvariantViolation(AssertionError):
    pass


# -- data --------------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Patients, binary labels and per-modality sample matrices.

    ``samples[modality][patient_id]`` is an ``(n_samples, n_features)`` array;
    ``sample_ids`` mirrors it with one identifier per row.
    """

    patient_ids: tuple
    labels: np.ndarray
    modalities: tuple
    samples: dict
    feature_names: dict
    sample_ids: dict = field(default_factory=dict)
    classes: tuple = DEFAULT_CLASSES

    def __post_init__(self):
        self.patient_ids = tuple(self.patient_ids)
        self.modalities = tuple(self.modalities)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(set(self.patient_ids)) != len(self.patient_ids):
            raise DataError("duplicate patient ids")
        if self.labels.shape != (len(self.patient_ids),):
            raise DataError("one label per patient is required")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be binary")
        for m in self.modalities:
            per = self.samples.get(m)
            if per is None:
                raise DataError(f"no samples for modality {m!r}")
            d = len(self.feature_names[m])
            for pid, arr in per.items():
                arr = np.asarray(arr, dtype=np.float64)
                if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] != d:
                    raise DataError(f"{m}/{pid}: expected a non-empty (n, {d}) sample matrix, got {arr.shape}")
                if not np.all(np.isfinite(arr)):
                    raise DataError(f"{m}/{pid}: non-finite feature values")
                per[pid] = arr
            ids = self.sample_ids.setdefault(m, {})
            for pid, arr in per.items():
                ids.setdefault(pid, [f"{pid}/{m}/{k}" for k in range(arr.shape[0])])

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    def patient_samples(self, modality: str, pid: str) -> np.ndarray:
        try:
            return self.samples[modality][pid]
        except KeyError:
            raise DataError(f"patient {pid!r} has no samples for modality {modality!r}") from None

    def label_name(self, label: int) -> str:
        return self.classes[label]


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_manifest(path) -> DatasetManifest:
    """Load a JSON manifest whose modalities carry inline vectors under
    ``"samples"`` or a feature table path under ``"features"``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read manifest: {exc}") from exc
    return manifest_from_dict(doc, path.parent)


def manifest_from_dict(doc: dict, base: Path = Path(".")) -> DatasetManifest:
    classes = tuple(doc.get("classes", DEFAULT_CLASSES))
    if len(classes) != 2:
        raise DataError("exactly two classes (negative, positive) are supported")
    pids, labels = [], []
    for entry in doc.get("patients", []):
        lab = entry["label"]
        if isinstance(lab, str):
            if lab not in classes:
                raise DataError(f"patient {entry['id']!r}: unknown label {lab!r}")
            lab = classes.index(lab)
        pids.append(str(entry["id"]))
        labels.append(int(lab))
    modalities = tuple(doc.get("modalities", ()))
    samples, names, sample_ids = {}, {}, {}
    known = set(pids)
    for m in modalities:
        if m in doc.get("samples", {}):
            samples[m] = {str(pid): np.asarray(v, dtype=np.float64) for pid, v in doc["samples"][m].items()}
            names[m] = tuple(doc.get("feature_names", {}).get(m) or
                             (f"f{k}" for k in range(next(iter(samples[m].values())).shape[1])))
        elif m in doc.get("features", {}):
            table = _resolve(base, doc["features"][m])
            try:
                rows = read_feature_table(table)
            except OSError as exc:
                raise DataError(f"{table}: {exc}") from exc
            if not rows:
                raise DataError(f"{table}: empty feature table")
            grouped, ids = {}, {}
            for sid, pid, _mod, _lab, fv in rows:
                grouped.setdefault(pid, []).append(fv.values)
                ids.setdefault(pid, []).append(sid)
            samples[m] = {pid: np.vstack(v) for pid, v in grouped.items()}
            sample_ids[m] = ids
            names[m] = rows[0][4].names
        else:
            raise DataError(f"modality {m!r} has neither inline samples nor a feature table")
        stray = set(samples[m]) - known
        if stray:
            raise DataError(f"modality {m!r} references unknown patients {sorted(stray)}")
    return DatasetManifest(pids, labels, modalities, samples, names, sample_ids, classes)


def manifest_to_dict(ds: DatasetManifest) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "classes": list(ds.classes),
        "modalities": list(ds.modalities),
        "patients": [{"id": pid, "label": ds.classes[lab]} for pid, lab in zip(ds.patient_ids, ds.labels.tolist())],
        "feature_names": {m: list(ds.feature_names[m]) for m in ds.modalities},
        "samples": {m: {pid: ds.samples[m][pid].tolist() for pid in ds.patient_ids if pid in ds.samples[m]}
                    for m in ds.modalities},
    }


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    modalities: tuple
    aggregation: str = "A1"
    rule: str = "mean"
    forest: ForestParams = ForestParams()
    seed: int = 0
    template_source: str = "oob"

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        self.validate()

    @property
    def is_early(self) -> bool:
        return self.rule.startswith(EARLY_PREFIX)

    @property
    def early_mode(self) -> Optional[str]:
        return self.rule[len(EARLY_PREFIX):] if self.is_early else None

    @property
    def cell_id(self) -> str:
        return f"{self.aggregation}+{self.rule}|{'+'.join(self.modalities)}"

    def validate(self):
        if not self.modalities:
            raise ConfigError("modality subset must not be empty")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigError(f"repeated modality in {self.modalities}")
        if self.aggregation not in fusion.AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {fusion.AGGREGATIONS}, got {self.aggregation!r}")
        if self.is_early:
            if self.early_mode not in EARLY_MODES:
                raise ConfigError(f"unknown early-fusion mode {self.early_mode!r}; expected one of {EARLY_MODES}")
            if self.aggregation != "A1":
                raise ConfigError(f"{self.cell_id}: early fusion only supports A1 aggregation")
        elif self.rule not in fusion.RULES:
            raise ConfigError(f"unknown fusion rule {self.rule!r}; expected one of {fusion.LATE_RULES}")
        if self.template_source not in TEMPLATE_SOURCES:
            raise ConfigError(f"template_source must be one of {TEMPLATE_SOURCES}")

    def to_dict(self) -> dict:
        return {"modalities": list(self.modalities), "aggregation": self.aggregation, "rule": self.rule,
                "forest": self.forest.to_dict(), "seed": self.seed, "template_source": self.template_source}


@dataclass(frozen=True)
class PatientScore:
    patient_id: str
    label: int
    score: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_patient: list
    auc: float

    def to_dict(self) -> dict:
        return {"cell": self.config.cell_id, "config": self.config.to_dict(), "auc": self.auc,
                "per_patient": [{"patient_id": s.patient_id, "label": s.label, "score": s.score}
                                for s in self.per_patient]}


# -- metrics -----------------------------------------------------------------

def auc(scores, labels) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ordered
    correctly, ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both positive and negative examples")
    diff = pos[:, None] - neg[None, :]
    return float((np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)) / (pos.size * neg.size))


# -- folds -------------------------------------------------------------------

def lopo_folds(ds: DatasetManifest) -> list[tuple[str, list[str]]]:
    if ds.n_patients < 2:
        raise DataError("leave-one-patient-out needs at least two patients")
    if np.unique(ds.labels).size < 2:
        raise DataError("both classes must be present")
    return [(pid, [q for q in ds.patient_ids if q != pid]) for pid in ds.patient_ids]


def _derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) % 2 ** 64 for k in key]).generate_state(1, np.uint64)[0])


def _check_no_leak(test_pid, train_pids, test_sample_ids=(), train_sample_ids=()):
    if test_pid in train_pids:
        raise InvariantViolation(f"test patient {test_pid!r} is in its own training set")
    leaked = set(test_sample_ids).intersection(train_sample_ids)
    if leaked:
        raise InvariantViolation(f"samples {sorted(leaked)} of test patient {test_pid!r} leaked into training")


def _late_outputs(ds, modality, aggregation, train, test, params, want_profiles, template_source):
    """Test-patient support and (optionally) per-training-patient supports."""
    labels = dict(zip(ds.patient_ids, ds.labels.tolist()))
    y_train = np.array([labels[p] for p in train])
    if aggregation == "A1":
        X = np.vstack([ds.patient_samples(modality, p).mean(axis=0) for p in train])
        _check_no_leak(test, train)
        model = train_forest(X, y_train, params, n_classes=2)
        test_support = model.predict_proba(ds.patient_samples(modality, test).mean(axis=0))
        profiles = None
        if want_profiles:
            profiles = model.oob_proba(X) if template_source == "oob" else model.predict_proba(X)
        return test_support, profiles
    blocks = [ds.patient_samples(modality, p) for p in train]
    owner = np.repeat(np.arange(len(train)), [b.shape[0] for b in blocks])
    X = np.vstack(blocks)
    ids = ds.sample_ids[modality]
    _check_no_leak(test, train, ids.get(test, ()), (sid for p in train for sid in ids[p]))
    model = train_forest(X, y_train[owner], params, n_classes=2)
    test_support = model.predict_proba(ds.patient_samples(modality, test)).mean(axis=0)
    profiles = None
    if want_profiles:
        per_sample = model.oob_proba(X) if template_source == "oob" else model.predict_proba(X)
        profiles = np.vstack([per_sample[owner == k].mean(axis=0) for k in range(len(train))])
    return test_support, profiles


def _early_vector(ds, pid, modalities, mode) -> FeatureVector:
    vecs = [FeatureVector(ds.feature_names[m], ds.patient_samples(m, pid).mean(axis=0)) for m in modalities]
    if mode == "concat":
        return fusion.early_concat(vecs, modalities)
    return fusion.early_kronecker(vecs, modalities, augment=(mode == "kronecker"))


def _early_output(ds, modalities, mode, train, test, params):
    labels = dict(zip(ds.patient_ids, ds.labels.tolist()))
    X = np.vstack([_early_vector(ds, p, modalities, mode).values for p in train])
    _check_no_leak(test, train)
    model = train_forest(X, np.array([labels[p] for p in train]), params, n_classes=2)
    return model.predict_proba(_early_vector(ds, test, modalities, mode).values)


@dataclass(frozen=True)
class _FoldPlan:
    late: tuple        # ((modality, aggregation, want_profiles), ...)
    early: tuple       # ((mode, modalities), ...)
    forest: ForestParams
    seed: int
    template_source: str


def _run_fold(ds: DatasetManifest, fold_index: int, plan: _FoldPlan) -> dict:
    test, train = ds.patient_ids[fold_index], [p for p in ds.patient_ids if p != ds.patient_ids[fold_index]]
    train_labels = ds.labels[[ds.patient_ids.index(p) for p in train]]
    if np.unique(train_labels).size < 2:
        raise TrainingError(f"fold {fold_index} (test patient {test!r}): training patients hold a single class")
    out = {"late": {}, "early": {}}
    for modality, aggregation, want_profiles in plan.late:
        params = replace(plan.forest, rng_seed=_derived_seed(
            plan.seed, fold_index, 0, ds.modalities.index(modality), fusion.AGGREGATIONS.index(aggregation)))
        out["late"][(modality, aggregation)] = _late_outputs(
            ds, modality, aggregation, train, test, params, want_profiles, plan.template_source)
    for mode, modalities in plan.early:
        mask = sum(1 << ds.modalities.index(m) for m in modalities)
        params = replace(plan.forest, rng_seed=_derived_seed(plan.seed, fold_index, 1, EARLY_MODES.index(mode), mask))
        out["early"][(mode, modalities)] = _early_output(ds, modalities, mode, train, test, params)
    return out


def _fold_worker(args):
    return _run_fold(*args)


def _score_cell(ds, cfg: ExperimentConfig, fold_outputs: list) -> ExperimentResult:
    scores = []
    for k, pid in enumerate(ds.patient_ids):
        fo = fold_outputs[k]
        if cfg.is_early:
            score = float(fo["early"][(cfg.early_mode, cfg.modalities)][POSITIVE])
        else:
            rows = [fo["late"][(m, cfg.aggregation)] for m in cfg.modalities]
            dp = fusion.build_profile([r[0] for r in rows], cfg.modalities)
            templates = None
            if cfg.rule in fusion.TEMPLATE_RULES:
                train_labels = [int(lab) for q, lab in zip(ds.patient_ids, ds.labels) if q != pid]
                train_dps = [fusion.build_profile([r[1][i] for r in rows], cfg.modalities)
                             for i in range(len(train_labels))]
                templates = fusion.fit_decision_templates(zip(train_dps, train_labels), n_classes=2)
            outcome = fusion.fuse(cfg.rule, dp, templates)
            if cfg.rule in fusion.CRISP_RULES:
                score = float(outcome.chosen_class == POSITIVE)
            else:
                score = float(outcome.supports[POSITIVE])
        scores.append(PatientScore(pid, int(ds.labels[k]), score))
    value = auc([s.score for s in scores], [s.label for s in scores])
    return ExperimentResult(cfg, scores, value)


def run_grid(ds: DatasetManifest, configs: Sequence[ExperimentConfig], workers: int = 1) -> list[ExperimentResult]:
    """Evaluate every configuration with leave-one-patient-out folds.

    All configurations must share forest parameters, seed and template
    source. Output does not depend on ``workers``.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("empty experiment grid")
    for cfg in configs:
        cfg.validate()
        missing = [m for m in cfg.modalities if m not in ds.modalities]
        if missing:
            raise ConfigError(f"{cfg.cell_id}: modalities {missing} are not in the manifest")
    shared = {(c.forest, c.seed, c.template_source) for c in configs}
    if len(shared) != 1:
        raise ConfigError("all grid cells must share forest parameters, seed and template source")
    forest, seed, template_source = shared.pop()
    lopo_folds(ds)

    late, early = {}, set()
    for cfg in configs:
        if cfg.is_early:
            early.add((cfg.early_mode, cfg.modalities))
        else:
            for m in cfg.modalities:
                key = (m, cfg.aggregation)
                late[key] = late.get(key, False) or cfg.rule in fusion.TEMPLATE_RULES
    plan = _FoldPlan(
        tuple(sorted((m, a, w) for (m, a), w in late.items())),
        tuple(sorted(early)), forest, seed, template_source)

    tasks = [(ds, k, plan) for k in range(ds.n_patients)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fold_outputs = list(pool.map(_fold_worker, tasks))
    else:
        fold_outputs = [_fold_worker(t) for t in tasks]
    return [_score_cell(ds, cfg, fold_outputs) for cfg in configs]


def run_experiment(ds: DatasetManifest, config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    return run_grid(ds, [config], workers)[0]


# -- grid helpers ------------------------------------------------------------

def default_subsets(modalities: Sequence[str]) -> list[tuple]:
    """Every multimodal subset: pairs first, then larger ones."""
    out = []
    for k in range(2, len(modalities) + 1):
        out.extend(itertools.combinations(modalities, k))
    return out


def late_grid(subsets, aggregations=fusion.AGGREGATIONS, rules=fusion.LATE_RULES, **kw) -> list[ExperimentConfig]:
    return [ExperimentConfig(s, a, r, **kw) for a in aggregations for r in rules for s in subsets]


def early_grid(subsets, modes=("concat", "kronecker"), **kw) -> list[ExperimentConfig]:
    return [ExperimentConfig(s, "A1", EARLY_PREFIX + m, **kw) for m in modes for s in subsets]


# -- rank summaries ----------------------------------------------------------

def rank_flows(auc_table, row_labels=(), col_labels=()) -> tuple[RankMatrix, np.ndarray]:
    """Rank flows within each row (best = M, ties share the mean rank) and
    return the normalised score ``sum(ranks) / (rows * M)`` per flow."""
    table = np.asarray(auc_table, dtype=np.float64)
    if table.ndim != 2 or table.size == 0:
        raise ValueError("expected a non-empty rows x flows table")
    ranks = np.vstack([average_ranks(row) for row in table])
    n, m = ranks.shape
    return RankMatrix(ranks, row_labels, col_labels), ranks.sum(axis=0) / (n * m)


def rank_unimodal_contribution(auc_table, flows: Sequence[Sequence[str]]) -> dict:
    """Credit every modality with the rank of each multimodal flow that
    contains it, accumulated over rows.

    Scores are divided by the largest total the modality could collect,
    i.e. every row giving its flows the top ranks.
    """
    table = np.asarray(auc_table, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != len(flows):
        raise ValueError("one column per flow is required")
    ranks, _ = rank_flows(table)
    n, m = table.shape
    modalities = []
    for f in flows:
        for mod in f:
            if mod not in modalities:
                modalities.append(mod)
    scores = {}
    for mod in modalities:
        cols = [j for j, f in enumerate(flows) if mod in f]
        best_possible = n * sum(range(m, m - len(cols), -1))
        scores[mod] = float(ranks.ranks[:, cols].sum() / best_possible)
    return scores


# -- synthetic data ----------------------------------------------------------

DEFAULT_SYNTH_MODALITIES = {
    # name: (samples per patient, features)
    "pathomics": (8, 6),
    "radiomics": (4, 6),
    "semantic": (1, 4),
}


def make_synthetic_manifest(n_patients: int = 40, informativeness=None, seed: int = 0,
                            layout=None, positive_fraction: float = 1 / 3) -> DatasetManifest:
    """Class-conditional Gaussian patients.

    For each modality a fixed random unit direction ``w`` is drawn. A patient
    of class ``y`` has a latent mean ``(y - 1/2) * s * w + e`` with
    ``e ~ N(0, I)`` (patient effect) and each of its samples adds ``N(0, I)``
    noise. ``s`` is the modality's informativeness: the class separation in
    units of the between-patient spread.
    """
    if n_patients < 4:
        raise ValueError("need at least 4 patients")
    layout = dict(layout or DEFAULT_SYNTH_MODALITIES)
    if informativeness is None:
        informativeness = {m: 1.0 for m in layout}
    if not isinstance(informativeness, dict):
        informativeness = dict(zip(layout, informativeness))
    if set(informativeness) != set(layout):
        raise ValueError("informativeness must name exactly the synthetic modalities")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5EED])))
    n_pos = min(max(1, int(round(n_patients * positive_fraction))), n_patients - 1)
    labels = np.zeros(n_patients, dtype=np.int64)
    labels[rng.permutation(n_patients)[:n_pos]] = 1
    pids = tuple(f"p{k:03d}" for k in range(n_patients))
    samples, names = {}, {}
    for mi, (m, (n_samples, n_feat)) in enumerate(layout.items()):
        mrng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5EED, mi + 1])))
        w = mrng.standard_normal(n_feat)
        w /= np.linalg.norm(w)
        sep = float(informativeness[m])
        per = {}
        for pid, y in zip(pids, labels):
            centre = (y - 0.5) * sep * w + mrng.standard_normal(n_feat)
            per[pid] = centre + mrng.standard_normal((n_samples, n_feat))
        samples[m] = per
        names[m] = tuple(f"{m}_f{k}" for k in range(n_feat))
    return DatasetManifest(pids, labels, tuple(layout), samples, names)
