"""Patient-wise aggregation, decision-profile fusion and early fusion.

A decision profile stacks, for one patient, the class supports returned by
the ``L`` per-modality classifiers into an ``L x C`` matrix. Every rule below
maps a profile to a :class:`FusionOutcome`. Ties always go to the lowest
index (class, or modality row).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .features import FeatureVector

SUPPORT_TOL = 1e-9


def check_support(s, tol: float = SUPPORT_TOL) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("a class support must be a non-empty vector")
    if np.any(s < -tol) or np.any(s > 1 + tol) or abs(s.sum() - 1.0) > tol:
        raise ValueError(f"not a valid class support: {s.tolist()}")
    return s


@dataclass(frozen=True)
class DecisionProfile:
    mu: np.ndarray
    modality_ids: tuple = ()

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        if mu.ndim != 2 or mu.shape[0] < 1 or mu.shape[1] < 1:
            raise ValueError(f"decision profile must be a non-empty L x C matrix, got shape {mu.shape}")
        for row in mu:
            check_support(row)
        ids = tuple(self.modality_ids) or tuple(range(mu.shape[0]))
        if len(ids) != mu.shape[0]:
            raise ValueError("one modality id per profile row is required")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "modality_ids", ids)

    @property
    def n_modalities(self) -> int:
        return self.mu.shape[0]

    @property
    def n_classes(self) -> int:
        return self.mu.shape[1]


@dataclass(frozen=True)
class DecisionTemplateSet:
    templates: np.ndarray   # (C, L, C)
    class_counts: tuple


@dataclass(frozen=True)
class FusionOutcome:
    chosen_class: int
    supports: Optional[np.ndarray] = None

    @classmethod
    def from_supports(cls, chi) -> "FusionOutcome":
        chi = np.asarray(chi, dtype=np.float64)
        return cls(int(np.argmax(chi)), chi)


# -- aggregation -------------------------------------------------------------

def aggregate_a1(vectors: Sequence[FeatureVector]) -> FeatureVector:
    """Component-wise mean of a patient's feature vectors."""
    if not vectors:
        raise ValueError("cannot aggregate an empty list of feature vectors")
    names = vectors[0].names
    for v in vectors[1:]:
        if v.names != names:
            raise ValueError("feature vectors disagree on names/order")
    return FeatureVector(names, np.mean([v.values for v in vectors], axis=0))


def aggregate_a2(supports) -> np.ndarray:
    """Component-wise mean of a patient's class supports."""
    rows = [check_support(s) for s in supports]
    if not rows:
        raise ValueError("cannot aggregate an empty list of supports")
    if len({r.size for r in rows}) != 1:
        raise ValueError("supports disagree on the number of classes")
    return np.mean(rows, axis=0)


def build_profile(per_modality, modality_ids: Sequence = ()) -> DecisionProfile:
    rows = [np.asarray(r, dtype=np.float64) for r in per_modality]
    if not rows:
        raise ValueError("need at least one modality")
    if len({r.size for r in rows}) != 1:
        raise ValueError("modalities disagree on the number of classes")
    return DecisionProfile(np.vstack(rows), tuple(modality_ids))


# -- class-conscious rules ---------------------------------------------------

def fuse_product(dp: DecisionProfile) -> FusionOutcome:
    return FusionOutcome.from_supports(np.prod(dp.mu, axis=0))


def fuse_max(dp: DecisionProfile) -> FusionOutcome:
    return FusionOutcome.from_supports(dp.mu.max(axis=0))


def fuse_min(dp: DecisionProfile) -> FusionOutcome:
    return FusionOutcome.from_supports(dp.mu.min(axis=0))


def fuse_mean(dp: DecisionProfile) -> FusionOutcome:
    return FusionOutcome.from_supports(dp.mu.mean(axis=0))


# -- decision templates ------------------------------------------------------

def fit_decision_templates(training, n_classes: Optional[int] = None) -> DecisionTemplateSet:
    """Per-class centroid of training profiles, from ``(profile, class)`` pairs."""
    training = list(training)
    if not training:
        raise ValueError("no training profiles")
    shape = training[0][0].mu.shape
    if n_classes is None:
        n_classes = shape[1]
    sums = np.zeros((n_classes,) + shape)
    counts = np.zeros(n_classes, dtype=np.int64)
    for dp, c in training:
        if dp.mu.shape != shape:
            raise ValueError("training profiles differ in shape")
        sums[c] += dp.mu
        counts[c] += 1
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"classes {empty.tolist()} have no training profiles")
    return DecisionTemplateSet(sums / counts[:, None, None], tuple(int(c) for c in counts))


def _check_templates(dp: DecisionProfile, dts: DecisionTemplateSet):
    if dts is None:
        raise ValueError("this rule needs fitted decision templates")
    if dts.templates.shape[1:] != dp.mu.shape:
        raise ValueError(f"templates of shape {dts.templates.shape[1:]} do not match profile {dp.mu.shape}")


def fuse_decision_template(dp: DecisionProfile, dts: DecisionTemplateSet) -> FusionOutcome:
    """Support = 1 minus the mean squared deviation from each class template."""
    _check_templates(dp, dts)
    msd = ((dts.templates - dp.mu[None]) ** 2).mean(axis=(1, 2))
    return FusionOutcome.from_supports(1.0 - msd)


def fuse_dempster_shafer(dp: DecisionProfile, dts: DecisionTemplateSet) -> FusionOutcome:
    """Dempster-Shafer combination over per-modality template rows.

    The proximity of modality ``i`` to class ``j`` is the normalised inverse
    of ``1 + ||DT_j[i] - D_i||^2`` (Euclidean norm). Per-modality beliefs are
    multiplied across modalities and the result rescaled to sum to one.
    """
    _check_templates(dp, dts)
    n_classes = dp.n_classes
    dist2 = ((dts.templates - dp.mu[None]) ** 2).sum(axis=2)        # (C, L)
    inv = 1.0 / (1.0 + dist2)
    phi = inv / inv.sum(axis=0, keepdims=True)                       # (C, L)
    log_belief = np.zeros(n_classes)
    for j in range(n_classes):
        others = np.prod(np.delete(1.0 - phi, j, axis=0), axis=0)   # (L,)
        num = phi[j] * others
        den = 1.0 - phi[j] * (1.0 - others)
        if np.any(den == 0.0):
            # phi[j] == 1 with every rival at 0: certain for class j
            chi = np.zeros(n_classes)
            chi[j] = 1.0
            return FusionOutcome.from_supports(chi)
        with np.errstate(divide="ignore"):
            log_belief[j] = np.sum(np.log(num / den))
    if np.all(np.isneginf(log_belief)):
        return FusionOutcome.from_supports(np.full(n_classes, 1.0 / n_classes))
    # normalising constant K applied in log space to avoid underflow for large L
    w = np.exp(log_belief - log_belief.max())
    return FusionOutcome.from_supports(w / w.sum())


# -- label-level rules -------------------------------------------------------

def fuse_majority_vote(dp: DecisionProfile) -> FusionOutcome:
    votes = np.bincount(np.argmax(dp.mu, axis=1), minlength=dp.n_classes)
    return FusionOutcome(int(np.argmax(votes)))


def fuse_confidence(dp: DecisionProfile) -> FusionOutcome:
    q = int(np.argmax(dp.mu.max(axis=1)))
    return FusionOutcome(int(np.argmax(dp.mu[q])))


RULES = {
    "product": fuse_product,
    "max": fuse_max,
    "min": fuse_min,
    "mean": fuse_mean,
    "dt": fuse_decision_template,
    "ds": fuse_dempster_shafer,
    "vote": fuse_majority_vote,
    "confidence": fuse_confidence,
}
LATE_RULES = tuple(RULES)
TEMPLATE_RULES = frozenset({"dt", "ds"})
CRISP_RULES = frozenset({"vote", "confidence"})
AGGREGATIONS = ("A1", "A2")


def fuse(rule: str, dp: DecisionProfile, templates: Optional[DecisionTemplateSet] = None) -> FusionOutcome:
    try:
        fn = RULES[rule]
    except KeyError:
        raise ValueError(f"unknown fusion rule {rule!r}; expected one of {LATE_RULES}") from None
    if rule in TEMPLATE_RULES:
        return fn(dp, templates)
    return fn(dp)


# -- early fusion ------------------------------------------------------------

def _named(vectors, modalities):
    vectors = list(vectors)
    if not vectors:
        raise ValueError("need at least one modality")
    if modalities is None:
        modalities = [f"m{i}" for i in range(len(vectors))]
    if len(modalities) != len(vectors):
        raise ValueError("one modality name per vector is required")
    for m, v in zip(modalities, vectors):
        if len(v) == 0:
            raise ValueError(f"modality {m!r} contributes an empty feature vector")
    return vectors, list(modalities)


def early_concat(vectors: Sequence[FeatureVector], modalities: Optional[Sequence[str]] = None) -> FeatureVector:
    vectors, modalities = _named(vectors, modalities)
    names = tuple(f"{m}:{n}" for m, v in zip(modalities, vectors) for n in v.names)
    return FeatureVector(names, np.concatenate([v.values for v in vectors]))


def early_kronecker(vectors: Sequence[FeatureVector], modalities: Optional[Sequence[str]] = None,
                    augment: bool = True) -> FeatureVector:
    """Iterated Kronecker product of the modality vectors.

    With ``augment`` each vector gets a trailing constant 1 first, so the
    result also carries every unimodal term and lower-order interaction.
    """
    vectors, modalities = _named(vectors, modalities)
    names, values = [""], np.ones(1)
    for m, v in zip(modalities, vectors):
        vn = [f"{m}:{n}" for n in v.names]
        vv = v.values
        if augment:
            vn.append("1")
            vv = np.append(vv, 1.0)
        names = [f"{a}*{b}" if a else b for a in names for b in vn]
        values = np.kron(values, vv)
    return FeatureVector(tuple(names), values)


EARLY_MODES = {"concat": early_concat, "kronecker": early_kronecker}
