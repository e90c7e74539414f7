"""
Combining classifier outputs for one patient
============================================

Three modality classifiers give soft class supports. Stacked, they form
a decision profile, which each late-fusion rule turns into one decision.
"""

import numpy as np

from mmfusion.features import FeatureVector
from mmfusion.fusion import LATE_RULES, DecisionProfile, early_concat, early_kronecker, fit_decision_templates, fuse

# rows: pathomics, radiomics, semantic; columns: not-adaptive, adaptive
profile = DecisionProfile(np.array([[0.6, 0.4], [0.8, 0.2], [0.3, 0.7]]))

# the template rules need class-wise mean profiles from training patients
training = [
    (DecisionProfile(np.array([[0.7, 0.3], [0.9, 0.1], [0.4, 0.6]])), 0),
    (DecisionProfile(np.array([[0.5, 0.5], [0.7, 0.3], [0.6, 0.4]])), 0),
    (DecisionProfile(np.array([[0.2, 0.8], [0.4, 0.6], [0.1, 0.9]])), 1),
]
templates = fit_decision_templates(training, n_classes=2)
print("templates\n", templates.templates)

for rule in LATE_RULES:
    out = fuse(rule, profile, templates)
    support = "-" if out.supports is None else np.round(out.supports, 4)
    print(f"{rule:>10}: class {out.chosen_class}  support {support}")

# early fusion instead concatenates (or Kronecker-multiplies) the features
a = FeatureVector(("x", "y"), [1.0, 2.0])
b = FeatureVector(("z",), [3.0])
print(early_concat([a, b], ["P", "S"]).as_dict())
print(early_kronecker([a, b], ["P", "S"]).as_dict())
