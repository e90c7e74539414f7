"""
Comparing flows and rules with rank tests
=========================================

A toy AUC table (rows: rule combinations, columns: flows) goes through
the Friedman test with the Iman-Davenport correction and, if that rejects,
the Bonferroni-Dunn comparison against the best flow. Two runs are then
compared cell by cell with the counting sign test.
"""

import numpy as np

from mmfusion.evaluate import rank_flows, rank_unimodal_contribution
from mmfusion.stats import (DegenerateStatisticError, bonferroni_dunn, friedman_iman_davenport, sign_test,
                            wilcoxon_signed_rank, win_tie_loss)

rng = np.random.default_rng(1)
flows = [("P",), ("R",), ("S",), ("P", "R"), ("P", "S"), ("R", "S"), ("P", "R", "S")]
base = np.array([0.70, 0.80, 0.55, 0.82, 0.74, 0.79, 0.88])
table = np.clip(base + rng.normal(0, 0.04, (16, 7)), 0, 1)

ranks, score = rank_flows(table)
for f, s in zip(flows, score):
    print(f"{'+'.join(f):<6} {s:.3f}")

try:
    ff = friedman_iman_davenport(ranks)
    print(f"F_F = {ff.statistic:.3f}, p = {ff.p_value:.3g}")
    reject = ff.significant
except DegenerateStatisticError:
    reject = True
if reject:
    best = int(np.argmax(score))
    for res in bonferroni_dunn(ranks, best):
        print("  vs", "+".join(flows[res.details["column"]]), f"z={res.details['z']:.2f}",
              "different" if res.significant else "")

# how much each modality contributes to the multimodal flows
print(rank_unimodal_contribution(table[:, 3:], flows[3:]))

# paired per-patient errors of two rules
err_a, err_b = rng.uniform(0, 0.5, 30), rng.uniform(0.1, 0.7, 30)
res = wilcoxon_signed_rank(np.c_[err_b, err_a])
print(f"Wilcoxon z = {res.statistic:.3f}, one-sided p = {res.p_value:.3g}")

# sign test over 16 rule combinations of two runs
w, t, l = win_tie_loss(table[:, 6], table[:, 3])
res = sign_test(w, t, l)
print(f"{w}-{t}-{l}: threshold {res.details['threshold']:.2f}, significant {res.significant}")
