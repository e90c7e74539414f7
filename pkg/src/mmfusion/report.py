"""Result tables and the statistical comparisons run on them.

Every table is a header plus rows of strings, ints and floats. It is written
twice: ``name.csv`` (floats as ``repr``, lossless) and ``name.txt``
(aligned columns, floats to three decimals).
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fusion, stats
from .evaluate import rank_flows, rank_unimodal_contribution

SUBSET_SEP = "+"


def subset_label(modalities: Sequence[str]) -> str:
    return SUBSET_SEP.join(modalities)


def _fmt_csv(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _fmt_txt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.3f}"
    return "-" if v is None else str(v)


def write_table(out_dir: Path, name: str, header: Sequence[str], rows: Sequence[Sequence],
                notes: Sequence[str] = ()) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt_csv(v) for v in r])
    cells = [list(header)] + [[_fmt_txt(v) for v in r] for r in rows]
    widths = [max(len(c[j]) for c in cells) for j in range(len(header))]
    lines = []
    for i, c in enumerate(cells):
        lines.append("  ".join(s.ljust(w) if j == 0 else s.rjust(w) for j, (s, w) in enumerate(zip(c, widths))).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.extend(notes)
    (out_dir / f"{name}.txt").write_text("\n".join(lines) + "\n")


# -- views on a results document ---------------------------------------------

class ResultSet:
    """Index over the ``results.json`` written by ``run``."""

    def __init__(self, doc: dict):
        self.doc = doc
        self.late = {}       # (aggregation, rule, subset) -> cell
        self.early = {}      # (mode, subset) -> cell
        self.unimodal = {}   # (modality, aggregation) -> cell
        for cell in doc.get("cells", []):
            cfg = cell["config"]
            subset = tuple(cfg["modalities"])
            rule = cfg["rule"]
            if rule.startswith("early:"):
                self.early[(rule[len("early:"):], subset)] = cell
            else:
                self.late[(cfg["aggregation"], rule, subset)] = cell
        for cell in doc.get("unimodal", []):
            cfg = cell["config"]
            self.unimodal[(cfg["modalities"][0], cfg["aggregation"])] = cell

    def subsets(self) -> list[tuple]:
        seen = []
        for _, _, s in self.late:
            if s not in seen:
                seen.append(s)
        return seen

    def rule_rows(self) -> list[tuple[str, str]]:
        seen = []
        for a, r, _ in self.late:
            if (a, r) not in seen:
                seen.append((a, r))
        return seen

    def modalities(self) -> list[str]:
        out = []
        for m, _ in self.unimodal:
            if m not in out:
                out.append(m)
        return out


def rule_label(aggregation: str, rule: str) -> str:
    return f"{aggregation}+{rule}"


def grid_table(rs: ResultSet):
    subsets = rs.subsets()
    header = ["rules"] + [subset_label(s) for s in subsets]
    rows = []
    for a, r in rs.rule_rows():
        cells = [rs.late.get((a, r, s)) for s in subsets]
        rows.append([rule_label(a, r)] + [c["auc"] if c else None for c in cells])
    return header, rows


def early_table(rs: ResultSet):
    subsets = []
    modes = []
    for mode, s in rs.early:
        if s not in subsets:
            subsets.append(s)
        if mode not in modes:
            modes.append(mode)
    header = ["mode"] + [subset_label(s) for s in subsets]
    rows = [[m] + [rs.early[(m, s)]["auc"] if (m, s) in rs.early else None for s in subsets] for m in modes]
    return header, rows


def unimodal_table(rs: ResultSet):
    rows = [[m, a, c["auc"]] for (m, a), c in rs.unimodal.items()]
    return ["modality", "aggregation", "auc"], rows


# -- comparisons -------------------------------------------------------------

def flow_ranking(rs: ResultSet, alpha: float = 0.1):
    """Rank unimodal and multimodal flows within each rule row.

    A unimodal flow's value in row ``(A, rule)`` is its AUC under
    aggregation ``A``. Only rows where every flow has a value are used.
    Returns ``(rank_header, rank_rows, summary_header, summary_rows, notes)``.
    """
    flows = [(m,) for m in rs.modalities()] + rs.subsets()
    labels = [subset_label(f) for f in flows]
    row_labels, table = [], []
    for a, r in rs.rule_rows():
        vals = []
        for f in flows:
            cell = rs.unimodal.get((f[0], a)) if len(f) == 1 else rs.late.get((a, r, f))
            vals.append(None if cell is None else cell["auc"])
        if None not in vals:
            row_labels.append(rule_label(a, r))
            table.append(vals)
    if not table or len(flows) < 2:
        return None
    ranks, score = rank_flows(table, row_labels, labels)
    mean_ranks = ranks.mean_ranks()
    best = int(np.argmax(score))
    unique_best = int(np.sum(score == score[best])) == 1
    notes = []
    try:
        ff = stats.friedman_iman_davenport(ranks, alpha)
        omnibus = ff.significant
        notes.append(f"Iman-Davenport F_F = {ff.statistic:.4f}, df = {ff.details['df']}, p = {ff.p_value:.4g}")
    except stats.DegenerateStatisticError:
        # every row orders the flows identically: the strongest possible disagreement
        omnibus = True
        notes.append("Iman-Davenport F_F undefined: all rows rank the flows identically")
    except ValueError as exc:
        omnibus = False
        notes.append(f"Friedman test skipped: {exc}")
    posthoc = {}
    if omnibus and len(flows) > 1:
        for res in stats.bonferroni_dunn(ranks, best, alpha):
            posthoc[res.details["column"]] = res
    rank_rows = [[lab] + list(map(float, row)) for lab, row in zip(row_labels, ranks.ranks)]
    summary = []
    for j, lab in enumerate(labels):
        res = posthoc.get(j)
        if j == best:
            flag = "best" if unique_best else ""
        elif res is not None and res.significant:
            flag = "different"
        else:
            flag = ""
        summary.append([lab, float(score[j]), float(mean_ranks[j]),
                        None if res is None else res.details["z"],
                        None if res is None else res.p_value, flag])
    return (["rules"] + labels, rank_rows,
            ["flow", "score", "mean_rank", "z_vs_best", "p", "flag"], summary, notes)


def modality_contribution(rs: ResultSet):
    subsets = rs.subsets()
    table = []
    for a, r in rs.rule_rows():
        vals = [rs.late.get((a, r, s)) for s in subsets]
        if None not in vals:
            table.append([c["auc"] for c in vals])
    if not table or len(subsets) < 2:
        return None
    scores = rank_unimodal_contribution(table, subsets)
    return ["modality", "score"], [[m, float(v)] for m, v in scores.items()]


def _errors(cell) -> np.ndarray:
    return np.array([abs(p["label"] - p["score"]) for p in cell["per_patient"]])


def best_rule_tests(rs: ResultSet, alpha: float = 0.1, two_sided: bool = False):
    """Per modality subset: rank rules by AUC (best = highest rank) and test
    every rule against the best with a Wilcoxon signed-rank test on the
    per-patient absolute errors ``|label - score|``."""
    header = ["subset", "rules", "auc", "rank", "z", "p", "flag"]
    rows = []
    for s in rs.subsets():
        keys = [(a, r) for a, r in rs.rule_rows() if (a, r, s) in rs.late]
        aucs = np.array([rs.late[(a, r, s)]["auc"] for a, r in keys])
        ranks = stats.average_ranks(aucs)
        best = int(np.argmax(ranks))
        unique_best = int(np.sum(ranks == ranks[best])) == 1
        best_err = _errors(rs.late[(*keys[best], s)])
        for k, (a, r) in enumerate(keys):
            z = p = None
            if k == best:
                flag = "best" if unique_best else ""
            else:
                err = _errors(rs.late[(a, r, s)])
                try:
                    res = stats.wilcoxon_signed_rank(np.column_stack([err, best_err]), alpha, two_sided)
                    z, p = res.statistic, res.p_value
                    flag = "different" if res.significant else ""
                except ValueError:
                    flag = "n/a"
            rows.append([subset_label(s), rule_label(a, r), float(aucs[k]), float(ranks[k]), z, p, flag])
    return header, rows


def _sign_row(label_a, label_b, a, b, alpha, tol=0.0):
    w, t, l = stats.win_tie_loss(a, b, tol)
    printed = stats.sign_test(w, t, l, alpha, spread="sqrt_half_n")
    binomial = stats.sign_test(w, t, l, alpha, spread="half_sqrt_n")
    return [label_a, label_b, f"{w}-{t}-{l}", w, t, l, printed.details["threshold"],
            "yes" if printed.significant else "no", "yes" if binomial.significant else "no", printed.p_value]


SIGN_HEADER = ["row", "column", "w-t-l", "wins", "ties", "losses", "threshold",
               "significant", "significant_binomial_sd", "p_exact"]


def late_vs_early(rs: ResultSet, alpha: float = 0.05, tol: float = 0.0):
    """Win-tie-loss of the A1 late-fusion rules against each early-fusion mode."""
    rows = []
    for (mode, s), cell in rs.early.items():
        late = [rs.late[("A1", r, s)]["auc"] for r in fusion.LATE_RULES if ("A1", r, s) in rs.late]
        if not late:
            continue
        rows.append(_sign_row(subset_label(s), mode, late, [cell["auc"]] * len(late), alpha, tol))
    return SIGN_HEADER, rows


def cross_comparison(rs: ResultSet, other: ResultSet, alpha: float = 0.05, tol: float = 0.0):
    """Every subset of ``rs`` against every subset of ``other``, paired over
    the rule rows both runs contain."""
    rows = []
    shared = [k for k in rs.rule_rows() if k in other.rule_rows()]
    for s in rs.subsets():
        for t in other.subsets():
            pairs = [(rs.late[(a, r, s)]["auc"], other.late[(a, r, t)]["auc"]) for a, r in shared
                     if (a, r, s) in rs.late and (a, r, t) in other.late]
            if not pairs:
                continue
            a_vals, b_vals = zip(*pairs)
            rows.append(_sign_row(subset_label(s), subset_label(t), a_vals, b_vals, alpha, tol))
    return SIGN_HEADER, rows


def write_compare(rs: ResultSet, out_dir: Path, other: Optional[ResultSet] = None,
                  alpha_friedman: float = 0.1, alpha_wilcoxon: float = 0.1, alpha_sign: float = 0.05,
                  two_sided: bool = False) -> list[str]:
    """Write every applicable comparison report; return the table names."""
    written = []
    fr = flow_ranking(rs, alpha_friedman)
    if fr is not None:
        rh, rrows, sh, srows, notes = fr
        write_table(out_dir, "flow_ranks", rh, rrows)
        write_table(out_dir, "flows", sh, srows, notes)
        written += ["flow_ranks", "flows"]
    mc = modality_contribution(rs)
    if mc is not None:
        write_table(out_dir, "modalities", *mc)
        written.append("modalities")
    if rs.late:
        write_table(out_dir, "rules", *best_rule_tests(rs, alpha_wilcoxon, two_sided))
        written.append("rules")
    if rs.early:
        write_table(out_dir, "late_vs_early", *late_vs_early(rs, alpha_sign))
        written.append("late_vs_early")
    if other is not None:
        write_table(out_dir, "cross", *cross_comparison(rs, other, alpha_sign))
        written.append("cross")
    return written
