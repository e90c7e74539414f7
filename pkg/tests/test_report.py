import csv

import numpy as np
import pytest

from mmfusion import fusion
from mmfusion.report import (ResultSet, best_rule_tests, cross_comparison, early_table, flow_ranking, grid_table,
                             late_vs_early, modality_contribution, unimodal_table, write_compare, write_table)

MODS = ("P", "R", "S")
SUBSETS = [("P", "R"), ("P", "S"), ("R", "S"), ("P", "R", "S")]
LABELS = [0, 1, 0, 1, 1, 0, 0, 1]


def cell(mods, agg, rule, auc, scores=None):
    scores = scores if scores is not None else [0.5] * len(LABELS)
    return {"cell": f"{agg}+{rule}|{'+'.join(mods)}", "auc": auc,
            "config": {"modalities": list(mods), "aggregation": agg, "rule": rule},
            "per_patient": [{"patient_id": f"p{k}", "label": y, "score": s}
                            for k, (y, s) in enumerate(zip(LABELS, scores))]}


def results(late_auc, early_auc=lambda mode, s: 0.5, uni_auc=lambda m, a: 0.5, scores=lambda a, r, s: None):
    cells = [cell(s, a, r, late_auc(a, r, s), scores(a, r, s))
             for a in fusion.AGGREGATIONS for r in fusion.LATE_RULES for s in SUBSETS]
    cells += [cell(s, "A1", "early:" + m, early_auc(m, s)) for m in ("concat", "kronecker") for s in SUBSETS]
    uni = [cell((m,), a, "mean", uni_auc(m, a)) for m in MODS for a in fusion.AGGREGATIONS]
    return ResultSet({"cells": cells, "unimodal": uni})


def flags(rows, col=-1):
    return [r[col] for r in rows]


class TestTables:
    def test_grid_shape(self):
        rs = results(lambda a, r, s: 0.6)
        header, rows = grid_table(rs)
        assert header == ["rules", "P+R", "P+S", "R+S", "P+R+S"] and len(rows) == 16
        assert rows[0][0] == "A1+product" and rows[-1][0] == "A2+confidence"
        assert len(early_table(rs)[1]) == 2 and len(unimodal_table(rs)[1]) == 6

    def test_write_table(self, tmp_path):
        write_table(tmp_path, "t", ["a", "b"], [["x", 0.1 + 0.2], ["yy", None]], ["note"])
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[1] == ["x", repr(0.1 + 0.2)] and rows[2] == ["yy", ""]
        txt = (tmp_path / "t.txt").read_text().splitlines()
        assert txt[2].endswith("0.300") and txt[-1] == "note"


class TestIdenticalResults:
    def test_no_flags(self, tmp_path):
        rs = results(lambda a, r, s: 0.7, lambda m, s: 0.7, lambda m, a: 0.7)
        _, _, _, summary, _ = flow_ranking(rs)
        assert set(flags(summary)) == {""}
        assert set(flags(best_rule_tests(rs)[1])) == {""}
        assert set(flags(late_vs_early(rs)[1], 7)) == {"no"}
        assert set(flags(cross_comparison(rs, rs)[1], 7)) == {"no"}
        names = write_compare(rs, tmp_path, rs)
        assert names == ["flow_ranks", "flows", "modalities", "rules", "late_vs_early", "cross"]


class TestDominantFlow:
    def test_flow_flagged_best_and_others_tested(self):
        # P+R+S wins every row; the rest keep a fixed order so F_F is undefined
        order = {("P", "R"): 0.6, ("P", "S"): 0.62, ("R", "S"): 0.64, ("P", "R", "S"): 0.9}
        uni = {"P": 0.5, "R": 0.52, "S": 0.54}
        rs = results(lambda a, r, s: order[s], uni_auc=lambda m, a: uni[m])
        rank_header, rank_rows, _, summary, notes = flow_ranking(rs)
        assert len(rank_rows) == 16 and all(row[1:] == [1, 2, 3, 4, 5, 6, 7] for row in rank_rows)
        by_flow = {row[0]: row for row in summary}
        assert by_flow["P+R+S"][-1] == "best" and by_flow["P+R+S"][1] == 1.0
        others = [row for row in summary if row[0] != "P+R+S"]
        assert all(row[3] is not None for row in others)
        assert by_flow["P"][-1] == "different" and "undefined" in notes[0]

    def test_contribution(self):
        order = {("P", "R"): 0.6, ("P", "S"): 0.62, ("R", "S"): 0.64, ("P", "R", "S"): 0.9}
        header, rows = modality_contribution(results(lambda a, r, s: order[s]))
        got = dict(rows)
        assert got["S"] == pytest.approx(1.0) and got["P"] == pytest.approx((4 + 1 + 2) / 9)


class TestBestRule:
    def test_wilcoxon_on_errors(self):
        good = [0.1, 0.9, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9]
        bad = [0.6, 0.4, 0.7, 0.3, 0.2, 0.8, 0.9, 0.1]

        def aucs(a, r, s):
            return 0.9 if (a, r) == ("A1", "ds") else 0.5

        def scores(a, r, s):
            return good if (a, r) == ("A1", "ds") else bad

        header, rows = best_rule_tests(results(aucs, scores=scores))
        pr = [row for row in rows if row[0] == "P+R"]
        assert [row[1] for row in pr if row[-1] == "best"] == ["A1+ds"]
        assert all(row[-1] == "different" for row in pr if row[1] != "A1+ds")
        assert all(row[4] < 0 for row in pr if row[4] is not None)


class TestSignTables:
    def test_late_vs_early_counts(self):
        late = {r: 0.6 + 0.01 * k for k, r in enumerate(fusion.LATE_RULES)}
        rs = results(lambda a, r, s: late[r], lambda m, s: 0.625)
        header, rows = late_vs_early(rs)
        assert len(rows) == 8
        for row in rows:
            assert row[3] + row[4] + row[5] == 8
            assert row[2] == "5-0-3" and row[7] == "no"

    def test_late_dominates(self):
        rs = results(lambda a, r, s: 0.8, lambda m, s: 0.5)
        assert set(flags(late_vs_early(rs)[1], 7)) == {"yes"}

    def test_cross(self):
        hi = results(lambda a, r, s: 0.8)
        lo = results(lambda a, r, s: 0.6)
        header, rows = cross_comparison(hi, lo)
        assert len(rows) == 16 and all(row[2] == "16-0-0" and row[7] == "yes" for row in rows)
        header, rows = cross_comparison(lo, hi)
        assert all(row[2] == "0-0-16" and row[7] == "no" for row in rows)
