import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import mmfusion.evaluate as ev
from mmfusion.evaluate import (ConfigError, DataError, DatasetManifest, ExperimentConfig, InvariantViolation, auc,
                               default_subsets, early_grid, late_grid, load_manifest, lopo_folds, make_synthetic_manifest,
                               manifest_from_dict, manifest_to_dict, rank_flows, rank_unimodal_contribution, run_grid)
from mmfusion.forest import ForestParams
from mmfusion.stats import average_ranks

FAST = ForestParams(n_trees=10)
MODS = ("pathomics", "radiomics", "semantic")


def flat(value):
    return {m: value for m in MODS}


def unimodal(ds, forest=FAST, seed=0):
    return [ExperimentConfig((m,), a, "mean", forest, seed) for m in ds.modalities for a in ("A1", "A2")]


class TestAuc:
    def test_examples(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
        assert auc([0.5, 0.5], [1, 0]) == 0.5
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30))
    def test_label_flip_complement(self, data):
        scores = [s for s, _ in data]
        labels = [int(b) for _, b in data]
        if len(set(labels)) < 2:
            with pytest.raises(ValueError):
                auc(scores, labels)
            return
        assert auc(scores, labels) + auc(scores, [1 - y for y in labels]) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=20))
    def test_pair_count_oracle(self, data):
        labels = [int(b) for _, b in data]
        if len(set(labels)) < 2:
            return
        pos = [s for s, y in data if y]
        neg = [s for s, y in data if not y]
        want = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg) / (len(pos) * len(neg))
        assert auc([s for s, _ in data], labels) == pytest.approx(want)

    @given(st.lists(st.integers(-50, 50), min_size=4, max_size=20), st.data())
    def test_monotone_transform_invariant(self, scores, data):
        labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
        if len(set(labels)) < 2:
            return
        assert auc(scores, labels) == auc([v ** 3 + 2 * v for v in scores], labels)


class TestManifest:
    def doc(self):
        return {"modalities": ["a"], "patients": [{"id": "x", "label": "adaptive"}, {"id": "y", "label": 0}],
                "samples": {"a": {"x": [[1, 2]], "y": [[3, 4], [5, 6]]}}}

    def test_roundtrip(self, tmp_path):
        ds = manifest_from_dict(self.doc())
        assert ds.labels.tolist() == [1, 0] and ds.feature_names["a"] == ("f0", "f1")
        (tmp_path / "m.json").write_text(json.dumps(manifest_to_dict(ds)))
        back = load_manifest(tmp_path / "m.json")
        np.testing.assert_array_equal(back.samples["a"]["y"], ds.samples["a"]["y"])

    def test_bad_label(self):
        d = self.doc()
        d["patients"][0]["label"] = "cured"
        with pytest.raises(DataError):
            manifest_from_dict(d)

    def test_unknown_patient(self):
        d = self.doc()
        d["samples"]["a"]["z"] = [[0, 0]]
        with pytest.raises(DataError):
            manifest_from_dict(d)

    def test_missing_modality(self):
        d = self.doc()
        d["modalities"].append("b")
        with pytest.raises(DataError):
            manifest_from_dict(d)

    def test_shape_and_finite(self):
        with pytest.raises(DataError):
            DatasetManifest(("x",), [0], ("a",), {"a": {"x": [[1.0, np.nan]]}}, {"a": ("f0", "f1")})
        with pytest.raises(DataError):
            DatasetManifest(("x",), [0], ("a",), {"a": {"x": [[1.0]]}}, {"a": ("f0", "f1")})
        with pytest.raises(DataError):
            DatasetManifest(("x", "x"), [0, 1], (), {}, {})

    def test_feature_table_paths(self, tmp_path):
        (tmp_path / "a.csv").write_text("sample_id,patient_id,modality,label,u,v\n"
                                        "s0,x,a,1,1.0,2.0\ns1,y,a,0,3.0,4.0\ns2,y,a,0,5.0,6.0\n")
        doc = {"modalities": ["a"], "patients": [{"id": "x", "label": 1}, {"id": "y", "label": 0}],
               "features": {"a": "a.csv"}}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        ds = load_manifest(tmp_path / "m.json")
        assert ds.samples["a"]["y"].shape == (2, 2) and ds.feature_names["a"] == ("u", "v")
        assert ds.sample_ids["a"]["y"] == ["s1", "s2"]

    def test_not_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{")
        with pytest.raises(DataError):
            load_manifest(tmp_path / "m.json")


class TestConfig:
    def test_cell_id(self):
        assert ExperimentConfig(("a", "b"), "A1", "mean").cell_id == "A1+mean|a+b"

    def test_early_needs_a1(self):
        ExperimentConfig(("a", "b"), "A1", "early:concat")
        with pytest.raises(ConfigError):
            ExperimentConfig(("a", "b"), "A2", "early:concat")

    @pytest.mark.parametrize("kw", [dict(modalities=()), dict(modalities=("a", "a")), dict(aggregation="A3"),
                                    dict(rule="median"), dict(rule="early:sum"), dict(template_source="all")])
    def test_invalid(self, kw):
        base = dict(modalities=("a",))
        base.update(kw)
        with pytest.raises(ConfigError):
            ExperimentConfig(**base)

    def test_grid_sizes(self):
        subsets = default_subsets(MODS)
        assert subsets == [MODS[:2], MODS[::2], MODS[1:], MODS]
        assert len(late_grid(subsets)) == 64 and len(early_grid(subsets)) == 8
        assert all(c.aggregation == "A1" for c in early_grid(subsets))

    def test_run_grid_checks(self):
        ds = make_synthetic_manifest(8)
        with pytest.raises(ConfigError):
            run_grid(ds, [])
        with pytest.raises(ConfigError):
            run_grid(ds, [ExperimentConfig(("ct",))])
        with pytest.raises(ConfigError):
            run_grid(ds, [ExperimentConfig(("semantic",), seed=1), ExperimentConfig(("semantic",), seed=2)])


class TestLopo:
    def test_folds(self):
        ds = make_synthetic_manifest(6)
        folds = lopo_folds(ds)
        assert [t for t, _ in folds] == list(ds.patient_ids)
        for test, train in folds:
            assert test not in train and len(train) == 5

    def test_single_class(self):
        ds = DatasetManifest(("x", "y"), [0, 0], (), {}, {})
        with pytest.raises(DataError):
            lopo_folds(ds)

    def test_leak_check(self):
        with pytest.raises(InvariantViolation):
            ev._check_no_leak("p1", ["p0", "p1"])
        with pytest.raises(InvariantViolation):
            ev._check_no_leak("p1", ["p0"], ["s1"], ["s0", "s1"])
        ev._check_no_leak("p1", ["p0"], ["s1"], ["s0"])

    def test_no_training_row_from_test_patient(self, monkeypatch):
        # feature 0 carries a patient tag; every training matrix must miss exactly one tag
        pids = [f"p{k}" for k in range(6)]
        samples = {m: {p: np.c_[np.full(3, float(k)), np.random.default_rng(k).normal(size=(3, 2))]
                       for k, p in enumerate(pids)} for m in ("a", "b")}
        names = {m: ("tag", "u", "v") for m in ("a", "b")}
        ds = DatasetManifest(tuple(pids), [0, 1, 0, 1, 0, 1], ("a", "b"), samples, names)
        seen = []
        real = ev.train_forest

        def spy(X, y, params, n_classes=None):
            seen.append(set(np.round(np.asarray(X)[:, 0], 9)))
            return real(X, y, params, n_classes=n_classes)

        monkeypatch.setattr(ev, "train_forest", spy)
        cells = [ExperimentConfig(("a", "b"), a, "dt", FAST) for a in ("A1", "A2")]
        cells.append(ExperimentConfig(("a", "b"), "A1", "early:concat", FAST))
        run_grid(ds, cells)
        assert len(seen) == 6 * 5
        for tags in seen:
            assert len(tags) == 5


class TestRun:
    def test_deterministic_and_worker_independent(self):
        ds = make_synthetic_manifest(10, seed=3)
        cells = late_grid([("pathomics", "semantic")], rules=("mean", "ds", "vote"), forest=FAST)
        cells += early_grid([("pathomics", "semantic")], forest=FAST)
        a = [r.to_dict() for r in run_grid(ds, cells)]
        b = [r.to_dict() for r in run_grid(ds, cells, workers=2)]
        assert json.dumps(a) == json.dumps(b)

    def test_cell_independent_of_grid(self):
        ds = make_synthetic_manifest(10, seed=3)
        one = ExperimentConfig(("pathomics", "radiomics"), "A2", "product", FAST)
        alone = run_grid(ds, [one])[0]
        among = run_grid(ds, late_grid([("pathomics", "radiomics")], forest=FAST))
        assert [r for r in among if r.config == one][0].per_patient == alone.per_patient

    def test_crisp_rules_give_binary_scores(self):
        ds = make_synthetic_manifest(10, seed=1)
        for r in run_grid(ds, late_grid([MODS], aggregations=("A1",), rules=("vote", "confidence"), forest=FAST)):
            assert {s.score for s in r.per_patient} <= {0.0, 1.0}

    def test_resubstitution_templates(self):
        ds = make_synthetic_manifest(10, seed=1)
        res = run_grid(ds, [ExperimentConfig(MODS, "A1", "dt", FAST, template_source="resubstitution")])[0]
        assert 0.0 <= res.auc <= 1.0

    def test_uninformative_is_near_chance(self):
        aucs = []
        for seed in range(3):
            ds = make_synthetic_manifest(40, flat(0.0), seed)
            aucs += [r.auc for r in run_grid(ds, unimodal(ds))]
        assert 0.35 <= np.mean(aucs) <= 0.65
        assert all(0.15 <= a <= 0.85 for a in aucs)

    def test_very_informative_is_separable(self):
        ds = make_synthetic_manifest(40, flat(10.0), seed=0)
        assert all(r.auc >= 0.99 for r in run_grid(ds, unimodal(ds)))

    def test_auc_grows_with_informativeness(self):
        means = []
        for s in (0.0, 1.5, 4.0):
            ds = make_synthetic_manifest(30, flat(s), seed=2)
            means.append(np.mean([r.auc for r in run_grid(ds, unimodal(ds))]))
        assert means[0] < means[1] < means[2]


class TestSynthetic:
    def test_shapes_and_labels(self):
        ds = make_synthetic_manifest(12, seed=4)
        assert ds.n_patients == 12 and ds.labels.sum() == 4
        for m, (n, d) in ev.DEFAULT_SYNTH_MODALITIES.items():
            assert ds.samples[m]["p000"].shape == (n, d)

    def test_seeded(self):
        a, b = make_synthetic_manifest(8, seed=5), make_synthetic_manifest(8, seed=5)
        np.testing.assert_array_equal(a.samples["radiomics"]["p003"], b.samples["radiomics"]["p003"])
        c = make_synthetic_manifest(8, seed=6)
        assert not np.array_equal(a.samples["radiomics"]["p003"], c.samples["radiomics"]["p003"])

    def test_errors(self):
        with pytest.raises(ValueError):
            make_synthetic_manifest(3)
        with pytest.raises(ValueError):
            make_synthetic_manifest(8, {"pathomics": 1.0})


class TestRanking:
    def test_flows(self):
        table = [[0.7, 0.8, 0.9], [0.6, 0.6, 0.9]]
        ranks, score = rank_flows(table)
        np.testing.assert_array_equal(ranks.ranks, [[1, 2, 3], [1.5, 1.5, 3]])
        np.testing.assert_allclose(score, [2.5 / 6, 3.5 / 6, 1.0])

    @given(st.integers(1, 16), st.integers(2, 8), st.integers(0, 10_000))
    @settings(max_examples=50)
    def test_rank_rows_sum(self, n, m, seed):
        table = np.random.default_rng(seed).integers(0, 4, (n, m)) / 4
        ranks, score = rank_flows(table)
        np.testing.assert_allclose(ranks.ranks.sum(axis=1), m * (m + 1) / 2)
        assert score.sum() == pytest.approx((m + 1) / 2)
        assert np.all((score > 0) & (score <= 1))

    def test_rank_matches_average_ranks(self):
        row = [0.5, 0.9, 0.5, 0.1]
        np.testing.assert_array_equal(rank_flows([row])[0].ranks[0], average_ranks(row))

    def test_contribution(self):
        flows = [("P", "R"), ("R", "S"), ("P", "S"), ("P", "R", "S")]
        # one row where P+R+S > P+R > P+S > R+S
        scores = rank_unimodal_contribution([[0.8, 0.6, 0.7, 0.9]], flows)
        # P: ranks 3+2+4 of best 4+3+2; R: 3+1+4 of 9; S: 1+2+4 of 9
        assert scores == pytest.approx({"P": 1.0, "R": 8 / 9, "S": 7 / 9})

    def test_contribution_ties(self):
        flows = [("P", "R"), ("R", "S"), ("P", "S")]
        scores = rank_unimodal_contribution([[0.5, 0.5, 0.5]], flows)
        assert scores == pytest.approx({"P": 4 / 5, "R": 4 / 5, "S": 4 / 5})

    def test_contribution_shape(self):
        with pytest.raises(ValueError):
            rank_unimodal_contribution([[0.5, 0.6]], [("P",)])
