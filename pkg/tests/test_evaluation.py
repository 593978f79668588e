import json

import numpy as np
import pytest

from cpheno.config import EvalConfig
from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import InputError, InvariantViolation, ParameterError, PreconditionError
from cpheno.evaluation import (
    Analyzer,
    LabeledFeatureSet,
    PromptTemplateSet,
    RetrievalReport,
    class_embedding,
    class_embeddings,
    cross_modal_retrieval,
    evaluate_model,
    linear_probe,
    matching_metrics,
    phenotype_matching,
    phenotype_retrieval,
    phenotype_similarity,
    predicted_sets,
    recall_curve,
    retrieval_recall_at_k,
    stratified_subsample,
    zero_shot_classify,
)
from cpheno.evaluation.metrics import rank_gallery, usable_k
from cpheno.evaluation.zero_shot import zero_shot_predict
from cpheno.synthetic import clustered_features, planted_alignment

from conftest import ARACHNODACTYLY, ECTOPIA_LENTIS, MYOPIA, SCOLIOSIS

CLASS_IDS = [ARACHNODACTYLY, SCOLIOSIS, MYOPIA, ECTOPIA_LENTIS]
CLASS_NAMES = ["Arachnodactyly", "Scoliosis", "Myopia", "Ectopia lentis"]


@pytest.fixture(scope="module")
def planted():
    return planted_alignment(CLASS_IDS, CLASS_NAMES, per_class=6, dim=16, noise=0.1, seed=0)


def brute_recall(S, truth, k, hit_mode="any"):
    hits = 0
    for q, row in enumerate(S):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))[:k]
        if hit_mode == "any":
            hits += bool(set(order) & truth[q])
        else:
            hits += truth[q] <= set(order)
    return hits / len(S)


# -------------------------------------------------------------------------------------------------
# Ranking metrics
# -------------------------------------------------------------------------------------------------


class TestRecallAtK:
    def test_identity(self):
        S = np.eye(5)
        truth = [{i} for i in range(5)]
        assert retrieval_recall_at_k(S, truth, 1) == 1.0
        assert recall_curve(S, truth, [1, 3, 5]) == {"R@1": 1.0, "R@3": 1.0, "R@5": 1.0}

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("hit_mode", ["any", "all"])
    def test_matches_brute_force(self, seed, hit_mode):
        rng = np.random.default_rng(seed)
        # rounded scores produce ties
        S = np.round(rng.uniform(size=(20, 30)), 1)
        truth = [set(rng.choice(30, size=int(rng.integers(1, 4)), replace=False).tolist()) for _ in range(20)]
        for k in (1, 5, 10, 30):
            assert retrieval_recall_at_k(S, truth, k, hit_mode) == pytest.approx(brute_recall(S, truth, k, hit_mode))

    def test_monotone_in_k(self, rng):
        S = rng.normal(size=(15, 25))
        truth = [{int(rng.integers(25))} for _ in range(15)]
        values = [retrieval_recall_at_k(S, truth, k) for k in range(1, 26)]
        assert values == sorted(values)
        assert values[-1] == 1.0

    def test_ties_keep_lower_index(self):
        assert rank_gallery(np.array([[0.5, 0.9, 0.9, 0.1]])).tolist() == [[1, 2, 0, 3]]

    def test_mapping_truth(self):
        S = np.array([[0.1, 0.9], [0.8, 0.2]])
        assert retrieval_recall_at_k(S, {0: [1], 1: [1]}, 1) == 0.5

    def test_invalid_arguments(self):
        S = np.eye(3)
        truth = [{0}, {1}, {2}]
        with pytest.raises(ParameterError):
            retrieval_recall_at_k(S, truth, 0)
        with pytest.raises(ParameterError):
            retrieval_recall_at_k(S, truth, 4)
        with pytest.raises(ParameterError):
            retrieval_recall_at_k(S, truth, 1, hit_mode="some")
        with pytest.raises(PreconditionError):
            retrieval_recall_at_k(S, [{0}, set(), {2}], 1)
        with pytest.raises(PreconditionError):
            retrieval_recall_at_k(S, [{0}], 1)

    def test_usable_k(self):
        assert usable_k([1, 10, 50], 20) == [1, 10]


# -------------------------------------------------------------------------------------------------
# Set matching
# -------------------------------------------------------------------------------------------------


class TestMatching:
    def test_hand_example(self):
        scores = matching_metrics({"img": {"a", "b", "c"}}, {"img": {"a", "b", "d"}})
        assert scores.precision == pytest.approx(2 / 3)
        assert scores.recall == pytest.approx(2 / 3)
        assert scores.f1 == pytest.approx(2 / 3)

    def test_micro_and_macro(self):
        predicted = {1: {"a"}, 2: {"b", "c"}}
        truth = {1: {"a"}, 2: {"d", "e"}}
        micro = matching_metrics(predicted, truth, "micro")
        macro = matching_metrics(predicted, truth, "macro")
        assert micro.precision == pytest.approx(1 / 3)
        assert macro.precision == pytest.approx(0.5)
        assert macro.f1 == pytest.approx(0.5)

    def test_empty_truth_excluded(self):
        scores = matching_metrics({1: {"a"}, 2: {"b"}}, {1: {"a"}, 2: set()})
        assert scores.n_images == 1
        assert scores.f1 == 1.0

    def test_no_images(self):
        assert matching_metrics({}, {}).to_dict() == {"precision": 0.0, "recall": 0.0, "f1": 0.0}

    def test_predicted_sets(self):
        S = np.array([[0.1, 0.7, 0.5], [0.9, 0.2, 0.3]])
        assert predicted_sets(S, [2, 1], ["a", "b", "c"]) == [{"b", "c"}, {"a"}]
        assert predicted_sets(S, 1, ["a", "b", "c"]) == [{"b"}, {"a"}]


# -------------------------------------------------------------------------------------------------
# Zero-shot classification and prompts
# -------------------------------------------------------------------------------------------------


class TestZeroShot:
    def test_planted_accuracy(self, planted):
        labels = [CLASS_IDS.index(p.phenotype_ids[0]) for p in planted.pairs]
        result = zero_shot_classify(planted.encoder, [p.image_ref for p in planted.pairs], CLASS_NAMES, labels=labels)
        assert result.accuracy == 1.0
        assert result.predictions == labels

    def test_invariant_under_rescaling(self, rng):
        V = rng.normal(size=(12, 8))
        C = rng.normal(size=(3, 8))
        expected = zero_shot_predict(V, C)
        assert zero_shot_predict(3.0 * V, 0.25 * C).tolist() == expected.tolist()

    def test_unreadable_images(self, planted):
        refs = [planted.pairs[0].image_ref, "unknown.png"]
        result = zero_shot_classify(planted.encoder, refs, CLASS_NAMES, labels=[0, 1])
        assert result.predictions == [0, -1]
        assert result.skipped == 1
        assert result.accuracy == 1.0

    def test_no_classes(self, planted):
        with pytest.raises(ParameterError):
            zero_shot_classify(planted.encoder, [], [])

    def test_class_embeddings_are_unit_rows(self, planted):
        rows = class_embeddings(planted.encoder, CLASS_NAMES)
        assert rows.shape == (4, 16)
        assert np.allclose(np.linalg.norm(rows, axis=1), 1.0)
        assert np.allclose(class_embedding(planted.encoder, "Myopia"), rows[2])

    def test_default_templates(self):
        templates = PromptTemplateSet.default()
        assert len(templates) == 12
        assert all(len(p) > len("Myopia") and "Myopia" in p for p in templates.instantiate("Myopia"))

    def test_template_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            PromptTemplateSet(["no placeholder"])
        with pytest.raises(ParameterError):
            PromptTemplateSet([])
        with pytest.raises(InputError):
            PromptTemplateSet.load(str(tmp_path / "missing.txt"))


# -------------------------------------------------------------------------------------------------
# Retrieval tasks
# -------------------------------------------------------------------------------------------------


class TestRetrievalTasks:
    def test_cross_modal(self, planted):
        i2t, t2i = cross_modal_retrieval(planted.encoder, planted.pairs, k_values=[1, 5, 100])
        assert i2t.metrics == {"R@1": 1.0, "R@5": 1.0}
        assert t2i.metrics == {"R@1": 1.0, "R@5": 1.0}
        assert i2t.n_queries == 24

    def test_unreadable_images_left_out(self, planted):
        extra = ImageCaptionPair("X/fig1", "X", "fig1", "unknown.png", "Myopia case x", (MYOPIA,))
        i2t, _ = cross_modal_retrieval(planted.encoder, planted.pairs + [extra], k_values=[1])
        assert i2t.n_queries == 24

    def test_phenotype_retrieval(self, planted, toy_graph):
        i2p, p2i = phenotype_retrieval(planted.encoder, planted.pairs, toy_graph, k_values=[1, 2])
        assert i2p.metrics == {"R@1": 1.0, "R@2": 1.0}
        assert p2i.metrics == {"R@1": 1.0, "R@2": 1.0}
        assert (i2p.n_queries, p2i.n_queries) == (24, 4)

    def test_unlinked_candidates_are_not_queried(self, planted, toy_graph):
        # the first three pairs cover three of the four classes
        i2p, p2i = phenotype_retrieval(
            planted.encoder, planted.pairs[:3], toy_graph, k_values=[1], candidates=CLASS_IDS
        )
        assert i2p.n_queries == 3
        assert p2i.n_queries == 3
        assert i2p.metrics == {"R@1": 1.0}

    def test_matching(self, planted, toy_graph):
        scores = phenotype_similarity(planted.encoder, planted.pairs, toy_graph)
        assert scores.S.shape == (24, 4)
        matching = phenotype_matching(scores)
        assert matching.to_dict() == {"precision": 1.0, "recall": 1.0, "f1": 1.0}
        wide = phenotype_matching(scores, k=2)
        assert wide.precision == pytest.approx(0.5)
        assert wide.recall == 1.0

    def test_report_invariants(self):
        with pytest.raises(InvariantViolation):
            RetrievalReport("i2t", {"R@1": 1.2}, 3, [1])
        with pytest.raises(InvariantViolation):
            RetrievalReport("i2t", {"R@1": 0.5, "R@5": 0.4}, 3, [1, 5])


# -------------------------------------------------------------------------------------------------
# Linear probe
# -------------------------------------------------------------------------------------------------


class TestLinearProbe:
    @pytest.fixture
    def separable(self):
        centers = 10.0 * np.eye(3, 6)
        train = LabeledFeatureSet(*clustered_features(30, centers, scale=0.5, seed=0))
        test = LabeledFeatureSet(*clustered_features(10, centers, scale=0.5, seed=1))
        return train, test

    @pytest.mark.parametrize("ratio", [0.1, 1.0])
    def test_separable(self, separable, ratio):
        train, test = separable
        result = linear_probe(train, test, ratio)
        assert result.accuracy == 1.0
        assert result.missing_classes == []

    def test_deterministic(self, separable):
        train, test = separable
        assert linear_probe(train, test, 0.1, seed=4) == linear_probe(train, test, 0.1, seed=4)

    def test_overlapping_blobs_reach_bayes_accuracy(self):
        angles = np.deg2rad([0.0, 120.0, 240.0])
        centers = 1.5 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        train = LabeledFeatureSet(*clustered_features(200, centers, scale=1.0, seed=0))
        test = LabeledFeatureSet(*clustered_features(2000, centers, scale=1.0, seed=1))

        # nearest-centroid accuracy integrated on a grid
        step = 0.02
        axis = np.arange(-8.0, 8.0, step) + step / 2
        X, Y = np.meshgrid(axis, axis)
        densities = np.stack(
            [np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / 2.0) / (2.0 * np.pi) for cx, cy in centers]
        )
        bayes = float(densities.max(axis=0).sum() * step**2 / len(centers))

        result = linear_probe(train, test, ratio=1.0, seed=0)
        assert 0.7 < bayes < 0.9
        assert abs(result.accuracy - bayes) <= 0.02

    def test_weight_decay_maps_to_inverse_regularization(self, separable, monkeypatch):
        import cpheno.evaluation.probe as module

        seen = {}
        real = module.LogisticRegression

        def recording(**kwargs):
            seen.update(kwargs)
            return real(**kwargs)

        monkeypatch.setattr(module, "LogisticRegression", recording)
        train, test = separable
        linear_probe(train, test, ratio=1.0, weight_decay=1e-3)
        assert seen["C"] == pytest.approx(1.0 / (2.0 * 1e-3 * len(train)))

    def test_stratified_subsample(self):
        labels = [0] * 50 + [1] * 5
        chosen = stratified_subsample(labels, 0.1, seed=0)
        assert len(chosen) == 6
        assert sorted(np.asarray(labels)[chosen].tolist()) == [0] * 5 + [1]
        assert chosen.tolist() == sorted(chosen.tolist())
        with pytest.raises(ParameterError):
            stratified_subsample(labels, 0.0)

    def test_single_class_sample(self):
        train = LabeledFeatureSet(np.zeros((2, 2)), [0, 0], ["a", "b"])
        test = LabeledFeatureSet(np.ones((2, 2)), [0, 1], ["a", "b"])
        result = linear_probe(train, test)
        assert result.accuracy == 0.5
        assert result.missing_classes == [1]

    def test_label_checks(self):
        with pytest.raises(ParameterError):
            LabeledFeatureSet(np.zeros((2, 2)), [0])
        with pytest.raises(ParameterError):
            LabeledFeatureSet(np.zeros((2, 2)), [0, 2], ["a", "b"])


# -------------------------------------------------------------------------------------------------
# Full evaluation and result analysis
# -------------------------------------------------------------------------------------------------


class TestEvaluateModel:
    def test_planted_benchmark(self, planted, toy_graph):
        config = EvalConfig(k_values=[1, 5], probe_ratios=[1.0])
        analyzer = evaluate_model(planted.encoder, planted.pairs, toy_graph, config, seed=0)
        assert [r.task for r in analyzer.reports] == ["zs", "i2t", "t2i", "i2p", "p2i", "match", "probe"]
        assert analyzer.analysis["zs"] == {"accuracy": 1.0}
        assert analyzer.analysis["i2t"]["R@1"] == 1.0
        assert analyzer.analysis["i2p"]["R@1"] == 1.0
        assert analyzer.analysis["match"]["f1"] == 1.0
        assert analyzer.analysis["probe"]["acc@100%"] == 1.0

    def test_task_subset(self, planted, toy_graph):
        config = EvalConfig(tasks=["t2i", "match"], k_values=[1])
        analyzer = evaluate_model(planted.encoder, planted.pairs, toy_graph, config)
        assert [r.task for r in analyzer.reports] == ["t2i", "match"]


class TestAnalyzer:
    @pytest.fixture
    def analyzer(self):
        reports = [
            RetrievalReport("i2t", {"R@1": 0.5, "R@5": 1.0}, 4, [1, 5]),
            RetrievalReport("match", {"precision": 0.25, "recall": 0.5, "f1": 1 / 3}, 4),
        ]
        return Analyzer(reports, name="toy")

    def test_flat_metrics(self, analyzer):
        flat = analyzer.flat_metrics()
        assert flat["i2t R@1"] == 0.5
        assert flat["Avg"] == pytest.approx(0.75)

    def test_table(self, analyzer):
        table = analyzer.to_table()
        assert list(table.index) == ["toy"]
        assert table.loc["toy", "i2t R@5"] == pytest.approx(100.0)

    def test_save_and_load(self, analyzer, tmp_path):
        paths = analyzer.save(str(tmp_path))
        with open(paths["json"], encoding="utf-8") as f:
            assert [r["task"] for r in json.load(f)] == ["i2t", "match"]
        loaded = Analyzer.load(paths["json"], name="toy")
        assert loaded.analysis == analyzer.analysis
        assert (tmp_path / "results.csv").exists()

    def test_plots(self, analyzer, tmp_path):
        assert analyzer.plot_results(str(tmp_path)) == [str(tmp_path / "recall_i2t.png")]

    def test_print_summary(self, analyzer, capsys):
        analyzer.print_summary()
        out = capsys.readouterr().out
        assert "Image-to-text retrieval (4 queries):" in out
        assert "75.00%" in out
