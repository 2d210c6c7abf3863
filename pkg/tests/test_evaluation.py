import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairsense.datamodel import synth_corpus
from pairsense.errors import DataError
from pairsense.evaluation import (
    AlignmentCounts,
    EvalReport,
    FoldPlan,
    cohens_kappa,
    confusion_to_csv,
    cross_validate,
    error_analysis,
    macro_f1,
    metrics,
    plan_folds,
    reports_to_csv,
    wer,
    wer_of_texts,
)
from pairsense.fusionmodels import FusionSpec, ModalityChannel
from pairsense.trainer import TrainConfig


class TestFoldPlan:
    def test_19_pairs_5_folds_sizes(self):
        plan = plan_folds([f"p{i:02d}" for i in range(19)], k=5, seed=0)
        assert sorted(plan.test_sizes()) == [3, 4, 4, 4, 4]

    def test_k_one_rejected(self):
        with pytest.raises(DataError):
            plan_folds(["a", "b", "c"], k=1)

    def test_k_exceeding_pairs_rejected(self):
        with pytest.raises(DataError):
            plan_folds(["a", "b"], k=3)

    def test_partition_properties_over_seeds(self):
        pairs = [f"p{i}" for i in range(13)]
        for seed in range(20):
            plan = plan_folds(pairs, k=4, seed=seed)
            tests = [set(t) for _, t in plan.folds]
            assert set().union(*tests) == set(pairs)
            for a, b in itertools.combinations(tests, 2):
                assert not a & b
            for train, test in plan.folds:
                assert not set(train) & set(test)
                assert set(train) | set(test) == set(pairs)

    def test_invalid_plan_rejected(self):
        with pytest.raises(DataError):
            FoldPlan(((("a",), ("a", "b")),))


def naive_metrics_oracle(actual, predicted):
    """Loop-and-count oracle, independent of the vectorized implementation."""
    per = {}
    for c in range(3):
        tp = sum(1 for a, p in zip(actual, predicted) if a == c and p == c)
        fp = sum(1 for a, p in zip(actual, predicted) if a != c and p == c)
        fn = sum(1 for a, p in zip(actual, predicted) if a == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per[c] = (prec, rec, f1)
    acc = sum(1 for a, p in zip(actual, predicted) if a == p) / len(actual)
    mf = sum(per[c][2] for c in range(3)) / 3
    return per, acc, mf


class TestMetrics:
    def test_perfect_predictions(self):
        rep = metrics([0, 1, 2, 2], [0, 1, 2, 2])
        assert rep.precision == (1.0, 1.0, 1.0)
        assert rep.recall == (1.0, 1.0, 1.0)
        assert rep.macro_f1 == 1.0 and rep.accuracy == 1.0

    def test_harmonic_mean_example(self):
        # class 0: P = 3/12 = 0.25, R = 3/4 = 0.75 -> F = 0.375
        actual = [0] * 3 + [1] * 9 + [0] + [1]
        predicted = [0] * 3 + [0] * 9 + [1] + [1]
        rep = metrics(actual, predicted)
        assert rep.precision[0] == pytest.approx(0.25)
        assert rep.recall[0] == pytest.approx(0.75)
        assert rep.f1[0] == pytest.approx(0.375)

    def test_macro_f1_from_paper_rows(self):
        assert macro_f1([0.37, 0.43, 0.85]) == pytest.approx(0.55, abs=0.005)
        assert macro_f1([0.46, 0.32, 0.88]) == pytest.approx(0.55, abs=0.005)

    def test_absent_class_zero_convention(self):
        rep = metrics([2, 2, 2], [2, 2, 2])
        assert rep.precision[0] == 0.0 and rep.recall[0] == 0.0 and rep.f1[0] == 0.0
        assert rep.macro_f1 == pytest.approx(1 / 3)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            metrics([0, 1], [0])

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=1000))
    @settings(max_examples=80, deadline=None)
    def test_matches_naive_oracle_exactly(self, pairs):
        actual = [a for a, _ in pairs]
        predicted = [p for _, p in pairs]
        rep = metrics(actual, predicted)
        per, acc, mf = naive_metrics_oracle(actual, predicted)
        for c in range(3):
            assert (rep.precision[c], rep.recall[c], rep.f1[c]) == per[c]
        assert rep.accuracy == acc and rep.macro_f1 == mf
        assert rep.confusion.sum() == len(pairs)

    def test_report_round_trip(self):
        rep = metrics([0, 1, 2, 0], [0, 1, 1, 2])
        assert EvalReport.from_dict(rep.to_dict()) == rep

    def test_csv_and_text_render(self):
        rep = metrics([0, 1, 2], [0, 1, 2])
        csv_text = reports_to_csv([("run", rep)])
        assert csv_text.splitlines()[0].startswith("name,confusion_p")
        assert "macro_f1" in rep.to_text()
        assert confusion_to_csv(rep.confusion).count("\n") == 4


class TestErrorAnalysis:
    def test_diagonal_matrix(self):
        res = error_analysis(np.diag([5, 6, 7]))
        assert res.misclassified == 0 and res.dominant_cell is None
        assert res.accuracy == 1.0

    def test_dominant_cell_and_share(self):
        cm = np.array([[10, 2, 0], [1, 20, 3], [0, 4, 30]])
        res = error_analysis(cm)
        assert res.misclassified == 10
        assert res.dominant_cell == (2, 1) and res.dominant_count == 4
        assert res.dominant_share == pytest.approx(0.4)

    def test_row_major_tie_break(self):
        cm = np.array([[0, 5, 0], [0, 0, 5], [0, 0, 0]])
        assert error_analysis(cm).dominant_cell == (0, 1)

    def test_shares_sum_to_one(self):
        cm = np.array([[10, 2, 3], [1, 20, 3], [6, 4, 30]])
        res = error_analysis(cm)
        off = cm.copy()
        np.fill_diagonal(off, 0)
        assert off.sum() / res.misclassified == pytest.approx(1.0)

    def test_wrong_shape_rejected(self):
        with pytest.raises(DataError):
            error_analysis(np.zeros((2, 2)))


class TestKappa:
    def test_identical_lists(self):
        assert cohens_kappa(["x", "y", "x"], ["x", "y", "x"]) == 1.0

    def test_hand_computed_contingency(self):
        # 45 both-A, 15 both-B, 25 A/B, 15 B/A -> p_o=0.6, p_e=0.54
        a = ["A"] * 45 + ["B"] * 15 + ["A"] * 25 + ["B"] * 15
        b = ["A"] * 45 + ["B"] * 15 + ["B"] * 25 + ["A"] * 15
        assert cohens_kappa(a, b) == pytest.approx(0.1304, abs=1e-4)

    def test_constant_vs_split_gives_zero(self):
        a = ["A"] * 100
        b = ["A"] * 50 + ["B"] * 50
        assert cohens_kappa(a, b) == pytest.approx(0.0)

    def test_length_mismatch_and_empty(self):
        with pytest.raises(DataError):
            cohens_kappa(["a"], [])
        with pytest.raises(DataError):
            cohens_kappa([], [])

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, pairs):
        a = [x for x, _ in pairs]
        b = [y for _, y in pairs]
        k = cohens_kappa(a, b)
        assert cohens_kappa(b, a) == pytest.approx(k)
        assert -1.0 - 1e-12 <= k <= 1.0 + 1e-12


def exhaustive_wer_oracle(ref, hyp):
    """Minimum edits over all alignments by plain recursion (no memo, no DP table)."""
    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(go(i + 1, j + 1) + (ref[i] != hyp[j]),
                   go(i + 1, j) + 1,
                   go(i, j + 1) + 1)

    return go(0, 0)


class TestWer:
    def test_identical_sequences(self):
        counts, rate = wer("a b c".split(), "a b c".split())
        assert (counts.s, counts.d, counts.i, counts.n) == (0, 0, 0, 3)
        assert rate == 0.0

    def test_single_deletion(self):
        counts, rate = wer("the cat sat on mat".split(), "the cat on mat".split())
        assert (counts.s, counts.d, counts.i) == (0, 1, 0)
        assert rate == pytest.approx(0.2)

    def test_substitution_plus_insertion(self):
        counts, rate = wer("a b c".split(), "a x c d".split())
        assert (counts.s, counts.d, counts.i) == (1, 0, 1)
        assert rate == pytest.approx(2 / 3)

    def test_rate_may_exceed_one(self):
        counts, rate = wer(["a"], "x y z".split())
        assert rate > 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(DataError):
            wer([], ["a"])

    def test_empty_hypothesis_all_deletions(self):
        counts, rate = wer("a b".split(), [])
        assert (counts.s, counts.d, counts.i) == (0, 2, 0)
        assert rate == 1.0

    def test_counts_validation(self):
        with pytest.raises(DataError):
            AlignmentCounts(-1, 0, 0, 1)

    def test_matches_plain_recursion_oracle(self, rng):
        vocab = list("abc")
        for _ in range(60):
            ref = [vocab[i] for i in rng.integers(0, 3, size=rng.integers(1, 6))]
            hyp = [vocab[i] for i in rng.integers(0, 3, size=rng.integers(0, 6))]
            counts, rate = wer(ref, hyp)
            best = exhaustive_wer_oracle(ref, hyp)
            assert counts.edits == best
            assert rate == best / len(ref)

    def test_text_helper_normalizes_both_sides(self):
        counts, rate = wer_of_texts("I don't know", "i do not KNOW")
        assert rate == 0.0


@pytest.fixture(scope="module")
def tiny_run():
    corpus = synth_corpus(seed=2, n_pairs=6, utterances_per_pair=12, separability=5.0)
    spec = FusionSpec("unimodal", (ModalityChannel("language", "sentence_vec"),), hidden=16)
    cfg = TrainConfig.fusion_defaults(max_epochs=6, patience=6, seed=0)
    plan = plan_folds(corpus.pair_ids(), k=3, seed=0)
    return corpus, plan, cross_validate(corpus, spec, cfg, plan)


class TestCrossValidate:

    def test_pooled_confusion_conserves_corpus(self, tiny_run):
        corpus, _, res = tiny_run
        assert int(res.pooled.confusion.sum()) == len(corpus)

    def test_fold_count_and_accuracy_stats(self, tiny_run):
        _, plan, res = tiny_run
        assert len(res.per_fold) == plan.k
        accs = np.asarray(res.fold_accuracies)
        assert res.accuracy_mean == pytest.approx(accs.mean())
        assert res.accuracy_sd == pytest.approx(accs.std())

    def test_plan_must_cover_corpus(self, tiny_run):
        corpus, _, _ = tiny_run
        small_plan = plan_folds(corpus.pair_ids()[:4], k=2, seed=0)
        spec = FusionSpec("unimodal", (ModalityChannel("language", "sentence_vec"),))
        with pytest.raises(DataError):
            cross_validate(corpus, spec, TrainConfig.fusion_defaults(), small_plan)
