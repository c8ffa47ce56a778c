"""Evaluation tests: MRR protocols, threshold classification, ROC/AUC."""

import numpy as np
import pytest

from speechground import align, evaluation as ev, nn
from speechground.dataset import Dataset, EmbeddingRecord
from speechground.synthetic import make_unstructured_dataset


def auc_brute_force(scores, labels):
    """Pairwise win fraction (ties count half); smaller score = positive."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p < n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestMrr:
    def test_perfect_retrieval(self):
        assert ev.mrr([1, 1, 1]) == 1.0

    def test_direct_formula(self):
        assert ev.mrr([1, 2, 4]) == pytest.approx((1 + 0.5 + 0.25) / 3, abs=1e-12)

    def test_uniform_random_ranking_over_three(self):
        rng = np.random.default_rng(0)
        ranks = rng.integers(1, 4, size=30000)
        assert ev.mrr(ranks) == pytest.approx((1 + 1 / 2 + 1 / 3) / 3, abs=0.01)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            k = int(rng.integers(2, 8))
            ranks = rng.integers(1, k + 1, size=40)
            val = ev.mrr(ranks)
            assert 1.0 / k <= val <= 1.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            ev.mrr([])

    def test_bad_rank_raises(self):
        with pytest.raises(ValueError):
            ev.mrr([1, 0, 2])


class TestNormalizedDistance:
    def test_identical(self):
        u = np.array([1.0, 2.0])
        assert ev.normalized_distance(u, u) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal(self):
        assert ev.normalized_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.5

    def test_opposite(self):
        u = np.array([1.0, -1.0])
        assert ev.normalized_distance(u, -u) == pytest.approx(1.0, abs=1e-15)


class TestRankOfTarget:
    def test_tie_break_by_record_id(self):
        distances = {"b": 0.5, "a": 0.5, "c": 0.9}
        assert ev.rank_of_target(distances, "a") == 1
        assert ev.rank_of_target(distances, "b") == 2

    def test_rank_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        ids = [f"r{i}" for i in range(6)]
        distances = {rid: float(rng.uniform(0, 2)) for rid in ids}
        transformed = {rid: float(np.exp(3.0 * d) - 0.5) for rid, d in distances.items()}
        for rid in ids:
            assert ev.rank_of_target(distances, rid) == ev.rank_of_target(transformed, rid)


def shared_encoder_dataset(n_classes=6, per_class=3, dim=8):
    """Instance-unique vectors duplicated across modalities. With one shared
    encoder the paired percept sits at distance exactly 0 from its query."""
    rng = np.random.default_rng(7)
    records = []
    for c in range(n_classes):
        center = rng.normal(size=dim)
        for i in range(per_class):
            vec = (center + 0.1 * rng.normal(size=dim)).astype(np.float32)
            records.append(EmbeddingRecord(
                f"lang_{c}_{i}", "language", f"class_{c}", f"obj_{c}_{i}", None,
                "test", vec))
            records.append(EmbeddingRecord(
                f"vis_{c}_{i}", "vision", f"class_{c}", f"obj_{c}_{i}", None,
                "test", vec.copy()))
    return Dataset(records)


def shared_manifold(dim=8, out=6, seed=0):
    enc = nn.init_mlp(nn.MlpSpec(dim, 12, 10, out), np.random.default_rng(seed))
    return align.Manifold(language=enc, vision=enc.copy(), seed=seed)


def split_ids(dataset, modality, split="test"):
    return [r.record_id for r in dataset.select(modality=modality, split=split)]


class TestTripletMrrEval:
    def test_perfect_manifold_gives_one(self):
        data = shared_encoder_dataset()
        manifold = shared_manifold()
        res = ev.triplet_mrr_eval(manifold, data, split_ids(data, "language"),
                                  split_ids(data, "vision"), repeats=3, seed=1)
        assert res.mean == 1.0 and res.std == 0.0

    def test_centroid_collapse_ties_break_by_id(self):
        # Identical within-class vectors + shared encoder: target and
        # same-class distractor tie at distance 0, the different-class
        # candidate is strictly worse, so each reciprocal rank is 1 or 1/2
        # decided purely by record_id order.
        rng = np.random.default_rng(3)
        records = []
        for c in range(4):
            onehot = np.zeros(6, dtype=np.float32)
            onehot[c] = 1.0
            for i in range(3):
                records.append(EmbeddingRecord(
                    f"lang_{c}_{i}", "language", f"class_{c}", f"obj_{c}_{i}",
                    None, "test", onehot))
                records.append(EmbeddingRecord(
                    f"vis_{c}_{i}", "vision", f"class_{c}", f"obj_{c}_{i}",
                    None, "test", onehot.copy()))
        data = Dataset(records)
        manifold = shared_manifold(dim=6, seed=11)
        res = ev.triplet_mrr_eval(manifold, data, split_ids(data, "language"),
                                  split_ids(data, "vision"), repeats=4, seed=5)
        for rep_mean in res.per_repeat:
            # every query's rr is exactly 1 or 0.5
            n = res.n_queries
            total = round(rep_mean * n * 2)
            assert abs(rep_mean * n * 2 - total) < 1e-9

    def test_untrained_random_manifold_near_chance(self):
        data = make_unstructured_dataset(n_classes=10, n_instances=15, seed=9)
        config = align.TrainConfig(hidden1=16, hidden2=12, projection_dim=8, seed=13)
        manifold = align.init_manifold(data, config)
        queries = [r.record_id for r in data.select(modality="language")]
        pool = [r.record_id for r in data.select(modality="vision")]
        res = ev.triplet_mrr_eval(manifold, data, queries[:500], pool,
                                  repeats=4, seed=17)
        assert res.mean == pytest.approx((1 + 1 / 2 + 1 / 3) / 3, abs=0.05)

    def test_single_object_class_falls_back_to_other_percept(self):
        # One object in the class but two percepts of it: the distractor
        # falls back to the target object's other angle.
        records = [
            EmbeddingRecord("lang_a", "language", "solo", "obj_a", None, "test",
                            np.array([1.0, 0.0], dtype=np.float32)),
            EmbeddingRecord("vis_a1", "vision", "solo", "obj_a", None, "test",
                            np.array([1.0, 0.1], dtype=np.float32)),
            EmbeddingRecord("vis_a2", "vision", "solo", "obj_a", None, "test",
                            np.array([1.0, -0.1], dtype=np.float32)),
            EmbeddingRecord("lang_b", "language", "other", "obj_b", None, "test",
                            np.array([0.0, 1.0], dtype=np.float32)),
            EmbeddingRecord("vis_b", "vision", "other", "obj_b", None, "test",
                            np.array([0.0, 1.0], dtype=np.float32)),
        ]
        data = Dataset(records)
        manifold = shared_manifold(dim=2, seed=2)
        res = ev.triplet_mrr_eval(manifold, data, ["lang_a"],
                                  split_ids(data, "vision"), repeats=2, seed=3)
        assert res.n_queries == 1 and res.skipped == 0

    def test_query_without_target_is_skipped(self):
        records = [
            EmbeddingRecord("lang_a", "language", "c0", "obj_a", None, "test",
                            np.array([1.0, 0.0], dtype=np.float32)),
            EmbeddingRecord("lang_b", "language", "c1", "obj_b", None, "test",
                            np.array([0.5, 0.5], dtype=np.float32)),
            EmbeddingRecord("vis_b", "vision", "c1", "obj_b", None, "test",
                            np.array([0.0, 1.0], dtype=np.float32)),
            EmbeddingRecord("vis_c", "vision", "c2", "obj_c", None, "test",
                            np.array([1.0, 1.0], dtype=np.float32)),
        ]
        data = Dataset(records)
        manifold = shared_manifold(dim=2, seed=4)
        res = ev.triplet_mrr_eval(manifold, data, ["lang_a", "lang_b"],
                                  ["vis_b", "vis_c"], repeats=1, seed=5)
        assert res.skipped == 1 and res.n_queries == 1


class TestSubsetMrrEval:
    def test_perfect_manifold_gives_one(self):
        data = shared_encoder_dataset()
        manifold = shared_manifold()
        res = ev.subset_mrr_eval(manifold, data, split_ids(data, "language"),
                                 split_ids(data, "vision"), repeats=3, seed=1)
        assert res.mean == 1.0

    def test_untrained_random_manifold_near_chance(self):
        data = make_unstructured_dataset(n_classes=10, n_instances=15, seed=21)
        config = align.TrainConfig(hidden1=16, hidden2=12, projection_dim=8, seed=23)
        manifold = align.init_manifold(data, config)
        queries = [r.record_id for r in data.select(modality="language")]
        pool = [r.record_id for r in data.select(modality="vision")]
        res = ev.subset_mrr_eval(manifold, data, queries[:500], pool,
                                 repeats=4, seed=27)
        expected = (1 + 1 / 2 + 1 / 3 + 1 / 4 + 1 / 5) / 5
        assert res.mean == pytest.approx(expected, abs=0.05)

    def test_needs_four_other_classes(self):
        data = shared_encoder_dataset(n_classes=4)
        manifold = shared_manifold()
        with pytest.raises(ValueError, match="no scorable"):
            ev.subset_mrr_eval(manifold, data, split_ids(data, "language"),
                               split_ids(data, "vision"), repeats=1, seed=1)


class TestPairScores:
    def test_balanced_labels(self):
        data = shared_encoder_dataset()
        manifold = shared_manifold()
        scores, labels, skipped = ev.pair_scores(
            manifold, data, split_ids(data, "language"), split_ids(data, "vision"),
            seed=3)
        assert skipped == 0
        assert (labels == 1).sum() == (labels == 0).sum()
        assert np.all((scores >= 0) & (scores <= 1))


class TestF1:
    def test_threshold_one_forces_two_thirds(self):
        data = shared_encoder_dataset()
        manifold = shared_manifold()
        res = ev.threshold_eval(manifold, data, split_ids(data, "language"),
                                split_ids(data, "vision"), t=1.0, seed=3)
        assert res.recall == 1.0
        assert res.precision == pytest.approx(0.5, abs=1e-12)
        assert res.f1 == pytest.approx(2.0 / 3.0, abs=1e-9)

    def test_threshold_zero_generic_positions_gives_zero(self):
        data = make_unstructured_dataset(n_classes=6, n_instances=8, seed=31)
        config = align.TrainConfig(hidden1=12, hidden2=8, projection_dim=6, seed=33)
        manifold = align.init_manifold(data, config)
        queries = [r.record_id for r in data.select(modality="language")][:20]
        pool = [r.record_id for r in data.select(modality="vision")]
        res = ev.threshold_eval(manifold, data, queries, pool, t=0.0, seed=35)
        assert res.f1 == 0.0

    def test_median_threshold_on_random_scores_near_half(self):
        rng = np.random.default_rng(37)
        scores = rng.uniform(0, 1, size=4000)
        labels = np.repeat([1, 0], 2000)
        _, _, f1 = ev.f1_from_scores(scores, labels, float(np.median(scores)))
        assert f1 == pytest.approx(0.5, abs=0.05)

    def test_out_of_range_threshold_rejected(self):
        data = shared_encoder_dataset()
        with pytest.raises(ValueError):
            ev.threshold_eval(shared_manifold(), data,
                              split_ids(data, "language"),
                              split_ids(data, "vision"), t=1.5)


class TestTuneThreshold:
    def test_perfectly_separated_returns_smallest_winning_grid_point(self):
        scores = np.array([0.05, 0.12, 0.25, 0.40, 0.55, 0.90])
        labels = np.array([1, 1, 1, 0, 0, 0])
        t_star, sweep = ev.tune_threshold_from_scores(scores, labels)
        assert t_star == 0.25
        assert dict(sweep)[0.25] == 1.0

    def test_no_skill_scores_spanning_range_peak_at_one(self):
        # Identically distributed positives and negatives spread to the top
        # of the range: recall keeps growing with t while precision stays
        # flat, so F1 peaks when everything is predicted positive (t = 1).
        rng = np.random.default_rng(41)
        scores = rng.uniform(0, 0.999, size=2000)
        scores[-1] = 0.999  # ensure mass near the top
        labels = np.repeat([1, 0], 1000)
        t_star, _ = ev.tune_threshold_from_scores(scores, labels)
        assert t_star == 1.0

    def test_tuned_threshold_dominates_grid(self):
        rng = np.random.default_rng(43)
        scores = rng.beta(2, 3, size=500)
        labels = (rng.uniform(size=500) < 0.5).astype(int)
        t_star, sweep = ev.tune_threshold_from_scores(scores, labels)
        best = dict(sweep)[t_star]
        assert all(best >= f for _, f in sweep)


class TestRoc:
    def test_perfect_separation_auc_one(self):
        scores = np.array([0.1, 0.2, 0.6, 0.9])
        labels = np.array([1, 1, 0, 0])
        _, auc = ev.roc_from_scores(scores, labels)
        assert auc == 1.0

    def test_hand_computed_example(self):
        # positives {0.1, 0.4}, negatives {0.3, 0.8}: 3 of 4 pairs won.
        scores = np.array([0.1, 0.4, 0.3, 0.8])
        labels = np.array([1, 1, 0, 0])
        _, auc = ev.roc_from_scores(scores, labels)
        assert auc == pytest.approx(0.75, abs=1e-12)

    def test_identical_distributions_near_half(self):
        rng = np.random.default_rng(47)
        scores = rng.uniform(0, 1, size=2000)
        labels = np.repeat([1, 0], 1000)
        _, auc = ev.roc_from_scores(scores, labels)
        assert auc == pytest.approx(0.5, abs=0.05)

    def test_auc_equals_brute_force_with_ties(self):
        rng = np.random.default_rng(53)
        for _ in range(25):
            n = int(rng.integers(6, 30))
            scores = np.round(rng.uniform(0, 1, size=n), 1)  # force ties
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            _, auc = ev.roc_from_scores(scores, labels)
            assert auc == pytest.approx(auc_brute_force(scores, labels), abs=1e-12)

    def test_tpr_monotone_and_sorted_by_fpr(self):
        rng = np.random.default_rng(59)
        scores = rng.normal(size=300)
        labels = rng.integers(0, 2, size=300)
        points, _ = ev.roc_from_scores(scores, labels)
        fprs = [p[0] for p in points]
        tprs = [p[1] for p in points]
        assert fprs == sorted(fprs)
        assert all(b >= a for a, b in zip(tprs, tprs[1:]))
        assert points[-1] == (1.0, 1.0)

    def test_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(61)
        scores = rng.uniform(0, 1, size=400)
        labels = rng.integers(0, 2, size=400)
        _, auc = ev.roc_from_scores(scores, labels)
        _, auc_t = ev.roc_from_scores(np.expm1(2.0 * scores), labels)
        assert auc == pytest.approx(auc_t, abs=1e-12)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            ev.roc_from_scores(np.array([0.1, 0.2]), np.array([1, 1]))


class TestEvaluate:
    def test_report_fields_and_shapes(self):
        data = shared_encoder_dataset(n_classes=6, per_class=4)
        manifold = shared_manifold()
        ids_l = split_ids(data, "language")
        ids_v = split_ids(data, "vision")
        report = ev.evaluate(manifold, data, ids_l, ids_v, ids_l, ids_v,
                             repeats=2, seed=11)
        d = report.to_dict()
        for key in ("triplet_mrr", "subset_mrr", "f1", "auc", "tuned_threshold",
                    "triplet_mrr_std", "subset_mrr_std", "repeats", "seed"):
            assert key in d
        assert 0.0 <= report.auc <= 1.0
        assert 0.0 <= report.tuned_threshold <= 1.0
        assert report.repeats == 2
        # perfect-by-construction manifold
        assert report.triplet_mrr == 1.0
        assert report.subset_mrr == 1.0
        assert report.f1 >= 0.9
