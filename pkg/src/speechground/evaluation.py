"""Retrieval and classification evaluation over a trained manifold.

Two retrieval protocols measure grounding quality with mean reciprocal rank:
the 3-candidate setting (target, same-class distractor, different-class
distractor) and the 5-candidate setting (target plus percepts from four
distinct other classes). Threshold classification treats every same-class
vision percept as a positive and an equal-count sample from other classes as
negatives, predicting positive when the normalized cosine distance falls
under a threshold tuned on validation data.

All ranking ties break deterministically by record_id; all candidate draws
are seeded. Evaluation never mutates the manifold or dataset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .align import Manifold, cosine_distance, project_many, reset_zero_norm_counter
from .dataset import Dataset, SequenceStore, derive_seed

logger = logging.getLogger(__name__)

THRESHOLD_GRID = tuple(round(i / 100, 2) for i in range(101))


def mrr(ranks) -> float:
    """Mean reciprocal rank: (1/M) * sum(1/rank_i)."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("mrr of an empty rank list")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks must be >= 1")
    return float(np.mean([1.0 / r for r in ranks]))


def normalized_distance(u, v) -> float:
    """Cosine distance divided by 2, clamped into [0, 1]."""
    return min(max(cosine_distance(u, v) / 2.0, 0.0), 1.0)


def rank_of_target(distances: dict[str, float], target_id: str) -> int:
    """1-based rank of the target, ties broken by record_id order."""
    ranked = sorted(distances, key=lambda rid: (distances[rid], rid))
    return ranked.index(target_id) + 1


@dataclass(frozen=True)
class RetrievalQuery:
    """One retrieval trial: a language query against a ranked candidate set."""

    query_id: str
    target_id: str
    candidate_ids: tuple

    def __post_init__(self):
        if self.target_id not in self.candidate_ids:
            raise ValueError("candidates must include the target")


@dataclass
class RetrievalResult:
    mean: float
    std: float
    per_repeat: list
    n_queries: int
    skipped: int


class _Pools:
    """Deterministic candidate pools over a set of vision records."""

    def __init__(self, dataset: Dataset, vision_pool_ids):
        self.by_class = {}
        self.by_object = {}
        for rid in sorted(vision_pool_ids):
            rec = dataset.by_id[rid]
            if rec.modality != "vision":
                raise ValueError(f"{rid}: candidate pool must contain vision records")
            self.by_class.setdefault(rec.class_label, []).append(rid)
            self.by_object.setdefault(rec.object_id, []).append(rid)
        self.classes = sorted(self.by_class)
        all_ids = sorted(vision_pool_ids)
        self.complement = {
            cls: [r for r in all_ids if dataset.by_id[r].class_label != cls]
            for cls in self.classes
        }

    def other_classes(self, cls):
        return [c for c in self.classes if c != cls]


def _get_projections(manifold, dataset, ids, seq_store, cache):
    missing = [rid for rid in ids if rid not in cache]
    if missing:
        records = [dataset.by_id[rid] for rid in sorted(missing)]
        cache.update(project_many(manifold, records, dataset, seq_store))
    return cache


def _retrieval_eval(manifold, dataset, query_ids, vision_pool_ids, repeats, seed,
                    seq_store, projections, protocol):
    reset_zero_norm_counter()
    queries = sorted(query_ids)
    for rid in queries:
        if dataset.by_id[rid].modality != "language":
            raise ValueError(f"{rid}: retrieval queries must be language records")
    pools = _Pools(dataset, vision_pool_ids)
    projections = projections if projections is not None else {}
    _get_projections(manifold, dataset, list(queries) + sorted(vision_pool_ids),
                     seq_store, projections)

    per_repeat = []
    skipped_total = 0
    n_scored = 0
    for rep in range(repeats):
        rng = np.random.Generator(
            np.random.PCG64(derive_seed(seed, "retrieval", protocol, rep))
        )
        rrs = []
        skipped = 0
        for qid in queries:
            query = dataset.by_id[qid]
            trial = _draw_candidates(query, pools, rng, protocol)
            if trial is None:
                skipped += 1
                continue
            target, candidates = trial
            qproj = projections[qid]
            distances = {
                cid: cosine_distance(qproj, projections[cid]) for cid in candidates
            }
            rrs.append(1.0 / rank_of_target(distances, target))
        if not rrs:
            raise ValueError("no scorable retrieval queries")
        per_repeat.append(float(np.mean(rrs)))
        skipped_total += skipped
        n_scored = len(rrs)
    return RetrievalResult(
        mean=float(np.mean(per_repeat)),
        std=float(np.std(per_repeat)),
        per_repeat=per_repeat,
        n_queries=n_scored,
        skipped=skipped_total // repeats if repeats else 0,
    )


def _draw_candidates(query, pools: _Pools, rng, protocol: str):
    """Candidate set for one query, or None if the pool cannot support it."""
    cls = query.class_label
    same_object = pools.by_object.get(query.object_id, [])
    if not same_object:
        return None
    target = same_object[rng.integers(len(same_object))]

    if protocol == "triplet":
        same_class = [
            rid for rid in pools.by_class.get(cls, [])
            if rid != target and rid not in same_object
        ]
        if not same_class:
            # No second instance of the class: fall back to another percept
            # of the target object itself.
            same_class = [rid for rid in same_object if rid != target]
            if not same_class:
                return None
        distractor = same_class[rng.integers(len(same_class))]
        others = pools.complement.get(cls, [])
        if not others:
            return None
        negative = others[rng.integers(len(others))]
        return target, (target, distractor, negative)

    if protocol == "subset":
        other_classes = pools.other_classes(cls)
        if len(other_classes) < 4:
            return None
        chosen = rng.choice(len(other_classes), size=4, replace=False)
        candidates = [target]
        for ci in chosen:
            pool = pools.by_class[other_classes[ci]]
            candidates.append(pool[rng.integers(len(pool))])
        return target, tuple(candidates)

    raise ValueError(f"unknown retrieval protocol {protocol!r}")


def triplet_mrr_eval(manifold: Manifold, dataset: Dataset, query_ids,
                     vision_pool_ids, repeats: int = 5, seed: int = 0,
                     seq_store: SequenceStore | None = None,
                     projections: dict | None = None) -> RetrievalResult:
    """3-candidate MRR: target, same-class distractor, different-class."""
    return _retrieval_eval(manifold, dataset, query_ids, vision_pool_ids,
                           repeats, seed, seq_store, projections, "triplet")


def subset_mrr_eval(manifold: Manifold, dataset: Dataset, query_ids,
                    vision_pool_ids, repeats: int = 5, seed: int = 0,
                    seq_store: SequenceStore | None = None,
                    projections: dict | None = None) -> RetrievalResult:
    """5-candidate MRR: target plus percepts from 4 distinct other classes."""
    return _retrieval_eval(manifold, dataset, query_ids, vision_pool_ids,
                           repeats, seed, seq_store, projections, "subset")


def pair_scores(manifold: Manifold, dataset: Dataset, query_ids, vision_pool_ids,
                seed: int = 0, seq_store: SequenceStore | None = None,
                projections: dict | None = None):
    """Normalized distances and labels for the threshold-classification task.

    For each language query: positives are all same-class percepts in the
    pool; negatives are an equal-count seeded sample from other classes.
    Returns (scores, labels, n_skipped) with labels 1 for positives.
    """
    reset_zero_norm_counter()
    queries = sorted(query_ids)
    pools = _Pools(dataset, vision_pool_ids)
    projections = projections if projections is not None else {}
    _get_projections(manifold, dataset, list(queries) + sorted(vision_pool_ids),
                     seq_store, projections)
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "pairs")))
    scores = []
    labels = []
    skipped = 0
    replacement_logged = False
    for qid in queries:
        query = dataset.by_id[qid]
        positives = pools.by_class.get(query.class_label, [])
        if not positives:
            skipped += 1
            continue
        negatives_pool = pools.complement.get(query.class_label, [])
        if not negatives_pool:
            skipped += 1
            continue
        k = len(positives)
        if len(negatives_pool) >= k:
            idx = rng.choice(len(negatives_pool), size=k, replace=False)
        else:
            idx = rng.integers(len(negatives_pool), size=k)
            if not replacement_logged:
                logger.warning("negative pool smaller than positive count; "
                               "sampling with replacement")
                replacement_logged = True
        negatives = [negatives_pool[i] for i in idx]
        qproj = projections[qid]
        for cid in positives:
            scores.append(normalized_distance(qproj, projections[cid]))
            labels.append(1)
        for cid in negatives:
            scores.append(normalized_distance(qproj, projections[cid]))
            labels.append(0)
    if skipped:
        logger.warning("skipped %d queries with empty positive or negative pools", skipped)
    return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.int64), skipped


def f1_from_scores(scores, labels, t: float):
    """Micro precision/recall/F1 predicting positive when score <= t."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = scores <= t
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return precision, recall, f1


def tune_threshold_from_scores(scores, labels, grid=THRESHOLD_GRID):
    """Best-F1 threshold over the grid; ties go to the smallest t."""
    best_t = grid[0]
    best_f1 = -1.0
    sweep = []
    for t in grid:
        _, _, f1 = f1_from_scores(scores, labels, t)
        sweep.append((t, f1))
        if f1 > best_f1:
            best_f1 = f1
            best_t = t
    return best_t, sweep


@dataclass
class ThresholdResult:
    threshold: float
    precision: float
    recall: float
    f1: float
    n_pairs: int
    skipped: int


def threshold_eval(manifold: Manifold, dataset: Dataset, query_ids,
                   vision_pool_ids, t: float, seed: int = 0,
                   seq_store: SequenceStore | None = None,
                   projections: dict | None = None) -> ThresholdResult:
    """Fixed-threshold classification at radius `t` in normalized distance."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    scores, labels, skipped = pair_scores(
        manifold, dataset, query_ids, vision_pool_ids, seed, seq_store, projections
    )
    precision, recall, f1 = f1_from_scores(scores, labels, t)
    return ThresholdResult(threshold=t, precision=precision, recall=recall,
                           f1=f1, n_pairs=len(scores), skipped=skipped)


def tune_threshold(manifold: Manifold, dataset: Dataset, query_ids,
                   vision_pool_ids, seed: int = 0,
                   seq_store: SequenceStore | None = None,
                   projections: dict | None = None):
    """Validation sweep over the 0.00..1.00 grid; returns (t*, sweep)."""
    scores, labels, _ = pair_scores(
        manifold, dataset, query_ids, vision_pool_ids, seed, seq_store, projections
    )
    if len(scores) == 0:
        raise ValueError("no validation pairs to tune on")
    return tune_threshold_from_scores(scores, labels)


def roc_from_scores(scores, labels):
    """ROC points (fpr, tpr) sweeping the threshold over observed scores,
    plus the trapezoid AUC. Lower scores are more positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ROC needs both positive and negative pairs")
    thresholds = np.unique(scores)
    points = [(0.0, 0.0)]
    for t in thresholds:
        tpr = np.searchsorted(pos, t, side="right") / len(pos)
        fpr = np.searchsorted(neg, t, side="right") / len(neg)
        points.append((float(fpr), float(tpr)))
    auc = 0.0
    for (f0, t0), (f1_, t1) in zip(points[:-1], points[1:]):
        auc += (f1_ - f0) * (t1 + t0) / 2.0
    return points, float(auc)


def roc_curve(manifold: Manifold, dataset: Dataset, query_ids, vision_pool_ids,
              seed: int = 0, seq_store: SequenceStore | None = None,
              projections: dict | None = None):
    scores, labels, _ = pair_scores(
        manifold, dataset, query_ids, vision_pool_ids, seed, seq_store, projections
    )
    return roc_from_scores(scores, labels)


@dataclass
class EvalReport:
    """Aggregated grounding-quality metrics for one manifold."""

    triplet_mrr: float
    triplet_mrr_std: float
    subset_mrr: float
    subset_mrr_std: float
    f1: float
    precision: float
    recall: float
    auc: float
    tuned_threshold: float
    roc_points: list
    repeats: int
    seed: int
    n_queries: int
    skipped_queries: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "triplet_mrr": self.triplet_mrr,
            "triplet_mrr_std": self.triplet_mrr_std,
            "subset_mrr": self.subset_mrr,
            "subset_mrr_std": self.subset_mrr_std,
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "auc": self.auc,
            "tuned_threshold": self.tuned_threshold,
            "repeats": self.repeats,
            "seed": self.seed,
            "n_queries": self.n_queries,
            "skipped_queries": self.skipped_queries,
            "metadata": self.metadata,
        }
        return out


def evaluate(manifold: Manifold, dataset: Dataset, test_query_ids,
             test_vision_ids, val_query_ids, val_vision_ids,
             repeats: int = 5, seed: int = 0,
             seq_store: SequenceStore | None = None) -> EvalReport:
    """Full evaluation: both MRR protocols on test, threshold tuned on
    validation then applied to test, ROC/AUC on test."""
    projections: dict = {}
    triplet = triplet_mrr_eval(manifold, dataset, test_query_ids, test_vision_ids,
                               repeats, seed, seq_store, projections)
    subset = subset_mrr_eval(manifold, dataset, test_query_ids, test_vision_ids,
                             repeats, seed, seq_store, projections)
    t_star, _ = tune_threshold(manifold, dataset, val_query_ids, val_vision_ids,
                               seed, seq_store, projections)
    thresh = threshold_eval(manifold, dataset, test_query_ids, test_vision_ids,
                            t_star, seed, seq_store, projections)
    points, auc = roc_curve(manifold, dataset, test_query_ids, test_vision_ids,
                            seed, seq_store, projections)
    return EvalReport(
        triplet_mrr=triplet.mean,
        triplet_mrr_std=triplet.std,
        subset_mrr=subset.mean,
        subset_mrr_std=subset.std,
        f1=thresh.f1,
        precision=thresh.precision,
        recall=thresh.recall,
        auc=auc,
        tuned_threshold=t_star,
        roc_points=points,
        repeats=repeats,
        seed=seed,
        n_queries=triplet.n_queries,
        skipped_queries=triplet.skipped,
        metadata={},
    )
