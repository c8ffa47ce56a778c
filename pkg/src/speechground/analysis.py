"""Speaker-trait studies.

Two analyses probe how speaker characteristics interact with grounding
quality: (1) a per-user study that trains one manifold per eligible speaker
and correlates the resulting MRR with annotated traits, and (2) a group
study that trains one manifold per trait group on equal-size splits so group
effects are not confounded with data volume.

Per-user and per-group trainings are independent; their seeds derive
deterministically from (master seed, speaker or group id).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .align import Manifold, TrainConfig, train
from .dataset import (
    Dataset, SequenceStore, SpeakerTraits, derive_seed, filter_users_for_study,
    largest_remainder,
)
from .evaluation import subset_mrr_eval, triplet_mrr_eval

logger = logging.getLogger(__name__)

# Group boundaries for the ordinal traits; binary traits split on 0/1 and
# gender on man/woman (undetermined excluded).
GROUPINGS = {
    "accent": {"non_accent": (0,), "accent": (1,)},
    "creak": {"non_creak": (0,), "creak": (1,)},
    "gender": {"man": ("man",), "woman": ("woman",)},
    "volume": {"low": (1,), "medium": (2, 3), "high": (4,)},
    "background_noise": {"low": (1, 2), "high": (3, 4)},
    "muffledness": {"low": (1, 2), "high": (3,)},
}

# Traits entering the per-user correlation table. Hoarseness is accepted in
# the traits file but excluded here (too few hoarse speakers to correlate).
CORRELATION_TRAITS = ("accent", "creak", "muffledness", "volume", "background_noise")


class ZeroVarianceError(ValueError):
    """Pearson correlation is undefined for a constant input."""


class GroupStudyError(RuntimeError):
    """A trait group cannot support the study (too few classes)."""


@dataclass
class UserStudyResult:
    speaker_id: str
    n_train: int
    n_test: int
    triplet_mrr: float
    subset_mrr: float
    traits: SpeakerTraits


@dataclass(frozen=True)
class TraitCorrelation:
    trait: str
    r: float | None  # None when undefined (constant column)
    n: int


def pearson(x, y) -> float:
    """Pearson correlation coefficient, population form.

    Raises ZeroVarianceError when either input is constant (the coefficient
    is undefined there, not zero).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-D sequences")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVarianceError("zero variance input")
    return float(dx @ dy) / np.sqrt(sxx * syy)


def split_user_records(record_ids, dataset: Dataset, seed) -> tuple[list, list]:
    """Per-class stratified 2/3 train, 1/3 test with at least one test
    example per class (classes arrive with >= 2 examples each)."""
    by_class = {}
    for rid in sorted(record_ids):
        by_class.setdefault(dataset.by_id[rid].class_label, []).append(rid)
    train_ids = []
    test_ids = []
    rng = np.random.Generator(np.random.PCG64(seed))
    for cls in sorted(by_class):
        ids = sorted(by_class[cls])
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        n_train, n_test = largest_remainder(len(ids), (2 / 3, 1 / 3))
        if n_test == 0 and len(ids) >= 2:
            n_train -= 1
            n_test += 1
        train_ids.extend(shuffled[:n_train])
        test_ids.extend(shuffled[n_train:])
    return sorted(train_ids), sorted(test_ids)


def _vision_pool(dataset: Dataset, classes) -> list[str]:
    classes = set(classes)
    return sorted(
        r.record_id for r in dataset.records
        if r.modality == "vision" and r.class_label in classes
    )


def per_user_study(dataset: Dataset, traits: dict[str, SpeakerTraits],
                   train_config: TrainConfig, eval_repeats: int = 5,
                   seq_store: SequenceStore | None = None) -> list[UserStudyResult]:
    """Train and evaluate one manifold per eligible speaker.

    Eligibility and record retention follow filter_users_for_study. Each
    user's language records are split per class (2/3 train, 1/3 test); the
    vision side of training and the retrieval candidate pools are the
    percepts of the user's retained classes. Results are a pure function of
    (dataset, traits, config).
    """
    eligible = filter_users_for_study(dataset)
    results = []
    for sid, retained in eligible.items():
        if sid not in traits:
            raise KeyError(f"no trait annotations for eligible speaker {sid!r}")
        classes = {dataset.by_id[r].class_label for r in retained}
        if len(classes) < 5:
            logger.warning("speaker %s left with %d classes; excluded", sid, len(classes))
            continue
        seed = derive_seed(train_config.seed, "user", sid)
        train_lang, test_lang = split_user_records(retained, dataset, seed)
        vision_ids = _vision_pool(dataset, classes)
        user_config = replace(
            train_config,
            seed=int(seed.generate_state(1)[0]),
            triplets_per_epoch=train_config.triplets_per_epoch or len(train_lang),
        )
        manifold, _ = train(
            dataset, user_config, seq_store=seq_store,
            train_ids=train_lang + vision_ids,
        )
        projections: dict = {}
        trip = triplet_mrr_eval(manifold, dataset, test_lang, vision_ids,
                                repeats=eval_repeats, seed=user_config.seed,
                                seq_store=seq_store, projections=projections)
        sub = subset_mrr_eval(manifold, dataset, test_lang, vision_ids,
                              repeats=eval_repeats, seed=user_config.seed,
                              seq_store=seq_store, projections=projections)
        results.append(
            UserStudyResult(
                speaker_id=sid,
                n_train=len(train_lang),
                n_test=len(test_lang),
                triplet_mrr=trip.mean,
                subset_mrr=sub.mean,
                traits=traits[sid],
            )
        )
    return results


def trait_correlations(results: list[UserStudyResult], metric: str = "subset",
                       include_gender: bool = True) -> list[TraitCorrelation]:
    """Correlate per-user MRR with encoded traits.

    Binary traits encode as 0/1, ordinals as their raw 1-4 level, gender as
    man=0 / woman=1 with undetermined speakers excluded from that row, and
    the per-user example count enters as its own covariate. A constant
    column yields an undefined entry (r=None) rather than 0.
    """
    if len(results) < 2:
        raise ValueError("need at least 2 user results")
    if metric not in ("subset", "triplet"):
        raise ValueError(f"unknown metric {metric!r}")
    score = {
        "subset": [r.subset_mrr for r in results],
        "triplet": [r.triplet_mrr for r in results],
    }[metric]
    rows = []

    def corr(xs, ys, trait, n):
        try:
            return TraitCorrelation(trait, pearson(xs, ys), n)
        except ZeroVarianceError:
            return TraitCorrelation(trait, None, n)

    examples = [r.n_train + r.n_test for r in results]
    rows.append(corr(examples, score, "n_examples", len(results)))
    for trait in CORRELATION_TRAITS:
        values = [float(getattr(r.traits, trait)) for r in results]
        rows.append(corr(values, score, trait, len(results)))
    if include_gender:
        pairs = [
            (0.0 if r.traits.gender == "man" else 1.0, s)
            for r, s in zip(results, score)
            if r.traits.gender in ("man", "woman")
        ]
        if len(pairs) >= 2:
            xs, ys = zip(*pairs)
            rows.append(corr(list(xs), list(ys), "gender", len(pairs)))
        else:
            rows.append(TraitCorrelation("gender", None, len(pairs)))
    return rows


@dataclass
class GroupData:
    train_ids: list
    test_ids: list


@dataclass
class GroupSplit:
    """Equal-size per-group record sets for one trait."""

    trait: str
    groups: dict[str, GroupData]

    def verify(self, dataset: Dataset) -> None:
        """Assert the equal-count and class-coverage invariants."""
        seen = set()
        for data in self.groups.values():
            ids = set(data.train_ids) | set(data.test_ids)
            if seen & ids:
                raise AssertionError("groups overlap")
            seen |= ids
        train_counts = {g: len(d.train_ids) for g, d in self.groups.items()}
        test_counts = {g: len(d.test_ids) for g, d in self.groups.items()}
        if len(set(train_counts.values())) != 1:
            raise AssertionError(f"unequal train counts: {train_counts}")
        if len(set(test_counts.values())) != 1:
            raise AssertionError(f"unequal test counts: {test_counts}")
        for g, d in self.groups.items():
            train_classes = {dataset.by_id[r].class_label for r in d.train_ids}
            test_classes = {dataset.by_id[r].class_label for r in d.test_ids}
            if not test_classes <= train_classes:
                raise AssertionError(f"group {g}: test classes missing from train")


def _group_of(value, grouping: dict):
    for name, members in grouping.items():
        if value in members:
            return name
    return None


def _stratified_downsample(ids, dataset: Dataset, target: int, rng,
                           keep_classes=frozenset()) -> list:
    """Seeded class-stratified downsample to exactly `target` records,
    retaining at least one record of every class in `keep_classes`."""
    by_class = {}
    for rid in sorted(ids):
        by_class.setdefault(dataset.by_id[rid].class_label, []).append(rid)
    classes = sorted(by_class)
    counts = largest_remainder(target, [len(by_class[c]) / len(ids) for c in classes])
    # largest_remainder apportions by proportion; cap at availability and
    # push any shortfall onto classes with spare records.
    counts = [min(c, len(by_class[cls])) for c, cls in zip(counts, classes)]
    for i, cls in enumerate(classes):
        if cls in keep_classes and counts[i] == 0:
            counts[i] = 1
    while sum(counts) > target:
        order = sorted(range(len(classes)),
                       key=lambda i: (-(counts[i] - (1 if classes[i] in keep_classes else 0)), i))
        i = order[0]
        if counts[i] <= (1 if classes[i] in keep_classes else 0):
            break
        counts[i] -= 1
    while sum(counts) < target:
        order = sorted(range(len(classes)),
                       key=lambda i: (-(len(by_class[classes[i]]) - counts[i]), i))
        i = order[0]
        if counts[i] >= len(by_class[classes[i]]):
            break
        counts[i] += 1
    chosen = []
    for cls, take in zip(classes, counts):
        pool = sorted(by_class[cls])
        perm = rng.permutation(len(pool))
        chosen.extend(pool[i] for i in perm[:take])
    return sorted(chosen)


def build_group_split(dataset: Dataset, traits: dict[str, SpeakerTraits],
                      trait_name: str, grouping: dict | None = None,
                      seed: int = 0) -> GroupSplit:
    """Assemble equal-size train/test sets per trait group.

    Each group's language records are split per class (2/3 train, 1/3 test),
    then the larger groups are downsampled (seeded, class-stratified) so all
    groups share the same train count and the same test count. Test records
    whose class is missing from their group's training set are dropped.
    """
    grouping = grouping or GROUPINGS[trait_name]
    members = {name: [] for name in grouping}
    for rec in dataset.records:
        if rec.modality != "language" or not rec.speaker_id:
            continue
        t = traits.get(rec.speaker_id)
        if t is None:
            continue
        group = _group_of(getattr(t, trait_name), grouping)
        if group is not None:
            members[group].append(rec.record_id)

    splits = {}
    for name in sorted(members):
        ids = members[name]
        classes = {dataset.by_id[r].class_label for r in ids}
        if len(classes) < 5:
            raise GroupStudyError(
                f"group {name!r} of trait {trait_name!r} covers only "
                f"{len(classes)} classes (need >= 5)"
            )
        rng_seed = derive_seed(seed, "group-split", trait_name, name)
        splits[name] = split_user_records(ids, dataset, rng_seed)

    min_train = min(len(tr) for tr, _ in splits.values())
    min_test = min(len(te) for _, te in splits.values())
    groups = {}
    for name in sorted(splits):
        tr, te = splits[name]
        rng = np.random.Generator(
            np.random.PCG64(derive_seed(seed, "group-downsample", trait_name, name))
        )
        test_classes = {dataset.by_id[r].class_label for r in te}
        tr = _stratified_downsample(tr, dataset, min_train, rng,
                                    keep_classes=frozenset(test_classes))
        train_classes = {dataset.by_id[r].class_label for r in tr}
        te_kept = [r for r in te if dataset.by_id[r].class_label in train_classes]
        dropped = len(te) - len(te_kept)
        if dropped:
            logger.warning("group %s: dropped %d test records with untrained classes",
                           name, dropped)
        groups[name] = GroupData(train_ids=tr, test_ids=te_kept)

    min_test = min(min_test, *(len(d.test_ids) for d in groups.values()))
    for name, data in groups.items():
        rng = np.random.Generator(
            np.random.PCG64(derive_seed(seed, "group-test-downsample", trait_name, name))
        )
        data.test_ids = _stratified_downsample(data.test_ids, dataset, min_test, rng)

    split = GroupSplit(trait=trait_name, groups=groups)
    split.verify(dataset)
    return split


@dataclass
class GroupResult:
    group: str
    n_train: int
    n_test: int
    triplet_mrr: float
    triplet_mrr_std: float
    subset_mrr: float
    subset_mrr_std: float


def group_study(dataset: Dataset, traits: dict[str, SpeakerTraits],
                trait_name: str, train_config: TrainConfig,
                grouping: dict | None = None, eval_repeats: int = 5,
                seq_store: SequenceStore | None = None) -> list[GroupResult]:
    """Train one manifold per trait group on equal-size splits and evaluate
    both MRR protocols per group."""
    split = build_group_split(dataset, traits, trait_name, grouping,
                              seed=train_config.seed)
    results = []
    for name in sorted(split.groups):
        data = split.groups[name]
        classes = {dataset.by_id[r].class_label for r in data.train_ids}
        vision_ids = _vision_pool(dataset, classes)
        seed = derive_seed(train_config.seed, "group", trait_name, name)
        group_config = replace(
            train_config,
            seed=int(seed.generate_state(1)[0]),
            triplets_per_epoch=train_config.triplets_per_epoch or len(data.train_ids),
        )
        manifold, _ = train(dataset, group_config, seq_store=seq_store,
                            train_ids=data.train_ids + vision_ids)
        projections: dict = {}
        trip = triplet_mrr_eval(manifold, dataset, data.test_ids, vision_ids,
                                repeats=eval_repeats, seed=group_config.seed,
                                seq_store=seq_store, projections=projections)
        sub = subset_mrr_eval(manifold, dataset, data.test_ids, vision_ids,
                              repeats=eval_repeats, seed=group_config.seed,
                              seq_store=seq_store, projections=projections)
        results.append(
            GroupResult(
                group=name,
                n_train=len(data.train_ids),
                n_test=len(data.test_ids),
                triplet_mrr=trip.mean,
                triplet_mrr_std=trip.std,
                subset_mrr=sub.mean,
                subset_mrr_std=sub.std,
            )
        )
    return results
