"""Dataset ingestion and management.

A dataset is a manifest (delimited text, one record per line) plus a flat
little-endian float32 vector container addressed by (element offset, dim).
Speaker traits live in a separate delimited table keyed by speaker_id.
Sequential features (for the LSTM path) live in a binary sidecar.

Datasets are immutable after load; split assignment produces a new manifest
rather than mutating records in place.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .containers import read_container, write_container

MODALITIES = ("vision", "language")
SPLITS = ("train", "val", "test", "unassigned")
GENDERS = ("man", "woman", "undetermined")

MANIFEST_FIELDS = (
    "record_id", "modality", "class_label", "object_id",
    "speaker_id", "split", "vector_offset", "vector_dim",
)
TRAIT_FIELDS = (
    "speaker_id", "gender", "accent", "creak", "hoarseness",
    "muffledness", "volume", "background_noise",
)
BINARY_TRAITS = ("accent", "creak", "hoarseness")
ORDINAL_TRAITS = ("muffledness", "volume", "background_noise")

SEQUENCE_MAGIC = b"SGSEQ01\n"


class DatasetError(ValueError):
    """Malformed manifest, vector container, or traits table."""


@dataclass(frozen=True)
class EmbeddingRecord:
    """One featurized instance: metadata plus its float32 vector."""

    record_id: str
    modality: str
    class_label: str
    object_id: str
    speaker_id: str | None
    split: str
    vector: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DatasetError(f"{self.record_id}: unknown modality {self.modality!r}")
        if self.split not in SPLITS:
            raise DatasetError(f"{self.record_id}: unknown split {self.split!r}")
        if self.modality == "vision" and self.speaker_id:
            raise DatasetError(f"{self.record_id}: vision records cannot carry a speaker_id")


@dataclass(frozen=True)
class SpeakerTraits:
    """Annotated per-speaker attributes used by the trait studies."""

    speaker_id: str
    gender: str
    accent: int
    creak: int
    hoarseness: int
    muffledness: int
    volume: int
    background_noise: int

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise DatasetError(f"{self.speaker_id}: unknown gender {self.gender!r}")
        for name in BINARY_TRAITS:
            if getattr(self, name) not in (0, 1):
                raise DatasetError(f"{self.speaker_id}: {name} must be 0 or 1")
        for name in ORDINAL_TRAITS:
            if not 1 <= getattr(self, name) <= 4:
                raise DatasetError(f"{self.speaker_id}: {name} must be in 1..4")


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test record-id sets for one split seed."""

    train: frozenset
    val: frozenset
    test: frozenset
    seed: int

    def of(self, record_id: str) -> str:
        if record_id in self.train:
            return "train"
        if record_id in self.val:
            return "val"
        if record_id in self.test:
            return "test"
        return "unassigned"


class Dataset:
    """In-memory collection of EmbeddingRecords with per-modality dims."""

    def __init__(self, records: list[EmbeddingRecord]):
        self.records = list(records)
        self.by_id = {}
        self.modality_dims = {}
        for rec in self.records:
            if rec.record_id in self.by_id:
                raise DatasetError(f"duplicate record_id {rec.record_id!r}")
            self.by_id[rec.record_id] = rec
            dim = rec.vector.shape[0]
            known = self.modality_dims.setdefault(rec.modality, dim)
            if known != dim:
                raise DatasetError(
                    f"{rec.record_id}: vector dim {dim} != modality "
                    f"{rec.modality!r} dim {known}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def select(self, modality=None, split=None, class_label=None, speaker_id=None):
        """Records matching all given filters, in manifest order."""
        out = []
        for rec in self.records:
            if modality is not None and rec.modality != modality:
                continue
            if split is not None and rec.split != split:
                continue
            if class_label is not None and rec.class_label != class_label:
                continue
            if speaker_id is not None and rec.speaker_id != speaker_id:
                continue
            out.append(rec)
        return out

    def classes(self) -> list[str]:
        return sorted({r.class_label for r in self.records})

    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records if r.speaker_id})

    def with_split(self, split: DatasetSplit) -> "Dataset":
        """New dataset with each record's split field set from `split`."""
        return Dataset([replace(r, split=split.of(r.record_id)) for r in self.records])

    def summary(self) -> dict:
        per_modality = {m: 0 for m in MODALITIES}
        per_split = {s: 0 for s in SPLITS}
        per_class = {}
        for rec in self.records:
            per_modality[rec.modality] += 1
            per_split[rec.split] += 1
            per_class[rec.class_label] = per_class.get(rec.class_label, 0) + 1
        return {
            "records": len(self.records),
            "modalities": per_modality,
            "modality_dims": dict(self.modality_dims),
            "splits": per_split,
            "classes": len(per_class),
            "speakers": len(self.speakers()),
        }


def load_dataset(manifest_path, vectors_path) -> Dataset:
    """Load a manifest + vector container pair, validating invariants."""
    vectors = np.fromfile(vectors_path, dtype="<f4")
    records = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != MANIFEST_FIELDS:
            raise DatasetError(f"{manifest_path}: bad manifest header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(MANIFEST_FIELDS):
                raise DatasetError(
                    f"{manifest_path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, "
                    f"got {len(parts)}"
                )
            rid, modality, class_label, object_id, speaker_id, split, off_s, dim_s = parts
            try:
                offset = int(off_s)
                dim = int(dim_s)
            except ValueError as exc:
                raise DatasetError(f"{manifest_path}:{lineno}: bad offset/dim: {exc}") from exc
            if offset < 0 or dim < 1 or offset + dim > vectors.size:
                raise DatasetError(
                    f"{manifest_path}:{lineno}: vector out of bounds "
                    f"(offset {offset}, dim {dim}, container {vectors.size})"
                )
            records.append(
                EmbeddingRecord(
                    record_id=rid,
                    modality=modality,
                    class_label=class_label,
                    object_id=object_id,
                    speaker_id=speaker_id or None,
                    split=split,
                    vector=vectors[offset : offset + dim],
                )
            )
    return Dataset(records)


def write_dataset(dataset: Dataset, manifest_path, vectors_path) -> None:
    """Write manifest + vector container; round-trips bit-for-bit."""
    lines = ["\t".join(MANIFEST_FIELDS)]
    chunks = []
    offset = 0
    for rec in dataset.records:
        vec = np.ascontiguousarray(rec.vector, dtype="<f4")
        lines.append(
            "\t".join(
                [
                    rec.record_id,
                    rec.modality,
                    rec.class_label,
                    rec.object_id,
                    rec.speaker_id or "",
                    rec.split,
                    str(offset),
                    str(vec.size),
                ]
            )
        )
        chunks.append(vec.tobytes())
        offset += vec.size
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(vectors_path, "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)


def load_traits(path) -> dict[str, SpeakerTraits]:
    """Load the speaker-trait table keyed by speaker_id."""
    traits = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != TRAIT_FIELDS:
            raise DatasetError(f"{path}: bad traits header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(TRAIT_FIELDS):
                raise DatasetError(f"{path}:{lineno}: expected {len(TRAIT_FIELDS)} fields")
            sid = parts[0]
            if sid in traits:
                raise DatasetError(f"{path}:{lineno}: duplicate speaker_id {sid!r}")
            try:
                traits[sid] = SpeakerTraits(
                    speaker_id=sid,
                    gender=parts[1],
                    accent=int(parts[2]),
                    creak=int(parts[3]),
                    hoarseness=int(parts[4]),
                    muffledness=int(parts[5]),
                    volume=int(parts[6]),
                    background_noise=int(parts[7]),
                )
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return traits


def write_traits(traits: dict[str, SpeakerTraits], path) -> None:
    lines = ["\t".join(TRAIT_FIELDS)]
    for sid in sorted(traits):
        t = traits[sid]
        lines.append(
            "\t".join(
                [t.speaker_id, t.gender, str(t.accent), str(t.creak), str(t.hoarseness),
                 str(t.muffledness), str(t.volume), str(t.background_noise)]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class SequenceStore:
    """Read-only map record_id -> (n_frames, n_coeffs) float32 array."""

    def __init__(self, sequences: dict[str, np.ndarray]):
        self.sequences = sequences

    def __contains__(self, record_id: str) -> bool:
        return record_id in self.sequences

    def __len__(self) -> int:
        return len(self.sequences)

    def get(self, record_id: str) -> np.ndarray:
        try:
            return self.sequences[record_id]
        except KeyError:
            raise DatasetError(f"no sequence stored for record {record_id!r}") from None


def write_sequences(path, sequences: dict[str, np.ndarray]) -> None:
    tensors = {}
    for rid, seq in sequences.items():
        arr = np.asarray(seq, dtype=np.float32)
        if arr.ndim != 2:
            raise DatasetError(f"sequence for {rid!r} must be 2-D, got shape {arr.shape}")
        tensors[rid] = arr
    write_container(path, SEQUENCE_MAGIC, {"kind": "sequences"}, tensors)


def load_sequences(path) -> SequenceStore:
    meta, tensors = read_container(path, SEQUENCE_MAGIC)
    if meta.get("kind") != "sequences":
        raise DatasetError(f"{path}: not a sequence sidecar")
    return SequenceStore(tensors)


def derive_seed(master_seed: int, *tokens) -> np.random.SeedSequence:
    """Deterministic child seed from a master seed and string/int tokens.

    Strings hash through crc32 so the derivation is stable across platforms
    and runs (unlike the builtin hash).
    """
    entropy = [master_seed & 0xFFFFFFFF]
    for tok in tokens:
        if isinstance(tok, str):
            entropy.append(zlib.crc32(tok.encode("utf-8")))
        else:
            entropy.append(int(tok) & 0xFFFFFFFF)
    return np.random.SeedSequence(entropy)


def largest_remainder(n: int, ratios) -> list[int]:
    """Apportion n items across buckets by largest remainder.

    Deterministic: remainder ties go to the earlier bucket.
    """
    shares = [n * r for r in ratios]
    base = [int(np.floor(s)) for s in shares]
    left = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(shares[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def make_split(dataset: Dataset, ratios, seed: int) -> DatasetSplit:
    """Stratified train/val/test split, deterministic given the seed.

    The assignment unit is the object: all records of an object_id (its
    percepts and the descriptions of it, across modalities) land in the same
    bucket, so held-out language queries keep their paired vision targets.
    Objects are apportioned per class by largest remainder, with at least
    one object per class forced into train.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must be three positives summing to 1, got {ratios}")
    class_counts = {}
    objects = {}
    for rec in dataset.records:
        class_counts[rec.class_label] = class_counts.get(rec.class_label, 0) + 1
        obj = objects.setdefault(rec.object_id, {"class": rec.class_label, "ids": []})
        if obj["class"] != rec.class_label:
            raise DatasetError(
                f"object {rec.object_id!r} spans classes "
                f"{obj['class']!r} and {rec.class_label!r}"
            )
        obj["ids"].append(rec.record_id)
    for cls, count in sorted(class_counts.items()):
        if count < 2:
            raise DatasetError(f"class {cls!r} has a single record; cannot stratify")

    per_class = {}
    for oid in sorted(objects):
        per_class.setdefault(objects[oid]["class"], []).append(oid)

    buckets = {"train": set(), "val": set(), "test": set()}
    for cls in sorted(per_class):
        oids = per_class[cls]
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "split", cls)))
        perm = rng.permutation(len(oids))
        shuffled = [oids[i] for i in perm]
        n_train, n_val, n_test = largest_remainder(len(oids), ratios)
        if n_train == 0:
            # Every class must be trainable; steal from the fuller bucket.
            if n_val >= n_test:
                n_val -= 1
            else:
                n_test -= 1
            n_train = 1
        for oid in shuffled[:n_train]:
            buckets["train"].update(objects[oid]["ids"])
        for oid in shuffled[n_train : n_train + n_val]:
            buckets["val"].update(objects[oid]["ids"])
        for oid in shuffled[n_train + n_val :]:
            buckets["test"].update(objects[oid]["ids"])

    return DatasetSplit(
        train=frozenset(buckets["train"]),
        val=frozenset(buckets["val"]),
        test=frozenset(buckets["test"]),
        seed=seed,
    )


def filter_users_for_study(dataset: Dataset) -> dict[str, list[str]]:
    """Speakers eligible for the per-user study, with retained record ids.

    A speaker qualifies with >= 2 examples in each of >= 5 classes; within a
    kept speaker, records of classes where that speaker has < 2 examples are
    dropped. Applying the filter to its own output is a no-op.
    """
    per_speaker = {}
    for rec in dataset.records:
        if rec.modality != "language" or not rec.speaker_id:
            continue
        per_speaker.setdefault(rec.speaker_id, {}).setdefault(rec.class_label, []).append(
            rec.record_id
        )
    eligible = {}
    for sid in sorted(per_speaker):
        strong = {cls: ids for cls, ids in per_speaker[sid].items() if len(ids) >= 2}
        if len(strong) >= 5:
            retained = sorted(rid for ids in strong.values() for rid in ids)
            eligible[sid] = retained
    return eligible
