"""Triplet sampling and manifold-alignment training.

One encoder per modality projects embeddings into a shared latent space.
Training minimizes the margin loss max(d(a,p) - d(a,n) + margin, 0) over
(anchor, positive, negative) triplets under cosine distance, where each
triplet member's modality is drawn at random and routed through the matching
encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .containers import read_container, write_container
from .dataset import Dataset, SequenceStore, derive_seed, MODALITIES

logger = logging.getLogger(__name__)

MANIFOLD_MAGIC = b"SGMFD01\n"


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class _ZeroNormCounter:
    """Zero-norm cosine inputs get distance 1; warn once per run."""

    def __init__(self):
        self.count = 0

    def hit(self, n: int) -> None:
        if n and self.count == 0:
            logger.warning("zero-norm vector in cosine distance; using distance 1")
        self.count += n

    def reset(self) -> None:
        self.count = 0


_zero_norm = _ZeroNormCounter()


def reset_zero_norm_counter() -> None:
    _zero_norm.reset()


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive/negative record ids with per-member modality tags."""

    anchor: str
    positive: str
    negative: str
    anchor_modality: str
    positive_modality: str
    negative_modality: str


@dataclass(frozen=True)
class TrainConfig:
    """Alignment training hyperparameters.

    Defaults follow the reference recipe: cosine distance with margin 0.4,
    300 epochs of Adam at 1e-3 with a /10 step decay every 100 epochs.
    """

    margin: float = 0.4
    epochs: int = 300
    base_lr: float = 1e-3
    lr_decay_epochs: int = 100
    lr_decay_factor: float = 10.0
    batch_size: int = 64
    triplets_per_epoch: int | None = None  # default: #train language records
    seed: int = 0
    anchor_class_uniform: bool = True  # False: anchors drawn record-uniform
    language_arch: str = "mlp"  # "mlp" | "lstm"
    hidden1: int = 2048
    hidden2: int = 1536
    projection_dim: int = nn.PROJECTION_DIM
    lstm_hidden: int = 64
    lstm_tail: int = 32

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.language_arch not in ("mlp", "lstm"):
            raise ValueError(f"unknown language_arch {self.language_arch!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Manifold:
    """Trained per-modality encoders sharing one projection space."""

    language: nn.EncoderParams
    vision: nn.EncoderParams
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.language.output_dim != self.vision.output_dim:
            raise ValueError("encoders must project to the same dimension")

    @property
    def projection_dim(self) -> int:
        return self.language.output_dim

    def encoder_for(self, modality: str) -> nn.EncoderParams:
        if modality == "language":
            return self.language
        if modality == "vision":
            return self.vision
        raise ValueError(f"no encoder for modality {modality!r}")

    def copy(self) -> "Manifold":
        return Manifold(language=self.language.copy(), vision=self.vision.copy(),
                        seed=self.seed, config=dict(self.config))


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]. Zero-norm inputs map to 1."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    denom = np.linalg.norm(u) * np.linalg.norm(v)
    if denom == 0.0:
        _zero_norm.hit(1)
        return 1.0
    return 1.0 - float(u @ v) / denom


def cosine_distance_batch(U: np.ndarray, V: np.ndarray):
    """Row-wise cosine distances with gradients.

    Returns (d, dU, dV) where d is (n,) and dU/dV are the partials of each
    d_i with respect to U_i / V_i. Zero-norm rows get distance 1 and zero
    gradient (flat subgradient).
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    nu = np.linalg.norm(U, axis=1)
    nv = np.linalg.norm(V, axis=1)
    denom = nu * nv
    bad = denom == 0.0
    _zero_norm.hit(int(bad.sum()))
    safe = np.where(bad, 1.0, denom)
    dots = np.einsum("ij,ij->i", U, V)
    s = np.where(bad, 0.0, dots / safe)
    d = 1.0 - s
    inv = 1.0 / safe
    dU = -(V * inv[:, None] - (s / np.where(bad, 1.0, nu**2))[:, None] * U)
    dV = -(U * inv[:, None] - (s / np.where(bad, 1.0, nv**2))[:, None] * V)
    dU[bad] = 0.0
    dV[bad] = 0.0
    return d, dU, dV


def triplet_loss(proj_a: np.ndarray, proj_p: np.ndarray, proj_n: np.ndarray,
                 margin: float) -> float:
    """max(d(a,p) - d(a,n) + margin, 0) under cosine distance."""
    return max(
        cosine_distance(proj_a, proj_p) - cosine_distance(proj_a, proj_n) + margin,
        0.0,
    )


def build_class_index(records) -> dict:
    """class_label -> modality -> sorted record ids."""
    index = {}
    for rec in records:
        index.setdefault(rec.class_label, {}).setdefault(rec.modality, []).append(
            rec.record_id
        )
    for per_mod in index.values():
        for ids in per_mod.values():
            ids.sort()
    return index


def sample_triplets(records, count: int, seed, anchor_class_uniform: bool = True,
                    max_modality_retries: int = 8):
    """Draw `count` triplets from the given records, deterministically.

    Anchor class is uniform over classes (or anchors uniform over records);
    the negative class is uniform over the remaining classes. Each member's
    modality is uniform; an empty class/modality pool triggers a modality
    resample, and a triplet whose member cannot be filled after bounded
    retries is skipped (and counted).
    """
    records = list(records)
    index = build_class_index(records)
    classes = sorted(index)
    if len(classes) < 2:
        raise ValueError("triplet sampling needs at least 2 classes")
    rng = np.random.Generator(np.random.PCG64(seed))
    triplets = []
    skipped = 0

    def draw_member(cls):
        for _ in range(max_modality_retries):
            modality = MODALITIES[rng.integers(len(MODALITIES))]
            pool = index[cls].get(modality)
            if pool:
                return pool[rng.integers(len(pool))], modality
        return None

    for _ in range(count):
        if anchor_class_uniform:
            cls_a = classes[rng.integers(len(classes))]
            anchor = draw_member(cls_a)
        else:
            rec = records[rng.integers(len(records))]
            cls_a = rec.class_label
            anchor = (rec.record_id, rec.modality)
        others = [c for c in classes if c != cls_a]
        cls_n = others[rng.integers(len(others))]
        positive = draw_member(cls_a)
        negative = draw_member(cls_n)
        if anchor is None or positive is None or negative is None:
            skipped += 1
            continue
        triplets.append(
            Triplet(
                anchor=anchor[0], positive=positive[0], negative=negative[0],
                anchor_modality=anchor[1], positive_modality=positive[1],
                negative_modality=negative[1],
            )
        )
    if skipped:
        logger.warning("skipped %d triplets with unfillable class/modality pools", skipped)
    return triplets, skipped


def _features(record, arch: str, seq_store: SequenceStore | None):
    if record.modality == "language" and arch == "lstm":
        if seq_store is None:
            raise ValueError("LSTM language encoder requires a sequence sidecar")
        return seq_store.get(record.record_id).astype(np.float64)
    return record.vector.astype(np.float64)


def init_manifold(dataset: Dataset, config: TrainConfig,
                  seq_store: SequenceStore | None = None) -> Manifold:
    """Fresh (untrained) encoders sized for the dataset, seeded from config."""
    vision_dim = dataset.modality_dims.get("vision")
    if vision_dim is None:
        raise ValueError("dataset has no vision records")
    vis_rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "init", "vision")))
    vision = nn.init_mlp(
        nn.MlpSpec(vision_dim, config.hidden1, config.hidden2, config.projection_dim),
        vis_rng,
    )
    lang_rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "init", "language")))
    if config.language_arch == "lstm":
        if seq_store is None or len(seq_store) == 0:
            raise ValueError("LSTM language encoder requires a sequence sidecar")
        n_coeffs = next(iter(seq_store.sequences.values())).shape[1]
        language = nn.init_lstm(
            nn.LstmSpec(n_coeffs, config.lstm_hidden, config.lstm_tail,
                        config.projection_dim),
            lang_rng,
        )
    else:
        lang_dim = dataset.modality_dims.get("language")
        if lang_dim is None:
            raise ValueError("dataset has no language records")
        language = nn.init_mlp(
            nn.MlpSpec(lang_dim, config.hidden1, config.hidden2, config.projection_dim),
            lang_rng,
        )
    return Manifold(language=language, vision=vision, seed=config.seed,
                    config=config.to_dict())


def _project_members(manifold, members, dataset, seq_store):
    """Encode a flat list of (record_id, modality); returns projections and
    the per-group caches needed for the backward pass."""
    dim = manifold.projection_dim
    proj = np.zeros((len(members), dim))
    groups = []
    for modality in MODALITIES:
        enc = manifold.encoder_for(modality)
        positions = [i for i, (_, m) in enumerate(members) if m == modality]
        if not positions:
            continue
        feats = [
            _features(dataset.by_id[members[i][0]],
                      enc.arch if modality == "language" else "mlp", seq_store)
            for i in positions
        ]
        if enc.arch == "mlp":
            out, cache = nn.mlp_forward(enc, np.stack(feats))
            proj[positions] = out
            groups.append({"modality": modality, "positions": positions, "cache": cache})
        else:
            caches = []
            for pos, seq in zip(positions, feats):
                out, cache = nn.lstm_forward(enc, seq)
                proj[pos] = out
                caches.append(cache)
            groups.append({"modality": modality, "positions": positions, "cache": caches})
    return proj, groups


def _backward_members(manifold, groups, grad_proj, grad_accum):
    for group in groups:
        enc = manifold.encoder_for(group["modality"])
        positions = group["positions"]
        if enc.arch == "mlp":
            grads, _ = nn.mlp_backward(enc, group["cache"], grad_proj[positions])
            for k, g in grads.items():
                grad_accum[group["modality"]][k] += g
        else:
            for pos, cache in zip(positions, group["cache"]):
                grads, _ = nn.lstm_backward(enc, cache, grad_proj[pos])
                for k, g in grads.items():
                    grad_accum[group["modality"]][k] += g


def triplet_batch_loss(manifold: Manifold, triplets, dataset: Dataset,
                       margin: float, seq_store: SequenceStore | None = None,
                       with_grads: bool = True):
    """Mean triplet loss over a batch, with per-encoder weight gradients.

    Members route through the encoder matching their modality; gradients
    from all members accumulate per encoder in a fixed order.
    """
    n = len(triplets)
    members = []
    for t in triplets:
        members.append((t.anchor, t.anchor_modality))
        members.append((t.positive, t.positive_modality))
        members.append((t.negative, t.negative_modality))
    proj, groups = _project_members(manifold, members, dataset, seq_store)
    A, P, N = proj[0::3], proj[1::3], proj[2::3]
    dap, gA_p, gP = cosine_distance_batch(A, P)
    dan, gA_n, gN = cosine_distance_batch(A, N)
    losses = np.maximum(dap - dan + margin, 0.0)
    loss = float(losses.mean())
    if not with_grads:
        return loss, None

    active = (losses > 0.0).astype(np.float64)[:, None] / n
    grad_proj = np.zeros_like(proj)
    grad_proj[0::3] = (gA_p - gA_n) * active
    grad_proj[1::3] = gP * active
    grad_proj[2::3] = -gN * active
    grad_accum = {
        m: {k: np.zeros_like(v) for k, v in manifold.encoder_for(m).weights.items()}
        for m in MODALITIES
    }
    _backward_members(manifold, groups, grad_proj, grad_accum)
    return loss, grad_accum


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float


def train(dataset: Dataset, config: TrainConfig,
          seq_store: SequenceStore | None = None,
          train_ids=None, initial: Manifold | None = None
          ) -> tuple[Manifold, list[EpochStats]]:
    """Train a manifold on the dataset's training records.

    `train_ids` overrides the default (records with split == "train");
    `initial` warm-starts from existing encoders instead of a fresh init.
    Deterministic given (dataset, config, seed): rerunning reproduces the
    loss history exactly.
    """
    if train_ids is not None:
        records = [dataset.by_id[r] for r in sorted(train_ids)]
    else:
        records = dataset.select(split="train")
    if not records:
        raise ValueError("no training records")
    reset_zero_norm_counter()

    manifold = initial.copy() if initial is not None else init_manifold(dataset, config, seq_store)
    n_lang = sum(1 for r in records if r.modality == "language")
    per_epoch = config.triplets_per_epoch or max(n_lang, 1)

    adam = {
        m: nn.Adam(manifold.encoder_for(m).weights) for m in MODALITIES
    }
    history = []
    for epoch in range(config.epochs):
        lr = nn.lr_at_epoch(config.base_lr, epoch, config.lr_decay_epochs,
                            config.lr_decay_factor)
        triplets, _ = sample_triplets(
            records, per_epoch, derive_seed(config.seed, "epoch", epoch),
            anchor_class_uniform=config.anchor_class_uniform,
        )
        losses = []
        for start in range(0, len(triplets), config.batch_size):
            batch = triplets[start : start + config.batch_size]
            loss, grads = triplet_batch_loss(
                manifold, batch, dataset, config.margin, seq_store
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting at "
                    f"triplet {start}"
                )
            losses.extend([loss] * len(batch))
            for m in MODALITIES:
                adam[m].step(manifold.encoder_for(m).weights, grads[m], lr)
        history.append(EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), lr=lr))
    return manifold, history


def project(manifold: Manifold, record, seq_store: SequenceStore | None = None) -> np.ndarray:
    """Encode one record into the shared manifold. Pure function."""
    enc = manifold.encoder_for(record.modality)
    feats = _features(record, enc.arch, seq_store)
    out, _ = nn.encode(enc, feats)
    return out


def project_many(manifold: Manifold, records, dataset: Dataset,
                 seq_store: SequenceStore | None = None) -> dict[str, np.ndarray]:
    """Projections for many records keyed by record_id (batched per modality)."""
    members = [(r.record_id, r.modality) for r in records]
    proj, _ = _project_members(manifold, members, dataset, seq_store)
    return {rid: proj[i] for i, (rid, _) in enumerate(members)}


def save_manifold(path, manifold: Manifold) -> None:
    """Write both encoder payloads plus config echo and seed."""
    meta = {
        "kind": "manifold",
        "seed": manifold.seed,
        "config": manifold.config,
        "encoders": {
            m: {"arch": manifold.encoder_for(m).arch, "dims": manifold.encoder_for(m).dims}
            for m in MODALITIES
        },
    }
    tensors = {}
    for m in MODALITIES:
        for k, v in manifold.encoder_for(m).weights.items():
            tensors[f"{m}/{k}"] = v
    write_container(path, MANIFOLD_MAGIC, meta, tensors)


def load_manifold(path) -> Manifold:
    meta, tensors = read_container(path, MANIFOLD_MAGIC)
    if meta.get("kind") != "manifold":
        raise ValueError(f"{path}: not a manifold checkpoint")
    encoders = {}
    for m in MODALITIES:
        info = meta["encoders"][m]
        weights = {
            k.split("/", 1)[1]: v.astype(np.float64)
            for k, v in tensors.items()
            if k.startswith(f"{m}/")
        }
        encoders[m] = nn.EncoderParams(arch=info["arch"], dims=dict(info["dims"]),
                                       weights=weights)
    return Manifold(language=encoders["language"], vision=encoders["vision"],
                    seed=meta.get("seed", 0), config=meta.get("config", {}))


def write_loss_curve(path, history: list[EpochStats]) -> None:
    """Delimited loss-curve file: epoch, mean loss, learning rate."""
    lines = ["epoch\tmean_loss\tlr"]
    for st in history:
        lines.append(f"{st.epoch}\t{st.mean_loss!r}\t{st.lr!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
