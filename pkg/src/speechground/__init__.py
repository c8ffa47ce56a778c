"""speechground: cross-modal manifold alignment between language/speech and
vision embeddings, with retrieval, threshold-classification, and
speaker-trait evaluation."""

__version__ = "0.1.0"

from .align import (  # noqa: F401
    Manifold, TrainConfig, Triplet, cosine_distance, load_manifold,
    sample_triplets, save_manifold, train, triplet_loss, project,
)
from .dataset import (  # noqa: F401
    Dataset, DatasetSplit, EmbeddingRecord, SpeakerTraits, filter_users_for_study,
    load_dataset, load_sequences, load_traits, make_split, write_dataset,
)
from .evaluation import (  # noqa: F401
    EvalReport, evaluate, mrr, normalized_distance, roc_curve, subset_mrr_eval,
    threshold_eval, triplet_mrr_eval, tune_threshold,
)
from .mfcc import AudioClip, MfccConfig, MfccSequence, extract_mfcc, mean_pool, read_wav  # noqa: F401
from .analysis import (  # noqa: F401
    GroupSplit, UserStudyResult, group_study, pearson, per_user_study,
    trait_correlations,
)
