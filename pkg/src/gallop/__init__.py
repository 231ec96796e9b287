"""Global/local prompt ensembles over precomputed vision features.

Learns sets of global and local prompts against frozen image features using
sparse top-k local similarity, an identity-initialized linear alignment of
the local features, per-image prompt dropout and a multiscale loss; infers by
ensembling all prompts and scores out-of-distribution inputs with the GL-MCM
rule.
"""

from .encoder import PromptSet, ToyTextEncoder, encode, init_prompts, make_toy_encoder
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    GallopError,
    TruncatedFileError,
)
from .features import (
    FeatureDataset,
    FeatureRecord,
    SynthSpec,
    generate_synthetic,
    read_dataset,
    write_dataset,
)
from .head import (
    AlignmentMap,
    ScaleSchedule,
    Temperature,
    align_locals,
    class_probabilities,
    local_class_probability,
    topk_mask,
    topk_similarity,
)
from .model import GallopModel, load_checkpoint, new_model, save_checkpoint
from .scoring import (
    OodMetrics,
    ScoreReport,
    auroc,
    classify,
    ensemble_similarity,
    evaluate_top1,
    fpr_at_95_tpr,
    glmcm_score,
    ood_metrics,
    score_dataset,
    write_score_csv,
)
from .train import (
    Batch,
    DropoutPolicy,
    TrainConfig,
    backward,
    cosine_lr,
    cross_entropy,
    diversity_loss,
    global_loss,
    gradcheck,
    multiscale_loss,
    sample_dropout,
    sgd_step,
    total_loss,
    train,
)

__version__ = "0.1.0"
