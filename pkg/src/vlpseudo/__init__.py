"""Annotation-free multi-label image classification toolkit.

Soft pseudo labels come from aggregating global (whole-image) and local
(snippet) image-text similarity out of a pluggable vision-language encoder;
a classifier is then trained by alternating network updates with
Gaussian-modulated latent pseudo-label refinement, and evaluated with
per-class AP / mAP.
"""

from .aggregation import (
    AggregationConfig,
    aggregate_avg,
    aggregate_max,
    aggregate_minmax,
    final_pseudo_labels,
    pseudo_label_scores,
)
from .alignment import (
    SimilarityVector,
    class_softmax,
    cosine,
    global_similarity,
    local_similarities,
)
from .datasets import DatasetManifest, make_planted_dataset, parse_coco, parse_voc
from .encoders import (
    EmbeddingRecord,
    PlantedEncoder,
    TextEmbeddingMatrix,
    compute_record,
    encode_class_prompts,
    read_cache,
    write_cache,
)
from .labelstore import PseudoLabelSet, init_from_scores, restore, snapshot
from .metrics import (
    EvaluationReport,
    GroundTruthSet,
    ablation_report,
    average_precision,
    mean_ap,
    pseudo_label_quality,
    score_histogram,
)
from .snippets import SnippetGrid, split
from .training import (
    EmbeddingClassifier,
    TrainConfig,
    alternate,
    gaussian_modulation,
    grad_wrt_pseudo,
    kl_loss,
    predict,
    refine_pseudo_labels,
    train_epoch,
)

__version__ = "0.1.0"
