"""parsequal: quality estimation and evaluation for human-parsing outputs.

The toolkit scores each detected human (and each predicted body-part
category) by fusing detector confidence, predicted mask IoU, and the mean
confidence of the high-confidence region of the probability map; it also
ships the multi-person parsing evaluation suite (pixel accuracy, mean
accuracy, mIoU, human-level and region-level AP, correctly-parsed-parts
rate) and a synthetic corpus harness for exercising both.
"""

from .dataset import (
    Manifest,
    ScoreRow,
    ScoresFile,
    TruthRecord,
    load_manifest,
    read_scores_file,
    read_tensor_file,
    save_manifest,
    write_scores_file,
    write_tensor_file,
)
from .errors import DataError, FormatError, GenerationError, ManifestError
from .fusion import (
    QualityScore,
    RawInstanceScores,
    default_weight_grid,
    fuse,
    score_instance,
    sweep_weights,
)
from .metrics import (
    COCO_THRESHOLDS,
    DEFAULT_THRESHOLDS,
    EvalImage,
    EvalReport,
    MatchThresholds,
    evaluate_corpus,
    instance_metrics,
    interpolated_ap,
    paste_instances,
    semantic_scores,
)
from .pipeline import evaluate_manifest, score_manifest, score_records, sweep_manifest
from .pixel_score import (
    CategoryPixelScores,
    PixelScoreConfig,
    category_pixel_scores,
    instance_pixel_score,
)
from .synth import (
    CorrelationReport,
    CorruptionConfig,
    ScoreNoiseConfig,
    SynthConfig,
    SyntheticCorpus,
    correlation_report,
    generate,
    write_corpus,
)
from .types import (
    GroundTruthInstance,
    HighConfidenceMask,
    ImageCanvas,
    InstanceRecord,
    LabelMap,
    ProbabilityMap,
    ProbabilityTensor,
    QualityWeights,
    derive_maps,
    gt_instances_from_canvas,
)

__version__ = "0.1.0"
