"""Tools for building a labelled corpus of AI-generated and
human-designed maps and training a classifier to tell them apart.

Pipeline: sample prompts from a fixed grammar, synthesize one image per
prompt, collect human-made maps per region query, catalogue everything
into a manifest with content and perceptual hashes, split it, train a
ResNet classifier, and report exact-rational metrics.
"""

from .errors import MapForensicsError
from .grammar import (
    LEVELS,
    MAP_TYPES,
    PromptSpec,
    Region,
    Vocabulary,
    enumerate_regions,
    load_vocabulary,
    parse_prompt,
    render_prompt,
    sample_prompt,
    validate_vocabulary,
)
from .hashing import content_hash, hamming_distance, perceptual_hash
from .corpus import (
    LABEL_AI,
    LABEL_HUMAN,
    DatasetManifest,
    GenerationPlan,
    MapRecord,
    assign_splits,
    build_generation_plan,
    dedupe,
    ingest,
    load_manifest,
    save_manifest,
)
from .metrics import ConfusionMatrix, MetricsReport, compute_metrics
from .detector import (
    Checkpoint,
    Prediction,
    Predictor,
    TrainingConfig,
    evaluate,
    load_checkpoint,
    preprocess,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "MapForensicsError",
    "LEVELS",
    "MAP_TYPES",
    "PromptSpec",
    "Region",
    "Vocabulary",
    "enumerate_regions",
    "load_vocabulary",
    "parse_prompt",
    "render_prompt",
    "sample_prompt",
    "validate_vocabulary",
    "content_hash",
    "hamming_distance",
    "perceptual_hash",
    "LABEL_AI",
    "LABEL_HUMAN",
    "DatasetManifest",
    "GenerationPlan",
    "MapRecord",
    "assign_splits",
    "build_generation_plan",
    "dedupe",
    "ingest",
    "load_manifest",
    "save_manifest",
    "ConfusionMatrix",
    "MetricsReport",
    "compute_metrics",
    "Checkpoint",
    "Prediction",
    "Predictor",
    "TrainingConfig",
    "evaluate",
    "load_checkpoint",
    "preprocess",
    "save_checkpoint",
    "train",
    "__version__",
]
