"""Binary map-origin classifier: a ResNet backbone with a two-way head.

Class index 1 is ai_generated (the positive class everywhere in this
package); index 0 is human_designed. Training is deterministic for a
fixed config: global torch seeding, deterministic algorithms, a seeded
loader generator, and single-process data loading.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn
from torch.utils.data import DataLoader, Dataset

from . import hashing
from .corpus import LABEL_AI, LABEL_HUMAN, LABELS, DatasetManifest, MapRecord
from .errors import (
    BackendUnavailableError,
    CheckpointError,
    EmptySplitError,
    NonFiniteLossError,
    SchemaVersionError,
    UnsupportedDepthError,
)
from .metrics import ConfusionMatrix

logger = logging.getLogger(__name__)

INPUT_SIZE = 224
CLASS_INDEX = {LABEL_HUMAN: 0, LABEL_AI: 1}
INDEX_CLASS = {v: k for k, v in CLASS_INDEX.items()}
SUPPORTED_DEPTHS = (18, 34, 50)

CHECKPOINT_SCHEMA = "map-detector/1"


@dataclass(frozen=True)
class Normalization:
    """Per-channel pixel statistics applied after scaling to [0, 1]."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    stats_id: str


IMAGENET = Normalization(
    mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225), stats_id="imagenet"
)


@dataclass(frozen=True)
class TrainingConfig:
    backbone_depth: int = 18
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 50
    early_stop_patience: int = 5
    seed: int = 0
    pretrained_init: bool = True
    augment: bool = False

    def validate(self) -> None:
        if self.backbone_depth not in SUPPORTED_DEPTHS:
            raise UnsupportedDepthError(
                f"backbone depth must be one of {SUPPORTED_DEPTHS}, got {self.backbone_depth}"
            )
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            raise ValueError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")


@dataclass(frozen=True)
class PreprocessedImage:
    pixels: np.ndarray  # float32, (224, 224, 3), already normalized
    normalization_id: str


@dataclass(frozen=True)
class Prediction:
    label: str
    probability: float  # probability assigned to `label`
    scores: tuple[float, float]  # (p_human_designed, p_ai_generated)


@dataclass(frozen=True)
class EpochStats:
    epoch: int  # 1-based
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass(frozen=True)
class TrainingLog:
    epochs: tuple[EpochStats, ...]
    best_epoch: int
    stopped_early: bool


@dataclass(frozen=True)
class Checkpoint:
    config: TrainingConfig
    normalization: Normalization
    model_state: dict
    log: TrainingLog
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def preprocess(image: Image.Image | bytes, normalization: Normalization = IMAGENET) -> PreprocessedImage:
    """Resize to 224x224 (bilinear), scale to [0, 1], normalize per channel."""
    if isinstance(image, (bytes, bytearray)):
        image = hashing.decode_image(bytes(image))
    rgb = image.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.Resampling.BILINEAR)
    pixels = np.asarray(rgb, dtype=np.float32) / 255.0
    mean = np.asarray(normalization.mean, dtype=np.float32)
    std = np.asarray(normalization.std, dtype=np.float32)
    return PreprocessedImage(
        pixels=(pixels - mean) / std, normalization_id=normalization.stats_id
    )


def to_tensor(pre: PreprocessedImage) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(pre.pixels.transpose(2, 0, 1)))


def compute_train_normalization(
    records: list[MapRecord], corpus_root: Path | str
) -> Normalization:
    """Per-channel mean/std over the given records at network resolution.

    Used when training from scratch so inputs are centered for this
    corpus rather than for an unrelated photo collection.
    """
    if not records:
        raise EmptySplitError("cannot compute normalization statistics from zero records")
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for r in records:
        img = Image.open(Path(corpus_root) / r.image_path).convert("RGB")
        arr = np.asarray(
            img.resize((INPUT_SIZE, INPUT_SIZE), Image.Resampling.BILINEAR), dtype=np.float64
        ) / 255.0
        total += arr.sum(axis=(0, 1))
        total_sq += (arr * arr).sum(axis=(0, 1))
        count += arr.shape[0] * arr.shape[1]
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    digest = hashlib.sha256("\n".join(r.content_hash for r in records).encode()).hexdigest()
    return Normalization(
        mean=tuple(float(x) for x in mean),
        std=tuple(float(x) for x in std),
        stats_id=f"trainstats-{digest[:8]}",
    )


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


def build_model(config: TrainingConfig, backbone_weights: Path | str | None = None) -> nn.Module:
    """Construct the ResNet backbone with a fresh two-class head.

    With pretrained_init, backbone weights are loaded from a local state
    dict file when given one, otherwise from the torchvision download
    cache or network. The classifier head is always freshly initialized.
    """
    import torchvision.models

    config.validate()
    factory = {
        18: torchvision.models.resnet18,
        34: torchvision.models.resnet34,
        50: torchvision.models.resnet50,
    }[config.backbone_depth]
    if not config.pretrained_init:
        return factory(weights=None, num_classes=len(CLASS_INDEX))
    model = factory(weights=None, num_classes=len(CLASS_INDEX))
    if backbone_weights is not None:
        state = torch.load(backbone_weights, map_location="cpu", weights_only=True)
    else:
        weights_enum = {
            18: torchvision.models.ResNet18_Weights.IMAGENET1K_V1,
            34: torchvision.models.ResNet34_Weights.IMAGENET1K_V1,
            50: torchvision.models.ResNet50_Weights.IMAGENET1K_V1,
        }[config.backbone_depth]
        try:
            state = weights_enum.get_state_dict(progress=False)
        except Exception as exc:
            raise BackendUnavailableError(
                f"pretrained backbone weights unavailable: {exc}"
            ) from exc
    state = {k: v for k, v in state.items() if not k.startswith("fc.")}
    missing, unexpected = model.load_state_dict(state, strict=False)
    unexpected = [k for k in unexpected if not k.startswith("fc.")]
    bad_missing = [k for k in missing if not k.startswith("fc.")]
    if bad_missing or unexpected:
        raise CheckpointError(
            f"backbone weights do not match resnet{config.backbone_depth}: "
            f"missing={bad_missing[:3]} unexpected={unexpected[:3]}"
        )
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class _RecordDataset(Dataset):
    def __init__(
        self,
        records: list[MapRecord],
        corpus_root: Path | str,
        normalization: Normalization,
        augment: bool = False,
    ):
        self.records = records
        self.corpus_root = Path(corpus_root)
        self.normalization = normalization
        self.augment = augment

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        record = self.records[idx]
        with Image.open(self.corpus_root / record.image_path) as img:
            pre = preprocess(img, self.normalization)
        x = to_tensor(pre)
        if self.augment and torch.rand(()) < 0.5:
            x = torch.flip(x, dims=(2,))
        return x, CLASS_INDEX[record.label]


def _epoch_loss(model, loader, criterion) -> tuple[float, float]:
    """Mean loss and accuracy over a loader, without gradient tracking."""
    model.eval()
    loss_sum, correct, n = 0.0, 0, 0
    with torch.no_grad():
        for x, y in loader:
            logits = model(x)
            loss_sum += criterion(logits, y).item() * y.shape[0]
            correct += int((logits.argmax(dim=1) == y).sum())
            n += y.shape[0]
    return loss_sum / n, correct / n


def train(
    manifest: DatasetManifest,
    corpus_root: Path | str,
    config: TrainingConfig = TrainingConfig(),
    backbone_weights: Path | str | None = None,
) -> Checkpoint:
    """Train on the manifest's train split, early-stopping on val loss.

    The checkpoint carries the weights from the best validation epoch,
    not the last one.
    """
    config.validate()
    train_records = manifest.subset("train")
    val_records = manifest.subset("val")
    if not train_records:
        raise EmptySplitError("train split is empty (assign splits before training)")
    if not val_records:
        raise EmptySplitError("val split is empty (assign splits before training)")

    torch.manual_seed(config.seed)
    torch.use_deterministic_algorithms(True)

    if config.pretrained_init:
        normalization = IMAGENET
    else:
        normalization = compute_train_normalization(train_records, corpus_root)

    model = build_model(config, backbone_weights=backbone_weights)
    criterion = nn.CrossEntropyLoss()
    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.learning_rate, momentum=config.momentum
    )

    generator = torch.Generator()
    generator.manual_seed(config.seed)
    train_loader = DataLoader(
        _RecordDataset(train_records, corpus_root, normalization, augment=config.augment),
        batch_size=config.batch_size,
        shuffle=True,
        generator=generator,
        num_workers=0,
    )
    val_loader = DataLoader(
        _RecordDataset(val_records, corpus_root, normalization),
        batch_size=config.batch_size,
        shuffle=False,
        num_workers=0,
    )

    best_state = None
    best_epoch = 0
    best_val = math.inf
    since_best = 0
    stats: list[EpochStats] = []
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        loss_sum, n = 0.0, 0
        for batch_idx, (x, y) in enumerate(train_loader):
            optimizer.zero_grad()
            loss = criterion(model(x), y)
            if not math.isfinite(loss.item()):
                raise NonFiniteLossError(
                    f"loss became {loss.item()} (try a lower learning rate)",
                    epoch=epoch,
                    batch=batch_idx,
                )
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * y.shape[0]
            n += y.shape[0]
        val_loss, val_acc = _epoch_loss(model, val_loader, criterion)
        stats.append(
            EpochStats(epoch=epoch, train_loss=loss_sum / n, val_loss=val_loss, val_accuracy=val_acc)
        )
        logger.info(
            "epoch %d: train_loss=%.4f val_loss=%.4f val_acc=%.4f",
            epoch, loss_sum / n, val_loss, val_acc,
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                stopped_early = True
                logger.info("early stop at epoch %d (best was %d)", epoch, best_epoch)
                break

    log = TrainingLog(epochs=tuple(stats), best_epoch=best_epoch, stopped_early=stopped_early)
    return Checkpoint(
        config=config, normalization=normalization, model_state=best_state, log=log
    )


# ---------------------------------------------------------------------------
# Checkpoint serialization (plain containers and tensors only)
# ---------------------------------------------------------------------------


def save_checkpoint(checkpoint: Checkpoint, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "config": dataclasses.asdict(checkpoint.config),
        "normalization": dataclasses.asdict(checkpoint.normalization),
        "class_index": dict(CLASS_INDEX),
        "model_state": checkpoint.model_state,
        "log": dataclasses.asdict(checkpoint.log),
        "created": checkpoint.created,
    }
    torch.save(payload, path)


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    if not isinstance(payload, dict) or "schema" not in payload:
        raise CheckpointError(f"{path}: not a detector checkpoint")
    if payload["schema"] != CHECKPOINT_SCHEMA:
        raise SchemaVersionError(
            f"{path}: expected schema {CHECKPOINT_SCHEMA!r}, got {payload['schema']!r}"
        )
    if payload.get("class_index") != dict(CLASS_INDEX):
        raise CheckpointError(f"{path}: class index mapping does not match this package")
    try:
        config = TrainingConfig(**payload["config"])
        norm = payload["normalization"]
        normalization = Normalization(
            mean=tuple(norm["mean"]), std=tuple(norm["std"]), stats_id=norm["stats_id"]
        )
        log_raw = payload["log"]
        log = TrainingLog(
            epochs=tuple(EpochStats(**e) for e in log_raw["epochs"]),
            best_epoch=log_raw["best_epoch"],
            stopped_early=log_raw["stopped_early"],
        )
        return Checkpoint(
            config=config,
            normalization=normalization,
            model_state=payload["model_state"],
            log=log,
            created=payload.get("created", ""),
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc


# ---------------------------------------------------------------------------
# Inference and evaluation
# ---------------------------------------------------------------------------


class Predictor:
    """Frozen model plus the normalization it was trained with."""

    def __init__(self, model: nn.Module, normalization: Normalization):
        self.model = model.eval()
        self.normalization = normalization

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "Predictor":
        config = dataclasses.replace(checkpoint.config, pretrained_init=False)
        model = build_model(config)
        model.load_state_dict(checkpoint.model_state)
        return cls(model, checkpoint.normalization)

    def predict_pre(self, pre: PreprocessedImage) -> Prediction:
        with torch.no_grad():
            probs = torch.softmax(self.model(to_tensor(pre).unsqueeze(0)), dim=1)[0]
        scores = (float(probs[0]), float(probs[1]))
        return prediction_from_scores(scores)

    def predict_image(self, image: Image.Image | bytes) -> Prediction:
        return self.predict_pre(preprocess(image, self.normalization))

    def predict_path(self, path: Path | str) -> Prediction:
        return self.predict_image(Path(path).read_bytes())


def prediction_from_scores(scores: tuple[float, float]) -> Prediction:
    """Decision rule: ai_generated wins at probability >= 0.5."""
    label = LABEL_AI if scores[CLASS_INDEX[LABEL_AI]] >= 0.5 else LABEL_HUMAN
    return Prediction(label=label, probability=scores[CLASS_INDEX[label]], scores=scores)


def tally_confusion(pairs) -> ConfusionMatrix:
    """Count (true_label, predicted_label) pairs; ai_generated is positive."""
    tp = fp = fn = tn = 0
    for truth, predicted in pairs:
        if truth not in LABELS or predicted not in LABELS:
            raise ValueError(f"unknown label in pair ({truth!r}, {predicted!r})")
        if truth == LABEL_AI:
            if predicted == LABEL_AI:
                tp += 1
            else:
                fn += 1
        else:
            if predicted == LABEL_AI:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def evaluate(
    predictor: Predictor,
    records: list[MapRecord],
    corpus_root: Path | str,
    batch_size: int = 32,
) -> ConfusionMatrix:
    """Confusion matrix of the predictor over labelled records."""
    if not records:
        raise EmptySplitError("no records to evaluate")
    loader = DataLoader(
        _RecordDataset(records, corpus_root, predictor.normalization),
        batch_size=batch_size,
        shuffle=False,
        num_workers=0,
    )
    pairs = []
    offset = 0
    with torch.no_grad():
        for x, _ in loader:
            probs = torch.softmax(predictor.model(x), dim=1)
            for row in probs:
                pred = prediction_from_scores((float(row[0]), float(row[1])))
                pairs.append((records[offset].label, pred.label))
                offset += 1
    return tally_confusion(pairs)
