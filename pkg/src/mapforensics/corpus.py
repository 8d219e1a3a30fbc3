"""Dataset cataloguing: generation plans, ingest, dedupe, split
assignment, and the line-oriented manifest format.

The manifest is JSONL: one header object, then one record object per
line. Records are identified by the SHA-256 of the image bytes, so
ingest is idempotent and a manifest can be rebuilt from disk at any
time. Split assignment is stratified by (label, level) and fully
reproducible from (seed, fractions).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from . import hashing
from .acquisition import AcquiredImage
from .errors import (
    FractionsNotNormalizedError,
    InvalidQuotaError,
    LabelPromptMismatchError,
    ManifestFormatError,
    SchemaVersionError,
    SplitsAlreadyAssignedError,
    UnknownLevelError,
)
from .grammar import (
    LEVELS,
    Vocabulary,
    derive_subseed,
    enumerate_regions,
    load_vocabulary,
    render_prompt,
    sample_prompt,
)

logger = logging.getLogger(__name__)

LABEL_AI = "ai_generated"
LABEL_HUMAN = "human_designed"
LABELS = (LABEL_AI, LABEL_HUMAN)
SPLITS = ("train", "val", "test")

MANIFEST_SCHEMA = "map-corpus/1"
PLAN_SCHEMA = "map-plan/1"
STAGING_SCHEMA = "map-staging/1"

# prompts per region when generating, images per query when searching
DEFAULT_GENERATION_QUOTAS = {"state": 30, "country": 30, "continent": 25}
DEFAULT_SEARCH_COUNTS = {"state": 50, "country": 50, "continent": 100}

DEFAULT_SPLIT_FRACTIONS = (0.7, 0.15, 0.15)


def _utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Generation plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanEntry:
    prompt: str
    level: str
    region: str
    index: int  # 0-based repeat index within (level, region)
    seed: int  # sub-seed the prompt was sampled with


@dataclass
class GenerationPlan:
    entries: list[PlanEntry]
    quotas: dict[str, int]
    seed: int
    vocabulary_version: str

    @property
    def total(self) -> int:
        return len(self.entries)


def build_generation_plan(
    quotas: dict[str, int] | None = None,
    seed: int = 0,
    vocab: Vocabulary | None = None,
) -> GenerationPlan:
    """Enumerate every prompt to synthesize, with a pinned sub-seed each.

    Walks levels in canonical order and regions alphabetically, sampling
    `quotas[level]` prompts per region with the region held fixed, so the
    plan is a pure function of (quotas, seed, vocabulary).
    """
    if vocab is None:
        vocab = load_vocabulary()
    if quotas is None:
        quotas = dict(DEFAULT_GENERATION_QUOTAS)
    for level, quota in quotas.items():
        if level not in LEVELS:
            raise InvalidQuotaError(f"unknown level in quotas: {level!r}")
        if not isinstance(quota, int) or isinstance(quota, bool) or quota < 0:
            raise InvalidQuotaError(f"quota for {level!r} must be a non-negative int, got {quota!r}")
    entries = []
    for level in LEVELS:
        quota = quotas.get(level, 0)
        for region in enumerate_regions(level, vocab):
            for i in range(quota):
                subseed = derive_subseed(seed, level, region.name, i)
                spec = sample_prompt(subseed, level, vocab, region=region)
                entries.append(
                    PlanEntry(
                        prompt=render_prompt(spec, vocab),
                        level=level,
                        region=region.name,
                        index=i,
                        seed=subseed,
                    )
                )
    return GenerationPlan(
        entries=entries, quotas=dict(quotas), seed=seed, vocabulary_version=vocab.version
    )


def build_search_targets(
    counts: dict[str, int] | None = None, vocab: Vocabulary | None = None
) -> dict[str, int]:
    """Human-map collection targets per level: per-query count x regions."""
    if vocab is None:
        vocab = load_vocabulary()
    if counts is None:
        counts = dict(DEFAULT_SEARCH_COUNTS)
    for level in counts:
        if level not in LEVELS:
            raise InvalidQuotaError(f"unknown level in counts: {level!r}")
    return {level: counts.get(level, 0) * len(vocab.regions(level)) for level in LEVELS}


def save_plan(plan: GenerationPlan, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "schema": PLAN_SCHEMA,
            "quotas": plan.quotas,
            "seed": plan.seed,
            "vocabulary_version": plan.vocabulary_version,
            "total": plan.total,
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for e in plan.entries:
            row = {
                "prompt": e.prompt,
                "level": e.level,
                "region": e.region,
                "index": e.index,
                "seed": e.seed,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_plan(path: Path | str) -> GenerationPlan:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestFormatError(f"{path}: empty plan file")
    header = _parse_json_line(path, 1, lines[0])
    if header.get("schema") != PLAN_SCHEMA:
        raise SchemaVersionError(
            f"{path}: expected schema {PLAN_SCHEMA!r}, got {header.get('schema')!r}"
        )
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        row = _parse_json_line(path, lineno, line)
        try:
            entries.append(
                PlanEntry(
                    prompt=row["prompt"],
                    level=row["level"],
                    region=row["region"],
                    index=row["index"],
                    seed=row["seed"],
                )
            )
        except KeyError as exc:
            raise ManifestFormatError(f"{path}:{lineno}: missing field {exc}") from exc
    return GenerationPlan(
        entries=entries,
        quotas=dict(header.get("quotas", {})),
        seed=header.get("seed", 0),
        vocabulary_version=header.get("vocabulary_version", ""),
    )


# ---------------------------------------------------------------------------
# Records and manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapRecord:
    record_id: str  # first 16 hex chars of content_hash
    image_path: str  # relative to the corpus root
    content_hash: str  # sha256 of the image bytes
    phash: int  # 64-bit perceptual hash
    label: str  # ai_generated | human_designed
    level: str
    region: str
    prompt: str | None  # None for searched images
    origin: str  # generated | searched | fixture
    source_detail: str  # model id, source URL, or fixture path
    split: str | None = None


@dataclass
class DatasetManifest:
    vocabulary_version: str
    records: list[MapRecord] = field(default_factory=list)
    split_fractions: tuple[float, float, float] | None = None
    split_seed: int | None = None
    created: str = field(default_factory=_utcnow_iso)
    _by_content: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for r in self.records:
            self._by_content[r.content_hash] = r

    def __len__(self):
        return len(self.records)

    def has_content(self, content_hash: str) -> bool:
        return content_hash in self._by_content

    def find_content(self, content_hash: str) -> MapRecord | None:
        return self._by_content.get(content_hash)

    def add(self, record: MapRecord) -> None:
        if record.content_hash in self._by_content:
            raise ManifestFormatError(f"duplicate content hash {record.content_hash[:16]}")
        self.records.append(record)
        self._by_content[record.content_hash] = record

    def replace_records(self, records: list[MapRecord]) -> None:
        self.records = list(records)
        self._by_content = {r.content_hash: r for r in self.records}

    def counts(self, key: str) -> Counter:
        """Tally records by a field name (label, level, split, origin)."""
        return Counter(getattr(r, key) for r in self.records)

    def subset(self, split: str) -> list[MapRecord]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]


def ingest(
    manifest: DatasetManifest,
    image: AcquiredImage,
    label: str,
    level: str,
    region: str,
    prompt: str | None,
    corpus_root: Path | str,
) -> MapRecord:
    """Store image bytes under the corpus root and append a record.

    Re-ingesting bytes already present returns the existing record and
    writes nothing, so the operation is idempotent.
    """
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    if level not in LEVELS:
        raise UnknownLevelError(f"unknown level {level!r}")
    if label == LABEL_AI and not prompt:
        raise LabelPromptMismatchError("ai_generated records require the prompt that produced them")
    if label == LABEL_HUMAN and prompt is not None:
        raise LabelPromptMismatchError("human_designed records must not carry a prompt")

    chash = hashing.content_hash(image.data)
    existing = manifest.find_content(chash)
    if existing is not None:
        return existing

    decoded = hashing.decode_image(image.data)  # raises UndecodableImageError
    ext = (decoded.format or "png").lower()
    if ext == "jpeg":
        ext = "jpg"
    rel_path = Path("images") / chash[:2] / f"{chash}.{ext}"
    abs_path = Path(corpus_root) / rel_path
    abs_path.parent.mkdir(parents=True, exist_ok=True)
    if not abs_path.exists():
        abs_path.write_bytes(image.data)

    record = MapRecord(
        record_id=chash[:16],
        image_path=str(rel_path),
        content_hash=chash,
        phash=hashing.perceptual_hash(decoded),
        label=label,
        level=level,
        region=region,
        prompt=prompt,
        origin=image.origin,
        source_detail=image.source_detail,
    )
    manifest.add(record)
    return record


def perceptual_distance(a: MapRecord, b: MapRecord) -> int:
    return hashing.hamming_distance(a.phash, b.phash)


def dedupe(
    records: list[MapRecord], threshold: int = 0
) -> tuple[list[MapRecord], list[MapRecord]]:
    """Drop records whose perceptual hash is within `threshold` bits of an
    earlier record. First occurrence wins; input order is preserved.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    kept: list[MapRecord] = []
    dropped: list[MapRecord] = []
    if threshold == 0:
        seen: set[int] = set()
        for r in records:
            if r.phash in seen:
                dropped.append(r)
            else:
                seen.add(r.phash)
                kept.append(r)
        return kept, dropped
    for r in records:
        if any(hashing.hamming_distance(r.phash, k.phash) <= threshold for k in kept):
            dropped.append(r)
        else:
            kept.append(r)
    return kept, dropped


# ---------------------------------------------------------------------------
# Split assignment
# ---------------------------------------------------------------------------


def _round_half_up(x: Fraction) -> int:
    return int(x + Fraction(1, 2)) if x >= 0 else -int(-x + Fraction(1, 2))


def assign_splits(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float] = DEFAULT_SPLIT_FRACTIONS,
    seed: int = 0,
    force: bool = False,
) -> DatasetManifest:
    """Assign train/val/test in place, stratified by (label, level).

    Within each stratum, records are ordered by record_id, shuffled with
    a stratum-specific generator, and cut so that
    n_test = round_half_up(n * f_test) and
    n_val = round_half_up(n * (f_val + f_test)) - n_test. Counting the
    two tail fractions jointly keeps every stratum within one record of
    its exact share.
    """
    fracs = [Fraction(str(f)) for f in fractions]
    if len(fracs) != 3 or sum(fracs) != 1:
        raise FractionsNotNormalizedError(
            f"split fractions must be three values summing to 1, got {fractions!r}"
        )
    if any(f < 0 for f in fracs):
        raise FractionsNotNormalizedError(f"split fractions must be non-negative: {fractions!r}")
    if not force and any(r.split is not None for r in manifest.records):
        raise SplitsAlreadyAssignedError(
            "manifest already carries split assignments (pass force to reassign)"
        )

    f_train, f_val, f_test = fracs
    strata: dict[tuple[str, str], list[MapRecord]] = {}
    for r in manifest.records:
        strata.setdefault((r.label, r.level), []).append(r)

    assigned: dict[str, str] = {}
    for (label, level), members in strata.items():
        members = sorted(members, key=lambda r: r.record_id)
        rng = random.Random(f"{seed}:{label}:{level}")
        rng.shuffle(members)
        n = len(members)
        n_test = _round_half_up(n * f_test)
        n_val = _round_half_up(n * (f_val + f_test)) - n_test
        n_train = n - n_val - n_test
        for r in members[:n_train]:
            assigned[r.content_hash] = "train"
        for r in members[n_train : n_train + n_val]:
            assigned[r.content_hash] = "val"
        for r in members[n_train + n_val :]:
            assigned[r.content_hash] = "test"

    manifest.replace_records(
        [dataclasses.replace(r, split=assigned[r.content_hash]) for r in manifest.records]
    )
    manifest.split_fractions = tuple(float(f) for f in fractions)
    manifest.split_seed = seed
    return manifest


# ---------------------------------------------------------------------------
# Manifest serialization
# ---------------------------------------------------------------------------

_RECORD_FIELDS = (
    "record_id",
    "image_path",
    "content_hash",
    "phash",
    "label",
    "level",
    "region",
    "prompt",
    "origin",
    "source_detail",
    "split",
)


def _parse_json_line(path: Path, lineno: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ManifestFormatError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ManifestFormatError(f"{path}:{lineno}: expected a JSON object")
    return obj


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema": MANIFEST_SCHEMA,
        "vocabulary_version": manifest.vocabulary_version,
        "split_fractions": list(manifest.split_fractions) if manifest.split_fractions else None,
        "split_seed": manifest.split_seed,
        "created": manifest.created,
        "records": len(manifest.records),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for r in manifest.records:
            row = {name: getattr(r, name) for name in _RECORD_FIELDS}
            row["phash"] = f"{r.phash:016x}"
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_manifest(path: Path | str) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestFormatError(f"{path}: empty manifest")
    header = _parse_json_line(path, 1, lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise SchemaVersionError(
            f"{path}: expected schema {MANIFEST_SCHEMA!r}, got {header.get('schema')!r}"
        )
    fractions = header.get("split_fractions")
    manifest = DatasetManifest(
        vocabulary_version=header.get("vocabulary_version", ""),
        split_fractions=tuple(fractions) if fractions else None,
        split_seed=header.get("split_seed"),
        created=header.get("created", _utcnow_iso()),
    )
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        row = _parse_json_line(path, lineno, line)
        missing = [name for name in _RECORD_FIELDS if name not in row]
        if missing:
            raise ManifestFormatError(f"{path}:{lineno}: missing fields {missing}")
        try:
            phash = int(row["phash"], 16)
        except (TypeError, ValueError) as exc:
            raise ManifestFormatError(f"{path}:{lineno}: bad phash {row['phash']!r}") from exc
        record = MapRecord(
            record_id=row["record_id"],
            image_path=row["image_path"],
            content_hash=row["content_hash"],
            phash=phash,
            label=row["label"],
            level=row["level"],
            region=row["region"],
            prompt=row["prompt"],
            origin=row["origin"],
            source_detail=row["source_detail"],
            split=row["split"],
        )
        if record.label not in LABELS:
            raise ManifestFormatError(f"{path}:{lineno}: unknown label {record.label!r}")
        if record.split is not None and record.split not in SPLITS:
            raise ManifestFormatError(f"{path}:{lineno}: unknown split {record.split!r}")
        manifest.add(record)
    return manifest


# ---------------------------------------------------------------------------
# Staging: acquisition output awaiting ingest
# ---------------------------------------------------------------------------


def stage_acquired(
    staging_dir: Path | str,
    image: AcquiredImage,
    label: str,
    level: str,
    region: str,
    prompt: str | None,
) -> Path:
    """Drop an acquired image plus a JSON sidecar into a staging directory.

    Staging decouples (slow, flaky) acquisition from cataloguing: the
    build step can ingest a staging directory at any later time.
    """
    staging_dir = Path(staging_dir)
    staging_dir.mkdir(parents=True, exist_ok=True)
    chash = hashing.content_hash(image.data)
    image_path = staging_dir / f"{chash}.png"
    if not image_path.exists():
        image_path.write_bytes(image.data)
    sidecar = {
        "schema": STAGING_SCHEMA,
        "label": label,
        "level": level,
        "region": region,
        "prompt": prompt,
        "origin": image.origin,
        "source_detail": image.source_detail,
        "rank": image.rank,
    }
    sidecar_path = staging_dir / f"{chash}.json"
    sidecar_path.write_text(json.dumps(sidecar, ensure_ascii=False) + "\n", encoding="utf-8")
    return sidecar_path


def ingest_staged(
    manifest: DatasetManifest, staging_dir: Path | str, corpus_root: Path | str
) -> list[MapRecord]:
    """Ingest every staged (image, sidecar) pair, in sidecar filename order."""
    staging_dir = Path(staging_dir)
    ingested = []
    for sidecar_path in sorted(staging_dir.glob("*.json")):
        meta = _parse_json_line(sidecar_path, 1, sidecar_path.read_text(encoding="utf-8"))
        if meta.get("schema") != STAGING_SCHEMA:
            raise SchemaVersionError(
                f"{sidecar_path}: expected schema {STAGING_SCHEMA!r}, got {meta.get('schema')!r}"
            )
        image_path = sidecar_path.with_suffix(".png")
        if not image_path.exists():
            raise ManifestFormatError(f"{sidecar_path}: missing image {image_path.name}")
        image = AcquiredImage(
            data=image_path.read_bytes(),
            origin=meta["origin"],
            source_detail=meta["source_detail"],
            rank=meta.get("rank"),
        )
        ingested.append(
            ingest(
                manifest,
                image,
                label=meta["label"],
                level=meta["level"],
                region=meta["region"],
                prompt=meta["prompt"],
                corpus_root=corpus_root,
            )
        )
    return ingested
