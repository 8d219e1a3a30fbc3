"""Command-line pipeline: plan, generate, scrape, build, train, eval, detect.

Option values resolve as CLI > config file > built-in defaults. The
config file is flat `key = value` lines; keys are long option names of
the invoked subcommand (dashes or underscores). Errors print one
tab-separated line to stderr and map to stable exit codes:

    0 success, 2 usage, 3 validation, 4 data file, 5 backend,
    6 training, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import (
    BackendUnavailableError,
    CheckpointError,
    ContentRejectedError,
    EmptyMatrixError,
    EmptySplitError,
    FractionsNotNormalizedError,
    InvalidQuotaError,
    LabelPromptMismatchError,
    ManifestFormatError,
    MapForensicsError,
    NonFiniteLossError,
    PromptParseError,
    RateLimitedError,
    SchemaVersionError,
    SplitsAlreadyAssignedError,
    UndecodableImageError,
    UnknownLevelError,
    UnsupportedDepthError,
    VocabularyError,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DATA = 4
EXIT_BACKEND = 5
EXIT_TRAINING = 6

_VALIDATION_ERRORS = (
    VocabularyError,
    PromptParseError,
    UnknownLevelError,
    InvalidQuotaError,
    LabelPromptMismatchError,
    FractionsNotNormalizedError,
    SplitsAlreadyAssignedError,
    EmptyMatrixError,
    EmptySplitError,
    UnsupportedDepthError,
    ValueError,
)
_DATA_ERRORS = (
    ManifestFormatError,
    SchemaVersionError,
    UndecodableImageError,
    CheckpointError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)
_BACKEND_ERRORS = (BackendUnavailableError, RateLimitedError, ContentRejectedError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, NonFiniteLossError):
        return EXIT_TRAINING
    if isinstance(exc, _BACKEND_ERRORS):
        return EXIT_BACKEND
    if isinstance(exc, _VALIDATION_ERRORS):
        return EXIT_VALIDATION
    if isinstance(exc, _DATA_ERRORS):
        return EXIT_DATA
    return EXIT_ERROR


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Opt:
    flag: str
    key: str  # normalized config key
    is_switch: bool


# filled in while building the parser: subcommand -> its long options
_SUB_OPTIONS: dict[str, list[_Opt]] = {}
_GLOBAL_SWITCHES = ("offline", "verbose")
_TRUTHY = ("1", "true", "yes", "on")
_FALSY = ("0", "false", "no", "off")


def parse_config_file(path: Path | str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip().lower().replace("-", "_")
        if not key:
            raise ValueError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def _as_switch(path_key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in _TRUTHY:
        return True
    if lowered in _FALSY:
        return False
    raise ValueError(f"config value for {path_key!r} must be boolean-like, got {value!r}")


def _inject_config_tokens(subcommand: str, config: dict[str, str], rest: list[str]) -> list[str]:
    """Prepend config-derived tokens so explicit CLI tokens win (last wins)."""
    injected: list[str] = []
    known = {opt.key for opt in _SUB_OPTIONS.get(subcommand, [])}
    for opt in _SUB_OPTIONS.get(subcommand, []):
        if opt.key not in config:
            continue
        if opt.is_switch:
            if _as_switch(opt.key, config[opt.key]):
                injected.append(opt.flag)
        else:
            injected.extend([opt.flag, config[opt.key]])
    for key in config:
        if key not in known and key not in _GLOBAL_SWITCHES:
            logger.warning("config key %r does not apply to %r; ignored", key, subcommand)
    return injected + rest


def _extract_config_path(argv: list[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                raise ValueError("--config requires a file path")
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


# ---------------------------------------------------------------------------
# Small value parsers
# ---------------------------------------------------------------------------


def _parse_level_counts(text: str, what: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"{what} must look like level=count[,...], got {part!r}")
        try:
            counts[key.strip()] = int(value)
        except ValueError as exc:
            raise ValueError(f"{what}: bad count in {part!r}") from exc
    if not counts:
        raise ValueError(f"{what} is empty")
    return counts


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"fractions must be train,val,test; got {text!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise ValueError(f"fractions must be numeric: {text!r}") from exc


def _parse_cm(text: str):
    from .metrics import ConfusionMatrix

    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError(f"--cm must be tp,fp,fn,tn; got {text!r}")
    try:
        tp, fp, fn, tn = (int(p) for p in parts)
    except ValueError as exc:
        raise ValueError(f"--cm values must be integers: {text!r}") from exc
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


# ---------------------------------------------------------------------------
# Parser construction
# ---------------------------------------------------------------------------


def _register(sub: str, parser: argparse.ArgumentParser, *args, **kwargs):
    action = parser.add_argument(*args, **kwargs)
    flag = args[0]
    if flag.startswith("--"):
        _SUB_OPTIONS.setdefault(sub, []).append(
            _Opt(
                flag=flag,
                key=flag[2:].lower().replace("-", "_"),
                is_switch=kwargs.get("action") == "store_true",
            )
        )
    return action


def build_parser() -> argparse.ArgumentParser:
    _SUB_OPTIONS.clear()
    parser = argparse.ArgumentParser(
        prog="mapforensics",
        description="Build a labelled corpus of AI-generated and human-designed maps "
        "and train a classifier to tell them apart.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", metavar="FILE", help="flat key = value option file")
    parser.add_argument(
        "--offline", action="store_true", help="use fixture backends and skip pretrained downloads"
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("plan", help="enumerate generation prompts with pinned sub-seeds")
    _register("plan", p, "--out", required=True, help="plan file to write (JSONL)")
    _register("plan", p, "--seed", type=int, default=0, help="plan seed")
    _register("plan", p, "--quotas", help="prompts per region, e.g. state=30,country=30,continent=25")
    _register("plan", p, "--vocabulary", help="vocabulary file (default: bundled)")
    p.set_defaults(handler=_cmd_plan)

    p = subs.add_parser("generate", help="synthesize images for a plan into a staging directory")
    _register("generate", p, "--plan", required=True, help="plan file from `plan`")
    _register("generate", p, "--staging", required=True, help="staging directory to fill")
    _register("generate", p, "--endpoint", help="generation API endpoint (online mode)")
    _register("generate", p, "--model-id", default="dall-e-2", help="model identifier to request")
    _register("generate", p, "--fixtures", help="fixture root for recorded images (offline mode)")
    _register("generate", p, "--limit", type=int, help="stop after this many plan entries")
    p.set_defaults(handler=_cmd_generate)

    p = subs.add_parser("scrape", help="collect human-designed maps per region into staging")
    _register("scrape", p, "--staging", required=True, help="staging directory to fill")
    _register("scrape", p, "--endpoint", help="image search API endpoint (online mode)")
    _register("scrape", p, "--fixtures", help="fixture root holding recorded search results")
    _register(
        "scrape", p, "--counts",
        help="images per region query, e.g. state=50,country=50,continent=100",
    )
    _register("scrape", p, "--max-regions", type=int, help="regions per level cap (small runs)")
    _register("scrape", p, "--vocabulary", help="vocabulary file (default: bundled)")
    p.set_defaults(handler=_cmd_scrape)

    p = subs.add_parser("build", help="ingest staged images, dedupe, assign splits, write manifest")
    _register("build", p, "--corpus", required=True, help="corpus root directory")
    _register(
        "build", p, "--staging", action="append", required=True,
        help="staging directory to ingest (repeatable)",
    )
    _register("build", p, "--dedupe-threshold", type=int, default=0,
              help="drop records within this perceptual-hash distance of an earlier one")
    _register("build", p, "--split-seed", type=int, default=0, help="split assignment seed")
    _register("build", p, "--fractions", default="0.7,0.15,0.15", help="train,val,test fractions")
    _register("build", p, "--vocabulary", help="vocabulary file (default: bundled)")
    p.set_defaults(handler=_cmd_build)

    p = subs.add_parser("train", help="train the classifier on a built corpus")
    _register("train", p, "--corpus", required=True, help="corpus root with a manifest")
    _register("train", p, "--out", required=True, help="checkpoint file to write")
    _register("train", p, "--depth", type=int, default=18, help="backbone depth: 18, 34, or 50")
    _register("train", p, "--lr", type=float, default=0.01, help="SGD learning rate")
    _register("train", p, "--momentum", type=float, default=0.9, help="SGD momentum")
    _register("train", p, "--batch-size", type=int, default=32)
    _register("train", p, "--max-epochs", type=int, default=50)
    _register("train", p, "--patience", type=int, default=5, help="early-stop patience (epochs)")
    _register("train", p, "--seed", type=int, default=0)
    _register("train", p, "--from-scratch", action="store_true",
              help="skip pretrained backbone initialization")
    _register("train", p, "--augment", action="store_true", help="random horizontal flips")
    _register("train", p, "--backbone-weights", help="local backbone state-dict file")
    p.set_defaults(handler=_cmd_train)

    p = subs.add_parser("eval", help="report metrics for a checkpoint or a raw confusion matrix")
    _register("eval", p, "--corpus", help="corpus root with a manifest")
    _register("eval", p, "--checkpoint", help="checkpoint from `train`")
    _register("eval", p, "--split", default="test", choices=("train", "val", "test"))
    _register("eval", p, "--cm", help="skip inference; report on counts tp,fp,fn,tn")
    _register("eval", p, "--machine", action="store_true", help="key=value output, exact rationals")
    _register("eval", p, "--out", help="also write the report to this file")
    p.set_defaults(handler=_cmd_eval)

    p = subs.add_parser("detect", help="classify image files")
    _register("detect", p, "--checkpoint", required=True, help="checkpoint from `train`")
    p.add_argument("paths", nargs="+", metavar="IMAGE", help="image files to classify")
    p.set_defaults(handler=_cmd_detect)

    return parser


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------


def _load_vocab(path: str | None):
    from .grammar import load_vocabulary

    return load_vocabulary(path)


def _cmd_plan(args) -> int:
    from .corpus import build_generation_plan, save_plan

    vocab = _load_vocab(args.vocabulary)
    quotas = _parse_level_counts(args.quotas, "--quotas") if args.quotas else None
    plan = build_generation_plan(quotas=quotas, seed=args.seed, vocab=vocab)
    save_plan(plan, args.out)
    print(f"planned {plan.total} prompts (seed {plan.seed}) -> {args.out}")
    return EXIT_OK


def _cmd_generate(args) -> int:
    from .acquisition import FixtureGenerationClient, GenerationRequest, HttpGenerationClient
    from .corpus import LABEL_AI, load_plan, stage_acquired

    plan = load_plan(args.plan)
    if args.offline or not args.endpoint:
        if not args.offline and not args.endpoint:
            raise ValueError("generate needs --endpoint, or --offline for fixture mode")
        client = FixtureGenerationClient(args.fixtures)
    else:
        client = HttpGenerationClient(args.endpoint)
    entries = plan.entries[: args.limit] if args.limit else plan.entries
    for entry in entries:
        image = client.generate(GenerationRequest(prompt=entry.prompt, model_id=args.model_id))
        stage_acquired(args.staging, image, LABEL_AI, entry.level, entry.region, entry.prompt)
    print(f"staged {len(entries)} generated images -> {args.staging}")
    return EXIT_OK


def _cmd_scrape(args) -> int:
    from .acquisition import (
        FixtureSearchClient,
        HttpSearchClient,
        SearchRequest,
        build_search_query,
        materialize_search_fixtures,
    )
    from .corpus import DEFAULT_SEARCH_COUNTS, LABEL_HUMAN, stage_acquired
    from .grammar import LEVELS, enumerate_regions

    vocab = _load_vocab(args.vocabulary)
    counts = (
        _parse_level_counts(args.counts, "--counts") if args.counts else dict(DEFAULT_SEARCH_COUNTS)
    )
    for level in counts:
        if level not in LEVELS:
            raise UnknownLevelError(f"unknown level in --counts: {level!r}")
    if args.offline:
        if not args.fixtures:
            raise ValueError("offline scrape needs --fixtures to hold recorded results")
        client = FixtureSearchClient(args.fixtures)
    elif args.fixtures:
        client = FixtureSearchClient(args.fixtures)
    else:
        if not args.endpoint:
            raise ValueError("scrape needs --endpoint, --fixtures, or --offline")
        client = HttpSearchClient(args.endpoint)

    staged = 0
    empty_queries = []
    for level in LEVELS:
        count = counts.get(level, 0)
        if count <= 0:
            continue
        regions = enumerate_regions(level, vocab)
        if args.max_regions:
            regions = regions[: args.max_regions]
        for region in regions:
            query = build_search_query(region)
            if args.offline:
                materialize_search_fixtures(args.fixtures, query, count)
            results = client.search(SearchRequest(query=query, k=count))
            if results.warning:
                empty_queries.append(query)
            for image in results:
                stage_acquired(args.staging, image, LABEL_HUMAN, level, region.name, None)
                staged += 1
    print(f"staged {staged} searched images -> {args.staging}")
    if empty_queries:
        print(f"warning: {len(empty_queries)} queries returned nothing", file=sys.stderr)
    return EXIT_OK


def _cmd_build(args) -> int:
    from .corpus import (
        DatasetManifest,
        assign_splits,
        dedupe,
        ingest_staged,
        save_manifest,
    )

    vocab = _load_vocab(args.vocabulary)
    fractions = _parse_fractions(args.fractions)
    manifest = DatasetManifest(vocabulary_version=vocab.version)
    for staging in args.staging:
        ingest_staged(manifest, staging, args.corpus)
    kept, dropped = dedupe(manifest.records, threshold=args.dedupe_threshold)
    manifest.replace_records(kept)
    assign_splits(manifest, fractions=fractions, seed=args.split_seed)
    out = Path(args.corpus) / MANIFEST_NAME
    save_manifest(manifest, out)
    by_split = manifest.counts("split")
    by_label = manifest.counts("label")
    print(
        f"built corpus: {len(manifest)} records ({dropped and len(dropped) or 0} near-duplicates dropped)"
    )
    print(
        "labels: "
        + ", ".join(f"{label}={by_label.get(label, 0)}" for label in sorted(by_label))
    )
    print("splits: " + ", ".join(f"{s}={by_split.get(s, 0)}" for s in ("train", "val", "test")))
    print(f"manifest -> {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .corpus import load_manifest
    from .detector import TrainingConfig, save_checkpoint, train

    manifest = load_manifest(Path(args.corpus) / MANIFEST_NAME)
    pretrained = not args.from_scratch and not args.offline
    config = TrainingConfig(
        backbone_depth=args.depth,
        learning_rate=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        early_stop_patience=args.patience,
        seed=args.seed,
        pretrained_init=pretrained,
        augment=args.augment,
    )
    checkpoint = train(manifest, args.corpus, config, backbone_weights=args.backbone_weights)
    save_checkpoint(checkpoint, args.out)
    sidecar = Path(args.out).with_suffix(Path(args.out).suffix + ".config.json")
    sidecar.write_text(
        json.dumps(
            {
                "config": dataclasses.asdict(config),
                "normalization_id": checkpoint.normalization.stats_id,
                "best_epoch": checkpoint.log.best_epoch,
                "epochs_run": len(checkpoint.log.epochs),
                "stopped_early": checkpoint.log.stopped_early,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    best = checkpoint.log.epochs[checkpoint.log.best_epoch - 1]
    print(
        f"trained {len(checkpoint.log.epochs)} epochs; best epoch {best.epoch} "
        f"(val_loss {best.val_loss:.4f}, val_acc {best.val_accuracy:.4f}) -> {args.out}"
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .metrics import compute_metrics, render_machine, render_report

    if args.cm:
        matrix = _parse_cm(args.cm)
    else:
        if not args.corpus or not args.checkpoint:
            raise ValueError("eval needs either --cm, or both --corpus and --checkpoint")
        from .corpus import load_manifest
        from .detector import Predictor, evaluate, load_checkpoint

        manifest = load_manifest(Path(args.corpus) / MANIFEST_NAME)
        records = manifest.subset(args.split)
        predictor = Predictor.from_checkpoint(load_checkpoint(args.checkpoint))
        matrix = evaluate(predictor, records, args.corpus)
    report = compute_metrics(matrix)
    text = render_machine(report) if args.machine else render_report(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def _cmd_detect(args) -> int:
    from .detector import Predictor, load_checkpoint

    predictor = Predictor.from_checkpoint(load_checkpoint(args.checkpoint))
    for path in args.paths:
        prediction = predictor.predict_path(path)
        print(f"{path}\t{prediction.label}\t{prediction.probability:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config_path = _extract_config_path(argv)
        config = parse_config_file(config_path) if config_path else {}
        if config:
            # split argv at the subcommand token so injected tokens land after it
            commands = {"plan", "generate", "scrape", "build", "train", "eval", "detect"}
            for i, token in enumerate(argv):
                if token in commands:
                    argv = argv[: i + 1] + _inject_config_tokens(token, config, argv[i + 1 :])
                    break
        args = parser.parse_args(argv)
        for key in _GLOBAL_SWITCHES:
            if key in config and _as_switch(key, config[key]):
                setattr(args, key, True)
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.handler(args)
    except SystemExit:
        raise
    except BaseException as exc:  # noqa: BLE001 - single reporting point
        if isinstance(exc, (KeyboardInterrupt, GeneratorExit)):
            raise
        message = str(exc).replace("\n", "; ") or type(exc).__name__
        print(f"error\t{type(exc).__name__}\t{message}", file=sys.stderr)
        return exit_code_for(exc)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
