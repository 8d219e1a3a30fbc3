"""Shared fixtures: deterministic offline corpora and a small checkpoint.

The session corpus holds one generated-style and one searched-style image
per region (157 + 157 = 314 records) so corpus- and training-level checks
run against the same data a real pipeline would produce, just smaller.
"""

from __future__ import annotations

import pytest

from mapforensics.acquisition import (
    AcquiredImage,
    FixtureGenerationClient,
    GenerationRequest,
    build_search_query,
    draw_searched_placeholder,
    png_bytes,
)
from mapforensics.corpus import (
    LABEL_AI,
    LABEL_HUMAN,
    DatasetManifest,
    assign_splits,
    build_generation_plan,
    ingest,
)
from mapforensics.grammar import LEVELS, enumerate_regions, load_vocabulary


@pytest.fixture(scope="session")
def vocab():
    return load_vocabulary()


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory, vocab):
    """(manifest, root) with 314 records: one image of each style per region."""
    root = tmp_path_factory.mktemp("fixture-corpus")
    manifest = DatasetManifest(vocabulary_version=vocab.version)
    plan = build_generation_plan(
        quotas={"state": 1, "country": 1, "continent": 1}, seed=101, vocab=vocab
    )
    generator = FixtureGenerationClient()
    for entry in plan.entries:
        image = generator.generate(GenerationRequest(prompt=entry.prompt, model_id="fixture"))
        ingest(manifest, image, LABEL_AI, entry.level, entry.region, entry.prompt, root)
    for level in LEVELS:
        for region in enumerate_regions(level, vocab):
            query = build_search_query(region)
            image = AcquiredImage(
                data=png_bytes(draw_searched_placeholder(query, 1)),
                origin="fixture",
                source_detail=f"fixture:{query}",
                rank=1,
            )
            ingest(manifest, image, LABEL_HUMAN, level, region.name, None, root)
    assign_splits(manifest, seed=11)
    return manifest, root


def _build_mini_corpus(root, n_per_label=12, split_seed=1):
    manifest = DatasetManifest(vocabulary_version="test")
    generator = FixtureGenerationClient()
    for i in range(n_per_label):
        prompt = f"A road map of Testland{i}"
        image = generator.generate(GenerationRequest(prompt=prompt, model_id="fixture"))
        ingest(manifest, image, LABEL_AI, "state", f"Testland{i}", prompt, root)
        human = AcquiredImage(
            data=png_bytes(draw_searched_placeholder(f"Testland{i} maps", 1)),
            origin="fixture",
            source_detail=f"fixture:Testland{i} maps",
            rank=1,
        )
        ingest(manifest, human, LABEL_HUMAN, "state", f"Testland{i}", None, root)
    assign_splits(manifest, seed=split_seed)
    return manifest


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """(manifest, root) with 24 records; splits 16/4/4. Fast detector runs."""
    root = tmp_path_factory.mktemp("mini-corpus")
    return _build_mini_corpus(root), root


@pytest.fixture(scope="session")
def mini_checkpoint(mini_corpus):
    from mapforensics.detector import TrainingConfig, train

    manifest, root = mini_corpus
    config = TrainingConfig(
        pretrained_init=False, max_epochs=3, early_stop_patience=3, batch_size=8, seed=0
    )
    return train(manifest, root, config)
