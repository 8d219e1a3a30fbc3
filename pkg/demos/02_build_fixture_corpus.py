"""Build a small labelled corpus entirely offline, under demo-output/.

Uses the fixture backends (procedural drawings) in place of a live
text-to-image API and a live image search, then ingests, dedupes, splits,
and writes a manifest. Rerunning is a no-op thanks to content hashing.

    python3 demos/02_build_fixture_corpus.py
"""

from pathlib import Path

from mapforensics.acquisition import (
    FixtureGenerationClient,
    FixtureSearchClient,
    GenerationRequest,
    SearchRequest,
    build_search_query,
    materialize_search_fixtures,
)
from mapforensics.corpus import (
    LABEL_AI,
    LABEL_HUMAN,
    DatasetManifest,
    assign_splits,
    build_generation_plan,
    dedupe,
    ingest_staged,
    save_manifest,
    stage_acquired,
)
from mapforensics.grammar import enumerate_regions, load_vocabulary

OUT = Path(__file__).resolve().parent.parent / "demo-output"


def main() -> None:
    vocab = load_vocabulary()
    staging = OUT / "staging"
    fixtures = OUT / "fixtures"
    corpus = OUT / "corpus"

    # 1. plan prompts: two per continent, sub-seeded so the plan is stable
    plan = build_generation_plan(quotas={"continent": 2}, seed=0, vocab=vocab)
    print(f"plan: {plan.total} prompts")

    # 2. "generate" one image per prompt (procedural fixture backend)
    generator = FixtureGenerationClient()
    for entry in plan.entries:
        image = generator.generate(GenerationRequest(prompt=entry.prompt, model_id="fixture"))
        stage_acquired(staging, image, LABEL_AI, entry.level, entry.region, entry.prompt)
    print(f"staged {plan.total} generated images")

    # 3. "scrape" two human-designed maps per continent (recorded fixtures)
    searcher = FixtureSearchClient(fixtures)
    staged = 0
    for region in enumerate_regions("continent", vocab):
        query = build_search_query(region)
        materialize_search_fixtures(fixtures, query, 2)
        for image in searcher.search(SearchRequest(query=query, k=2)):
            stage_acquired(staging, image, LABEL_HUMAN, "continent", region.name, None)
            staged += 1
    print(f"staged {staged} searched images")

    # 4. catalogue: ingest, dedupe, stratified split, manifest
    manifest = DatasetManifest(vocabulary_version=vocab.version)
    ingest_staged(manifest, staging, corpus)
    kept, dropped = dedupe(manifest.records, threshold=0)
    manifest.replace_records(kept)
    assign_splits(manifest, seed=0)
    save_manifest(manifest, corpus / "manifest.jsonl")

    print(f"corpus: {len(manifest)} records, {len(dropped)} duplicates dropped")
    print(f"  labels: {dict(manifest.counts('label'))}")
    print(f"  splits: {dict(manifest.counts('split'))}")
    print(f"manifest written to {corpus / 'manifest.jsonl'}")


if __name__ == "__main__":
    main()
