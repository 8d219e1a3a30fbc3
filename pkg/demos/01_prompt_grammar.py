"""Walk through the prompt grammar: vocabulary, rendering, sampling, plans.

Run from the repository root:

    python3 demos/01_prompt_grammar.py
"""

from collections import Counter

from mapforensics.corpus import build_generation_plan, build_search_targets
from mapforensics.grammar import (
    LEVELS,
    PromptSpec,
    Region,
    enumerate_regions,
    load_vocabulary,
    parse_prompt,
    render_prompt,
    sample_prompt,
    validate_vocabulary,
)


def main() -> None:
    vocab = load_vocabulary()
    report = validate_vocabulary(vocab)
    print(f"vocabulary version {vocab.version}: valid={report.passed}")
    print(
        "  map_types/states/countries/continents/places/descriptions = "
        + "/".join(str(c) for c in report.counts)
    )

    print("\nEvery prompt follows 'A {map_type} of {region}[ place][ description]':")
    examples = [
        PromptSpec("choropleth map", Region("Wisconsin", "state")),
        PromptSpec(
            "choropleth map", Region("United States", "country"), description="with warm colors"
        ),
        PromptSpec("physical map", Region("North Korea", "country"), place="on the pavement"),
    ]
    for spec in examples:
        text = render_prompt(spec, vocab)
        assert parse_prompt(text, vocab) == spec  # render and parse are inverses
        print(f"  {text}")

    print("\nSampling is a pure function of the seed:")
    for seed in range(3):
        print(f"  seed {seed}: {render_prompt(sample_prompt(seed, 'country', vocab), vocab)}")

    distinct = {
        render_prompt(PromptSpec(mt, region), vocab)
        for mt in vocab.map_types
        for level in LEVELS
        for region in enumerate_regions(level, vocab)
    }
    print(f"\nNo-optional cross product: {len(distinct)} distinct prompts (6 x 157)")

    plan = build_generation_plan(seed=0, vocab=vocab)
    per_level = Counter(e.level for e in plan.entries)
    targets = build_search_targets(vocab=vocab)
    print(f"\nDefault generation plan: {plan.total} prompts {dict(per_level)}")
    print(f"Human-map search targets: {sum(targets.values())} images {targets}")
    print("\nFirst three plan entries:")
    for entry in plan.entries[:3]:
        print(f"  [{entry.level}/{entry.region}#{entry.index}] {entry.prompt}")


if __name__ == "__main__":
    main()
