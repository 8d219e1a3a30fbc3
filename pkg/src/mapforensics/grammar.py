"""Prompt grammar: fixed template plus versioned vocabularies.

Every generation prompt has the shape

    "A {map_type} of {region}[ {place}][ {description}]"

where map_type and region are required and the two trailing parts are
optional. Vocabulary entries carry their own connectives ("on the ...",
"with ..."), so rendering is plain single-space concatenation. All
operations here are pure; sampling is a deterministic function of its
seed.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import (
    PromptParseError,
    UnknownLevelError,
    VocabularyError,
    VocabularyFormatError,
)

LEVELS = ("state", "country", "continent")

MAP_TYPES = (
    "choropleth map",
    "general map",
    "heat map",
    "physical map",
    "political map",
    "reference map",
)

# admissible list lengths: map_types/states/countries/continents/places/descriptions
_EXPECTED_COUNTS = (6, 50, 100, 7, 30, 30)

DEFAULT_OPTIONAL_PROBABILITY = 0.5


@dataclass(frozen=True)
class Region:
    name: str
    level: str


@dataclass(frozen=True)
class PromptSpec:
    """One structured prompt; `place` and `description` may be None."""

    map_type: str
    region: Region
    place: str | None = None
    description: str | None = None


@dataclass(frozen=True)
class Vocabulary:
    map_types: tuple[str, ...]
    states: tuple[str, ...]
    countries: tuple[str, ...]
    continents: tuple[str, ...]
    places: tuple[str, ...]
    descriptions: tuple[str, ...]
    version: str

    def regions(self, level: str) -> tuple[str, ...]:
        if level == "state":
            return self.states
        if level == "country":
            return self.countries
        if level == "continent":
            return self.continents
        raise UnknownLevelError(f"unknown region level: {level!r} (expected one of {LEVELS})")


@dataclass(frozen=True)
class VocabularyReport:
    passed: bool
    problems: tuple[str, ...]
    counts: tuple[int, int, int, int, int, int]


_SECTIONS = ("map_types", "states", "countries", "continents", "places", "descriptions")


def parse_vocabulary(text: str) -> Vocabulary:
    """Parse the line-oriented vocabulary format (see data/vocabulary.txt)."""
    version = None
    sections: dict[str, list[str]] = {name: [] for name in _SECTIONS}
    current: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("version="):
            version = line.split("=", 1)[1].strip()
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name not in sections:
                raise VocabularyFormatError(f"line {lineno}: unknown section [{name}]")
            current = sections[name]
            continue
        if current is None:
            raise VocabularyFormatError(f"line {lineno}: entry before any [section] header")
        current.append(line)
    if version is None:
        raise VocabularyFormatError("missing version= header line")
    return Vocabulary(
        map_types=tuple(sections["map_types"]),
        states=tuple(sections["states"]),
        countries=tuple(sections["countries"]),
        continents=tuple(sections["continents"]),
        places=tuple(sections["places"]),
        descriptions=tuple(sections["descriptions"]),
        version=version,
    )


def load_vocabulary(path=None) -> Vocabulary:
    """Load a vocabulary file; with no path, the bundled canonical one."""
    if path is None:
        return _bundled_vocabulary()
    with open(path, encoding="utf-8") as fh:
        return parse_vocabulary(fh.read())


@lru_cache(maxsize=1)
def _bundled_vocabulary() -> Vocabulary:
    text = resources.files("mapforensics").joinpath("data/vocabulary.txt").read_text("utf-8")
    return parse_vocabulary(text)


def validate_vocabulary(vocab: Vocabulary) -> VocabularyReport:
    """Check every vocabulary invariant; failures are reported, not raised."""
    problems: list[str] = []
    lists = (
        ("map_types", vocab.map_types),
        ("states", vocab.states),
        ("countries", vocab.countries),
        ("continents", vocab.continents),
        ("places", vocab.places),
        ("descriptions", vocab.descriptions),
    )
    counts = tuple(len(entries) for _, entries in lists)
    for (name, entries), expected in zip(lists, _EXPECTED_COUNTS):
        if len(entries) != expected:
            problems.append(f"{name}: expected {expected} entries, found {len(entries)}")
        seen: set[str] = set()
        for entry in entries:
            if entry in seen:
                problems.append(f"{name}: duplicate entry {entry!r}")
            seen.add(entry)
    if set(vocab.map_types) != set(MAP_TYPES):
        problems.append(f"map_types: must be exactly {sorted(MAP_TYPES)}")
    for place in vocab.places:
        if not place.startswith("on the "):
            problems.append(f"places: entry {place!r} missing 'on the' prefix")
    for desc in vocab.descriptions:
        if not desc.startswith("with "):
            problems.append(f"descriptions: entry {desc!r} missing 'with' prefix")
    # Region names must be unique across levels, otherwise rendered prompts
    # collide and parsing cannot recover the level.
    by_name: dict[str, str] = {}
    for level in LEVELS:
        for name in vocab.regions(level):
            if name in by_name and by_name[name] != level:
                problems.append(f"regions: {name!r} appears at both {by_name[name]} and {level} level")
            by_name[name] = level
    if not vocab.version:
        problems.append("version: empty")
    return VocabularyReport(passed=not problems, problems=tuple(problems), counts=counts)  # type: ignore[arg-type]


@lru_cache(maxsize=8)
def _region_levels(vocab: Vocabulary) -> dict[str, str]:
    table: dict[str, str] = {}
    for level in LEVELS:
        for name in vocab.regions(level):
            table[name] = level
    return table


def enumerate_regions(level: str, vocab: Vocabulary | None = None) -> list[Region]:
    """All regions of one level, case-insensitive alphabetical, stable."""
    vocab = vocab or load_vocabulary()
    names = sorted(vocab.regions(level), key=str.casefold)
    return [Region(name=name, level=level) for name in names]


def _check_spec(spec: PromptSpec, vocab: Vocabulary) -> None:
    if spec.map_type not in vocab.map_types:
        raise VocabularyError("map_type", f"not a known map type: {spec.map_type!r}")
    if spec.region.level not in LEVELS:
        raise UnknownLevelError(
            f"unknown region level: {spec.region.level!r} (expected one of {LEVELS})"
        )
    if spec.region.name not in vocab.regions(spec.region.level):
        raise VocabularyError(
            "region",
            f"not a known {spec.region.level}-level region: {spec.region.name!r}",
        )
    if spec.place is not None and spec.place not in vocab.places:
        raise VocabularyError("place", f"not a known place: {spec.place!r}")
    if spec.description is not None and spec.description not in vocab.descriptions:
        raise VocabularyError("description", f"not a known description: {spec.description!r}")


def render_prompt(spec: PromptSpec, vocab: Vocabulary | None = None) -> str:
    """Render a PromptSpec to its canonical prompt string.

    Raises VocabularyError (naming the offending field) if any part of the
    spec is not in the vocabulary.
    """
    vocab = vocab or load_vocabulary()
    _check_spec(spec, vocab)
    parts = [f"A {spec.map_type} of {spec.region.name}"]
    if spec.place is not None:
        parts.append(spec.place)
    if spec.description is not None:
        parts.append(spec.description)
    return " ".join(parts)


def parse_prompt(text: str, vocab: Vocabulary | None = None) -> PromptSpec:
    """Inverse of render_prompt for strings produced by it.

    Splitting is unambiguous because region names never contain the
    " on the " / " with " connectives and optional entries carry fixed
    prefixes.
    """
    vocab = vocab or load_vocabulary()
    if not text.startswith("A "):
        raise PromptParseError(f"prompt does not start with 'A ': {text!r}")
    body = text[2:]
    head, sep, rest = body.partition(" of ")
    if not sep:
        raise PromptParseError(f"prompt has no ' of ' separator: {text!r}")
    map_type = head
    description = None
    if " with " in rest:
        rest, _, tail = rest.partition(" with ")
        description = "with " + tail
    place = None
    if " on the " in rest:
        rest, _, tail = rest.partition(" on the ")
        place = "on the " + tail
    region_name = rest
    level = _region_levels(vocab).get(region_name)
    if level is None:
        raise PromptParseError(f"unknown region name: {region_name!r}")
    spec = PromptSpec(
        map_type=map_type,
        region=Region(name=region_name, level=level),
        place=place,
        description=description,
    )
    _check_spec(spec, vocab)
    return spec


def sample_prompt(
    seed: int,
    level: str,
    vocab: Vocabulary | None = None,
    *,
    region: Region | None = None,
    p_opt: float = DEFAULT_OPTIONAL_PROBABILITY,
) -> PromptSpec:
    """Draw one PromptSpec; a pure function of (seed, level, vocab, p_opt).

    Required fields are uniform over the vocabulary; place and description
    are each independently present with probability p_opt and, when
    present, uniform. The draw order is pinned: map type, region,
    place-present, place, description-present, description. Passing
    `region` pins the region and skips its draw (used by generation plans,
    which need fixed per-region quotas).
    """
    vocab = vocab or load_vocabulary()
    if level not in LEVELS:
        raise UnknownLevelError(f"unknown region level: {level!r} (expected one of {LEVELS})")
    if not 0.0 <= p_opt <= 1.0:
        raise ValueError(f"p_opt must be in [0, 1], got {p_opt}")
    rng = random.Random(seed)
    map_type = rng.choice(vocab.map_types)
    if region is None:
        region = Region(name=rng.choice(vocab.regions(level)), level=level)
    place = rng.choice(vocab.places) if rng.random() < p_opt else None
    description = rng.choice(vocab.descriptions) if rng.random() < p_opt else None
    spec = PromptSpec(map_type=map_type, region=region, place=place, description=description)
    _check_spec(spec, vocab)
    return spec


def derive_subseed(*parts) -> int:
    """Stable 64-bit sub-seed from a tuple of values (for per-item draws)."""
    key = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")
