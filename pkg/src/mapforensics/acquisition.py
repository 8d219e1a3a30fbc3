"""Image acquisition: a text-to-image generation client and an image
search client, each with a live HTTP adapter and an offline fixture mode.

Fixture mode is fully deterministic so the whole pipeline (and CI) runs
with no network and no credentials. Fixture "generated" images are noisy,
wobbly procedural drawings; fixture "searched" images are clean flat-color
drawings with legible label boxes. The two styles are intentionally easy
to tell apart so a desk-scale corpus carries learnable signal.

Acquisition never writes to the corpus; cataloguing is a separate step.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import math
import os
import random
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import (
    BackendUnavailableError,
    ContentRejectedError,
    RateLimitedError,
)
from .grammar import Region

logger = logging.getLogger(__name__)

FIXTURE_IMAGE_SIZE = 512
DEFAULT_API_KEY_ENV = "MAPFORENSICS_API_KEY"

ORIGIN_GENERATED = "generated"
ORIGIN_SEARCHED = "searched"
ORIGIN_FIXTURE = "fixture"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    model_id: str
    request_time: datetime = field(default_factory=_utcnow)

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")


@dataclass(frozen=True)
class SearchRequest:
    query: str
    k: int
    request_time: datetime = field(default_factory=_utcnow)

    def __post_init__(self):
        if not 1 <= self.k <= 200:
            raise ValueError(f"k must be in [1, 200], got {self.k}")


@dataclass(frozen=True)
class AcquiredImage:
    data: bytes
    origin: str  # generated | searched | fixture
    source_detail: str
    rank: int | None = None


@dataclass
class SearchResults:
    """Ranked search results; `warning` is set instead of raising on empty."""

    images: list[AcquiredImage]
    warning: str | None = None

    def __iter__(self):
        return iter(self.images)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]


def build_search_query(region: Region) -> str:
    """Query string used to collect human-designed maps for a region."""
    return f"{region.name} maps"


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def prompt_fixture_key(prompt: str) -> str:
    """Filename stem for a prompt under <root>/generated/."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def png_bytes(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Procedural placeholder drawing
# ---------------------------------------------------------------------------


def _seed_from(*parts: str) -> int:
    digest = hashlib.sha256("\n".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _wobbly_polygon(rng: random.Random, cx, cy, radius, wobble, vertices):
    points = []
    for i in range(vertices):
        angle = 2 * math.pi * i / vertices
        r = radius * rng.uniform(1 - wobble, 1 + wobble)
        points.append((cx + r * math.cos(angle), cy + r * math.sin(angle)))
    return points


def draw_generated_placeholder(prompt: str, size: int = FIXTURE_IMAGE_SIZE) -> Image.Image:
    """Noisy wobbly stand-in for a synthesized map, seeded by the prompt."""
    if size < 64:
        raise ValueError(f"placeholder size must be >= 64, got {size}")
    seed = _seed_from("generated", prompt)
    rng = random.Random(seed)
    npr = np.random.default_rng(seed)

    base = npr.integers(70, 190, size=3)
    canvas = base[None, None, :] + npr.integers(-45, 46, size=(size, size, 3))
    img = Image.fromarray(np.clip(canvas, 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)

    # wobbly landmasses with drifting borders
    for _ in range(rng.randint(4, 8)):
        cx, cy = rng.uniform(0, size), rng.uniform(0, size)
        radius = rng.uniform(size * 0.08, size * 0.3)
        color = tuple(rng.randrange(30, 230) for _ in range(3))
        outline = tuple(max(0, c - 70) for c in color)
        pts = _wobbly_polygon(rng, cx, cy, radius, wobble=rng.uniform(0.25, 0.5),
                              vertices=rng.randint(12, 24))
        draw.polygon(pts, fill=color, outline=outline)

    # squiggly linework (roads/rivers that go nowhere)
    for _ in range(rng.randint(2, 5)):
        x, y = rng.uniform(0, size), rng.uniform(0, size)
        pts = [(x, y)]
        heading = rng.uniform(0, 2 * math.pi)
        for _ in range(rng.randint(8, 20)):
            heading += rng.uniform(-1.1, 1.1)
            step = rng.uniform(size * 0.02, size * 0.08)
            x += step * math.cos(heading)
            y += step * math.sin(heading)
            pts.append((x, y))
        draw.line(pts, fill=tuple(rng.randrange(0, 120) for _ in range(3)),
                  width=rng.randint(2, 4))

    # pseudo-text: clusters of short unreadable strokes
    for _ in range(rng.randint(6, 14)):
        gx, gy = rng.uniform(0, size - 60), rng.uniform(0, size - 12)
        ink = tuple(rng.randrange(0, 90) for _ in range(3))
        x = gx
        for _ in range(rng.randint(3, 9)):
            h = rng.uniform(4, 10)
            draw.line([(x, gy + rng.uniform(-2, 2)), (x + rng.uniform(-2, 3), gy + h)],
                      fill=ink, width=1)
            x += rng.uniform(3, 7)

    # speckle over everything so no region is flat
    arr = np.asarray(img, dtype=np.float64)
    arr += npr.normal(0.0, 12.0, size=arr.shape)
    return Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8))


def draw_searched_placeholder(query: str, rank: int, size: int = FIXTURE_IMAGE_SIZE) -> Image.Image:
    """Clean flat-fill stand-in for a human-designed map, per (query, rank)."""
    if size < 64:
        raise ValueError(f"placeholder size must be >= 64, got {size}")
    rng = random.Random(_seed_from("searched", query, str(rank)))
    bg = rng.randrange(240, 256)
    img = Image.new("RGB", (size, size), (bg, bg, bg))
    draw = ImageDraw.Draw(img)

    palette = [
        (198, 219, 239), (199, 233, 192), (254, 224, 210), (253, 231, 180),
        (218, 218, 235), (204, 236, 230), (240, 240, 200), (222, 235, 247),
    ]
    ink = (40, 40, 48)

    # jittered grid of flat administrative "districts"
    cols, rows = rng.randint(3, 5), rng.randint(3, 5)
    xs = [round(i * size / cols + (rng.uniform(-0.08, 0.08) * size if 0 < i < cols else 0))
          for i in range(cols + 1)]
    ys = [round(j * size / rows + (rng.uniform(-0.08, 0.08) * size if 0 < j < rows else 0))
          for j in range(rows + 1)]
    for j in range(rows):
        for i in range(cols):
            if rng.random() < 0.12:
                continue  # leave some background showing through
            quad = [(xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1])]
            draw.polygon(quad, fill=rng.choice(palette), outline=ink)

    # straight transport lines
    for _ in range(rng.randint(1, 3)):
        if rng.random() < 0.5:
            y0, y1 = rng.uniform(0, size), rng.uniform(0, size)
            draw.line([(0, y0), (size, y1)], fill=(90, 90, 100), width=2)
        else:
            x0, x1 = rng.uniform(0, size), rng.uniform(0, size)
            draw.line([(x0, 0), (x1, size)], fill=(90, 90, 100), width=2)

    # label boxes with a solid "text" bar
    for _ in range(rng.randint(3, 7)):
        w = rng.randint(max(24, size // 10), max(28, size // 5))
        h = rng.randint(12, max(13, min(26, size // 8)))
        x, y = rng.randint(4, size - w - 4), rng.randint(4, size - h - 4)
        draw.rectangle([x, y, x + w, y + h], fill=(255, 255, 255), outline=ink)
        draw.rectangle([x + 5, y + h // 2 - 3, x + w - 5, y + h // 2 + 3], fill=ink)

    # legend, scale bar, north arrow (these need room; tiny canvases skip them)
    if size >= 224:
        lx, ly = 12, size - 76
        draw.rectangle([lx, ly, lx + 96, ly + 64], fill=(255, 255, 255), outline=ink)
        for i in range(3):
            sw = rng.choice(palette)
            draw.rectangle([lx + 6, ly + 6 + i * 19, lx + 24, ly + 18 + i * 19], fill=sw, outline=ink)
            draw.rectangle([lx + 30, ly + 9 + i * 19, lx + 88, ly + 14 + i * 19], fill=ink)
        sx = size - 130
        draw.rectangle([sx, size - 24, sx + 100, size - 16], outline=ink)
        draw.rectangle([sx, size - 24, sx + 50, size - 16], fill=ink)
        draw.polygon([(size - 28, 16), (size - 20, 40), (size - 36, 40)], fill=ink)
    return img


# ---------------------------------------------------------------------------
# Fixture clients
# ---------------------------------------------------------------------------


class FixtureGenerationClient:
    """Offline generation backend.

    If `root` holds a recorded file at generated/<sha256(prompt)>.png those
    bytes are served; otherwise a placeholder is drawn procedurally from
    the prompt hash. Either way, equal prompts yield byte-identical
    payloads on every call.
    """

    def __init__(self, root: Path | str | None = None, size: int = FIXTURE_IMAGE_SIZE):
        self.root = Path(root) if root is not None else None
        self.size = size

    def generate(self, request: GenerationRequest) -> AcquiredImage:
        key = prompt_fixture_key(request.prompt)
        if self.root is not None:
            recorded = self.root / "generated" / f"{key}.png"
            if recorded.exists():
                return AcquiredImage(
                    data=recorded.read_bytes(),
                    origin=ORIGIN_FIXTURE,
                    source_detail=f"fixture:generated/{key}.png",
                )
        data = png_bytes(draw_generated_placeholder(request.prompt, self.size))
        return AcquiredImage(
            data=data,
            origin=ORIGIN_FIXTURE,
            source_detail=f"fixture:procedural/{key[:12]}",
        )


class FixtureSearchClient:
    """Offline search backend serving a recorded directory keyed by query.

    Layout: <root>/search/<slug(query)>/<rank>.png. An unrecorded query
    returns an empty result with a warning, never an error.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def search(self, request: SearchRequest) -> SearchResults:
        directory = self.root / "search" / slugify(request.query)
        if not directory.is_dir():
            msg = f"no fixtures recorded for query {request.query!r}"
            logger.warning(msg)
            return SearchResults(images=[], warning=msg)
        files = sorted(
            (p for p in directory.iterdir() if p.suffix == ".png" and p.stem.isdigit()),
            key=lambda p: int(p.stem),
        )
        images = [
            AcquiredImage(
                data=path.read_bytes(),
                origin=ORIGIN_FIXTURE,
                source_detail=f"fixture:search/{directory.name}/{path.name}",
                rank=int(path.stem),
            )
            for path in files[: request.k]
        ]
        warning = None
        if not images:
            warning = f"fixture directory for query {request.query!r} is empty"
            logger.warning(warning)
        return SearchResults(images=images, warning=warning)


def materialize_search_fixtures(
    root: Path | str, query: str, count: int, size: int = FIXTURE_IMAGE_SIZE
) -> Path:
    """Write `count` deterministic searched-style fixtures for a query.

    Idempotent: existing files are left untouched, so reruns are
    byte-stable.
    """
    directory = Path(root) / "search" / slugify(query)
    directory.mkdir(parents=True, exist_ok=True)
    for rank in range(1, count + 1):
        path = directory / f"{rank}.png"
        if not path.exists():
            path.write_bytes(png_bytes(draw_searched_placeholder(query, rank, size)))
    return directory


def materialize_generated_fixture(
    root: Path | str, prompt: str, size: int = FIXTURE_IMAGE_SIZE
) -> Path:
    """Record the procedural placeholder for a prompt under the fixture root."""
    directory = Path(root) / "generated"
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{prompt_fixture_key(prompt)}.png"
    if not path.exists():
        path.write_bytes(png_bytes(draw_generated_placeholder(prompt, size)))
    return path


# ---------------------------------------------------------------------------
# Live HTTP clients (thin adapters; exercised against stub servers in tests)
# ---------------------------------------------------------------------------


class HttpGenerationClient:
    """Generic JSON-over-HTTP text-to-image adapter.

    POSTs {"prompt": ..., "model": ...} and accepts either
    {"image_b64": ...} or {"url": ...} back. Credentials come from the
    environment variable named by `api_key_env`. Rate-limit responses are
    retried at most `max_retries` times with exponential backoff; other
    failures surface immediately.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 1.0,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def generate(self, request: GenerationRequest) -> AcquiredImage:
        import requests

        payload = {"prompt": request.prompt, "model": request.model_id}
        last_retry_after = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise BackendUnavailableError(f"generation backend unreachable: {exc}") from exc
            if resp.status_code == 429:
                last_retry_after = float(resp.headers.get("Retry-After", 0) or 0) or None
                if attempt < self.max_retries:
                    self._sleep(self.backoff_base * 2**attempt)
                    continue
                raise RateLimitedError(
                    f"rate limited after {self.max_retries} retries", retry_after=last_retry_after
                )
            if resp.status_code in (400, 422, 451):
                raise ContentRejectedError(f"prompt rejected ({resp.status_code}): {resp.text[:200]}")
            if resp.status_code != 200:
                raise BackendUnavailableError(
                    f"generation backend returned {resp.status_code}: {resp.text[:200]}"
                )
            body = resp.json()
            if "image_b64" in body:
                data = base64.b64decode(body["image_b64"])
            elif "url" in body:
                try:
                    img_resp = requests.get(body["url"], timeout=self.timeout)
                    img_resp.raise_for_status()
                except requests.RequestException as exc:
                    raise BackendUnavailableError(f"image fetch failed: {exc}") from exc
                data = img_resp.content
            else:
                raise BackendUnavailableError("generation response has neither image_b64 nor url")
            return AcquiredImage(
                data=data, origin=ORIGIN_GENERATED, source_detail=request.model_id
            )
        raise AssertionError("unreachable")


class HttpSearchClient:
    """Generic JSON-over-HTTP image search adapter.

    GETs `endpoint?q=<query>&count=<k>` expecting
    {"results": [{"url": ...}, ...]} in rank order, then fetches each URL.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout

    def search(self, request: SearchRequest) -> SearchResults:
        import requests

        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.get(
                self.endpoint,
                params={"q": request.query, "count": request.k},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            results = resp.json().get("results", [])
        except requests.RequestException as exc:
            raise BackendUnavailableError(f"search backend unreachable: {exc}") from exc
        images = []
        for i, item in enumerate(results[: request.k], start=1):
            try:
                img_resp = requests.get(item["url"], timeout=self.timeout)
                img_resp.raise_for_status()
            except requests.RequestException as exc:
                raise BackendUnavailableError(f"result fetch failed: {exc}") from exc
            images.append(
                AcquiredImage(
                    data=img_resp.content,
                    origin=ORIGIN_SEARCHED,
                    source_detail=item["url"],
                    rank=i,
                )
            )
        warning = None
        if not images:
            warning = f"search returned no results for {request.query!r}"
            logger.warning(warning)
        return SearchResults(images=images, warning=warning)
