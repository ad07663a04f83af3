"""Prompt rendering, LLM submission with retries, response parsing and cost tracking.

The HTTP side is a thin contract: POST a JSON body holding the model name and
one prompt string, read the text back from a configurable JSON path. A
line-delimited journal makes runs resumable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import Corpus, CorpusKind, Post

log = logging.getLogger(__name__)

API_KEY_ENV = "SYNTHAUDIT_LLM_API_KEY"

PERSONA_WRITERS = (
    "Ernest Hemingway",
    "F. Scott Fitzgerald",
    "George Orwell",
    "James Joyce",
    "John Steinbeck",
    "Kurt Vonnegut",
    "Samuel Beckett",
    "T.S. Eliot",
    "Virginia Woolf",
    "William Faulkner",
)

EXAMPLE_HEADER = (
    "Using the following examples, generate {n} new social media posts, "
    "keeping them true to their content and writing style."
)
PERSONA_HEADER = (
    "You are {writer},\n"
    "a renowned 20th-century literary figure known for your distinctive style.\n"
    "Rewrite the following {n} social media posts in your own style,\n"
    "preserving their meaning but adapting them to your voice."
)
FORMAT_INTRO = "Please respond in the format shown below:"


class GenerationError(ValueError):
    pass


class ParseError(GenerationError):
    pass


class CredentialError(GenerationError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    text: str
    num_examples: int
    expected: int
    writer: str | None = None


def _format_stub(n: int) -> str:
    return "\n".join(f"Post{k}: your response" for k in range(1, n + 1))


def _example_block(posts: Sequence[Post]) -> str:
    return "\n".join(f"Example{k}: {p.text}" for k, p in enumerate(posts, start=1))


def build_example_prompt(posts: Sequence[Post], n_out: int = 5) -> PromptTemplate:
    if not posts:
        raise GenerationError("example-based prompt needs at least one example post")
    if n_out < 1:
        raise GenerationError("n_out must be >= 1")
    text = "\n\n".join(
        [EXAMPLE_HEADER.format(n=n_out), _example_block(posts), FORMAT_INTRO, _format_stub(n_out)]
    )
    return PromptTemplate("example_based", text + "\n", len(posts), n_out)


def build_persona_prompt(writer: str, posts: Sequence[Post], roster: Sequence[str] = PERSONA_WRITERS) -> PromptTemplate:
    if writer not in roster:
        raise GenerationError(f"unknown persona writer {writer!r}")
    if not posts:
        raise GenerationError("persona prompt needs at least one post")
    n = len(posts)
    # "1 social media posts" is kept verbatim; rendering stays byte-stable
    text = "\n\n".join(
        [PERSONA_HEADER.format(writer=writer, n=n), _example_block(posts), FORMAT_INTRO, _format_stub(n)]
    )
    return PromptTemplate("persona_based", text + "\n", n, n, writer)


def assign_persona(author: str, roster: Sequence[str] = PERSONA_WRITERS) -> str:
    """Stable author -> writer mapping via SHA-256 of the author label."""
    h = int.from_bytes(hashlib.sha256(author.encode("utf-8")).digest()[:8], "big")
    return roster[h % len(roster)]


# ---------------------------------------------------------------------------
# response parsing


# markdown emphasis around the marker ("**Post1:**", "**Post1**:") is stripped
# only when it mirrors the opening run, so post text may itself start with "*"
_MARKER_RE = re.compile(r"(?im)^[ \t>#-]*(?P<deco>[*_]*)post[ \t]*(?P<k>\d+)[ \t]*(?:(?P=deco):|:(?P=deco))[ \t]*")


def _markers(text: str) -> list[tuple[int, int, int]]:
    return [(int(m.group("k")), m.start(), m.end()) for m in _MARKER_RE.finditer(text)]


def parse_numbered_posts(response_text: str, expected: int) -> list[str]:
    """Split a ``Post1: ... Post2: ...`` response into exactly ``expected`` posts."""
    marks = _markers(response_text)
    numbers = [k for k, _, _ in marks]
    want = list(range(1, expected + 1))
    if numbers != want:
        missing = [k for k in want if k not in numbers]
        if missing:
            raise ParseError(f"missing Post{missing[0]} marker (found {numbers or 'none'})")
        if len(numbers) != expected:
            raise ParseError(f"expected {expected} posts, found {len(numbers)} markers {numbers}")
        raise ParseError(f"markers out of order: {numbers}")
    out = []
    for i, (_, _, end) in enumerate(marks):
        stop = marks[i + 1][1] if i + 1 < len(marks) else len(response_text)
        out.append(response_text[end:stop].strip())
    return out


def render_response(posts: Sequence[str]) -> str:
    return "\n".join(f"Post{k}: {p}" for k, p in enumerate(posts, start=1))


def _is_truncated(response_text: str, expected: int) -> bool:
    numbers = [k for k, _, _ in _markers(response_text)]
    return 0 < len(numbers) < expected and numbers == list(range(1, len(numbers) + 1))


# ---------------------------------------------------------------------------
# batches


@dataclass
class GenerationRequest:
    request_id: str
    source_post_ids: list[str]
    source_authors: list[str]
    prompt: PromptTemplate


@dataclass
class GenerationBatch:
    request_id: str
    source_post_ids: list[str]
    source_authors: list[str]
    prompt: str
    kind: str
    expected: int
    writer: str | None = None
    response_text: str | None = None
    parsed_posts: list[str] = field(default_factory=list)
    status: str = "pending"
    attempts: int = 0
    backoff: list[float] = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "GenerationBatch":
        return cls(**json.loads(line))

    def synthetic_posts(self) -> list[Post]:
        if self.status != "ok":
            return []
        out = []
        for k, text in enumerate(self.parsed_posts):
            src = self.source_post_ids[k] if k < len(self.source_post_ids) else None
            author = self.source_authors[k] if k < len(self.source_authors) else self.source_authors[-1]
            out.append(Post(f"{self.request_id}-{k + 1}", author, text.lower(), source_id=src))
        return out


def _request_id(kind: str, index: int, prompt: str) -> str:
    return f"{kind}-{index:05d}-{hashlib.sha256(prompt.encode('utf-8')).hexdigest()[:10]}"


def plan_requests(
    corpus: Corpus,
    kind: str = "example_based",
    batch_size: int = 5,
    roster: Sequence[str] = PERSONA_WRITERS,
) -> list[GenerationRequest]:
    """Chunk each author's posts (corpus order) into prompts of ``batch_size`` posts."""
    if kind not in ("example_based", "persona_based"):
        raise GenerationError(f"unknown prompt kind {kind!r}")
    by_author: dict[str, list[Post]] = {}
    for p in corpus:
        by_author.setdefault(p.author, []).append(p)
    requests = []
    for author in sorted(by_author):
        posts = by_author[author]
        for s in range(0, len(posts), batch_size):
            chunk = posts[s:s + batch_size]
            if kind == "example_based":
                prompt = build_example_prompt(chunk, n_out=len(chunk))
            else:
                prompt = build_persona_prompt(assign_persona(author, roster), chunk, roster)
            rid = _request_id(kind, len(requests), prompt.text)
            requests.append(GenerationRequest(rid, [p.id for p in chunk], [p.author for p in chunk], prompt))
    return requests


# ---------------------------------------------------------------------------
# transport


@dataclass
class ClientConfig:
    endpoint: str
    model: str = ""
    api_key: str | None = None
    auth_header: str = "Authorization"
    auth_prefix: str = "Bearer "
    response_path: str = "text"
    max_in_flight: int = 4
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    timeout: float = 120.0
    prompt_price_per_1k: float = 0.0
    response_price_per_1k: float = 0.0

    @classmethod
    def from_file(cls, path) -> "ClientConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise GenerationError(f"unknown client config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TransportResponse:
    status: int
    body: str


class TransportError(Exception):
    pass


Transport = Callable[[ClientConfig, str, str], TransportResponse]


def http_transport(config: ClientConfig, api_key: str, prompt: str) -> TransportResponse:
    import httpx

    headers = {config.auth_header: f"{config.auth_prefix}{api_key}", "Content-Type": "application/json"}
    body = {"model": config.model, "prompt": prompt}
    try:
        r = httpx.post(config.endpoint, json=body, headers=headers, timeout=config.timeout)
    except httpx.HTTPError as exc:
        raise TransportError(str(exc)) from exc
    return TransportResponse(r.status_code, r.text)


def extract_text(body: str, path: str) -> str:
    """Follow a dotted path (``choices.0.message.content``) into a JSON body; plain text passes through."""
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        return body
    node = data
    for part in path.split(".") if path else []:
        if isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        elif isinstance(node, dict) and part in node:
            node = node[part]
        else:
            raise GenerationError(f"response path {path!r} not found in body")
    if not isinstance(node, str):
        raise GenerationError(f"response path {path!r} does not point at text")
    return node


def _retryable(status: int) -> bool:
    return status == 429 or status >= 500


def _run_one(req: GenerationRequest, config: ClientConfig, api_key: str, transport: Transport, sleep) -> GenerationBatch:
    batch = GenerationBatch(
        req.request_id,
        list(req.source_post_ids),
        list(req.source_authors),
        req.prompt.text,
        req.prompt.kind,
        req.prompt.expected,
        req.prompt.writer,
    )
    body = None
    for attempt in range(1, config.max_attempts + 1):
        batch.attempts = attempt
        try:
            resp = transport(config, api_key, req.prompt.text)
        except TransportError as exc:
            batch.error = f"transport: {exc}"
        else:
            if resp.status == 200:
                body = resp.body
                batch.error = None
                break
            batch.error = f"http {resp.status}"
            if not _retryable(resp.status):
                break
        if attempt < config.max_attempts:
            delay = config.backoff_base * config.backoff_factor ** (attempt - 1)
            batch.backoff.append(delay)
            log.info("%s: attempt %d failed (%s), retrying in %.1fs", req.request_id, attempt, batch.error, delay)
            sleep(delay)
    if body is None:
        batch.status = "transport_error"
        return batch
    try:
        text = extract_text(body, config.response_path)
    except GenerationError as exc:
        batch.status = "parse_error"
        batch.error = str(exc)
        batch.response_text = body
        return batch
    batch.response_text = text
    try:
        batch.parsed_posts = parse_numbered_posts(text, req.prompt.expected)
        batch.status = "ok"
    except ParseError as exc:
        batch.status = "truncated" if _is_truncated(text, req.prompt.expected) else "parse_error"
        batch.error = str(exc)
    return batch


COMPLETED = frozenset({"ok", "parse_error", "truncated"})


def read_journal(path) -> dict[str, GenerationBatch]:
    out: dict[str, GenerationBatch] = {}
    p = Path(path)
    if not p.exists():
        return out
    for line in p.read_text(encoding="utf-8").splitlines():
        if line.strip():
            b = GenerationBatch.from_json(line)
            out[b.request_id] = b
    return out


def submit_batches(
    requests: Sequence[GenerationRequest],
    config: ClientConfig,
    journal: str | os.PathLike | None = None,
    transport: Transport | None = None,
    sleep: Callable[[float], None] = time.sleep,
    api_key: str | None = None,
) -> list[GenerationBatch]:
    """Send every request not already completed in the journal.

    Results come back in request order regardless of completion order.
    Requests whose journal status is a transport error are retried.
    """
    key = api_key or config.api_key or os.environ.get(API_KEY_ENV)
    if not key:
        raise CredentialError(f"no API key: set {API_KEY_ENV} or api_key in the client config")
    transport = transport or http_transport
    done = read_journal(journal) if journal else {}
    todo = [r for r in requests if not (r.request_id in done and done[r.request_id].status in COMPLETED)]
    lock = threading.Lock()
    results: dict[str, GenerationBatch] = {}

    def work(req: GenerationRequest) -> None:
        batch = _run_one(req, config, key, transport, sleep)
        with lock:
            results[req.request_id] = batch
            if journal:
                with open(journal, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(batch.to_json() + "\n")

    with ThreadPoolExecutor(max_workers=max(1, config.max_in_flight)) as pool:
        list(pool.map(work, todo))
    out = []
    for r in requests:
        out.append(results[r.request_id] if r.request_id in results else done[r.request_id])
    return out


def synthetic_corpus(batches: Iterable[GenerationBatch], label: str = "synthetic") -> Corpus:
    posts = [p for b in batches for p in b.synthetic_posts()]
    return Corpus(posts, CorpusKind.SYNTHETIC, label)


# ---------------------------------------------------------------------------
# cost


@dataclass
class CostEntry:
    request_id: str
    prompt_tokens: float
    response_tokens: float
    cost: float


@dataclass
class CostLedger:
    entries: list[CostEntry]
    prompt_price_per_1k: float
    response_price_per_1k: float
    total_prompt_tokens: float = 0.0
    total_response_tokens: float = 0.0
    total_cost: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_tokens(text: str | None) -> float:
    """Character count / 4; a vendor-neutral approximation."""
    return len(text or "") / 4.0


def estimate_cost(batches: Iterable, unit_prices: Mapping[str, float]) -> CostLedger:
    """Price each batch per 1000 estimated tokens.

    ``unit_prices`` holds ``prompt`` and optionally ``response`` prices. Items
    may be GenerationBatch, GenerationRequest or PromptTemplate objects.
    """
    p_price = float(unit_prices.get("prompt", 0.0))
    r_price = float(unit_prices.get("response", p_price))
    if p_price < 0 or r_price < 0:
        raise GenerationError("unit prices must be nonnegative")
    entries = []
    for i, b in enumerate(batches):
        if isinstance(b, GenerationBatch):
            rid, prompt, response = b.request_id, b.prompt, b.response_text
        elif isinstance(b, GenerationRequest):
            rid, prompt, response = b.request_id, b.prompt.text, None
        elif isinstance(b, PromptTemplate):
            rid, prompt, response = str(i), b.text, None
        else:
            rid, prompt, response = str(i), str(b), None
        pt, rt = estimate_tokens(prompt), estimate_tokens(response)
        entries.append(CostEntry(rid, pt, rt, pt / 1000 * p_price + rt / 1000 * r_price))
    return CostLedger(
        entries,
        p_price,
        r_price,
        sum(e.prompt_tokens for e in entries),
        sum(e.response_tokens for e in entries),
        sum(e.cost for e in entries),
    )
