"""Knowledge memory: chunking, pluggable embedding, an exact dense index and
typed knowledge entries with optional machine-checkable rules.

Documents are split into overlapping token windows, embedded to unit vectors
and scanned exhaustively at query time — corpora here are desk-scale, so an
approximate index would only add error.  Guideline documents may carry RULE
lines that compile to predicates; the verification layer evaluates them
against case facts and plan fields.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    EmptyIndex,
    EmptyText,
    ProviderFailure,
    SonoplanError,
    ZeroVector,
)

KINDS = ("guideline", "case", "contraindication")

DEFAULT_WINDOW = 512
DEFAULT_OVERLAP = 50
DEFAULT_TOP_K = 3


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------

def chunk_starts(n_tokens: int, window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP) -> list[int]:
    """Window start offsets: stride = window - overlap, stopping once a
    window has covered the tail."""
    if not (window > overlap >= 0):
        raise ValueError("need window > overlap >= 0")
    if n_tokens == 0:
        return []
    starts = [0]
    stride = window - overlap
    while starts[-1] + window < n_tokens:
        starts.append(starts[-1] + stride)
    return starts


def chunk(text: str, window: int = DEFAULT_WINDOW, overlap: int = DEFAULT_OVERLAP) -> list[str]:
    """Whitespace-token windows of ``window`` tokens overlapping by ``overlap``."""
    tokens = text.split()
    return [
        " ".join(tokens[s : s + window])
        for s in chunk_starts(len(tokens), window, overlap)
    ]


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

class HashedBigramEmbedder:
    """Reference embedding provider: token-bigram feature hashing.

    Deterministic per text; the output is always unit-norm.  Texts with a
    single token hash that token alone so nothing embeds to the zero vector.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def _bucket(self, feature: str) -> int:
        digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            raise EmptyText("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        if len(tokens) == 1:
            vec[self._bucket(tokens[0])] += 1.0
        else:
            for a, b in zip(tokens, tokens[1:]):
                vec[self._bucket(f"{a} {b}")] += 1.0
        return vec / np.linalg.norm(vec)


def embed(text: str, provider=None) -> np.ndarray:
    if provider is None:
        provider = HashedBigramEmbedder()
    try:
        return provider.embed(text)
    except SonoplanError:
        raise
    except Exception as exc:
        raise ProviderFailure(f"embedding provider failed: {exc}") from exc


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimMismatch(f"{u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    return float(u @ v / (nu * nv))


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

_NUMBER = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def _parse_value(token: str):
    token = token.strip()
    if token.startswith("{") and token.endswith("}"):
        return frozenset(t.strip() for t in token[1:-1].split(",") if t.strip())
    if _NUMBER.match(token):
        return float(token)
    return token


@dataclass(frozen=True)
class Condition:
    """One comparison against a named case or plan field."""

    fld: str
    op: str  # <=, >=, <, >, ==, in
    value: object

    def holds(self, fields: dict) -> bool:
        if self.fld not in fields:
            raise KeyError(self.fld)
        actual = fields[self.fld]
        if self.op == "in":
            return str(actual) in self.value
        if self.op == "==":
            if isinstance(self.value, float):
                return float(actual) == self.value
            return str(actual) == str(self.value)
        a = float(actual)
        b = float(self.value)
        return {"<=": a <= b, ">=": a >= b, "<": a < b, ">": a > b}[self.op]

    def render(self) -> str:
        if isinstance(self.value, frozenset):
            val = "{" + ",".join(sorted(self.value)) + "}"
        elif isinstance(self.value, float):
            val = f"{self.value:g}"
        else:
            val = str(self.value)
        return f"{self.fld} {self.op} {val}"


@dataclass(frozen=True)
class GuidelineRule:
    """``if <case condition> then require <plan condition>`` with a message.

    ``applicability`` None means the requirement is unconditional.
    """

    rule_id: str
    applicability: Condition | None
    requirement: Condition
    message: str

    def applies(self, case_facts: dict) -> bool:
        return self.applicability is None or self.applicability.holds(case_facts)

    def satisfied(self, plan_fields: dict) -> bool:
        return self.requirement.holds(plan_fields)


_COND = r"(\S+)\s*(<=|>=|==|<|>|in)\s*(\{[^}]*\}|\S+)"
_RULE_LINE = re.compile(
    rf"^RULE:\s*(?:if\s+{_COND}\s+then\s+)?require\s+{_COND}\s*::\s*(.+)$"
)


def parse_rule(line: str, rule_id: str) -> GuidelineRule:
    m = _RULE_LINE.match(line.strip())
    if m is None:
        raise ValueError(f"unparseable rule line: {line!r}")
    af, aop, av, rf, rop, rv, message = m.groups()
    applicability = Condition(af, aop, _parse_value(av)) if af else None
    requirement = Condition(rf, rop, _parse_value(rv))
    return GuidelineRule(rule_id, applicability, requirement, message.strip())


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: str
    text: str
    source_doc: str
    kind: str
    vector: np.ndarray
    rules: tuple[GuidelineRule, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.text:
            raise EmptyText("chunk text must be non-empty")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        v = np.asarray(self.vector, dtype=np.float64)
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("chunk vector must be unit norm")
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class RetrievalResult:
    query: str
    ranked: tuple[tuple[KnowledgeChunk, float], ...]

    def chunk_ids(self) -> list[str]:
        return [c.chunk_id for c, _ in self.ranked]


def _chunk_id(kind: str, source_doc: str, start: int, text: str) -> str:
    digest = hashlib.sha1(f"{kind}|{source_doc}|{start}|{text}".encode("utf-8")).hexdigest()
    return digest[:16]


class MemoryIndex:
    """Exact (flat-scan) cosine index over knowledge chunks.

    Concurrent retrievals are safe; insertions take the writer lock.  Chunks
    are immutable once stored and identical (kind, source, offset, text)
    inserts are idempotent, which makes ranking independent of insertion
    order.
    """

    def __init__(self, provider=None):
        self.provider = provider if provider is not None else HashedBigramEmbedder()
        self._chunks: dict[str, KnowledgeChunk] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._chunks)

    def add_document(
        self,
        text: str,
        source_doc: str,
        kind: str,
        rules: tuple[GuidelineRule, ...] = (),
        window: int = DEFAULT_WINDOW,
        overlap: int = DEFAULT_OVERLAP,
    ) -> list[str]:
        """Chunk, embed and store one document; returns the chunk ids."""
        tokens = text.split()
        ids = []
        new = []
        for start in chunk_starts(len(tokens), window, overlap):
            ctext = " ".join(tokens[start : start + window])
            cid = _chunk_id(kind, source_doc, start, ctext)
            ids.append(cid)
            new.append(
                KnowledgeChunk(
                    chunk_id=cid,
                    text=ctext,
                    source_doc=source_doc,
                    kind=kind,
                    vector=self.provider.embed(ctext),
                    rules=tuple(rules),
                )
            )
        with self._lock:
            for chunk_ in new:
                self._chunks[chunk_.chunk_id] = chunk_
        return ids

    def add_chunks(self, chunks: list[KnowledgeChunk]) -> list[str]:
        with self._lock:
            for c in chunks:
                self._chunks[c.chunk_id] = c
        return [c.chunk_id for c in chunks]

    def retrieve(self, query_text: str, k: int = DEFAULT_TOP_K, kinds=None) -> RetrievalResult:
        """Top-k chunks by cosine similarity; ties break on ascending id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._chunks:
            raise EmptyIndex("no chunks stored")
        qv = self.provider.embed(query_text)
        pool = [
            c for c in self._chunks.values() if kinds is None or c.kind in kinds
        ]
        scored = [(c, float(c.vector @ qv)) for c in pool]
        scored.sort(key=lambda t: (-t[1], t[0].chunk_id))
        return RetrievalResult(query=query_text, ranked=tuple(scored[:k]))

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        doc = {"chunks": []}
        for c in sorted(self._chunks.values(), key=lambda c: c.chunk_id):
            doc["chunks"].append(
                {
                    "chunk_id": c.chunk_id,
                    "text": c.text,
                    "source_doc": c.source_doc,
                    "kind": c.kind,
                    "vector": [float(x) for x in c.vector],
                    "rules": [
                        {
                            "rule_id": r.rule_id,
                            "applicability": r.applicability.render() if r.applicability else None,
                            "requirement": r.requirement.render(),
                            "message": r.message,
                        }
                        for r in c.rules
                    ],
                }
            )
        Path(path).write_text(json.dumps(doc))

    @staticmethod
    def load(path: str | Path, provider=None) -> "MemoryIndex":
        index = MemoryIndex(provider=provider)
        doc = json.loads(Path(path).read_text())
        chunks = []
        for c in doc["chunks"]:
            rules = tuple(
                GuidelineRule(
                    rule_id=r["rule_id"],
                    applicability=_parse_condition(r["applicability"]),
                    requirement=_parse_condition(r["requirement"]),
                    message=r["message"],
                )
                for r in c["rules"]
            )
            chunks.append(
                KnowledgeChunk(
                    chunk_id=c["chunk_id"],
                    text=c["text"],
                    source_doc=c["source_doc"],
                    kind=c["kind"],
                    vector=np.asarray(c["vector"], dtype=np.float64),
                    rules=rules,
                )
            )
        index.add_chunks(chunks)
        return index


def _parse_condition(rendered: str | None) -> Condition | None:
    if rendered is None:
        return None
    m = re.match(rf"^{_COND}$", rendered)
    if m is None:
        raise ValueError(f"unparseable condition: {rendered!r}")
    fld, op, val = m.groups()
    return Condition(fld, op, _parse_value(val))


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def ingest_directory(path: str | Path, index: MemoryIndex) -> int:
    """Load every knowledge document under ``path`` into the index.

    Document format: header lines (``kind:``, ``source:``, ``RULE:`` blocks)
    up to a ``---`` separator, then the raw body text.
    """
    n_docs = 0
    for doc_path in sorted(Path(path).glob("*.txt")):
        kind, source, rules, body = _parse_document(doc_path.read_text(), doc_path.stem)
        index.add_document(body, source_doc=source, kind=kind, rules=rules)
        n_docs += 1
    return n_docs


def _parse_document(text: str, default_source: str):
    header, sep, body = text.partition("\n---\n")
    if not sep:
        raise ValueError(f"document {default_source!r} lacks the '---' separator")
    kind = None
    source = default_source
    rules = []
    for line in header.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("kind:"):
            kind = line.split(":", 1)[1].strip()
        elif line.startswith("source:"):
            source = line.split(":", 1)[1].strip()
        elif line.startswith("RULE:"):
            rules.append(line)
        else:
            raise ValueError(f"unknown header line in {default_source!r}: {line!r}")
    if kind not in KINDS:
        raise ValueError(f"document {default_source!r} needs kind in {KINDS}")
    parsed = tuple(
        parse_rule(line, rule_id=f"{source}:R{i + 1}") for i, line in enumerate(rules)
    )
    return kind, source, parsed, body.strip()
