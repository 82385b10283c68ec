"""Dense node embeddings, cosine ranking and a portable hash embedder.

The hash embedder is a deterministic stand-in for a sentence transformer: a
text is lower-cased and split into ``\\w+`` tokens; each token gets a dense
pseudo-random vector and the text vector is their normalized sum, so texts that
share words end up similar.  Token vectors are derived from SHA-256 alone so any
implementation can reproduce them bit for bit:

    block b of token t (seed s) = sha256(f"{s}:{t}:{b}".encode("utf-8"))
    each 32-byte block -> four big-endian uint64 words w
    coordinate value      = 2 * w / 2**64 - 1
    coordinates are taken in order until ``dim`` values are produced

A text with no ``\\w`` tokens is treated as the single token ``text`` itself.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import EmbeddingError

_TOKEN = re.compile(r"\w+")


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int, seed: int) -> tuple[float, ...]:
    vals: list[float] = []
    block = 0
    while len(vals) < dim:
        digest = hashlib.sha256(f"{seed}:{token}:{block}".encode("utf-8")).digest()
        for (word,) in struct.iter_unpack(">Q", digest):
            vals.append(2.0 * word / 2.0**64 - 1.0)
        block += 1
    return tuple(vals[:dim])


def hash_embedder(text: str, dim: int, seed: int = 0) -> np.ndarray:
    if dim < 2:
        raise ValueError("dim must be at least 2")
    tokens = _TOKEN.findall(text.lower()) or [text]
    vec = np.zeros(dim)
    for tok in tokens:
        vec += np.asarray(_token_vector(tok, dim, seed))
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # pragma: no cover - would need an exact cancellation
        vec = np.asarray(_token_vector(text, dim, seed))
        norm = np.linalg.norm(vec)
    return vec / norm


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise EmbeddingError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class QueryEmbedding:
    vector: np.ndarray
    source_text: str = ""

    @classmethod
    def from_text(cls, text: str, dim: int, seed: int = 0) -> "QueryEmbedding":
        return cls(hash_embedder(text, dim, seed), text)


class EmbeddingStore:
    """One real vector of length ``dim`` per node id (held as float64)."""

    def __init__(self, vectors: Mapping[int, Iterable[float]], dim: int | None = None):
        ids = tuple(sorted(vectors))
        if not ids:
            raise EmbeddingError("embedding store is empty")
        mat = np.array([np.asarray(vectors[i], dtype=float) for i in ids])
        if mat.ndim != 2:
            raise EmbeddingError("embedding vectors have inconsistent lengths")
        if dim is not None and mat.shape[1] != dim:
            raise EmbeddingError(f"expected dim={dim}, vectors have length {mat.shape[1]}")
        if not np.all(np.isfinite(mat)):
            raise EmbeddingError("embedding store contains non-finite values")
        mat.setflags(write=False)
        self.ids = ids
        self.dim = mat.shape[1]
        self.matrix = mat
        self._row = {nid: k for k, nid in enumerate(ids)}

    @classmethod
    def from_texts(cls, texts: Mapping[int, str], dim: int, seed: int = 0) -> "EmbeddingStore":
        return cls({nid: hash_embedder(t, dim, seed) for nid, t in texts.items()}, dim)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._row

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.matrix, other.matrix)

    def vector(self, node_id: int) -> np.ndarray:
        try:
            return self.matrix[self._row[node_id]]
        except KeyError:
            raise EmbeddingError(f"no embedding for node {node_id}") from None

    def rows(self, node_ids: Iterable[int]) -> np.ndarray:
        node_ids = list(node_ids)
        missing = [i for i in node_ids if i not in self._row]
        if missing:
            raise EmbeddingError(f"no embedding for node {missing[0]}")
        return self.matrix[[self._row[i] for i in node_ids]]

    def check_covers(self, node_ids: Iterable[int]) -> None:
        for nid in node_ids:
            if nid not in self._row:
                raise EmbeddingError(f"no embedding for node {nid}")

    def similarities(self, q: QueryEmbedding, node_ids: Iterable[int] | None = None) -> dict[int, float]:
        """Cosine similarity of every (or each listed) node to ``q``."""
        ids = list(self.ids if node_ids is None else node_ids)
        qv = np.asarray(q.vector, dtype=float)
        if qv.shape != (self.dim,):
            raise EmbeddingError(f"query has length {qv.shape[0]}, store dim is {self.dim}")
        qn = np.linalg.norm(qv)
        if qn == 0.0:
            raise EmbeddingError("query embedding has zero norm")
        mat = self.rows(ids)
        norms = np.linalg.norm(mat, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise EmbeddingError(f"embedding of node {ids[zero[0]]} has zero norm")
        sims = np.clip(mat @ qv / (norms * qn), -1.0, 1.0)
        return dict(zip(ids, sims.tolist()))


def rank_by_similarity(sims: Mapping[int, float]) -> list[tuple[int, float]]:
    """Descending similarity, ties broken by ascending node id."""
    return sorted(sims.items(), key=lambda kv: (-kv[1], kv[0]))


def top_k_similar(
    store: EmbeddingStore,
    q: QueryEmbedding,
    k: int,
    restrict: Iterable[int] | None = None,
) -> list[tuple[int, float]]:
    if k < 1:
        raise ValueError("k must be positive")
    if restrict is not None:
        restrict = sorted(set(restrict))
        if not restrict:
            raise ValueError("restrict must be non-empty when given")
    return rank_by_similarity(store.similarities(q, restrict))[:k]


# -- file formats ----------------------------------------------------------
# Values are stored at float32 precision in both formats so the text and the
# binary loader yield identical stores.


def _f32(values: Iterable[float]) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def write_embeddings_text(store: EmbeddingStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={store.dim} count={len(store)}\n")
        for nid in store.ids:
            vals = _f32(store.vector(nid))
            fh.write(f"{nid}\t" + ",".join(repr(float(np.float32(v))) for v in vals) + "\n")


def _parse_header(line: str, where: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*dim=(\d+)\s+count=(\d+)\s*", line)
    if not m:
        raise EmbeddingError(f"{where}: expected header 'dim=<d> count=<n>'")
    return int(m.group(1)), int(m.group(2))


def load_embeddings_text(path: str | Path) -> EmbeddingStore:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [(n, ln.rstrip("\n")) for n, ln in enumerate(fh, start=1) if ln.strip()]
    if not lines:
        raise EmbeddingError(f"{path}: empty embedding file")
    dim, count = _parse_header(lines[0][1], f"{path}:{lines[0][0]}")
    vectors: dict[int, np.ndarray] = {}
    for lineno, line in lines[1:]:
        where = f"{path}:{lineno}"
        try:
            sid, rest = line.split("\t", 1)
            nid = int(sid)
            vals = [float(v) for v in rest.split(",")]
        except ValueError:
            raise EmbeddingError(f"{where}: malformed embedding line") from None
        if len(vals) != dim:
            raise EmbeddingError(f"{where}: node {nid} has {len(vals)} values, expected {dim}")
        if nid in vectors:
            raise EmbeddingError(f"{where}: duplicate embedding for node {nid}")
        vectors[nid] = _f32(vals)
    if len(vectors) != count:
        raise EmbeddingError(f"{path}: header says count={count}, found {len(vectors)} vectors")
    return EmbeddingStore(vectors, dim)


def write_embeddings_binary(store: EmbeddingStore, blob_path: str | Path, index_path: str | Path) -> None:
    """Little-endian float32 blob plus an ``id<TAB>byte_offset`` sidecar."""
    with open(blob_path, "wb") as blob, open(index_path, "w", encoding="utf-8") as idx:
        idx.write(f"dim={store.dim} count={len(store)}\n")
        offset = 0
        for nid in store.ids:
            raw = np.asarray(store.vector(nid), dtype="<f4").tobytes()
            blob.write(raw)
            idx.write(f"{nid}\t{offset}\n")
            offset += len(raw)


def load_embeddings_binary(blob_path: str | Path, index_path: str | Path) -> EmbeddingStore:
    blob = Path(blob_path).read_bytes()
    with open(index_path, encoding="utf-8") as fh:
        lines = [(n, ln.strip()) for n, ln in enumerate(fh, start=1) if ln.strip()]
    if not lines:
        raise EmbeddingError(f"{index_path}: empty index file")
    dim, count = _parse_header(lines[0][1], f"{index_path}:{lines[0][0]}")
    width = 4 * dim
    vectors: dict[int, np.ndarray] = {}
    for lineno, line in lines[1:]:
        where = f"{index_path}:{lineno}"
        try:
            sid, soff = line.split("\t")
            nid, off = int(sid), int(soff)
        except ValueError:
            raise EmbeddingError(f"{where}: malformed index line") from None
        if off < 0 or off + width > len(blob):
            raise EmbeddingError(f"{where}: offset {off} out of range for node {nid}")
        if nid in vectors:
            raise EmbeddingError(f"{where}: duplicate embedding for node {nid}")
        vectors[nid] = np.frombuffer(blob, dtype="<f4", count=dim, offset=off).astype(np.float64)
    if len(vectors) != count:
        raise EmbeddingError(f"{index_path}: header says count={count}, found {len(vectors)} vectors")
    return EmbeddingStore(vectors, dim)
