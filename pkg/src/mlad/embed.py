"""Template vectors and per-window embedding matrices.

Two sources are supported.  ``imported`` tables are read from a TSV written
by an external sentence embedder and are used verbatim.  ``hashed`` tables
are built in-process: every non-wildcard token is hashed to one of ``d``
buckets with a +/-1 sign, the token vectors are mean-pooled and the result is
L2-normalised.

Hashing uses BLAKE2b (``hashlib``) over the UTF-8 token: bytes 0-7 as a
little-endian integer modulo ``d`` pick the bucket and the low bit of byte 8
picks the sign, so vectors are identical on every platform and run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, LookupMissError
from .logparse import WILDCARD, Template, TemplateStore


def _bucket_sign(token: str, d: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
    bucket = int.from_bytes(digest[:8], "little") % d
    return bucket, (1.0 if digest[8] & 1 else -1.0)


def hash_embed(template: Template | Sequence[str], d: int) -> np.ndarray:
    if d < 8:
        raise ConfigError(f"hashed embeddings need d >= 8, got {d}")
    tokens = template.tokens if isinstance(template, Template) else list(template)
    words = [t for t in tokens if t != WILDCARD]
    vec = np.zeros(d)
    if not words:
        return vec
    for w in words:
        b, s = _bucket_sign(w, d)
        vec[b] += s
    vec /= len(words)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[int, np.ndarray]
    source: str = "hashed"

    def __post_init__(self):
        for k, v in self.vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (self.dim,):
                raise DataError(f"vector for key {k} has length {v.size}, expected {self.dim}")
            if not np.isfinite(v).all():
                raise DataError(f"vector for key {k} has non-finite entries")
            v.setflags(write=False)
            self.vectors[k] = v

    def __contains__(self, key):
        return key in self.vectors

    def __len__(self):
        return len(self.vectors)

    def dumps(self) -> str:
        rows = [f"#dim {self.dim}"]
        for k in sorted(self.vectors):
            rows.append(f"{k}\t" + " ".join(repr(float(x)) for x in self.vectors[k]))
        return "\n".join(rows) + "\n"

    def export(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def build_table(store: TemplateStore | Iterable[Template], d: int) -> EmbeddingTable:
    return EmbeddingTable(d, {t.key: hash_embed(t, d) for t in store}, source="hashed")


def loads_vectors(text: str, store: TemplateStore | None = None,
                  source: str = "<vectors>") -> EmbeddingTable:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#dim "):
        raise DataError(f"{source}: first line must be '#dim d'")
    try:
        dim = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise DataError(f"{source}: unparseable header {lines[0]!r}") from None
    vectors = {}
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            key_s, vals = line.split("\t")
            key = int(key_s)
            vec = np.array([float(x) for x in vals.split()])
        except ValueError:
            raise DataError(f"{source}: line {no}: unparseable row") from None
        if vec.size != dim:
            raise DataError(f"{source}: line {no}: {vec.size} values for #dim {dim}")
        vectors[key] = vec
    if store is not None:
        missing = sorted(t.key for t in store if t.key not in vectors)
        if missing:
            raise DataError(f"{source}: missing vectors for template key(s) {missing}")
    return EmbeddingTable(dim, vectors, source="imported")


def import_vectors(path, store: TemplateStore | None = None) -> EmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vector file not found: {path}")
    return loads_vectors(path.read_text(encoding="utf-8"), store, str(path))


def build_matrix(window, table: EmbeddingTable) -> np.ndarray:
    """Stack the table rows for ``window``'s keys (window object or key list)."""
    keys = window.keys if hasattr(window, "keys") else window
    try:
        return np.stack([table.vectors[k] for k in keys])
    except KeyError as exc:
        raise LookupMissError(f"template key {exc.args[0]} has no embedding "
                              "(vocabulary drift between parse and embed)") from None


def fuse_tables(tables: Mapping[str, EmbeddingTable],
                keymap: Mapping[tuple[str, int], int]) -> EmbeddingTable:
    """Re-key per-origin tables into the shared space produced by ``dataset.fuse``."""
    dims = {t.dim for t in tables.values()}
    if len(dims) != 1:
        raise DataError(f"cannot fuse tables of different dimensions {sorted(dims)}")
    vectors = {}
    for (origin, key), new in keymap.items():
        table = tables[origin]
        if key not in table.vectors:
            raise LookupMissError(f"{origin}: template key {key} has no embedding")
        vectors[new] = table.vectors[key]
    sources = {t.source for t in tables.values()}
    return EmbeddingTable(dims.pop(), vectors, sources.pop() if len(sources) == 1 else "mixed")
