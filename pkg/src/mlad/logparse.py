"""Fixed-depth parse-tree template mining (Drain).

Raw lines are masked with ordered regexes, split on whitespace, and routed
through a tree keyed first by token count and then by the leading tokens.
Each leaf holds a small group of templates; a line joins the most similar
template of its group when the similarity reaches the threshold, otherwise
it starts a new one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

WILDCARD = "<*>"
STORE_HEADER = "#mlad-templates v1"

# order matters: specific shapes must be masked before bare integers eat them
DEFAULT_MASKS: tuple[tuple[str, str], ...] = (
    (r"blk_-?\d+", WILDCARD),
    (r"(?<![\w.])\d{1,3}(?:\.\d{1,3}){3}(?::\d+)?(?![\w.])", WILDCARD),
    (r"\b0[xX][0-9a-fA-F]+\b", WILDCARD),
    (r"(?<![\w/])(?:/[\w.\-]+)+/?", WILDCARD),
    (r"(?<![\w.])[-+]?\d+(?:\.\d+)?(?![\w.])", WILDCARD),
)


@dataclass
class Template:
    key: int
    tokens: list[str]
    support_count: int = 1

    def __str__(self):
        return " ".join(self.tokens)


@dataclass
class ParseConfig:
    depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100
    masks: Sequence[tuple[str, str]] = DEFAULT_MASKS
    header_regex: str | None = None

    def __post_init__(self):
        if self.depth < 3:
            raise ConfigError("depth must be at least 3")
        if not 0.0 < self.similarity_threshold < 1.0:
            raise ConfigError("similarity_threshold must lie in (0, 1)")
        if self.max_children < 1:
            raise ConfigError("max_children must be positive")
        try:
            self._compiled = [(re.compile(p), r) for p, r in self.masks]
            self._header = re.compile(self.header_regex) if self.header_regex else None
        except re.error as exc:
            raise ConfigError(f"bad regex in parse config: {exc}") from None


def preprocess(line: str, masks: Sequence[tuple[str, str]] | ParseConfig = DEFAULT_MASKS):
    """Mask variable fields and tokenise; returns ``None`` for lines to skip."""
    if isinstance(masks, ParseConfig):
        cfg = masks
        if cfg._header is not None:
            m = cfg._header.match(line)
            if m:
                line = m.group("content") if "content" in m.re.groupindex else line[m.end():]
        compiled = cfg._compiled
    else:
        compiled = [(re.compile(p), r) for p, r in masks]
    for pattern, repl in compiled:
        line = pattern.sub(repl, line)
    tokens = line.split()
    return tokens or None


def similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """Share of positions that agree, counting a wildcard on either side as agreement."""
    if len(a) != len(b) or not a:
        return 0.0
    hits = 0
    for x, y in zip(a, b):
        if x == y or x == WILDCARD or y == WILDCARD:
            hits += 1
    return hits / len(a)


@dataclass
class _Inner:
    children: dict = field(default_factory=dict)


class ParseTree:
    """Mutable template tree; single writer."""

    def __init__(self, config: ParseConfig | None = None):
        self.config = config or ParseConfig()
        self.root = _Inner()
        self.templates: dict[int, Template] = {}

    @property
    def depth(self):
        return self.config.depth

    def _leaf_group(self, tokens: Sequence[str]) -> list[Template]:
        node = self.root.children.setdefault(len(tokens), _Inner())
        for i in range(self.depth - 2):
            tok = tokens[i] if i < len(tokens) else "<pad>"
            if tok not in node.children:
                if len(node.children) >= self.config.max_children:
                    tok = WILDCARD
            last = i == self.depth - 3
            node = node.children.setdefault(tok, [] if last else _Inner())
        return node

    def add_template(self, template: Template) -> None:
        """Insert an existing template (seeding a tree from a saved store)."""
        if template.key in self.templates:
            raise DataError(f"duplicate template key {template.key}")
        self._leaf_group(template.tokens).append(template)
        self.templates[template.key] = template

    def parse_line(self, tokens: Sequence[str]) -> tuple[int, bool]:
        """Return ``(template key, is_new)`` for a preprocessed token list."""
        if not tokens:
            raise DataError("parse_line needs at least one token")
        group = self._leaf_group(tokens)
        best, best_rank = None, None
        for tpl in group:
            sim = similarity(tpl.tokens, tokens)
            literal = sum(1 for t, u in zip(tpl.tokens, tokens) if t == u and t != WILDCARD)
            rank = (sim, literal)
            if best_rank is None or rank > best_rank:
                best, best_rank = tpl, rank
        if best is not None and best_rank[0] >= self.config.similarity_threshold:
            best.tokens = [t if t == u else WILDCARD for t, u in zip(best.tokens, tokens)]
            best.support_count += 1
            return best.key, False
        key = max(self.templates, default=-1) + 1
        tpl = Template(key=key, tokens=list(tokens))
        group.append(tpl)
        self.templates[key] = tpl
        return key, True


class TemplateStore:
    """Key-indexed templates with a line-oriented text serialisation."""

    def __init__(self, templates: Iterable[Template] = ()):
        self.templates: dict[int, Template] = {}
        for t in templates:
            if t.key in self.templates:
                raise DataError(f"duplicate template key {t.key}")
            self.templates[t.key] = t

    def __len__(self):
        return len(self.templates)

    def __iter__(self):
        return iter(sorted(self.templates.values(), key=lambda t: t.key))

    def __getitem__(self, key: int) -> Template:
        return self.templates[key]

    def __contains__(self, key):
        return key in self.templates

    def dumps(self) -> str:
        rows = [STORE_HEADER]
        rows += [f"{t.key}\t{t.support_count}\t{' '.join(t.tokens)}" for t in self]
        return "\n".join(rows) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TemplateStore":
        lines = text.splitlines()
        if not lines or lines[0].strip() != STORE_HEADER:
            raise DataError(f"template store must start with {STORE_HEADER!r}")
        out = []
        for no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"template store line {no}: expected 3 tab-separated fields")
            try:
                key, support = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"template store line {no}: non-integer key or count") from None
            out.append(Template(key, parts[2].split(" "), support))
        return cls(out)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TemplateStore":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass
class ParseResult:
    store: TemplateStore
    keys: list[int]
    line_numbers: list[int]  # 0-based index of each kept input line

    def dumps_keys(self) -> str:
        return "".join(f"{n}\t{k}\n" for n, k in zip(self.line_numbers, self.keys))


def parse_corpus(lines: Iterable[str], config: ParseConfig | None = None,
                 seed: TemplateStore | None = None) -> ParseResult:
    config = config or ParseConfig()
    tree = ParseTree(config)
    if seed is not None:
        for t in seed:
            tree.add_template(Template(t.key, list(t.tokens), t.support_count))
    keys, kept = [], []
    for no, line in enumerate(lines):
        tokens = preprocess(line, config)
        if tokens is None:
            continue
        key, _ = tree.parse_line(tokens)
        keys.append(key)
        kept.append(no)
    return ParseResult(TemplateStore(tree.templates.values()), keys, kept)


def read_lines(path) -> list[str]:
    """Read a UTF-8 corpus, naming the offending line on decode failure."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    out = []
    with path.open("rb") as fh:
        for no, raw in enumerate(fh, start=1):
            try:
                out.append(raw.decode("utf-8").rstrip("\r\n"))
            except UnicodeDecodeError as exc:
                raise DataError(f"{path}: line {no} is not valid UTF-8 ({exc.reason})") from None
    return out


def load_keys(path) -> tuple[list[int], list[int]]:
    """Read a keys file written by :meth:`ParseResult.dumps_keys`."""
    line_numbers, keys = [], []
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            a, b = line.split("\t")
            line_numbers.append(int(a))
            keys.append(int(b))
        except ValueError:
            raise DataError(f"{path}: line {no}: expected 'line_no<TAB>key'") from None
    return line_numbers, keys
