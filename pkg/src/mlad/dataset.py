"""From per-line template keys to labelled windows, and from windows to splits."""

from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError

log = logging.getLogger(__name__)

NORMAL, ANOMALOUS = 0, 1
MAX_SESSION_LEN = 512


@dataclass(frozen=True)
class LogRecord:
    index: int
    template_key: int
    label: int = NORMAL
    session_id: str | None = None
    text: str | None = None


@dataclass(frozen=True)
class Window:
    keys: tuple[int, ...]
    label: int
    origin: str = ""
    session_id: str | None = None

    def __len__(self):
        return len(self.keys)


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    mode: str = "sliding"
    window_size: int = 20

    def __post_init__(self):
        if self.mode not in ("sliding", "session"):
            raise ConfigError(f"unknown window mode {self.mode!r}")
        if self.window_size < 1 or (self.mode == "sliding" and self.window_size < 2):
            raise ConfigError("sliding windows need window_size >= 2")


def make_records(keys: Sequence[int], labels: Sequence[int] | None = None,
                 texts: Sequence[str] | None = None,
                 indices: Sequence[int] | None = None) -> list[LogRecord]:
    if labels is not None and len(labels) != len(keys):
        raise DataError(f"labels/keys misaligned: {len(labels)} labels for {len(keys)} keys")
    if texts is not None and len(texts) != len(keys):
        raise DataError(f"texts/keys misaligned: {len(texts)} lines for {len(keys)} keys")
    return [
        LogRecord(index=indices[i] if indices is not None else i, template_key=int(k),
                  label=int(labels[i]) if labels is not None else NORMAL,
                  text=texts[i] if texts is not None else None)
        for i, k in enumerate(keys)
    ]


def sessionize(records: Iterable[LogRecord], id_pattern: str) -> tuple[list[LogRecord], int]:
    """Tag records with the first ID ``id_pattern`` finds in their text.

    Returns the tagged records and the number dropped for carrying no ID.
    """
    rx = re.compile(id_pattern)
    out, dropped = [], 0
    for r in records:
        if r.text is None:
            raise ContractError("sessionize needs records that carry their raw text")
        m = rx.search(r.text)
        if m is None:
            dropped += 1
            continue
        out.append(replace(r, session_id=m.group(1) if rx.groups else m.group(0)))
    if not out:
        raise ConfigError(f"session pattern {id_pattern!r} matched no record")
    if dropped:
        log.warning("sessionize: dropped %d record(s) without a session id", dropped)
    return out, dropped


def apply_session_labels(records: Iterable[LogRecord], labels: Mapping[str, int]) -> list[LogRecord]:
    """Copy per-session labels (HDFS style) onto every record of the session."""
    out = []
    for r in records:
        if r.session_id not in labels:
            raise DataError(f"no label for session {r.session_id!r}")
        out.append(replace(r, label=int(labels[r.session_id])))
    return out


def windowize(records: Sequence[LogRecord], spec: SplitSpec, origin: str = "") -> list[Window]:
    if not records:
        return []
    if spec.mode == "sliding":
        if any(r.session_id is not None for r in records):
            raise ContractError("sliding mode expects records without session ids")
        out = []
        for start in range(0, len(records), spec.window_size):
            chunk = records[start:start + spec.window_size]
            if len(chunk) < 2:
                continue
            out.append(Window(tuple(r.template_key for r in chunk),
                              int(any(r.label == ANOMALOUS for r in chunk)), origin))
        return out
    groups: dict[str, list[LogRecord]] = {}
    for r in records:
        if r.session_id is None:
            raise ContractError("session mode expects every record to carry a session id")
        groups.setdefault(r.session_id, []).append(r)
    out, short = [], 0
    for sid, chunk in groups.items():
        if len(chunk) < 2:
            short += 1
            continue
        chunk = chunk[:MAX_SESSION_LEN]
        out.append(Window(tuple(r.template_key for r in chunk),
                          int(any(r.label == ANOMALOUS for r in chunk)), origin, sid))
    if short:
        log.warning("windowize: skipped %d single-record session(s)", short)
    return out


def split(windows: Sequence[Window], seed: int = 0) -> tuple[list[Window], list[Window]]:
    """All anomalies plus as many seeded-random normals form the test set."""
    normal = [i for i, w in enumerate(windows) if w.label == NORMAL]
    anomalous = [i for i, w in enumerate(windows) if w.label == ANOMALOUS]
    if len(normal) < len(anomalous):
        raise DataError(f"cannot balance test set: {len(normal)} normal < {len(anomalous)} anomalous windows")
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(normal), size=len(anomalous), replace=False).tolist())
    test_idx = sorted(anomalous + [normal[j] for j in picked])
    train = [windows[normal[j]] for j in range(len(normal)) if j not in picked]
    return train, [windows[i] for i in test_idx]


def fuse(datasets: Mapping[str, Sequence[Window]], seed: int = 0
         ) -> tuple[list[Window], dict[tuple[str, int], int]]:
    """Merge per-system window sets into one key space and shuffle.

    Keys are namespaced by origin: ``(origin, key)`` pairs receive fresh
    integer keys.  Returns the fused windows and that mapping.
    """
    keymap: dict[tuple[str, int], int] = {}
    fused = []
    for name, windows in datasets.items():
        for w in windows:
            if w.origin and w.origin != name:
                raise DataError(f"window tagged {w.origin!r} listed under {name!r}")
        for k in sorted({k for w in windows for k in w.keys}):
            if (name, k) in keymap:
                raise RuntimeError(f"namespace collision for ({name!r}, {k})")
            keymap[(name, k)] = len(keymap)
        fused += [Window(tuple(keymap[(name, k)] for k in w.keys), w.label, name, w.session_id)
                  for w in windows]
    order = np.random.default_rng(seed).permutation(len(fused))
    return [fused[i] for i in order], keymap


def origin_counts(windows: Iterable[Window]) -> dict[str, int]:
    return dict(Counter(w.origin for w in windows))


# --------------------------------------------------------------------------
# file formats


def dumps_windows(windows: Iterable[Window]) -> str:
    rows = []
    for w in windows:
        row = f"{w.origin}\t{w.label}\t{','.join(map(str, w.keys))}"
        if w.session_id is not None:
            row += f"\t{w.session_id}"
        rows.append(row)
    return "".join(r + "\n" for r in rows)


def loads_windows(text: str, source: str = "<windows>") -> list[Window]:
    out = []
    for no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            if len(parts) not in (3, 4):
                raise ValueError
            keys = tuple(int(k) for k in parts[2].split(","))
            label = int(parts[1])
            if label not in (NORMAL, ANOMALOUS):
                raise ValueError
        except ValueError:
            raise DataError(f"{source}: line {no}: expected origin<TAB>label<TAB>keys") from None
        out.append(Window(keys, label, parts[0], parts[3] if len(parts) == 4 else None))
    return out


def save_windows(windows: Iterable[Window], path) -> None:
    Path(path).write_text(dumps_windows(windows), encoding="utf-8")


def load_windows(path) -> list[Window]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"windows file not found: {path}")
    return loads_windows(path.read_text(encoding="utf-8"), str(path))


_LABEL_WORDS = {"0": NORMAL, "1": ANOMALOUS, "normal": NORMAL, "anomaly": ANOMALOUS,
                "anomalous": ANOMALOUS, "-": NORMAL}


def _label(value: str, where: str) -> int:
    try:
        return _LABEL_WORDS[value.strip().lower()]
    except KeyError:
        raise DataError(f"{where}: unrecognised label {value!r}") from None


def load_line_labels(path) -> list[int]:
    """One label per raw corpus line (0/1)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"labels file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    return [_label(v, f"{path}:{i}") for i, v in enumerate(lines, start=1)]


def load_session_labels(path) -> dict[str, int]:
    """HDFS-style ``block_id,label`` CSV; a header row is tolerated."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"labels file not found: {path}")
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{no}: expected block_id,label")
            if no == 1 and row[1].strip().lower() == "label":
                continue
            out[row[0].strip()] = _label(row[1], f"{path}:{no}")
    return out
