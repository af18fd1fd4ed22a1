"""Labelled synthetic log corpora with planted rare-keyword anomalies.

A system is a set of message formats.  Normal traffic comes from a few
workflows, each favouring its own subset of formats.  An anomalous window
swaps a few of its lines for messages that carry rare keywords (``fatal``,
``panic`` by default) spliced into otherwise ordinary wording.
Variable fields (numbers, hex, addresses, paths, block ids) are filled at
random so the parser has real work to do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

COMPONENTS = ["kernel", "ciod", "mmcs", "rpc", "dhcpd", "sshd", "cron", "ntpd",
              "raid", "fs", "net", "sched", "mem", "power", "fan", "disk"]
VERBS = ["started", "stopped", "completed", "registered", "updated", "loaded",
         "synchronized", "allocated", "released", "connected", "closed", "verified",
         "scheduled", "received", "sent", "mounted", "flushed", "reset", "opened", "checked"]
NOUNS = ["node", "block", "packet", "session", "job", "cache", "buffer", "queue",
         "link", "socket", "partition", "thread", "task", "lease", "clock", "table",
         "interrupt", "register", "channel", "daemon", "volume", "segment", "page", "stream"]
FIELDS = ["{int}", "{hex}", "{ip}", "{path}", "{blk}"]


@dataclass
class SystemSpec:
    name: str = "A"
    n_formats: int = 40
    n_workflows: int = 4
    formats_per_workflow: int = 12
    anomaly_keywords: Sequence[str] = ("fatal", "panic")
    n_anomaly_formats: int = 6
    vocabulary: Sequence[str] = field(default_factory=lambda: COMPONENTS + VERBS + NOUNS)
    seed: int = 7


@dataclass
class SyntheticSystem:
    spec: SystemSpec
    formats: list[str]
    anomaly_formats: list[str]
    workflows: list[tuple[np.ndarray, np.ndarray]]  # (format indices, probabilities)


def _fill(fmt: str, rng: np.random.Generator) -> str:
    out = fmt
    while "{" in out:
        if "{int}" in out:
            out = out.replace("{int}", str(int(rng.integers(0, 100000))), 1)
        elif "{hex}" in out:
            out = out.replace("{hex}", "0x%06x" % int(rng.integers(0, 2 ** 24)), 1)
        elif "{ip}" in out:
            out = out.replace("{ip}", ".".join(str(int(x)) for x in rng.integers(1, 255, 4)), 1)
        elif "{path}" in out:
            out = out.replace("{path}", "/var/%s/%d" % (rng.choice(["log", "tmp", "run"]),
                                                       int(rng.integers(0, 999))), 1)
        elif "{blk}" in out:
            out = out.replace("{blk}", "blk_%d" % int(rng.integers(-2 ** 62, 2 ** 62)), 1)
        else:
            break
    return out


def _format(words: list[str], rng: np.random.Generator) -> str:
    n_words = int(rng.integers(3, 7))
    parts = list(rng.choice(words, size=n_words, replace=False))
    for _ in range(int(rng.integers(1, 3))):
        parts.insert(int(rng.integers(1, len(parts) + 1)), str(rng.choice(FIELDS)))
    return " ".join(parts)


def make_system(spec: SystemSpec) -> SyntheticSystem:
    rng = np.random.default_rng(spec.seed)
    words = list(spec.vocabulary)
    formats: list[str] = []
    seen = set()
    while len(formats) < spec.n_formats:
        f = _format(words, rng)
        key = tuple(t for t in f.split() if not t.startswith("{"))
        if key not in seen:
            seen.add(key)
            formats.append(f)
    anomaly = []
    for i in range(spec.n_anomaly_formats):
        base = formats[int(rng.integers(len(formats)))].split()
        kw = spec.anomaly_keywords[i % len(spec.anomaly_keywords)]
        base.insert(int(rng.integers(0, len(base) + 1)), kw)
        if rng.random() < 0.5:
            base.insert(int(rng.integers(0, len(base) + 1)), spec.anomaly_keywords[(i + 1) % len(spec.anomaly_keywords)])
        anomaly.append(" ".join(base))
    workflows = []
    for _ in range(spec.n_workflows):
        idx = rng.choice(len(formats), size=min(spec.formats_per_workflow, len(formats)), replace=False)
        weights = rng.dirichlet(np.ones(idx.size) * 2.0)
        workflows.append((idx, weights))
    return SyntheticSystem(spec, formats, anomaly, workflows)


def generate(system: SyntheticSystem, n_windows: int = 10000, window: int = 20,
             anomaly_rate: float = 0.05, anomalous_lines: tuple[int, int] = (1, 3),
             seed: int = 0) -> tuple[list[str], list[int]]:
    """Raw lines and per-line 0/1 labels, laid out as ``n_windows`` blocks of ``window`` lines.

    Exactly ``round(anomaly_rate * n_windows)`` blocks receive between
    ``anomalous_lines[0]`` and ``anomalous_lines[1]`` anomalous lines.
    """
    rng = np.random.default_rng(seed)
    n_anom = int(round(anomaly_rate * n_windows))
    bad = set(rng.choice(n_windows, size=n_anom, replace=False).tolist())
    lines: list[str] = []
    labels: list[int] = []
    for w in range(n_windows):
        idx, p = system.workflows[int(rng.integers(len(system.workflows)))]
        picks = rng.choice(idx, size=window, p=p)
        block = [_fill(system.formats[i], rng) for i in picks]
        lab = [0] * window
        if w in bad:
            k = int(rng.integers(anomalous_lines[0], anomalous_lines[1] + 1))
            for pos in rng.choice(window, size=k, replace=False):
                block[pos] = _fill(system.anomaly_formats[int(rng.integers(len(system.anomaly_formats)))], rng)
                lab[pos] = 1
        lines += block
        labels += lab
    return lines, labels


def shared_vocabulary_pair(share: float = 0.5, seed: int = 11) -> tuple[SystemSpec, SystemSpec]:
    """Two sibling systems whose word lists overlap by ``share``.

    Both specs use the same structural seed and equally long word lists, so
    B's formats and workflows mirror A's with A's own words renamed.  B's
    rare anomaly keywords are renamed too.
    """
    base = COMPONENTS + VERBS + NOUNS
    rng = np.random.default_rng(seed)
    n_shared = int(round(share * len(base)))
    order = rng.permutation(len(base))
    shared = [base[i] for i in order[:n_shared]]
    own_a = [base[i] for i in order[n_shared:]]
    own_b = [w + "x" for w in own_a]  # same count, disjoint spellings
    a = SystemSpec(name="A", vocabulary=shared + own_a, seed=seed)
    b = SystemSpec(name="B", vocabulary=shared + own_b, anomaly_keywords=("critical", "abort"),
                   seed=seed)
    return a, b
