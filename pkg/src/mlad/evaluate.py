"""Metrics and experiment protocols: single system, fused systems, transfer,
component ablations and alpha sweeps."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Sequence as SequenceABC
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import dataset, detect, trainer
from .config import TrainConfig
from .dataset import ANOMALOUS, Window
from .embed import EmbeddingTable, fuse_tables
from .encoder import Model
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

ALPHA_GRID = (1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6)
ABLATIONS = ("none", "no_entmax", "no_gmm")
KINDS = ("single", "fused", "transfer", "ablation", "alpha_sweep")


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()


def metrics(verdicts: Sequence[int], labels: Sequence[int]) -> Metrics:
    if len(verdicts) != len(labels):
        raise DataError(f"{len(verdicts)} verdicts for {len(labels)} labels")
    v = np.asarray(verdicts, dtype=int)
    y = np.asarray(labels, dtype=int)
    tp = int(np.sum((v == 1) & (y == 1)))
    fp = int(np.sum((v == 1) & (y == 0)))
    fn = int(np.sum((v == 0) & (y == 1)))
    tn = int(np.sum((v == 0) & (y == 0)))
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1")
    return Metrics(tp, fp, fn, tn, precision, recall, f1, tuple(flags))


# --------------------------------------------------------------------------
# data access auditing


class AuditedWindows(SequenceABC):
    """Read-only window list that counts element reads."""

    def __init__(self, windows: Sequence[Window]):
        self._windows = list(windows)
        self.reads = 0

    def __len__(self):
        return len(self._windows)

    def __getitem__(self, i):
        out = self._windows[i]
        self.reads += len(out) if isinstance(i, slice) else 1
        return out

    def __iter__(self):
        for w in self._windows:
            self.reads += 1
            yield w


@dataclass
class Corpus:
    """One system's windows plus the embedding table covering its keys."""
    name: str
    windows: Sequence[Window]
    table: EmbeddingTable


@dataclass
class ExperimentSpec:
    kind: str
    train_sets: Sequence[str]
    test_sets: Sequence[str] = ()
    ablations: Sequence[str] = ("none",)
    alpha_grid: Sequence[float] = ALPHA_GRID
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.train_sets:
            raise ConfigError("experiment needs at least one training set")
        if self.kind == "transfer":
            if not self.test_sets:
                raise ConfigError("transfer needs target test sets")
            overlap = set(self.train_sets) & set(self.test_sets)
            if overlap:
                raise ConfigError(f"transfer source and target overlap: {sorted(overlap)}")
        bad = set(self.ablations) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation(s) {sorted(bad)}")
        if self.kind == "alpha_sweep" and not self.alpha_grid:
            raise ConfigError("alpha sweep needs a grid")


@dataclass
class ReportRow:
    experiment: str
    train_set: str
    test_set: str
    alpha: float
    ablation: str
    metrics: Metrics
    threshold: float
    seed: int


@dataclass
class RunScores:
    label: str
    scored: list[detect.ScoredWindow]
    field: str


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)
    runs: list[RunScores] = field(default_factory=list)
    target_reads_during_training: dict[str, int] = field(default_factory=dict)
    models: list[Model] = field(default_factory=list)

    COLUMNS = ("experiment", "train_set", "test_set", "alpha", "ablation",
               "precision", "recall", "f1", "threshold", "seed")

    def dumps_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.COLUMNS)
        for r in self.rows:
            m = r.metrics
            wr.writerow([r.experiment, r.train_set, r.test_set, repr(r.alpha), r.ablation,
                         f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}",
                         repr(r.threshold), r.seed])
        return buf.getvalue()

    def summary(self) -> str:
        lines = []
        for r in self.rows:
            m = r.metrics
            note = f"  (degenerate: {', '.join(m.degenerate)})" if m.degenerate else ""
            lines.append(f"{r.experiment:<12} {r.train_set}->{r.test_set:<10} alpha={r.alpha:<4g} "
                         f"{r.ablation:<9} P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}{note}")
        for name, n in self.target_reads_during_training.items():
            lines.append(f"target {name}: {n} window read(s) during training")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------


def _variant(cfg: TrainConfig, ablation: str, alpha: float | None = None) -> TrainConfig:
    if alpha is not None:
        cfg = cfg.replace(alpha=alpha)
    if ablation == "no_entmax":
        cfg = cfg.replace(alpha=1.0, membership_alpha=1.0 if cfg.membership_alpha else 0.0)
    elif ablation == "no_gmm":
        cfg = cfg.replace(use_gmm=False, lambda1=0.0, lambda2=0.0)
    return cfg


def _decide(model: Model, scored, policy: str, q: float, train_windows, table):
    fld = detect.score_field(model)
    if policy == "contamination":
        rho = float(np.mean([s.window.label == ANOMALOUS for s in scored]))
        if rho <= 0.0 or rho >= 1.0:
            raise DataError("contamination thresholding needs a test set with both classes")
        return detect.threshold(detect.ThresholdPolicy("contamination", rho=rho, field=fld), scored)
    train_scores = [s.score(fld) for s in detect.score(train_windows, model, table)]
    return detect.threshold(detect.ThresholdPolicy("train_quantile", q=q, field=fld),
                            scored, train_scores)


def _fit_and_score(train_w, test_w, table, cfg, policy, q, keep_h=False):
    model, _ = trainer.train(train_w, cfg, table)
    scored = detect.score(test_w, model, table, keep_h=keep_h)
    thr, decided = _decide(model, scored, policy, q, train_w, table)
    return model, thr, decided


def _row(kind, train_name, test_name, cfg, ablation, decided, thr) -> ReportRow:
    m = metrics([s.verdict for s in decided], [s.window.label for s in decided])
    return ReportRow(kind, train_name, test_name, cfg.alpha, ablation, m, thr, cfg.seed)


def run_experiment(spec: ExperimentSpec, data: Mapping[str, Corpus], cfg: TrainConfig,
                   policy: str = "contamination", q: float = 0.99, split_seed: int | None = None,
                   keep_h: bool = False, keep_models: bool = False) -> ExperimentReport:
    """Train and score according to ``spec``; one report row per (train, test, variant)."""
    for name in list(spec.train_sets) + list(spec.test_sets):
        if name not in data:
            raise ConfigError(f"experiment references unknown dataset {name!r}")
    if policy not in ("contamination", "train_quantile"):
        raise ConfigError(f"unknown threshold policy {policy!r}")
    seed = cfg.seed if split_seed is None else split_seed
    kind = spec.kind
    label = spec.name or kind
    report = ExperimentReport()

    if kind == "fused":
        fused, keymap = dataset.fuse({n: data[n].windows for n in spec.train_sets}, seed)
        table = fuse_tables({n: data[n].table for n in spec.train_sets}, keymap)
        train_w, test_w = dataset.split(fused, seed)
        model, thr, decided = _fit_and_score(train_w, test_w, table, cfg, policy, q, keep_h)
        fused_name = "+".join(spec.train_sets)
        report.rows.append(_row(label, fused_name, fused_name, cfg, "none", decided, thr))
        for origin in spec.train_sets:
            part = [s for s in decided if s.window.origin == origin]
            if part:
                report.rows.append(_row(label, fused_name, origin, cfg, "none", part, thr))
        report.runs.append(RunScores(f"{label}:{fused_name}", decided, detect.score_field(model)))
        if keep_models:
            report.models.append(model)
        return report

    if kind == "transfer":
        source = spec.train_sets[0] if len(spec.train_sets) == 1 else None
        if source is None:
            raise ConfigError("transfer trains on exactly one source system")
        targets = {n: AuditedWindows(data[n].windows) for n in spec.test_sets}
        train_w, _ = dataset.split(list(data[source].windows), seed)
        model, _ = trainer.train(train_w, cfg, data[source].table)
        for n, audited in targets.items():
            report.target_reads_during_training[n] = audited.reads
        if keep_models:
            report.models.append(model)
        for n, audited in targets.items():
            _, test_w = dataset.split(list(audited), seed)
            scored = detect.score(test_w, model, data[n].table, keep_h=keep_h)
            thr, decided = _decide(model, scored, policy, q, train_w, data[source].table)
            report.rows.append(_row(label, source, n, cfg, "none", decided, thr))
            report.runs.append(RunScores(f"{label}:{source}->{n}", decided, detect.score_field(model)))
        return report

    # single / ablation / alpha_sweep all train and test within each system
    if kind == "alpha_sweep":
        variants = [(_variant(cfg, "none", a), "none") for a in spec.alpha_grid]
    elif kind == "ablation":
        variants = [(_variant(cfg, ab), ab) for ab in spec.ablations]
    else:
        variants = [(cfg, "none")]
    for name in spec.train_sets:
        corpus = data[name]
        train_w, test_w = dataset.split(list(corpus.windows), seed)
        for vcfg, ablation in variants:
            model, thr, decided = _fit_and_score(train_w, test_w, corpus.table, vcfg, policy, q, keep_h)
            report.rows.append(_row(label, name, name, vcfg, ablation, decided, thr))
            origins = sorted({s.window.origin for s in decided})
            if len(origins) > 1:
                for origin in origins:
                    part = [s for s in decided if s.window.origin == origin]
                    report.rows.append(_row(label, name, origin, vcfg, ablation, part, thr))
            report.runs.append(RunScores(f"{label}:{name}:alpha={vcfg.alpha:g}:{ablation}",
                                         decided, detect.score_field(model)))
            if keep_models:
                report.models.append(model)
    return report
