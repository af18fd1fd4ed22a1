"""Window scoring and threshold policies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import gmm
from .config import TrainConfig
from .dataset import Window
from .embed import EmbeddingTable, build_matrix
from .encoder import Model, encode_batch
from .errors import ConfigError, ContractError, DataError


@dataclass(frozen=True)
class ScoredWindow:
    window: Window
    energy: float
    recon_error: float
    verdict: int | None = None
    h: tuple[float, ...] | None = None

    def score(self, field: str = "energy") -> float:
        return self.energy if field == "energy" else self.recon_error


@dataclass(frozen=True)
class ThresholdPolicy:
    mode: str = "train_quantile"
    q: float = 0.99
    rho: float | None = None
    field: str = "energy"   # "recon_error" for the no-GMM ablation

    def __post_init__(self):
        if self.mode not in ("train_quantile", "contamination"):
            raise ConfigError(f"unknown threshold mode {self.mode!r}")
        if self.mode == "train_quantile" and not 0.0 < self.q <= 1.0:
            raise ConfigError("q must lie in (0, 1]")
        if self.mode == "contamination" and (self.rho is None or not 0.0 < self.rho < 1.0):
            raise ConfigError("contamination mode needs rho in (0, 1)")
        if self.field not in ("energy", "recon_error"):
            raise ConfigError(f"unknown score field {self.field!r}")


def score_field(model: Model) -> str:
    return "energy" if model.uses_gmm else "recon_error"


def score(windows: Sequence[Window], model: Model, table: EmbeddingTable,
          chunk: int = 1024, keep_h: bool = False) -> list[ScoredWindow]:
    """Energy and reconstruction error per window, dropout off, input order kept."""
    cfg: TrainConfig = model.cfg
    if cfg.use_gmm and model.stats is None:
        raise ContractError("model has no frozen mixture statistics")
    out: list[ScoredWindow] = []
    for start in range(0, len(windows), chunk):
        part = windows[start:start + chunk]
        mats = [build_matrix(w, table) for w in part]
        h_node, err_node, order = encode_batch(mats, model.params, cfg)
        h = np.empty_like(h_node.value)
        err = np.empty(len(part))
        h[order] = h_node.value
        err[order] = err_node.value
        if cfg.use_gmm:
            energy = gmm.energy(h, model.stats)
        else:
            energy = np.zeros(len(part))
        for i, w in enumerate(part):
            out.append(ScoredWindow(w, float(energy[i]), float(err[i]),
                                    h=tuple(map(float, h[i])) if keep_h else None))
    return out


def threshold(policy: ThresholdPolicy, scored: Sequence[ScoredWindow],
              train_scores: Sequence[float] | None = None) -> tuple[float, list[ScoredWindow]]:
    """Assign verdicts; returns the threshold used and the updated windows."""
    if not scored:
        raise DataError("nothing to threshold")
    values = np.array([s.score(policy.field) for s in scored])
    if policy.mode == "train_quantile":
        if train_scores is None or len(train_scores) == 0:
            raise DataError("train_quantile thresholding needs training scores")
        thr = float(np.quantile(np.asarray(train_scores, dtype=np.float64), policy.q,
                                method="linear"))
        flags = values > thr
    else:
        n_flag = math.ceil(policy.rho * len(values) - 1e-12)
        # descending by score, stable in input order for ties
        ranked = np.lexsort((np.arange(len(values)), -values))
        flags = np.zeros(len(values), dtype=bool)
        flags[ranked[:n_flag]] = True
        thr = float(values[ranked[n_flag]]) if n_flag < len(values) else float(values.min()) - 1.0
    return thr, [replace(s, verdict=int(f)) for s, f in zip(scored, flags)]


CSV_COLUMNS = ["origin", "session_id", "label", "energy", "recon_error", "verdict"]


def dumps_scores(scored: Sequence[ScoredWindow], with_h: bool = False) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    dh = len(scored[0].h) if with_h and scored and scored[0].h else 0
    wr.writerow(CSV_COLUMNS + [f"h{i}" for i in range(dh)])
    for s in scored:
        row = [s.window.origin, s.window.session_id or "", s.window.label, repr(s.energy),
               repr(s.recon_error), "" if s.verdict is None else s.verdict]
        if dh:
            row += [repr(x) for x in s.h]
        wr.writerow(row)
    return buf.getvalue()
