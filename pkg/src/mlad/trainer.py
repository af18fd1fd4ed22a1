"""Joint training of the encoder and the mixture head.

The objective per batch of N normal windows is::

    mean(recon_error) + lambda1 * mean(energy) + lambda2 * cov_penalty

with the mixture statistics re-estimated from the batch itself.  Parameters
are updated with Adam (0.9 / 0.999 / 1e-8) after clipping the global
gradient norm.  Once training ends the mixture statistics are frozen from a
dropout-free pass over the whole training set.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gmm
from . import tensorcore as tc
from .config import TrainConfig
from .dataset import ANOMALOUS, Window
from .embed import EmbeddingTable, build_matrix
from .encoder import Model, encode_batch, init_params
from .errors import ContractError, DataError, NumericDomainError

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    recon: float
    energy: float
    penalty: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    clipped_steps: int = 0
    checkpoint: str | None = None

    def dumps(self) -> str:
        rows = ["epoch\tloss\trecon\tenergy\tpenalty\tseconds"]
        rows += [f"{e.epoch}\t{e.loss!r}\t{e.recon!r}\t{e.energy!r}\t{e.penalty!r}\t{e.seconds:.3f}"
                 for e in self.epochs]
        rows.append(f"# epochs: {len(self.epochs)}")
        if self.epochs:
            rows.append(f"# final_loss: {self.epochs[-1].loss!r}")
        rows.append(f"# clipped_steps: {self.clipped_steps}")
        if self.checkpoint:
            rows.append(f"# checkpoint: {self.checkpoint}")
        return "\n".join(rows) + "\n"


class Adam:
    def __init__(self, params: Sequence[tc.Node], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.assign(p.value - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], bool]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        return [g * (max_norm / norm) for g in grads], True
    return grads, False


def loss_terms(mats: Sequence[np.ndarray], params: dict, cfg: TrainConfig,
               rng: np.random.Generator | None = None) -> dict[str, tc.Node]:
    """Build the three objective terms (already weighted) and their sum."""
    stage = "reconstruction"
    try:
        h, err, _ = encode_batch(list(mats), params, cfg, rng=rng)
        terms = {"recon": tc.mean(err)}
        if cfg.use_gmm and (cfg.lambda1 != 0.0 or cfg.lambda2 != 0.0):
            stage = "energy"
            y = gmm.membership(h, params["W_h"], params["b_h"], cfg.gate_alpha)
            est = gmm.estimate_graph(h, y, cfg.epsilon)
            e = gmm.energy_graph(h, est.phi, est.mu, est.sigma, labels=est.active)
            terms["energy_raw"] = tc.mean(e)
            terms["energy"] = tc.scale(terms["energy_raw"], cfg.lambda1)
            stage = "penalty"
            terms["penalty_raw"] = gmm.cov_penalty_graph(est.sigma)
            terms["penalty"] = tc.scale(terms["penalty_raw"], cfg.lambda2)
            stage = "total"
            terms["total"] = tc.add(tc.add(terms["recon"], terms["energy"]), terms["penalty"])
        else:
            terms["total"] = terms["recon"]
    except NumericDomainError as exc:
        raise NumericDomainError(f"non-finite or undefined {stage} term: {exc}") from None
    return terms


def loss(batch: Sequence[Window], params: dict, cfg: TrainConfig, table: EmbeddingTable,
         rng: np.random.Generator | None = None) -> tc.Node:
    if any(w.label == ANOMALOUS for w in batch):
        raise ContractError("training batches must contain normal windows only")
    return loss_terms([build_matrix(w, table) for w in batch], params, cfg, rng)["total"]


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        idx = order[start:start + size]
        if idx.size >= 2:
            yield idx


def freeze_stats(model: Model, mats: Sequence[np.ndarray], chunk: int = 1024) -> gmm.GmmStats:
    """Mixture statistics over the full set, dropout off."""
    cfg = model.cfg
    hs = []
    for start in range(0, len(mats), chunk):
        part = list(mats[start:start + chunk])
        h, _, order = encode_batch(part, model.params, cfg)
        out = np.empty_like(h.value)
        out[order] = h.value
        hs.append(out)
    hmat = np.concatenate(hs)
    p = model.params
    y = gmm.membership(tc.constant(hmat), tc.constant(p["W_h"].value),
                       tc.constant(p["b_h"].value), cfg.gate_alpha).value
    return gmm.estimate(hmat, y, cfg.epsilon)


def train(windows: Sequence[Window], cfg: TrainConfig, table: EmbeddingTable,
          progress=None) -> tuple[Model, TrainReport]:
    if not windows:
        raise DataError("empty training set")
    if any(w.label == ANOMALOUS for w in windows):
        raise ContractError("training set contains anomalous windows")
    if table.dim != cfg.d:
        raise DataError(f"embedding dim {table.dim} does not match config d={cfg.d}")
    if len(windows) < 2 * cfg.batch:
        log.info("only %d training windows for batch size %d", len(windows), cfg.batch)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, rng)
    model = Model(cfg, params)
    mats = [build_matrix(w, table) for w in windows]
    plist = list(params.values())
    opt = Adam(plist, cfg.lr)
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(4)
        steps = 0
        for idx in _batches(len(mats), cfg.batch, rng):
            terms = loss_terms([mats[i] for i in idx], params, cfg, rng)
            tc.zero_grads(plist)
            tc.backward(terms["total"])
            grads, clipped = clip_global_norm([p.grad for p in plist], cfg.clip_norm)
            report.clipped_steps += clipped
            opt.step(grads)
            sums += [float(terms["total"].value), float(terms["recon"].value),
                     float(terms["energy_raw"].value) if "energy_raw" in terms else 0.0,
                     float(terms["penalty_raw"].value) if "penalty_raw" in terms else 0.0]
            steps += 1
        if steps == 0:
            raise DataError("no batch of at least two windows could be formed")
        mean = sums / steps
        if not np.isfinite(mean).all():
            raise NumericDomainError(f"non-finite loss at epoch {epoch}")
        stats = EpochStats(epoch, *map(float, mean), time.perf_counter() - t0)
        report.epochs.append(stats)
        log.info("epoch %d loss=%.6f recon=%.6f energy=%.4f penalty=%.4f",
                 epoch, stats.loss, stats.recon, stats.energy, stats.penalty)
        if progress is not None:
            progress(stats)
    if report.clipped_steps:
        log.info("gradient norm clipped on %d step(s)", report.clipped_steps)
    if cfg.use_gmm:
        model.stats = freeze_stats(model, mats)
    return model, report
