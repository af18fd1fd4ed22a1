"""Sparse-attention window encoder with a reconstruction head.

Each layer is a post-norm residual block pair::

    x = norm(x + attention(x))
    x = norm(x + ffn(x))

Attention weights come from alpha-entmax over scaled dot-product scores,
the feed-forward block uses CeLU, and the final positions are mean-pooled
and projected to a low-dimensional code ``h``.  The reconstruction head
maps ``h`` back to the mean input embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .config import TrainConfig
from .entmax import entmax_node
from .errors import DataError
from .gmm import GmmStats

LN_EPS = 1e-5
CHECKPOINT_MAGIC = "MLAD-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass
class WindowCode:
    h: np.ndarray
    recon: np.ndarray
    recon_error: float


def init_params(cfg: TrainConfig, rng: np.random.Generator) -> dict[str, tc.Node]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit norm gains."""
    d, dh, dff = cfg.d, cfg.d_h, cfg.ffn_dim
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for i in range(cfg.layers):
        p = f"layer{i}."
        shapes += [(p + "W_q", (d, d)), (p + "W_k", (d, d)), (p + "W_v", (d, d)),
                   (p + "norm1.gain", (d,)), (p + "norm1.bias", (d,)),
                   (p + "W_1", (d, dff)), (p + "b_1", (dff,)),
                   (p + "W_2", (dff, d)), (p + "b_2", (d,)),
                   (p + "norm2.gain", (d,)), (p + "norm2.bias", (d,))]
    shapes += [("W_p", (d, dh)), ("b_p", (dh,)), ("W_r", (dh, d)), ("b_r", (d,)),
               ("W_h", (dh, cfg.K)), ("b_h", (cfg.K,))]
    params = {}
    for name, shape in shapes:
        leafname = name.rsplit(".", 1)[-1]
        if leafname == "gain":
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = tc.leaf(value, name=name)
    return params


def sinusoidal(l: int, d: int) -> np.ndarray:
    pos = np.arange(l)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# --------------------------------------------------------------------------
# building blocks over batches of equal-length windows: x has shape (n, l, d)


def _bias(x: tc.Node, b: tc.Node) -> tc.Node:
    return tc.add(x, tc.broadcast_to(b, x.shape))


def _dropout(x: tc.Node, rate: float, rng: np.random.Generator | None) -> tc.Node:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return tc.mul(x, tc.constant(keep))


def layer_norm(x: tc.Node, gain: tc.Node, bias: tc.Node) -> tc.Node:
    mu = tc.broadcast_to(tc.mean(x, axis=-1, keepdims=True), x.shape)
    centred = tc.sub(x, mu)
    var = tc.mean(tc.square(centred), axis=-1, keepdims=True)
    std = tc.broadcast_to(tc.sqrt(tc.add(var, tc.constant(LN_EPS))), x.shape)
    return _bias(tc.mul(tc.div(centred, std), tc.broadcast_to(gain, x.shape)), bias)


def attention(x: tc.Node, params: dict, prefix: str, cfg: TrainConfig, alpha: float,
              rng: np.random.Generator | None = None, weights_out: list | None = None) -> tc.Node:
    n, l, d = x.shape
    heads, dk = cfg.heads, d // cfg.heads
    q = tc.matmul(x, params[prefix + "W_q"])
    k = tc.matmul(x, params[prefix + "W_k"])
    v = tc.matmul(x, params[prefix + "W_v"])
    if heads > 1:
        split = lambda t: tc.transpose(tc.reshape(t, (n, l, heads, dk)), (0, 2, 1, 3))
        q, k, v = split(q), split(k), split(v)
    scores = tc.scale(tc.matmul(q, tc.transpose(k)), 1.0 / np.sqrt(dk))
    weights = entmax_node(scores, alpha)
    if weights_out is not None:
        weights_out.append(weights.value)
    out = tc.matmul(_dropout(weights, cfg.dropout, rng), v)
    if heads > 1:
        out = tc.reshape(tc.transpose(out, (0, 2, 1, 3)), (n, l, d))
    return out


def ffn(x: tc.Node, params: dict, prefix: str, cfg: TrainConfig,
        rng: np.random.Generator | None = None) -> tc.Node:
    hidden = tc.celu(_bias(tc.matmul(x, params[prefix + "W_1"]), params[prefix + "b_1"]))
    hidden = _dropout(hidden, cfg.dropout, rng)
    return _bias(tc.matmul(hidden, params[prefix + "W_2"]), params[prefix + "b_2"])


def encode_group(t: np.ndarray, params: dict, cfg: TrainConfig, alpha: float | None = None,
                 rng: np.random.Generator | None = None, weights_out: list | None = None):
    """Encode a stack of equal-length windows ``t`` (n x l x d).

    Returns graph nodes ``(h, recon_error)`` of shapes (n, d_h) and (n,).
    Passing ``rng`` switches dropout on (train mode).
    """
    alpha = cfg.alpha if alpha is None else alpha
    n, l, d = t.shape
    x = tc.constant(t + sinusoidal(l, d) if cfg.positional else t)
    for i in range(cfg.layers):
        p = f"layer{i}."
        x = layer_norm(tc.add(x, attention(x, params, p, cfg, alpha, rng, weights_out)),
                       params[p + "norm1.gain"], params[p + "norm1.bias"])
        x = layer_norm(tc.add(x, ffn(x, params, p, cfg, rng)),
                       params[p + "norm2.gain"], params[p + "norm2.bias"])
    pooled = tc.mean(x, axis=1)
    h = _bias(tc.matmul(pooled, params["W_p"]), params["b_p"])
    if cfg.recon_target == "per_position":
        codes = _bias(tc.matmul(x, params["W_p"]), params["b_p"])
        recon = _bias(tc.matmul(codes, params["W_r"]), params["b_r"])
        err = tc.mean(tc.mean(tc.square(tc.sub(recon, tc.constant(t))), axis=-1), axis=-1)
    else:
        recon = _bias(tc.matmul(h, params["W_r"]), params["b_r"])
        err = tc.mean(tc.square(tc.sub(recon, tc.constant(t.mean(axis=1)))), axis=-1)
    return h, err, recon


def encode_batch(mats: list[np.ndarray], params: dict, cfg: TrainConfig,
                 alpha: float | None = None, rng: np.random.Generator | None = None):
    """Encode windows of possibly different lengths.

    Windows are grouped by length; the returned ``order`` lists the input
    index of each output row.
    """
    groups: dict[int, list[int]] = {}
    for i, m in enumerate(mats):
        groups.setdefault(m.shape[0], []).append(i)
    hs, errs, order = [], [], []
    for length in sorted(groups):
        idx = groups[length]
        h, err, _ = encode_group(np.stack([mats[i] for i in idx]), params, cfg, alpha, rng)
        hs.append(h)
        errs.append(err)
        order += idx
    if len(hs) == 1:
        return hs[0], errs[0], np.array(order)
    return tc.concat(hs, axis=0), tc.concat(errs, axis=0), np.array(order)


def encode(t: np.ndarray, params: dict, cfg: TrainConfig, alpha: float | None = None,
           train_mode: bool = False, rng: np.random.Generator | None = None) -> WindowCode:
    if train_mode and rng is None:
        rng = np.random.default_rng(cfg.seed)
    h, err, recon = encode_group(np.asarray(t, dtype=np.float64)[None], params, cfg, alpha,
                                 rng if train_mode else None)
    return WindowCode(h.value[0].copy(), recon.value[0].copy() if recon.value.ndim == 2
                      else recon.value[0].mean(axis=0), float(err.value[0]))


# --------------------------------------------------------------------------
# checkpoint container
#
# Layout: an ASCII header followed by a binary body.
#   line 1  "MLAD-CHECKPOINT <version>"
#   line 2  "config <json object>"
#   then one line per tensor: "tensor <name> <dims joined by 'x' or 'scalar'> <offset> <count>"
#   then    "end-header"
# The body starts right after the newline ending "end-header" and holds every
# tensor's entries as little-endian IEEE-754 float64 in row-major order;
# <offset> and <count> are measured in float64 entries from the body start.


@dataclass
class Model:
    cfg: TrainConfig
    params: dict[str, tc.Node]
    stats: GmmStats | None = None

    @property
    def uses_gmm(self) -> bool:
        return self.cfg.use_gmm

    def arrays(self) -> dict[str, np.ndarray]:
        out = {name: node.value for name, node in self.params.items()}
        if self.stats is not None:
            out["gmm.phi"] = self.stats.phi
            out["gmm.mu"] = self.stats.mu
            out["gmm.sigma"] = self.stats.sigma
        return out

    def to_bytes(self) -> bytes:
        arrays = self.arrays()
        header = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
                  "config " + json.dumps(self.cfg.to_dict(), sort_keys=True)]
        offset = 0
        for name, a in arrays.items():
            dims = "x".join(map(str, a.shape)) or "scalar"
            header.append(f"tensor {name} {dims} {offset} {a.size}")
            offset += a.size
        header.append("end-header")
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
        return ("\n".join(header) + "\n").encode("ascii") + body

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<checkpoint>") -> "Model":
        marker = b"end-header\n"
        cut = blob.find(marker)
        if cut < 0:
            raise DataError(f"{source}: not a checkpoint (no header terminator)")
        lines = blob[:cut].decode("ascii").splitlines()
        magic, _, version = lines[0].partition(" ")
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{source}: not a checkpoint")
        if version != str(CHECKPOINT_VERSION):
            raise DataError(f"{source}: checkpoint version {version} but this build reads "
                            f"version {CHECKPOINT_VERSION}")
        if not lines[1].startswith("config "):
            raise DataError(f"{source}: missing config line")
        cfg = TrainConfig.from_dict(json.loads(lines[1][7:]))
        body = np.frombuffer(blob[cut + len(marker):], dtype="<f8")
        arrays = {}
        for line in lines[2:]:
            _, name, dims, off, count = line.split(" ")
            off, count = int(off), int(count)
            shape = () if dims == "scalar" else tuple(int(x) for x in dims.split("x"))
            if off + count > body.size:
                raise DataError(f"{source}: tensor {name} runs past the end of the body")
            arrays[name] = body[off:off + count].astype(np.float64).reshape(shape)
        stats = None
        if "gmm.phi" in arrays:
            stats = GmmStats(arrays.pop("gmm.phi"), arrays.pop("gmm.mu"), arrays.pop("gmm.sigma"),
                             cfg.epsilon)
        params = {name: tc.leaf(a, name=name) for name, a in arrays.items()}
        return cls(cfg, params, stats)

    @classmethod
    def load(cls, path) -> "Model":
        path = Path(path)
        if not path.exists():
            raise DataError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes(), str(path))
