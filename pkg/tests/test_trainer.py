import numpy as np
import pytest

from mlad import gmm, trainer
from mlad import tensorcore as tc
from mlad.config import TrainConfig
from mlad.dataset import Window
from mlad.embed import build_table
from mlad.encoder import init_params
from mlad.errors import ContractError, DataError
from mlad.logparse import Template, TemplateStore


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lambda1, cfg.lambda2, cfg.lr) == (0.1, -0.005, 0.001)


def _mats(rng, n=4, l=5, d=8):
    return [rng.normal(size=(l, d)) for _ in range(n)]


def test_loss_without_mixture_terms_is_recon(tiny_cfg, rng):
    cfg = tiny_cfg.replace(lambda1=0.0, lambda2=0.0)
    p = init_params(cfg, rng)
    mats = _mats(rng)
    terms = trainer.loss_terms(mats, p, cfg)
    from mlad.encoder import encode
    want = np.mean([encode(m, p, cfg).recon_error for m in mats])
    assert float(terms["total"].value) == pytest.approx(want, abs=1e-14)


def test_perfect_reconstruction_isolates_energy(tiny_cfg, rng):
    cfg = tiny_cfg.replace(lambda1=0.1, lambda2=0.0, d_h=4)
    p = init_params(cfg, rng)
    base = rng.normal(size=(5, 8))
    mats = [base[rng.permutation(5)] for _ in range(4)]
    # collapse the encoder to a constant code and emit mean(T) exactly
    p["layer0.norm2.gain"].assign(np.zeros(8))
    p["W_p"].assign(np.zeros((8, 4)))
    p["b_p"].assign(rng.normal(size=4))
    p["W_r"].assign(np.zeros((4, 8)))
    p["b_r"].assign(base.mean(axis=0))
    terms = trainer.loss_terms(mats, p, cfg)
    assert float(terms["recon"].value) == pytest.approx(0.0, abs=1e-28)
    assert float(terms["total"].value) == pytest.approx(0.1 * float(terms["energy_raw"].value), rel=1e-14)


def test_full_loss_gradient(tiny_cfg, rng):
    cfg = tiny_cfg.replace(lambda2=0.005)
    p = init_params(cfg, rng)
    mats = _mats(rng)
    err = tc.grad_check(lambda: trainer.loss_terms(mats, p, cfg)["total"], list(p.values()))
    assert err < 1e-4


def test_adam_matches_reference_update():
    x = tc.leaf([1.0, -2.0])
    opt = trainer.Adam([x], lr=0.1)
    g = np.array([0.5, -0.25])
    opt.step([g])
    # first Adam step moves every coordinate by lr against the gradient sign
    np.testing.assert_allclose(x.value, [0.9, -1.9], atol=1e-7)


def test_clip_global_norm():
    grads, clipped = trainer.clip_global_norm([np.array([3.0, 4.0]), np.array([0.0])], 1.0)
    assert clipped
    assert np.sqrt(sum((g ** 2).sum() for g in grads)) == pytest.approx(1.0)
    same, clipped = trainer.clip_global_norm([np.array([0.3])], 1.0)
    assert not clipped and same[0][0] == 0.3


def _two_cluster(n=64, d=16):
    store = TemplateStore(Template(k, [f"tok{k}", f"grp{k // 4}", "x"]) for k in range(8))
    rng = np.random.default_rng(5)
    windows = []
    for i in range(n):
        pool = [0, 1, 2, 3] if i % 2 else [4, 5, 6, 7]
        windows.append(Window(tuple(int(k) for k in rng.choice(pool, size=6)), 0, "T"))
    return windows, build_table(store, d)


def test_training_lowers_energy():
    windows, table = _two_cluster()
    cfg = TrainConfig(d=16, d_h=4, K=2, batch=16, epochs=30, dropout=0.0, lambda2=0.005, lr=0.003)
    model, report = trainer.train(windows, cfg, table)
    assert len(report.epochs) == 30
    assert report.epochs[-1].energy < report.epochs[0].energy
    model.stats.check()


def test_training_is_bitwise_deterministic():
    windows, table = _two_cluster(32)
    cfg = TrainConfig(d=16, d_h=4, K=2, batch=8, epochs=2, dropout=0.5)
    a, _ = trainer.train(windows, cfg, table)
    b, _ = trainer.train(windows, cfg, table)
    assert a.to_bytes() == b.to_bytes()


def test_training_rejects_anomalies_and_bad_dims():
    windows, table = _two_cluster(8)
    cfg = TrainConfig(d=16, d_h=4, K=2, batch=4, epochs=1)
    with pytest.raises(ContractError):
        trainer.train(windows + [Window((0, 1), 1)], cfg, table)
    with pytest.raises(ContractError):
        trainer.loss([Window((0, 1), 1)], {}, cfg, table)
    with pytest.raises(DataError):
        trainer.train(windows, cfg.replace(d=32), table)
    with pytest.raises(DataError):
        trainer.train([], cfg, table)


def test_frozen_stats_cover_training_set():
    windows, table = _two_cluster(40)
    cfg = TrainConfig(d=16, d_h=4, K=2, batch=8, epochs=1, dropout=0.0)
    model, _ = trainer.train(windows, cfg, table)
    from mlad.embed import build_matrix
    again = trainer.freeze_stats(model, [build_matrix(w, table) for w in windows])
    assert again.sigma.tobytes() == model.stats.sigma.tobytes()
    assert abs(model.stats.phi.sum() - 1) < 1e-12


def test_train_report_text():
    windows, table = _two_cluster(16)
    _, report = trainer.train(windows, TrainConfig(d=16, d_h=4, K=2, batch=8, epochs=2), table)
    text = report.dumps()
    assert text.splitlines()[0].startswith("epoch")
    assert len([l for l in text.splitlines() if l and l[0].isdigit()]) == 2
