import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graft import model as gm
from graft import stanhop as sh
from graft.data import SOURCES, WindowSample
from graft.errors import ConfigError, DimensionError
from graft.numerics import Tensor, shannon_entropy

from oracles import param_fd_check


def toy(switch=123, d=16, t_in=96, C=2, s=8, **kw):
    bb = sh.StanhopConfig(d_model=d, d_ff=2 * d, n_heads=2, e_layers=1, seg_len=12, pool_k=3)
    return gm.GraftConfig(backbone=bb, t_in=t_in, t_out=48, n_channels=C, text_dim=s, source_switch=switch, **kw)


def batch(cfg, B=2, seed=0, p_mask=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, cfg.t_in, cfg.n_channels))
    text = rng.normal(size=(B, cfg.n_days, 3, cfg.text_dim))
    text /= np.linalg.norm(text, axis=-1, keepdims=True)
    mask = rng.random((B, cfg.n_days, 3)) > p_mask
    y = rng.normal(size=(B, cfg.t_out))
    return x, text, mask, y


def test_source_switch_codes():
    assert gm.source_switch(0) == ()
    assert gm.source_switch(1) == ("News",)
    assert gm.source_switch(2) == ("Reddit",)
    assert gm.source_switch(3) == ("Policy",)
    assert gm.source_switch(123) == SOURCES
    for bad in (4, 12, "x", None):
        with pytest.raises(ConfigError):
            gm.source_switch(bad)
    with pytest.raises(ConfigError):
        toy(switch=7)


def test_split_branches_even_widths():
    u = np.arange(2 * 510.0).reshape(2, 510)
    parts = gm.split_branches(u, 123)
    assert list(parts) == list(SOURCES)
    assert all(p.shape == (2, 170) for p in parts.values())
    np.testing.assert_array_equal(np.concatenate(list(parts.values()), axis=-1), u)
    assert gm.split_branches(u, 0) == {}
    assert gm.split_branches(u, 2)["Reddit"].shape == (2, 510)
    # 512 is not divisible by three: refuse rather than slice unevenly
    with pytest.raises(ConfigError):
        gm.split_branches(np.zeros(512), 123)


def test_projection_bounded_by_operator_norm():
    cfg = toy()
    m = gm.GraftModel(cfg, seed=3)
    x, text, _, _ = batch(cfg, B=4)
    avail = np.ones((4, cfg.n_days, 3), bool)
    Y = m.project_text(text, avail).data
    for k, key in enumerate(("news", "reddit", "policy")):
        op = np.linalg.norm(m.store[f"text.proj.{key}"].data, 2)
        norms = np.linalg.norm(Y[:, :, k], axis=-1)
        assert np.all(np.isfinite(norms)) and norms.max() <= op + 1e-12


def test_noext_is_backbone_bit_for_bit():
    cfg = toy(switch=0)
    m = gm.GraftModel(cfg, seed=1)
    x, text, mask, _ = batch(cfg)
    a = m.forward(x, text, mask)[0].data
    b = m.backbone_forward(x).data
    assert np.array_equal(a, b)
    # same parameters, every source on but nothing available
    m123 = gm.GraftModel(toy(switch=123), store=m.store)
    c = m123.forward(x, text, np.zeros_like(mask))[0].data
    assert np.array_equal(a, c)


def test_backbone_init_shared_across_switches():
    a = gm.init_params(toy(switch=0), seed=5)
    b = gm.init_params(toy(switch=2), seed=5)
    assert a.checksum() == b.checksum()
    assert set(gm.text_param_names(a)) == {n for n in a.params if n.startswith("text.")}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_masked_entries_never_change_output(seed):
    cfg = toy()
    m = gm.GraftModel(cfg, seed=2)
    x, text, mask, _ = batch(cfg, seed=seed % 1000)
    base = m.predict(x, text, mask)
    fuzz = np.random.default_rng(seed).normal(scale=100.0, size=text.shape)
    text2 = np.where(mask[..., None], text, fuzz)
    assert np.array_equal(base, m.predict(x, text2, mask))


def test_switch_reads_only_its_source():
    cfg = toy(switch=2)
    m = gm.GraftModel(cfg, seed=4)
    x, text, mask, _ = batch(cfg, p_mask=0.0)
    pred, gammas, diag = m.forward(x, text, mask, with_diagnostics=True)
    g = diag.gamma[0]
    np.testing.assert_array_equal(g[..., 1], 1.0)
    np.testing.assert_array_equal(g[..., [0, 2]], 0.0)
    pi = diag.pi[0]
    np.testing.assert_array_equal(pi[..., 1], 1.0)
    text2 = text.copy()
    text2[:, :, [0, 2]] += 5.0
    assert np.array_equal(pred.data, m.predict(x, text2, mask))


def test_gate_and_retrieval_simplex_contracts():
    cfg = toy()
    m = gm.GraftModel(cfg, seed=6)
    x, text, mask, _ = batch(cfg, B=3, seed=2, p_mask=0.4)
    _, _, diag = m.forward(x, text, mask, with_diagnostics=True)
    g, pi, tday = diag.gamma[0], diag.pi[0], diag.token_day[0]
    any_av = mask.any(-1)
    assert np.all(g >= 0)
    np.testing.assert_allclose(g.sum(-1)[any_av], 1.0, atol=1e-12)
    assert np.all(g[~mask] == 0)
    assert np.all(pi >= 0)
    tok_av = any_av[:, tday]  # B, T
    np.testing.assert_allclose(pi.sum(-1)[tok_av], 1.0, atol=1e-12)
    assert np.all(pi.sum(-1)[~tok_av] == 0)
    masked_tok = ~mask[:, tday][:, :, None, :]
    assert np.all(pi[np.broadcast_to(masked_tok, pi.shape)] == 0)


def test_gate_single_source_uniform_and_sparse():
    cfg = toy()
    m = gm.GraftModel(cfg, seed=7)
    x, text, _, _ = batch(cfg, B=2)
    one = np.zeros((2, cfg.n_days, 3), bool)
    one[:, :, 2] = True
    _, _, diag = m.forward(x, text, one, with_diagnostics=True)
    np.testing.assert_array_equal(diag.gamma[0], np.broadcast_to([0.0, 0.0, 1.0], diag.gamma[0].shape))
    # only entry of its day: the retrieval weight is exactly 1
    np.testing.assert_array_equal(diag.pi[0][..., 2], 1.0)

    m.store["text.l0.U"].data = np.zeros_like(m.store["text.l0.U"].data)
    two = np.ones((2, cfg.n_days, 3), bool)
    two[:, 0, 1] = False
    _, _, diag = m.forward(x, text, two, with_diagnostics=True)
    np.testing.assert_allclose(diag.gamma[0][:, 0], np.broadcast_to([0.5, 0.0, 0.5], (2, 3)), atol=1e-12)
    np.testing.assert_allclose(diag.gamma[0][:, 1], 1 / 3, atol=1e-12)

    sparse_cfg = toy(gate_alpha=2.0)
    ms = gm.GraftModel(sparse_cfg, store=m.store)
    ms.store["text.l0.U"].data = 50.0 * np.random.default_rng(0).normal(size=m.store["text.l0.U"].shape)
    _, _, diag = ms.forward(x, text, np.ones_like(two), with_diagnostics=True)
    assert (diag.gamma[0] == 0).any()


def test_retrieval_saturates_on_aligned_key():
    # large beta, one value row aligned with the query direction: one-hot weights
    from graft.hopfield import gsh_attention
    R = np.zeros((1, 1, 4))
    R[0, 0, 0] = 1.0
    Y = np.eye(4)[None, :3]
    I = np.eye(4)
    _, pi = gsh_attention(R, Y, I, I, I, beta=1e3, alpha=1.5, return_weights=True)
    np.testing.assert_array_equal(pi[0, 0], [1.0, 0.0, 0.0])


def test_inference_deterministic_and_shapes():
    cfg = toy()
    m = gm.GraftModel(cfg, seed=8)
    x, text, mask, _ = batch(cfg)
    a = m.predict(x, text, mask)
    assert a.shape == (2, 48)
    assert np.array_equal(a, m.predict(x, text, mask))
    with pytest.raises(DimensionError):
        m.predict(x[:, :48], text, mask)
    with pytest.raises(DimensionError):
        m.predict(x, text, mask[:, :1])


def test_loss_identities():
    y = np.array([[1.0, 2.0, 4.0]])
    pred = Tensor(np.array([[2.0, 2.0, 1.0]]))
    mse = (1 + 0 + 9) / 3
    assert gm.graft_loss(pred, y, (), 0.0, 0.0).data == pytest.approx(mse, abs=1e-15)
    mae = (1 + 0 + 3) / 3
    assert gm.pinball(pred, y, 0.5).data == pytest.approx(mae / 2, abs=1e-15)
    g = Tensor(np.array([[[0.5, 0.5, 0.0], [0.2, 0.3, 0.5]]]))
    valid = np.array([[True, True]])
    h = shannon_entropy(g, axis=-1).data.mean()
    exact = gm.graft_loss(Tensor(y.copy()), y, [(g, valid)], 0.1, 0.01)
    assert exact.data == pytest.approx(-0.01 * h, abs=1e-15)
    flipped = gm.graft_loss(Tensor(y.copy()), y, [(g, valid)], 0.1, 0.01, entropy_sign=1.0)
    assert flipped.data == pytest.approx(0.01 * h, abs=1e-15)
    # days without any source are left out of the entropy average
    part = gm.gate_entropy([(g, np.array([[True, False]]))]).data
    assert part == pytest.approx(np.log(2), abs=1e-15)
    with pytest.raises(DimensionError):
        gm.graft_loss(pred, y[:, :2])


def test_pinball_asymmetry():
    y = np.zeros((1, 2))
    under = Tensor(np.full((1, 2), -1.0))
    over = Tensor(np.full((1, 2), 1.0))
    assert gm.pinball(under, y, 0.9).data == pytest.approx(0.9)
    assert gm.pinball(over, y, 0.9).data == pytest.approx(0.1)


def test_full_model_gradient_toy():
    cfg = toy(C=2, s=6)
    m = gm.GraftModel(cfg, seed=9)
    x, text, mask, y = batch(cfg, B=1, seed=3, p_mask=0.3)

    def loss():
        return gm.model_loss(m, x, y, text, mask)[0]

    errs = param_fd_check(loss, m.store, max_entries=3)
    assert max(errs.values()) < 1e-4, max(errs.items(), key=lambda kv: kv[1])


def test_export_diagnostics(tmp_path):
    cfg = toy()
    m = gm.GraftModel(cfg, seed=10)
    x, text, mask, _ = batch(cfg)
    _, _, diag = m.forward(x, text, mask, with_diagnostics=True)
    day = np.datetime64("2021-03-01")
    samples = [WindowSample("R1", x[b], np.zeros(48), text[b], mask[b], day + b, day + b + 1, day + b + 2)
               for b in range(2)]
    pi_path, g_path = gm.export_diagnostics(diag, samples, tmp_path)
    rows = list(csv.reader(pi_path.open()))
    assert rows[0] == ["region", "date", "slot", "source", "weight"]
    assert len(rows) == 1 + 2 * cfg.t_in * 3
    g_rows = list(csv.reader(g_path.open()))
    assert g_rows[0] == ["region", "date", "gamma_news", "gamma_reddit", "gamma_policy"]
    assert len(g_rows) == 1 + 2 * cfg.n_days
    for r in g_rows[1:]:
        s = sum(float(v) for v in r[2:])
        assert s == pytest.approx(1.0) or s == 0.0
