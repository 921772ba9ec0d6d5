"""
STanHop encoder: segment embedding, TimeGSH, SeriesGSH with prototype pooling,
Plug/Tune memory plugins and multi-resolution coarse-graining.

Representations are (B, T, C, D): batch, time tokens, channels, features.
Parameters live in a :class:`ParamStore` under dotted prefixes; each function
reads what it needs by name.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .hopfield import gsh_attention
from .numerics import (
    ParamStore, Tensor, add, as_tensor, concat, dropout, gelu, layer_norm, linear,
    matmul, reshape, transpose,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StanhopConfig:
    d_model: int = 32
    d_ff: int = 64
    n_heads: int = 2
    e_layers: int = 1
    dropout: float = 0.0
    seg_len: int = 12
    pool_k: int = 4
    coarsen_stride: int = 1
    alpha: float = 1.5
    beta: float | None = None  # None: 1/sqrt(d_head)

    def __post_init__(self):
        if self.d_model < 1 or self.d_ff < 1 or self.e_layers < 1:
            raise ConfigError("d_model, d_ff and e_layers must be positive")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.seg_len < 1 or self.pool_k < 1 or self.coarsen_stride < 1:
            raise ConfigError("seg_len, pool_k and coarsen_stride must be ≥ 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 1.0 <= self.alpha <= 2.0:
            raise ConfigError("alpha must lie in [1, 2]")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def attn_beta(self) -> float:
        return float(self.beta) if self.beta is not None else 1.0 / np.sqrt(self.d_head)

    def n_tokens(self, t_in: int) -> int:
        if t_in % self.seg_len:
            raise ConfigError(f"seg_len={self.seg_len} does not divide T_in={t_in}")
        return t_in // self.seg_len

    def tokens_after(self, t_in: int) -> int:
        t = self.n_tokens(t_in)
        for _ in range(self.e_layers):
            t = t // 2 if t >= 2 else t
        return t


@dataclass
class Ctx:
    """Per-call state: dropout rng and mode."""
    rng: np.random.Generator | None = None
    training: bool = False


def _glorot(rng, fan_in, fan_out):
    return rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / (fan_in + fan_out))


# -- parameter builders ---------------------------------------------------------

def init_gsh(store: ParamStore, prefix: str, d_q: int, d_mem: int, d: int, rng) -> None:
    store.add(f"{prefix}.wq", _glorot(rng, d_q, d))
    store.add(f"{prefix}.wk", _glorot(rng, d_mem, d))
    store.add(f"{prefix}.wv", _glorot(rng, d_mem, d))


def init_ln(store: ParamStore, prefix: str, d: int) -> None:
    store.add(f"{prefix}.g", np.ones(d))
    store.add(f"{prefix}.b", np.zeros(d))


def init_ffn(store: ParamStore, prefix: str, d: int, d_ff: int, rng) -> None:
    store.add(f"{prefix}.w1", _glorot(rng, d, d_ff))
    store.add(f"{prefix}.b1", np.zeros(d_ff))
    store.add(f"{prefix}.w2", _glorot(rng, d_ff, d))
    store.add(f"{prefix}.b2", np.zeros(d))


def init_block(store: ParamStore, prefix: str, cfg: StanhopConfig, rng) -> None:
    D = cfg.d_model
    init_gsh(store, f"{prefix}.time", D, D, D, rng)
    init_ln(store, f"{prefix}.time.ln1", D)
    init_ffn(store, f"{prefix}.time.ffn", D, cfg.d_ff, rng)
    init_ln(store, f"{prefix}.time.ln2", D)
    store.add(f"{prefix}.series.proto", rng.normal(size=(cfg.pool_k, D)) / np.sqrt(D))
    init_gsh(store, f"{prefix}.series.pool", D, D, D, rng)
    init_gsh(store, f"{prefix}.series.unpool", D, D, D, rng)
    init_ln(store, f"{prefix}.series.ln1", D)
    init_ffn(store, f"{prefix}.series.ffn", D, cfg.d_ff, rng)
    init_ln(store, f"{prefix}.series.ln2", D)
    init_ln(store, f"{prefix}.out_ln", D)
    init_coarse(store, f"{prefix}.cg", D, rng)


def init_coarse(store: ParamStore, prefix: str, d: int, rng) -> None:
    store.add(f"{prefix}.w", _glorot(rng, 2 * d, d))


def init_memory_plugin(store: ParamStore, prefix: str, d: int, d_mem: int, d_ff: int, rng,
                       tune: bool = False, with_ln: bool = True) -> None:
    init_gsh(store, prefix, d, d_mem, d, rng)
    if with_ln:
        init_ln(store, f"{prefix}.ln", d)
    if tune:
        init_ffn(store, f"{prefix}.ffn", d, d_ff, rng)


def init_encoder(store: ParamStore, prefix: str, cfg: StanhopConfig, t_in: int, n_channels: int, rng) -> None:
    D = cfg.d_model
    store.add(f"{prefix}.emb.w", _glorot(rng, cfg.seg_len, D))
    store.add(f"{prefix}.emb.b", np.zeros(D))
    store.add(f"{prefix}.emb.pos", rng.normal(size=(cfg.n_tokens(t_in), 1, D)) * 0.02)
    store.add(f"{prefix}.emb.chan", rng.normal(size=(n_channels, D)) * 0.02)
    for i in range(cfg.e_layers):
        init_block(store, f"{prefix}.block{i}", cfg, rng)


# -- sub-ops ----------------------------------------------------------------------

def _gsh(store, prefix, R, Y, cfg: StanhopConfig, mask=None, return_weights=False):
    return gsh_attention(R, Y, store[f"{prefix}.wq"], store[f"{prefix}.wk"], store[f"{prefix}.wv"],
                         beta=cfg.attn_beta, alpha=cfg.alpha, n_heads=cfg.n_heads, mask=mask,
                         return_weights=return_weights)


def _ln(store, prefix, x):
    return layer_norm(x, store[f"{prefix}.g"], store[f"{prefix}.b"])


def ffn(store, prefix, x):
    h = gelu(linear(x, store[f"{prefix}.w1"], store[f"{prefix}.b1"]))
    return linear(h, store[f"{prefix}.w2"], store[f"{prefix}.b2"])


def _check_state(Z, cfg):
    if Z.ndim != 4 or Z.shape[-1] != cfg.d_model:
        raise DimensionError(f"expected (B, T, C, {cfg.d_model}) state, got {Z.shape}")


def embed_segments(store, prefix, X, cfg: StanhopConfig):
    """(B, T_in, C) raw series -> (B, T_in/seg_len, C, D) tokens."""
    X = as_tensor(X)
    if X.ndim != 3:
        raise DimensionError(f"expected (B, T_in, C) input, got {X.shape}")
    B, t_in, C = X.shape
    n = cfg.n_tokens(t_in)
    seg = transpose(reshape(X, (B, n, cfg.seg_len, C)), (0, 1, 3, 2))  # B, n, C, seg_len
    tok = linear(seg, store[f"{prefix}.emb.w"], store[f"{prefix}.emb.b"])
    if store[f"{prefix}.emb.chan"].shape[0] != C:
        raise DimensionError(f"encoder built for {store[f'{prefix}.emb.chan'].shape[0]} channels, got {C}")
    return add(add(tok, store[f"{prefix}.emb.pos"]), store[f"{prefix}.emb.chan"])


def time_gsh(store, prefix, Z, cfg: StanhopConfig, ctx: Ctx | None = None):
    """Self-retrieval along time, independently per channel."""
    ctx = ctx or Ctx()
    Z = as_tensor(Z)
    _check_state(Z, cfg)
    zc = transpose(Z, (0, 2, 1, 3))  # B, C, T, D
    att = _gsh(store, f"{prefix}.time", zc, zc, cfg)
    att = transpose(dropout(att, cfg.dropout, ctx.rng, ctx.training), (0, 2, 1, 3))
    z1 = _ln(store, f"{prefix}.time.ln1", add(Z, att))
    f = dropout(ffn(store, f"{prefix}.time.ffn", z1), cfg.dropout, ctx.rng, ctx.training)
    return _ln(store, f"{prefix}.time.ln2", add(z1, f))


def series_gsh(store, prefix, Z, cfg: StanhopConfig, ctx: Ctx | None = None):
    """Prototype pooling over channels, then channels read the pooled summary back."""
    ctx = ctx or Ctx()
    Z = as_tensor(Z)
    _check_state(Z, cfg)
    pooled = _gsh(store, f"{prefix}.series.pool", store[f"{prefix}.series.proto"], Z, cfg)  # B, T, K, D
    back = _gsh(store, f"{prefix}.series.unpool", Z, pooled, cfg)  # B, T, C, D
    back = dropout(back, cfg.dropout, ctx.rng, ctx.training)
    z1 = _ln(store, f"{prefix}.series.ln1", add(Z, back))
    f = dropout(ffn(store, f"{prefix}.series.ffn", z1), cfg.dropout, ctx.rng, ctx.training)
    return _ln(store, f"{prefix}.series.ln2", add(z1, f))


def plug_memory(store, prefix, R, Y, cfg: StanhopConfig, mask=None, ln_prefix=None):
    """``LN(R + GSH(R, Y))``. Returns (output, used_memory); empty Y gives (LN(R), False)."""
    R = as_tensor(R)
    ln = ln_prefix or f"{prefix}.ln"
    if Y is None or as_tensor(Y).shape[-2] == 0:
        return _ln(store, ln, R), False
    return _ln(store, ln, add(R, _gsh(store, prefix, R, Y, cfg, mask))), True


def tune_memory(store, prefix, R, Y, Y_label, cfg: StanhopConfig):
    """``LN(FFN(GSH(R, Y ⊕ Y_label)) + R)``; Y_label may be None or empty."""
    R = as_tensor(R)
    parts = [as_tensor(y) for y in (Y, Y_label) if y is not None and as_tensor(y).shape[-2] > 0]
    if not parts:
        return _ln(store, f"{prefix}.ln", R), False
    mem = parts[0] if len(parts) == 1 else concat(parts, axis=-2)
    ret = _gsh(store, prefix, R, mem, cfg)
    return _ln(store, f"{prefix}.ln", add(ffn(store, f"{prefix}.ffn", ret), R)), True


def coarse_grain(Z, W_cg, delta: int = 1):
    """Concatenate non-overlapping time pairs (t, t+delta) and project back to D.

    T' = floor(T / 2); a trailing odd step is dropped. T < 2 is a no-op.
    """
    Z = as_tensor(Z)
    B, T, C, D = Z.shape
    if T < 2:
        log.warning("coarse_grain: T=%d < 2, leaving the state unchanged", T)
        return Z
    if delta != 1:
        raise ConfigError("only delta=1 (adjacent pairs, stride 2) is supported")
    if T % 2:
        log.warning("coarse_grain: odd T=%d, dropping the trailing step", T)
        Z = Z[:, : T - 1]
    pairs = reshape(Z, (B, T // 2, 2, C, D))
    pairs = transpose(pairs, (0, 1, 3, 2, 4))
    pairs = reshape(pairs, (B, T // 2, C, 2 * D))
    return matmul(pairs, W_cg)


def stanhop_block(store, prefix, Z, cfg: StanhopConfig, memory=None, memory_fn=None,
                  ctx: Ctx | None = None, trace: list | None = None):
    """TimeGSH -> SeriesGSH -> memory stage -> coarse-grain.

    ``memory`` is an optional (B, M, D) external memory read through plug_memory
    (params under ``{prefix}.mem``). ``memory_fn`` maps the state to a fused state
    and is how the text path plugs in; when neither is given the stage is LN(Z).
    """
    ctx = ctx or Ctx()
    Z = time_gsh(store, prefix, Z, cfg, ctx)
    _note(trace, "time_gsh", Z)
    Z = series_gsh(store, prefix, Z, cfg, ctx)
    _note(trace, "series_gsh", Z)
    if memory_fn is not None:
        Z = memory_fn(Z)
    elif memory is not None:
        B, T, C, D = Z.shape
        flat = reshape(Z, (B, T * C, D))
        flat, _ = plug_memory(store, f"{prefix}.mem", flat, memory, cfg, ln_prefix=f"{prefix}.out_ln")
        Z = reshape(flat, (B, T, C, D))
    else:
        Z = _ln(store, f"{prefix}.out_ln", Z)
    _note(trace, "memory", Z)
    Z = coarse_grain(Z, store[f"{prefix}.cg.w"], cfg.coarsen_stride)
    _note(trace, "coarse_grain", Z)
    return Z


def _note(trace, name, Z):
    if trace is not None:
        trace.append((name, Z.shape))


def encode(store, prefix, X, cfg: StanhopConfig, memory_fns=None, ctx: Ctx | None = None,
           trace: list | None = None):
    """Embed (B, T_in, C) and run all blocks. ``memory_fns[i]`` feeds block i."""
    Z = embed_segments(store, prefix, X, cfg)
    for i in range(cfg.e_layers):
        fn = memory_fns[i] if memory_fns is not None else None
        Z = stanhop_block(store, f"{prefix}.block{i}", Z, cfg, memory_fn=fn, ctx=ctx, trace=trace)
    return Z
