"""
GRAFT: the STanHop encoder with text memories fused in at every block.

Per block and per window day, the available source vectors are projected to
the model width, a sparse gate over sources rescales them, and every time
token of that day retrieves from the gated entries with sparse attention. The
retrieved context enters the representation residually. Days with no
available text contribute an exact zero context, so a run with every source
switched off reproduces the backbone bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import SLOTS, SOURCES
from .entmax import entmax
from .errors import ConfigError, DimensionError
from .hopfield import gsh_attention
from .numerics import (
    ParamStore, Tensor, add, as_tensor, concat, getitem, layer_norm, linear, matmul, mul,
    relu, reshape, shannon_entropy, tmean, tsum,
)
from . import stanhop as sh

SWITCH_CODES = {0: (), 1: ("News",), 2: ("Reddit",), 3: ("Policy",), 123: SOURCES}


def source_switch(code) -> tuple:
    """Active source names for a switch code (0 = no external text)."""
    try:
        return SWITCH_CODES[int(code)]
    except (KeyError, ValueError, TypeError):
        raise ConfigError(f"unknown source switch {code!r}; expected one of {sorted(SWITCH_CODES)}") from None


def split_branches(unified: np.ndarray, code) -> dict:
    """Slice a unified embedding evenly along its last axis, one branch per active source."""
    names = source_switch(code)
    if not names:
        return {}
    width = unified.shape[-1]
    if width % len(names):
        raise ConfigError(f"width {width} cannot be split evenly into {len(names)} source branches")
    k = width // len(names)
    return {n: unified[..., i * k:(i + 1) * k] for i, n in enumerate(names)}


@dataclass(frozen=True)
class GraftConfig:
    backbone: sh.StanhopConfig = field(default_factory=sh.StanhopConfig)
    t_in: int = 7 * SLOTS
    t_out: int = SLOTS
    n_channels: int = 1
    text_dim: int = 16
    source_switch: int = 123
    text_alpha: float = 1.5
    text_beta: float | None = None  # None: 1/sqrt(d_model)
    gate_alpha: float = 1.5
    lambda_tau: float = 0.1
    lambda_gamma: float = 0.01
    entropy_sign: float = -1.0  # -1: minimizing the loss raises gate entropy
    quantiles: tuple = (0.1, 0.9)
    tune_memory: bool = False

    def __post_init__(self):
        source_switch(self.source_switch)
        if self.t_in % SLOTS or self.t_out % SLOTS or self.t_in < SLOTS or self.t_out < 1:
            raise ConfigError("t_in and t_out must be positive multiples of 48")
        self.backbone.n_tokens(self.t_in)
        if self.text_dim < 1 or self.n_channels < 1:
            raise ConfigError("text_dim and n_channels must be ≥ 1")
        if self.entropy_sign not in (-1.0, 1.0):
            raise ConfigError("entropy_sign must be -1 or +1")

    @property
    def active(self) -> tuple:
        return source_switch(self.source_switch)

    @property
    def n_days(self) -> int:
        return self.t_in // SLOTS

    @property
    def beta_text(self) -> float:
        return float(self.text_beta) if self.text_beta is not None else 1.0 / np.sqrt(self.backbone.d_model)

    def with_switch(self, code) -> "GraftConfig":
        return replace(self, source_switch=int(code))


@dataclass
class FusionDiagnostics:
    """Per fused block: pi (B, T, C, 3) retrieval weights, gamma (B, L, 3) gates."""
    pi: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    context_norm: list = field(default_factory=list)
    token_day: list = field(default_factory=list)


_SRC_KEYS = ("news", "reddit", "policy")


def init_params(cfg: GraftConfig, seed: int = 0) -> ParamStore:
    """Backbone and text parameters from independent RNG streams of ``seed``.

    The text stream never touches the backbone stream, so the backbone init is
    the same for every source switch.
    """
    store = ParamStore()
    rng = np.random.default_rng([seed, 0])
    b = cfg.backbone
    sh.init_encoder(store, "enc", b, cfg.t_in, cfg.n_channels, rng)
    n_flat = b.tokens_after(cfg.t_in) * cfg.n_channels * b.d_model
    store.add("dec.w", sh._glorot(rng, n_flat, cfg.t_out))
    store.add("dec.b", np.zeros(cfg.t_out))
    trng = np.random.default_rng([seed, 1])
    D, s = b.d_model, cfg.text_dim
    for k in _SRC_KEYS:
        store.add(f"text.proj.{k}", sh._glorot(trng, s, D))
    for i in range(b.e_layers):
        p = f"text.l{i}"
        sh.init_gsh(store, p, D, D, D, trng)
        store.add(f"{p}.U", sh._glorot(trng, 2 * D, len(SOURCES)))
        store.add(f"{p}.wo", sh._glorot(trng, D, D))
    if cfg.tune_memory:
        sh.init_memory_plugin(store, "tune", D, D, b.d_ff, trng, tune=True)
    return store


def text_param_names(store: ParamStore) -> list[str]:
    return store.names("text.") + store.names("tune.")


def token_days(n_tokens: int, span: int, n_days: int) -> np.ndarray:
    """Window day of each time token (by its first slot)."""
    return np.minimum((np.arange(n_tokens) * span) // SLOTS, n_days - 1)


class GraftModel:
    def __init__(self, cfg: GraftConfig, store: ParamStore | None = None, seed: int = 0):
        self.cfg = cfg
        self.store = store if store is not None else init_params(cfg, seed)

    # -- text path -----------------------------------------------------------
    def _available(self, mask: np.ndarray) -> np.ndarray:
        active = np.array([s in self.cfg.active for s in SOURCES])
        return np.asarray(mask, bool) & active

    def project_text(self, text, avail):
        """(B, L, 3, s) daily vectors -> (B, L, 3, D); unavailable entries are zeroed first."""
        st = self.store
        text = np.where(avail[..., None], np.asarray(text, float), 0.0)
        parts = [reshape(matmul(text[:, :, k], st[f"text.proj.{key}"]), (*text.shape[:2], 1, -1))
                 for k, key in enumerate(_SRC_KEYS)]
        return concat(parts, axis=2)

    def _fuse(self, layer: int, Z, Y, avail, diag: FusionDiagnostics | None):
        cfg, st = self.cfg, self.store
        B, T, C, D = Z.shape
        L = avail.shape[1]
        span = cfg.t_in // T
        tday = token_days(T, span, L)
        p = f"text.l{layer}"
        # day pooling of the backbone state and of the available text entries
        pool = np.zeros((L, T))
        counts = np.bincount(tday, minlength=L)
        pool[tday, np.arange(T)] = 1.0
        pool = pool / np.maximum(counts, 1)[:, None]
        r_bar = matmul(Tensor(pool), tmean(Z, axis=2))  # B, L, D
        n_av = avail.sum(axis=-1, keepdims=True)
        wy = avail / np.maximum(n_av, 1)
        y_bar = tsum(mul(Y, wy[..., None]), axis=2)  # B, L, D
        scores = matmul(concat([r_bar, y_bar], axis=-1), st[f"{p}.U"])  # B, L, 3
        gamma = entmax(scores, cfg.gate_alpha, avail)
        y_mix = mul(Y, reshape(gamma, (B, L, len(SOURCES), 1)))
        y_tok = getitem(y_mix, (slice(None), tday))  # B, T, 3, D
        tok_mask = avail[:, tday][:, :, None, :]  # B, T, 1, 3
        ctx, pi = gsh_attention(Z, y_tok, st[f"{p}.wq"], st[f"{p}.wk"], st[f"{p}.wv"],
                                beta=cfg.beta_text, alpha=cfg.text_alpha, n_heads=1,
                                mask=tok_mask, return_weights=True)
        fused = add(Z, matmul(ctx, st[f"{p}.wo"]))
        out = layer_norm(fused, st[f"enc.block{layer}.out_ln.g"], st[f"enc.block{layer}.out_ln.b"])
        if diag is not None:
            diag.pi.append(pi)
            diag.gamma.append(gamma.data)
            diag.context_norm.append(np.linalg.norm(ctx.data, axis=-1))
            diag.token_day.append(tday)
        return out, gamma

    # -- forward ---------------------------------------------------------------
    def forward(self, x, text=None, mask=None, ctx: sh.Ctx | None = None, exemplars=None,
                with_diagnostics: bool = False):
        """Predictions (B, T_out) in normalized units, gate tensors and diagnostics.

        ``x`` is (B, T_in, C); ``text`` (B, L, 3, s) and ``mask`` (B, L, 3).
        """
        cfg, st = self.cfg, self.store
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[1] != cfg.t_in or x.shape[2] != cfg.n_channels:
            raise DimensionError(f"expected (B, {cfg.t_in}, {cfg.n_channels}) input, got {x.shape}")
        diag = FusionDiagnostics() if with_diagnostics else None
        gammas = []
        fns = None
        if cfg.active and text is not None:
            mask = np.asarray(mask, bool)
            if mask.shape != (x.shape[0], cfg.n_days, len(SOURCES)):
                raise DimensionError(f"text mask must be (B, {cfg.n_days}, 3), got {mask.shape}")
            avail = self._available(mask)
            Y = self.project_text(text, avail)

            def make(i):
                def fn(Z):
                    out, g = self._fuse(i, Z, Y, avail, diag)
                    gammas.append((g, avail.any(axis=-1)))
                    return out
                return fn

            fns = [make(i) for i in range(cfg.backbone.e_layers)]
        Z = sh.encode(st, "enc", x, cfg.backbone, memory_fns=fns, ctx=ctx)
        if cfg.tune_memory and exemplars is not None:
            B, T, C, D = Z.shape
            flat, _ = sh.tune_memory(st, "tune", reshape(Z, (B, T * C, D)), exemplars, None, cfg.backbone)
            Z = reshape(flat, (B, T, C, D))
        B = Z.shape[0]
        pred = linear(reshape(Z, (B, -1)), st["dec.w"], st["dec.b"])
        return pred, gammas, diag

    def backbone_forward(self, x, ctx: sh.Ctx | None = None):
        """The NoExt path: encoder without any memory stage plus the decoder."""
        Z = sh.encode(self.store, "enc", x, self.cfg.backbone, ctx=ctx)
        return linear(reshape(Z, (Z.shape[0], -1)), self.store["dec.w"], self.store["dec.b"])

    def predict(self, x, text=None, mask=None) -> np.ndarray:
        from .numerics import no_grad
        with no_grad():
            return self.forward(x, text, mask)[0].data


# -- loss -----------------------------------------------------------------------------

def pinball(pred, y, tau: float):
    """Mean pinball loss: tau*u + relu(-u) with u = y - pred."""
    u = add(as_tensor(y), pred * -1.0)
    return tmean(add(u * tau, relu(u * -1.0)))


def gate_entropy(gammas):
    """Mean Shannon entropy of the gates over (layer, sample, day) cells with any text."""
    terms, n = [], 0
    for g, valid in gammas:
        if not valid.any():
            continue
        h = shannon_entropy(g, axis=-1)
        terms.append(tsum(mul(h, valid.astype(float))))
        n += int(valid.sum())
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total * (1.0 / n)


def graft_loss(pred, y, gammas=(), lambda_tau=0.1, lambda_gamma=0.01, entropy_sign=-1.0,
               quantiles=(0.1, 0.9)):
    """MSE + lambda_tau * sum of pinball losses + entropy_sign * lambda_gamma * H(gamma)."""
    pred = as_tensor(pred)
    y = np.asarray(y, float)
    if pred.shape != y.shape:
        raise DimensionError(f"prediction {pred.shape} vs target {y.shape}")
    diff = add(pred, -y)
    loss = tmean(mul(diff, diff))
    if lambda_tau:
        for q in quantiles:
            loss = add(loss, pinball(pred, y, q) * float(lambda_tau))
    if lambda_gamma:
        h = gate_entropy(gammas)
        if h is not None:
            loss = add(loss, h * (float(entropy_sign) * float(lambda_gamma)))
    return loss


def model_loss(model: GraftModel, x, y, text=None, mask=None, ctx=None):
    cfg = model.cfg
    pred, gammas, _ = model.forward(x, text, mask, ctx=ctx)
    loss = graft_loss(pred, y, gammas, cfg.lambda_tau, cfg.lambda_gamma, cfg.entropy_sign, cfg.quantiles)
    return loss, pred


# -- diagnostics export ------------------------------------------------------------------

def export_diagnostics(diag: FusionDiagnostics, samples, out_dir) -> tuple[Path, Path]:
    """Write pi per (region, date, slot, source) and gamma per (region, date), layer-averaged.

    pi is averaged over channels and layers and broadcast from tokens to the
    half-hour slots they cover.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pi_path, g_path = out_dir / "pi.csv", out_dir / "gamma.csv"
    gamma = np.mean(np.stack(diag.gamma), axis=0)  # B, L, 3
    with pi_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "date", "slot", "source", "weight"])
        for b, s in enumerate(samples):
            slot_pi = []
            for pi in diag.pi:
                T = pi.shape[1]
                per_tok = pi[b].mean(axis=1)  # T, 3
                slot_pi.append(np.repeat(per_tok, s.x.shape[0] // T, axis=0))
            slot_pi = np.mean(slot_pi, axis=0)  # T_in, 3
            for t in range(slot_pi.shape[0]):
                day = s.first_day + t // SLOTS
                for k, src in enumerate(SOURCES):
                    w.writerow([s.region, str(day), t % SLOTS + 1, src, repr(float(slot_pi[t, k]))])
    with g_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "date", "gamma_news", "gamma_reddit", "gamma_policy"])
        for b, s in enumerate(samples):
            for l in range(gamma.shape[1]):
                w.writerow([s.region, str(s.first_day + l), *(repr(float(v)) for v in gamma[b, l])])
    return pi_path, g_path
