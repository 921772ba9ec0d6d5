"""
Mini-batch training with Adam, global-norm clipping and a NaN guard, plus
rolling day-ahead forecasting over a test period.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import SLOTS, DailyCovariates, LoadPanel, Normalizer, TextMemoryStore, stack_samples, to_day
from .errors import ConfigError, InputError, TrainingError
from .model import GraftModel, model_loss
from .numerics import adam_step, clip_global_norm, global_norm, save_checkpoint
from .stanhop import Ctx

log = logging.getLogger(__name__)

HORIZONS = {"vstlf": 16, "stlf": 48, "mtlf": 2880}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    clip_threshold: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be ≥ 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be ≥ 1")
        if not self.clip_threshold > 0:
            raise ConfigError("clip_threshold must be positive")

    def digest(self, extra: dict | None = None) -> str:
        payload = json.dumps({**asdict(self), **(extra or {})}, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class RunLog:
    epoch_loss: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    wall_time: float = 0.0
    config_digest: str = ""

    @property
    def skipped_total(self) -> int:
        return int(sum(self.skipped))

    def to_json(self, path=None) -> str:
        text = json.dumps({"epoch_loss": self.epoch_loss, "skipped": self.skipped,
                           "grad_norm": self.grad_norm, "wall_time": self.wall_time,
                           "config_digest": self.config_digest}, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def _finite_batch(x, y, text) -> bool:
    return bool(np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(text)))


def train(model: GraftModel, samples, norm: Normalizer, cfg: TrainConfig,
          checkpoint_dir=None) -> RunLog:
    """Seeded shuffled mini-batches; a batch with non-finite inputs, loss, outputs or
    gradients is skipped. Raises TrainingError if every batch of an epoch is skipped."""
    if not samples:
        raise InputError("training needs a non-empty train split")
    rng = np.random.default_rng([cfg.seed, 7])
    drop_rng = np.random.default_rng([cfg.seed, 8])
    store = model.store
    runlog = RunLog(config_digest=cfg.digest({"model": repr(model.cfg)}))
    t0 = time.perf_counter()
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses, skipped, norms = [], 0, []
        for lo in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in order[lo: lo + cfg.batch_size]]
            x, y, text, mask = stack_samples(batch, norm)
            if not _finite_batch(x, y, text):
                skipped += 1
                continue
            store.zero_grad()
            loss, pred = model_loss(model, x, y, text, mask, ctx=Ctx(drop_rng, True))
            if not (np.isfinite(loss.data) and np.all(np.isfinite(pred.data))):
                skipped += 1
                continue
            loss.backward()
            grads = store.grads()
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                skipped += 1
                continue
            norms.append(global_norm(grads))
            adam_step(store, clip_global_norm(grads, cfg.clip_threshold), cfg.lr)
            losses.append(float(loss.data))
        if not losses:
            raise TrainingError(f"epoch {epoch + 1}: all {skipped} batches skipped (non-finite values)")
        runlog.epoch_loss.append(float(np.mean(losses)))
        runlog.skipped.append(skipped)
        runlog.grad_norm.append(float(np.mean(norms)))
        log.info("epoch %d/%d loss %.6f skipped %d", epoch + 1, cfg.epochs, runlog.epoch_loss[-1], skipped)
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"epoch-{epoch + 1:03d}.ckpt", store.arrays())
    runlog.wall_time = time.perf_counter() - t0
    return runlog


def rolling_forecast(model: GraftModel, panel: LoadPanel, store: TextMemoryStore | None,
                     norm: Normalizer, first_target_day, horizon: int,
                     covariates: DailyCovariates | None = None):
    """Chain day-ahead forecasts from ``first_target_day`` until ``horizon`` points.

    Each day's input window is the observed history of the previous L days, so
    no forecast reads targets inside its own window. Returns (predictions in MW,
    target days used). The series is truncated, with a warning, when the panel
    runs out of contiguous history or targets.
    """
    cfg = model.cfg
    if horizon < 1:
        raise InputError("horizon must be ≥ 1")
    L = cfg.n_days
    day_pos = {d: i for i, d in enumerate(panel.days.tolist())}
    preds, used = [], []
    day = to_day(first_target_day)
    need_days = -(-horizon // SLOTS)
    for k in range(need_days):
        target = day + k
        idx = [day_pos.get((target - L + j).tolist()) for j in range(L)]
        if any(i is None for i in idx) or target.tolist() not in day_pos:
            log.warning("rolling_forecast: history or target missing at %s; truncating to %d points",
                        target, len(preds) * SLOTS)
            break
        x = panel.values[idx].reshape(-1, 1)
        if covariates is not None:
            x = np.concatenate([x, np.repeat(covariates.block(panel.region, target - L, L), SLOTS, axis=0)], axis=1)
        x = norm.transform_x(x)[None]
        if store is not None:
            text, mask = store.block(panel.region, target - L, L)
        else:
            text = np.zeros((L, 3, cfg.text_dim))
            mask = np.zeros((L, 3), dtype=bool)
        out = model.predict(x, text[None], mask[None])[0]
        preds.append(norm.inverse_y(out[:SLOTS]))
        used.append(target)
    series = np.concatenate(preds)[:horizon] if preds else np.zeros(0)
    return series, used
