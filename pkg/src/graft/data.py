"""
Load panels, document embeddings and the daily text memory.

Documents from three sources (News, Reddit, Policy) are aggregated into one
vector per (source, region, day) with an availability mask; Policy documents
stay valid for a while and are weighted by a geometric decay in their age.
Daily vectors are broadcast to the 48 half-hour slots, and sliding windows
pair a load history with the text of the same days.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, InputError, SchemaError

log = logging.getLogger(__name__)

SLOTS = 48
SOURCES = ("News", "Reddit", "Policy")
NATIONAL = "NATIONAL"
NORM_TOL = 1e-6
POLICY_RHO = 0.97
POLICY_HORIZON = 60
POLICY_MIN_DECAY = 1e-4
MAX_INTERP_GAP = 2


def to_day(d) -> np.datetime64:
    return np.datetime64(d, "D")


def day_of_week(days) -> np.ndarray:
    """Monday = 0."""
    return (np.asarray(days, dtype="datetime64[D]").astype(np.int64) + 3) % 7


# -- types ------------------------------------------------------------------------

@dataclass
class LoadPanel:
    region: str
    days: np.ndarray  # datetime64[D], strictly increasing (gaps allowed after cleaning)
    values: np.ndarray  # n_days x 48, MW
    timezone: str = "market-local"

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != SLOTS:
            raise DimensionError(f"load values must be n_days x {SLOTS}, got {self.values.shape}")
        if len(self.days) != len(self.values):
            raise DimensionError("days and values disagree in length")
        if len(self.days) > 1 and np.any(np.diff(self.days.astype(np.int64)) <= 0):
            raise InputError("panel days must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise InputError("panel values must be finite after cleaning")

    def __len__(self):
        return len(self.days)

    def contiguous_runs(self) -> list[tuple[int, int]]:
        """(start, stop) index ranges of gap-free stretches."""
        if not len(self.days):
            return []
        breaks = np.nonzero(np.diff(self.days.astype(np.int64)) != 1)[0] + 1
        edges = [0, *breaks.tolist(), len(self.days)]
        return list(zip(edges[:-1], edges[1:]))


@dataclass(frozen=True)
class DocumentRecord:
    source: str
    region: str
    publish_date: np.datetime64
    relevance: float
    embedding: np.ndarray

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InputError(f"unknown source {self.source!r}")
        if not self.relevance >= 0:
            raise InputError(f"relevance weight must be ≥ 0, got {self.relevance}")
        e = np.asarray(self.embedding, dtype=float)
        if abs(np.linalg.norm(e) - 1.0) > NORM_TOL:
            raise InputError("document embedding must have unit norm")
        object.__setattr__(self, "embedding", e)
        object.__setattr__(self, "publish_date", to_day(self.publish_date))


def normalize_embedding(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not n > 0 or not np.isfinite(n):
        raise InputError("cannot normalize a zero or non-finite embedding")
    return v / n


@dataclass
class TextMemoryStore:
    """Daily vectors and masks per region over a shared contiguous calendar.

    ``vectors[region]`` is (n_days, 3, s), ``masks[region]`` is (n_days, 3) bool,
    with the source axis ordered as SOURCES. Masked entries hold zeros.
    """
    start: np.datetime64
    n_days: int
    dim: int
    vectors: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)

    def index(self, day) -> int:
        return int((to_day(day) - self.start).astype(np.int64))

    def days(self) -> np.ndarray:
        return self.start + np.arange(self.n_days)

    def ensure_region(self, region: str) -> None:
        if region not in self.vectors:
            self.vectors[region] = np.zeros((self.n_days, len(SOURCES), self.dim))
            self.masks[region] = np.zeros((self.n_days, len(SOURCES)), dtype=bool)

    def lookup(self, region: str, day):
        """(3 x s vectors, 3 masks) for one day; unknown days and regions are all mask 0."""
        i = self.index(day)
        if region not in self.vectors or not 0 <= i < self.n_days:
            return np.zeros((len(SOURCES), self.dim)), np.zeros(len(SOURCES), dtype=bool)
        return self.vectors[region][i], self.masks[region][i]

    def block(self, region: str, first_day, n: int):
        """Text for ``n`` consecutive days from ``first_day``: (n, 3, s), (n, 3)."""
        vecs = np.zeros((n, len(SOURCES), self.dim))
        masks = np.zeros((n, len(SOURCES)), dtype=bool)
        i0 = self.index(first_day)
        if region in self.vectors:
            lo, hi = max(i0, 0), min(i0 + n, self.n_days)
            if lo < hi:
                vecs[lo - i0: hi - i0] = self.vectors[region][lo:hi]
                masks[lo - i0: hi - i0] = self.masks[region][lo:hi]
        return vecs, masks


# -- text encoding and aggregation ---------------------------------------------

def encode_document_fallback(tokens, dim: int):
    """Signed feature hashing of tokens into ``dim`` buckets, L2-normalized.

    Returns None for an empty token list (the caller records mask 0).
    """
    if dim < 1:
        raise InputError("dim must be ≥ 1")
    tokens = list(tokens)
    if not tokens:
        return None
    v = np.zeros(dim)
    for tok in tokens:
        h = hashlib.blake2b(str(tok).encode("utf-8"), digest_size=8).digest()
        n = int.from_bytes(h, "little")
        v[n % dim] += 1.0 if (n >> 63) & 1 else -1.0
    if not np.any(v):
        # every token cancelled out; fall back to the first bucket
        v[int.from_bytes(hashlib.blake2b(str(tokens[0]).encode(), digest_size=8).digest(), "little") % dim] = 1.0
    return v / np.linalg.norm(v)


def _softmax(w):
    e = np.exp(w - w.max())
    return e / e.sum()


def aggregate_daily(docs, source: str | None = None, region: str | None = None, date=None, dim=None):
    """Relevance-weighted mean of same-day embeddings: (vector, mask, weights).

    Weights are the softmax of the relevance scores. With no documents the
    vector is zeros (length ``dim``) and the mask is False.
    """
    docs = list(docs)
    for d in docs:
        if d.relevance < 0:
            raise InputError("negative relevance weight")
        if source is not None and d.source != source:
            raise InputError(f"document source {d.source} != {source}")
        if region is not None and d.region not in (region, NATIONAL):
            raise InputError(f"document region {d.region} does not match {region}")
        if date is not None and d.publish_date != to_day(date):
            raise InputError("document date does not match the aggregation day")
    if not docs:
        if dim is None:
            raise InputError("dim is required when there are no documents")
        return np.zeros(dim), False, np.zeros(0)
    w = _softmax(np.array([d.relevance for d in docs], dtype=float))
    x = (w[:, None] * np.stack([d.embedding for d in docs])).sum(axis=0)
    return x, True, w


def aggregate_policy(docs, date, rho: float = POLICY_RHO, horizon: int | None = POLICY_HORIZON,
                     dim=None, min_decay: float = POLICY_MIN_DECAY):
    """Decayed Policy aggregation at ``date``: (vector, mask, weights, kept docs).

    w_d ∝ relevance_d * rho ** age_d over documents published on or before
    ``date`` with age ≤ horizon and decay ≥ min_decay (horizon=None: no limit).
    """
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"rho must lie in (0, 1], got {rho}")
    t = to_day(date)
    kept, decay = [], []
    for d in docs:
        age = int((t - d.publish_date).astype(np.int64))
        if age < 0:
            raise InputError("policy document published after the aggregation day")
        if horizon is not None and age > horizon:
            continue
        f = rho**age
        if f < min_decay:
            continue
        kept.append(d)
        decay.append(f)
    if not kept:
        if dim is None:
            raise InputError("dim is required when there are no documents")
        return np.zeros(dim), False, np.zeros(0), []
    rel = np.array([d.relevance for d in kept], dtype=float)
    # scale by the largest relevance so tiny scores cannot underflow the sum to 0
    rel = rel / rel.max() if rel.max() > 0 else np.ones_like(rel)
    w = rel * np.array(decay)
    w = w / w.sum()
    x = (w[:, None] * np.stack([d.embedding for d in kept])).sum(axis=0)
    return x, True, w, kept


def map_region(doc: DocumentRecord, regions):
    """Route a document: (routed [(region, doc)], quarantined [doc])."""
    regions = list(regions)
    if doc.region == NATIONAL:
        return [(r, doc) for r in regions], []
    if doc.region in regions:
        return [(doc.region, doc)], []
    return [], [doc]


def build_memory_store(docs, regions, start, n_days: int, dim: int, rho: float = POLICY_RHO,
                       horizon: int | None = POLICY_HORIZON):
    """Aggregate documents into a TextMemoryStore; returns (store, quarantined docs)."""
    store = TextMemoryStore(to_day(start), n_days, dim)
    routed = defaultdict(list)
    quarantine = []
    for d in docs:
        if len(d.embedding) != dim:
            raise DimensionError(f"embedding dim {len(d.embedding)} != {dim}")
        ok, bad = map_region(d, regions)
        quarantine.extend(bad)
        for r, doc in ok:
            routed[r].append(doc)
    if quarantine:
        log.warning("%d documents with unknown region quarantined", len(quarantine))
    days = store.days()
    for r in regions:
        store.ensure_region(r)
        by_day = defaultdict(list)
        policy = []
        for d in routed[r]:
            if d.source == "Policy":
                policy.append(d)
            else:
                by_day[(d.source, d.publish_date)].append(d)
        for (src, day), group in by_day.items():
            i = store.index(day)
            if 0 <= i < n_days:
                x, m, _ = aggregate_daily(group)
                store.vectors[r][i, SOURCES.index(src)] = x
                store.masks[r][i, SOURCES.index(src)] = m
        if policy:
            policy.sort(key=lambda d: d.publish_date)
            pub = np.array([d.publish_date for d in policy], dtype="datetime64[D]")
            for i, day in enumerate(days):
                upto = int(np.searchsorted(pub, day, side="right"))
                if upto == 0:
                    continue
                x, m, _, _ = aggregate_policy(policy[:upto], day, rho, horizon, dim)
                store.vectors[r][i, 2] = x
                store.masks[r][i, 2] = m
    return store, quarantine


def broadcast_to_halfhour(store: TextMemoryStore, region: str, day):
    """48 references to the day's (3 x s) read-only vectors, and 48 mask copies."""
    vecs, masks = store.lookup(region, day)
    view = vecs.view()
    view.setflags(write=False)
    mview = masks.view()
    mview.setflags(write=False)
    return [view] * SLOTS, [mview] * SLOTS


# -- covariates -------------------------------------------------------------------

@dataclass
class DailyCovariates:
    """Named daily numeric columns per region: values[region] is (n_days, n_names)."""
    start: np.datetime64
    n_days: int
    names: tuple
    values: dict = field(default_factory=dict)

    def block(self, region: str, first_day, n: int) -> np.ndarray:
        i0 = int((to_day(first_day) - self.start).astype(np.int64))
        if region not in self.values or i0 < 0 or i0 + n > self.n_days:
            raise InputError(f"covariates missing for {region} {first_day} (+{n} days)")
        return self.values[region][i0: i0 + n]


# -- windows and splits -------------------------------------------------------------

@dataclass(eq=False)
class WindowSample:
    region: str
    x: np.ndarray  # T_in x C (load first, then covariates)
    y: np.ndarray  # T_out
    text: np.ndarray  # L x 3 x s
    text_mask: np.ndarray  # L x 3
    first_day: np.datetime64
    anchor: np.datetime64  # last input day
    forecast_end: np.datetime64  # last target day

    @property
    def target_days(self) -> np.ndarray:
        n = len(self.y) // SLOTS
        return self.anchor + 1 + np.arange(n)

    @property
    def input_days(self) -> np.ndarray:
        return self.first_day + np.arange(len(self.x) // SLOTS)


def make_windows(panel: LoadPanel, store: TextMemoryStore | None, t_in: int, t_out: int,
                 stride: int = SLOTS, covariates: DailyCovariates | None = None) -> list[WindowSample]:
    """Day-aligned sliding windows that never cross a gap in the panel."""
    for name, v in (("T_in", t_in), ("T_out", t_out), ("stride", stride)):
        if v < SLOTS or v % SLOTS:
            raise ConfigError(f"{name}={v} must be a positive multiple of {SLOTS}")
    L, H, step = t_in // SLOTS, t_out // SLOTS, stride // SLOTS
    dim = store.dim if store is not None else 0
    out = []
    for lo, hi in panel.contiguous_runs():
        for s in range(lo, hi - (L + H) + 1, step):
            first = panel.days[s]
            x = panel.values[s: s + L].reshape(-1, 1)
            if covariates is not None:
                cov = np.repeat(covariates.block(panel.region, first, L), SLOTS, axis=0)
                x = np.concatenate([x, cov], axis=1)
            y = panel.values[s + L: s + L + H].reshape(-1)
            if store is not None:
                text, mask = store.block(panel.region, first, L)
            else:
                text, mask = np.zeros((L, len(SOURCES), dim)), np.zeros((L, len(SOURCES)), dtype=bool)
            out.append(WindowSample(panel.region, x.copy(), y.copy(), text, mask, first,
                                    panel.days[s + L - 1], panel.days[s + L + H - 1]))
    if not out:
        log.warning("panel %s too short for T_in+T_out=%d slots; no windows", panel.region, t_in + t_out)
    return out


def split_by_forecast_end(samples, boundaries):
    """Partition by forecast end date: train ≤ b1 < val ≤ b2 < test."""
    b1, b2 = (to_day(b) for b in boundaries)
    if not b1 < b2:
        raise ConfigError("split boundaries must be strictly increasing")
    train, val, test = [], [], []
    for s in samples:
        if s.forecast_end <= b1:
            train.append(s)
        elif s.forecast_end <= b2:
            val.append(s)
        else:
            test.append(s)
    return train, val, test


@dataclass
class Normalizer:
    """z-score for the load channel and each covariate, fitted on the train split."""
    load_mean: float
    load_std: float
    cov_mean: np.ndarray
    cov_std: np.ndarray

    @classmethod
    def fit(cls, train_samples) -> "Normalizer":
        if not train_samples:
            raise InputError("cannot fit normalization on an empty train split")
        y = np.concatenate([s.y for s in train_samples])
        x = np.concatenate([s.x[:, 1:] for s in train_samples])
        std = float(y.std())
        cstd = x.std(axis=0) if len(x) else np.zeros(0)
        return cls(float(y.mean()), std if std > 0 else 1.0,
                   x.mean(axis=0) if len(x) else np.zeros(0), np.where(cstd > 0, cstd, 1.0))

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        out[:, 0] = (x[:, 0] - self.load_mean) / self.load_std
        out[:, 1:] = (x[:, 1:] - self.cov_mean) / self.cov_std
        return out

    def transform_y(self, y):
        return (np.asarray(y) - self.load_mean) / self.load_std

    def inverse_y(self, y):
        return np.asarray(y) * self.load_std + self.load_mean

    def to_dict(self) -> dict:
        return {"load_mean": self.load_mean, "load_std": self.load_std,
                "cov_mean": self.cov_mean.tolist(), "cov_std": self.cov_std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(float(d["load_mean"]), float(d["load_std"]),
                   np.asarray(d["cov_mean"], dtype=float), np.asarray(d["cov_std"], dtype=float))


def stack_samples(samples, norm: Normalizer | None = None):
    """Batch arrays: x (B, T_in, C), y (B, T_out), text (B, L, 3, s), mask (B, L, 3)."""
    x = np.stack([s.x for s in samples])
    y = np.stack([s.y for s in samples])
    if norm is not None:
        x = np.stack([norm.transform_x(s.x) for s in samples])
        y = norm.transform_y(y)
    return x, y, np.stack([s.text for s in samples]), np.stack([s.text_mask for s in samples])


# -- file formats ---------------------------------------------------------------------

def _interpolate_day(row: np.ndarray):
    """Fill NaN runs of length ≤ 2 linearly (edges copy the nearest value); None if impossible."""
    bad = np.isnan(row)
    if not bad.any():
        return row
    if bad.all():
        return None
    idx = np.flatnonzero(bad)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) != 1) + 1)
    if max(len(r) for r in runs) > MAX_INTERP_GAP:
        return None
    good = np.flatnonzero(~bad)
    out = row.copy()
    out[bad] = np.interp(idx, good, row[good])
    return out


def read_load_csv(path):
    """Parse ``region,date,slot,load_mw``: returns ({region: LoadPanel}, report)."""
    path = Path(path)
    rows = defaultdict(dict)
    first_line = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["region", "date", "slot", "load_mw"]:
            raise SchemaError(f"{path}:1: expected header region,date,slot,load_mw")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            region, date, slot, val = (f.strip() for f in rec)
            try:
                day = to_day(date)
                slot = int(slot)
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            if not 1 <= slot <= SLOTS:
                raise SchemaError(f"{path}:{lineno}: slot {slot} outside 1..{SLOTS}")
            key = (region, day)
            if slot in rows[key]:
                raise SchemaError(f"{path}:{lineno}: duplicate slot {slot} for {region} {day}")
            first_line.setdefault(key, lineno)
            try:
                rows[key][slot] = float(val) if val not in ("", "nan", "NaN", "NA") else np.nan
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: bad load value {val!r}") from None
    panels_raw = defaultdict(list)
    report = {"interpolated_days": [], "dropped_days": []}
    for (region, day), slots in sorted(rows.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if len(slots) != SLOTS:
            raise SchemaError(f"{path}:{first_line[(region, day)]}: {region} {day} has "
                              f"{len(slots)} slots, expected {SLOTS}")
        row = np.array([slots[i] for i in range(1, SLOTS + 1)])
        fixed = _interpolate_day(row)
        if fixed is None:
            report["dropped_days"].append(f"{region} {day}")
            continue
        if fixed is not row:
            report["interpolated_days"].append(f"{region} {day}")
        panels_raw[region].append((day, fixed))
    panels = {r: LoadPanel(r, [d for d, _ in v], np.stack([x for _, x in v])) for r, v in panels_raw.items()}
    return panels, report


def write_load_csv(path, panels) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "date", "slot", "load_mw"])
        for p in panels:
            for day, row in zip(p.days, p.values):
                for k, v in enumerate(row, start=1):
                    w.writerow([p.region, str(day), k, repr(float(v))])


def read_embeddings_csv(path):
    """Parse ``source,region,publish_date,relevance,dim,values...`` into DocumentRecords.

    An empty relevance means uniform (1.0); embeddings are unit-normalized on ingest.
    """
    path = Path(path)
    docs = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:5]] != ["source", "region", "publish_date", "relevance", "dim"]:
            raise SchemaError(f"{path}:1: expected header source,region,publish_date,relevance,dim,values...")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                source, region, date, rel, dim = (f.strip() for f in rec[:5])
                dim = int(dim)
                vals = [float(v) for v in rec[5:]]
                if len(vals) != dim:
                    raise ValueError(f"dim={dim} but {len(vals)} values")
                docs.append(DocumentRecord(source, region, to_day(date), float(rel) if rel else 1.0,
                                           normalize_embedding(vals)))
            except (ValueError, InputError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return docs


def write_embeddings_csv(path, docs) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "region", "publish_date", "relevance", "dim", "values..."])
        for d in docs:
            w.writerow([d.source, d.region, str(d.publish_date), repr(float(d.relevance)), len(d.embedding),
                        *(repr(float(v)) for v in d.embedding)])


def read_covariates_csv(path, regions=None) -> DailyCovariates:
    path = Path(path)
    cells = {}
    names, days = set(), set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["region", "date", "name", "value"]:
            raise SchemaError(f"{path}:1: expected header region,date,name,value")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                region, date, name, value = (f.strip() for f in rec)
                day = to_day(date)
                cells[(region, day, name)] = float(value)
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            names.add(name)
            days.add(day)
    if not cells:
        raise SchemaError(f"{path}: no covariate rows")
    names = tuple(sorted(names))
    start = min(days)
    n_days = int((max(days) - start).astype(np.int64)) + 1
    cov = DailyCovariates(start, n_days, names)
    for region in sorted({k[0] for k in cells} if regions is None else regions):
        arr = np.full((n_days, len(names)), np.nan)
        for (r, day, name), v in cells.items():
            if r == region:
                arr[int((day - start).astype(np.int64)), names.index(name)] = v
        cov.values[region] = arr
    return cov


def write_covariates_csv(path, cov: DailyCovariates) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "date", "name", "value"])
        for region, arr in cov.values.items():
            for i in range(cov.n_days):
                for j, name in enumerate(cov.names):
                    if np.isfinite(arr[i, j]):
                        w.writerow([region, str(cov.start + i), name, repr(float(arr[i, j]))])


def save_dataset(path, panels, store: TextMemoryStore, covariates: DailyCovariates | None = None) -> Path:
    """Write panels, text memory and covariates to one .npz (lossless)."""
    arrays = {"meta.store": np.array([str(store.start), store.n_days, store.dim])}
    for p in panels:
        arrays[f"panel.{p.region}.days"] = p.days.astype(np.int64)
        arrays[f"panel.{p.region}.values"] = p.values
    for r in store.vectors:
        arrays[f"text.{r}.vectors"] = store.vectors[r]
        arrays[f"text.{r}.masks"] = store.masks[r]
    if covariates is not None:
        arrays["meta.cov"] = np.array([str(covariates.start), covariates.n_days, *covariates.names])
        for r, v in covariates.values.items():
            arrays[f"cov.{r}"] = v
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_dataset(path):
    """Inverse of save_dataset: (panels dict, store, covariates or None)."""
    with np.load(path, allow_pickle=False) as z:
        start, n_days, dim = z["meta.store"]
        store = TextMemoryStore(to_day(str(start)), int(n_days), int(dim))
        panels, cov = {}, None
        if "meta.cov" in z.files:
            meta = z["meta.cov"]
            cov = DailyCovariates(to_day(str(meta[0])), int(meta[1]), tuple(str(n) for n in meta[2:]))
        for key in z.files:
            kind, _, rest = key.partition(".")
            if kind == "panel" and rest.endswith(".days"):
                r = rest[: -len(".days")]
                panels[r] = LoadPanel(r, z[key].astype("datetime64[D]"), z[f"panel.{r}.values"])
            elif kind == "text" and rest.endswith(".vectors"):
                r = rest[: -len(".vectors")]
                store.vectors[r] = z[key]
                store.masks[r] = z[f"text.{r}.masks"]
            elif kind == "cov" and cov is not None:
                cov.values[rest] = z[key]
    return panels, store, cov
