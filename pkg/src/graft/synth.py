"""
Desk-scale synthetic testbed: seasonal + weekly + intraday load, a temperature
covariate, and event days whose load shock is announced by same-kind text the
day before.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SLOTS, DailyCovariates, DocumentRecord, LoadPanel, TextMemoryStore, build_memory_store

# shock profiles per event kind, MW over the 48 slots
_SLOT = np.arange(SLOTS)
EVENT_KINDS = {
    "heatwave": 260.0 * np.exp(-0.5 * ((_SLOT - 30) / 6.0) ** 2) + 60.0,
    "outage": np.full(SLOTS, -220.0),
    "festival": -160.0 * np.exp(-0.5 * ((_SLOT - 20) / 8.0) ** 2) + 120.0 * np.exp(-0.5 * ((_SLOT - 40) / 4.0) ** 2),
}


@dataclass
class SynthDataset:
    panels: dict
    docs: list
    store: TextMemoryStore
    covariates: DailyCovariates
    events: dict  # region -> list of (day, kind)
    start: np.datetime64
    n_days: int

    def event_days(self, region: str) -> set:
        return {d for d, _ in self.events[region]}


def _kind_directions(dim: int, rng) -> dict:
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return {k: q[:, i] for i, k in enumerate(EVENT_KINDS)}


def _doc_vec(direction, noise, rng):
    v = direction + noise * rng.normal(size=direction.shape) / np.sqrt(len(direction))
    return v / np.linalg.norm(v)


def make_synthetic(n_days: int = 180, n_events: int = 20, seed: int = 0, regions=("R1",),
                   text_dim: int = 16, sparse: bool = True, start: str = "2021-01-04",
                   text_noise: float = 0.3, min_event_day: int = 8) -> SynthDataset:
    """Generate a panel per region plus documents and the aggregated text memory.

    Events fall on distinct days from ``min_event_day`` on; News and Reddit
    documents of the event's kind are published the previous day. Without
    ``sparse`` there are also off-topic News/Reddit documents on random days
    and national Policy notices every two weeks.
    """
    rng = np.random.default_rng(seed)
    start = np.datetime64(start, "D")
    days = start + np.arange(n_days)
    dirs = _kind_directions(text_dim, rng)
    kinds = list(EVENT_KINDS)
    doy = (days - days.astype("datetime64[Y]")).astype(np.int64)
    dow = (days.astype(np.int64) + 3) % 7
    intraday = 180.0 * np.sin(np.pi * (_SLOT - 12) / 36.0).clip(0) + 60.0 * np.exp(-0.5 * ((_SLOT - 38) / 3.0) ** 2)
    panels, events, docs = {}, {}, []
    cov = DailyCovariates(start, n_days, ("temp",))
    for r_i, region in enumerate(regions):
        level = 1000.0 + 150.0 * r_i
        temp = 14.0 - 9.0 * np.cos(2 * np.pi * (doy - 15) / 365.0) + rng.normal(scale=1.0, size=n_days)
        daily = level + 1.5 * (temp - 16.0) ** 2 - 90.0 * (dow >= 5) + rng.normal(scale=15.0, size=n_days)
        values = daily[:, None] + intraday[None, :] + rng.normal(scale=12.0, size=(n_days, SLOTS))
        pool = np.arange(min_event_day, n_days)
        ev_idx = np.sort(rng.choice(pool, size=min(n_events, len(pool)), replace=False))
        evs = []
        for i in ev_idx:
            kind = kinds[int(rng.integers(len(kinds)))]
            scale = rng.uniform(0.85, 1.15)
            values[i] += scale * EVENT_KINDS[kind]
            evs.append((days[i], kind))
            for source in ("News", "Reddit"):
                docs.append(DocumentRecord(source, region, days[i] - 1, 1.0, _doc_vec(dirs[kind], text_noise, rng)))
        if not sparse:
            for i in rng.choice(n_days, size=n_days // 4, replace=False):
                src = ("News", "Reddit")[int(rng.integers(2))]
                docs.append(DocumentRecord(src, region, days[i], 1.0, _doc_vec(rng.normal(size=text_dim), 0.0, rng)))
        panels[region] = LoadPanel(region, days, values)
        events[region] = evs
        cov.values[region] = temp[:, None]
    if not sparse:
        for i in range(0, n_days, 14):
            docs.append(DocumentRecord("Policy", "NATIONAL", days[i], 1.0, _doc_vec(rng.normal(size=text_dim), 0.0, rng)))
    store, _ = build_memory_store(docs, list(regions), start, n_days, text_dim)
    return SynthDataset(panels, docs, store, cov, events, start, n_days)
