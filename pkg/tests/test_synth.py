import numpy as np

from graft import synth
from graft.data import SLOTS


def test_fixed_seed_is_bit_identical():
    a = synth.make_synthetic(n_days=60, n_events=5, seed=4)
    b = synth.make_synthetic(n_days=60, n_events=5, seed=4)
    assert np.array_equal(a.panels["R1"].values, b.panels["R1"].values)
    assert np.array_equal(a.store.vectors["R1"], b.store.vectors["R1"])
    assert a.events == b.events
    c = synth.make_synthetic(n_days=60, n_events=5, seed=5)
    assert not np.array_equal(a.panels["R1"].values, c.panels["R1"].values)


def test_event_count_and_text_timing():
    ds = synth.make_synthetic(n_days=90, n_events=12, seed=1, regions=("R1", "R2"))
    for r in ("R1", "R2"):
        days = ds.event_days(r)
        assert len(days) == 12
        assert ds.panels[r].values.shape == (90, SLOTS)
        for d in days:
            i = int((d - ds.start).astype(np.int64))
            assert ds.store.masks[r][i - 1, :2].all()  # text the day before the shock


def test_sparse_mode_masks_non_event_days():
    ds = synth.make_synthetic(n_days=80, n_events=6, seed=2)
    pre_event = {int((d - ds.start).astype(np.int64)) - 1 for d in ds.event_days("R1")}
    m = ds.store.masks["R1"]
    for i in range(80):
        if i not in pre_event:
            assert not m[i].any()
    dense = synth.make_synthetic(n_days=80, n_events=6, seed=2, sparse=False)
    assert dense.store.masks["R1"][:, 2].any()


def test_event_text_matches_kind():
    ds = synth.make_synthetic(n_days=120, n_events=15, seed=3, text_noise=0.1)
    by_kind = {}
    for d, kind in ds.events["R1"]:
        i = int((d - ds.start).astype(np.int64)) - 1
        by_kind.setdefault(kind, []).append(ds.store.vectors["R1"][i, 0])
    for kind, vecs in by_kind.items():
        v = np.array(vecs)
        assert (v @ v.T).min() > 0.8  # same-kind documents cluster
