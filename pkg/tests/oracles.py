"""Independent reference computations used by the tests.

Nothing here calls into the code paths it is used to check.
"""

import itertools

import numpy as np


def naive_matmul(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def support_sets(m):
    """All 2^m - 1 nonempty supports as a boolean matrix."""
    rows = [s for r in range(1, m + 1) for s in itertools.combinations(range(m), r)]
    masks = np.zeros((len(rows), m), dtype=bool)
    for i, s in enumerate(rows):
        masks[i, list(s)] = True
    return masks


def simplex_projection_bruteforce(z, masks=None):
    """Euclidean projection of z onto the simplex by enumerating support sets.

    On a fixed support S the KKT solution is p_S = z_S - (sum z_S - 1)/|S|; keep the
    feasible candidate closest to z.
    """
    z = np.asarray(z, float)
    if masks is None:
        masks = support_sets(len(z))
    sizes = masks.sum(axis=1)
    shift = ((masks * z).sum(axis=1) - 1.0) / sizes
    cand = np.where(masks, z[None, :] - shift[:, None], 0.0)
    feasible = np.all(cand >= -1e-15, axis=1)
    dist = ((cand - z[None, :]) ** 2).sum(axis=1)
    dist[~feasible] = np.inf
    return np.clip(cand[np.argmin(dist)], 0.0, None)


def softmax_direct(z):
    z = np.asarray(z, float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_attention(q, k, v, beta):
    return softmax_direct(beta * q @ k.T) @ v


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def param_fd_check(loss_fn, store, names=None, h=1e-6, max_entries=None, seed=0):
    """Compare reverse-mode grads in ``store`` with central differences of ``loss_fn``.

    ``loss_fn()`` must rebuild the graph from ``store`` and return a scalar Tensor.
    With ``max_entries`` only that many randomly chosen coordinates per tensor are
    perturbed. Returns {name: relative error}.
    """
    store.zero_grad()
    loss_fn().backward()
    analytic = {n: store[n].grad.copy() if store[n].grad is not None else np.zeros_like(store[n].data)
                for n in store.params}
    rng = np.random.default_rng(seed)
    errs = {}
    for name in names or list(store.params):
        param = store[name]
        base = param.data.copy()
        flat_idx = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            flat_idx = rng.choice(base.size, size=max_entries, replace=False)
        fd = np.zeros(len(flat_idx))
        for j, k in enumerate(flat_idx):
            idx = np.unravel_index(k, base.shape)
            vals = []
            for step in (h, -h):
                pert = base.copy()
                pert[idx] += step
                param.data = pert
                vals.append(float(loss_fn().data))
            fd[j] = (vals[0] - vals[1]) / (2 * h)
        param.data = base
        errs[name] = rel_err(analytic[name].reshape(-1)[flat_idx], fd)
    return errs
