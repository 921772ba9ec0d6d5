"""
Generalized sparse Hopfield memory: energy, retrieval dynamics and the
attention-form layer (GSH).

A memory bank stores patterns as the columns of ``patterns`` (d x M). Retrieval
maps a state ``x`` to ``patterns @ entmax(beta * patterns.T @ x)``, a sparse convex
combination of stored patterns. The energy

    H(x) = -conj(beta * patterns.T @ x) / beta + 0.5 * |x|^2

never increases along the retrieval iterates (see ``energy`` for the scaling).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .entmax import check_alpha, conjugate_value, entmax
from .errors import DimensionError, InputError
from .numerics import Tensor, as_tensor, matmul, reshape, transpose


@dataclass(frozen=True)
class MemoryBank:
    patterns: np.ndarray  # d x M, columns are stored patterns
    beta: float = 1.0
    alpha: float = 2.0

    def __post_init__(self):
        xi = np.array(self.patterns, dtype=float)
        if xi.ndim != 2 or min(xi.shape) < 1:
            raise DimensionError(f"patterns must be a non-empty d x M matrix, got {xi.shape}")
        if not np.all(np.isfinite(xi)):
            raise InputError("patterns must be finite")
        if not self.beta > 0:
            raise InputError(f"beta must be positive, got {self.beta}")
        xi.setflags(write=False)
        object.__setattr__(self, "patterns", xi)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "alpha", check_alpha(self.alpha))

    @property
    def dim(self) -> int:
        return self.patterns.shape[0]

    @property
    def size(self) -> int:
        return self.patterns.shape[1]

    @classmethod
    def from_rows(cls, rows, beta=1.0, alpha=2.0) -> "MemoryBank":
        return cls(np.asarray(rows, dtype=float).T, beta, alpha)


@dataclass
class RetrievalTrace:
    states: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def max_energy_increase(self) -> float:
        e = np.asarray(self.energies)
        return float(np.max(np.diff(e))) if len(e) > 1 else -np.inf


def _check_state(x, bank: MemoryBank) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (bank.dim,):
        raise DimensionError(f"state must have shape ({bank.dim},), got {x.shape}")
    return x


def energy(x, bank: MemoryBank, form: str = "scaled") -> float:
    """Hopfield energy of state ``x`` with C = 0.

    ``form="scaled"`` (default) divides the conjugate term by beta, which makes
    retrieval a concave-convex descent step for every beta > 0.
    ``form="literal"`` omits the 1/beta factor; it only agrees in its
    minimizers and can increase along retrieval when beta < 1.
    """
    x = _check_state(x, bank)
    z = bank.beta * (bank.patterns.T @ x)
    conj = float(conjugate_value(z, bank.alpha))
    if form == "scaled":
        return -conj / bank.beta + 0.5 * float(x @ x)
    if form == "literal":
        return -conj + 0.5 * float(x @ x)
    raise InputError(f"unknown energy form {form!r}")


def retrieval_weights(x, bank: MemoryBank, alpha: float | None = None) -> np.ndarray:
    x = _check_state(x, bank)
    return entmax(bank.beta * (bank.patterns.T @ x), bank.alpha if alpha is None else alpha)


def retrieve_step(x, bank: MemoryBank) -> np.ndarray:
    """One retrieval update: sparse convex combination of the stored patterns."""
    return bank.patterns @ retrieval_weights(x, bank)


def dense_step(x, bank: MemoryBank) -> np.ndarray:
    """Softmax (dense modern Hopfield) update with the same patterns and beta."""
    return bank.patterns @ retrieval_weights(x, bank, alpha=1.0)


def retrieve(x0, bank: MemoryBank, max_iters: int = 100, tol: float = 1e-8) -> RetrievalTrace:
    """Iterate ``retrieve_step`` until the step size drops below ``tol`` or the cap."""
    if max_iters < 1:
        raise InputError("max_iters must be ≥ 1")
    if not tol > 0:
        raise InputError("tol must be positive")
    x = _check_state(x0, bank).copy()
    trace = RetrievalTrace(states=[x], energies=[energy(x, bank)])
    for it in range(1, max_iters + 1):
        nxt = retrieve_step(x, bank)
        trace.states.append(nxt)
        trace.energies.append(energy(nxt, bank))
        trace.iterations = it
        if np.linalg.norm(nxt - x) < tol:
            trace.converged = True
            break
        x = nxt
    return trace


def separation_radius(bank: MemoryBank) -> float:
    """Half the smallest pairwise distance between stored patterns."""
    if bank.size < 2:
        raise InputError("separation radius is undefined for fewer than two patterns")
    xi = bank.patterns
    sq = (xi * xi).sum(axis=0)
    d2 = sq[:, None] + sq[None, :] - 2.0 * xi.T @ xi
    np.fill_diagonal(d2, np.inf)
    return 0.5 * float(np.sqrt(max(d2.min(), 0.0)))


# -- attention form -----------------------------------------------------------

def _split_heads(t: Tensor, n_heads: int) -> Tensor:
    *lead, n, d = t.shape
    t = reshape(t, (*lead, n, n_heads, d // n_heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(t, axes)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, h, n, dh = t.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return reshape(transpose(t, axes), (*lead, n, h * dh))


def gsh_attention(R, Y, W_Q, W_K, W_V, beta: float, alpha: float = 1.5, n_heads: int = 1,
                  mask=None, return_weights: bool = False):
    """Sparse Hopfield attention: ``entmax(beta * (R W_Q)(Y W_K)^T) (Y W_V)``.

    R is (..., T, d_in) queries, Y is (..., M, d_mem) memories. ``mask`` broadcasts
    against the (..., T, M) score matrix (True = attend). Inputs may be Tensors
    or arrays; the result is a Tensor (weights come back as an array).
    """
    R, Y = as_tensor(R), as_tensor(Y)
    if R.ndim < 2 or Y.ndim < 2:
        raise DimensionError("gsh_attention needs (..., T, d) queries and (..., M, d) memories")
    if Y.shape[-2] == 0:
        raise DimensionError("gsh_attention needs at least one memory")
    q = matmul(R, W_Q)
    k = matmul(Y, W_K)
    v = matmul(Y, W_V)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if q.shape[-1] % n_heads or v.shape[-1] % n_heads:
        raise DimensionError(f"widths must be divisible by n_heads={n_heads}")
    if n_heads > 1:
        q, k, v = _split_heads(q, n_heads), _split_heads(k, n_heads), _split_heads(v, n_heads)
        if mask is not None:
            mask = np.expand_dims(np.asarray(mask, bool), -3)
    scores = matmul(q, transpose(k, _swap_last(k.ndim))) * float(beta)
    weights = entmax(scores, alpha, mask)
    out = matmul(weights, v)
    if n_heads > 1:
        out = _merge_heads(out)
    return (out, weights.data) if return_weights else out


def _swap_last(ndim: int) -> list[int]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return axes


# -- executable checks ----------------------------------------------------------

def orthonormal_patterns(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    if m > d:
        raise InputError(f"cannot draw {m} orthonormal patterns in dimension {d}")
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q[:, :m]


def unit_patterns(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    xi = rng.normal(size=(d, m))
    return xi / np.linalg.norm(xi, axis=0, keepdims=True)


def in_basin(x, mu: int, bank: MemoryBank, iters: int = 50) -> bool:
    """True when retrieval from ``x`` settles nearer to pattern ``mu`` than to any other."""
    for _ in range(iters):
        x = retrieve_step(x, bank)
    dist = np.linalg.norm(bank.patterns - x[:, None], axis=0)
    return bool(np.argmin(dist) == mu and np.sum(dist == dist[mu]) == 1)


def check_sparse_dominates_dense(bank: MemoryBank, trials: int = 1000, noise: float = 0.3,
                                 seed: int = 0, slack: float = 1e-12) -> dict:
    """Compare one-step sparse and dense retrieval errors near stored patterns.

    Queries are ``xi_mu + noise * N(0, I/d)``; a query outside the sparse basin
    of ``xi_mu`` is rejected and redrawn (at most 20 times per trial).
    """
    if trials < 1:
        raise InputError("trials must be ≥ 1")
    rng = np.random.default_rng(seed)
    d, m = bank.patterns.shape
    gaps, violations, rejected = [], 0, 0
    worst = -np.inf
    for t in range(trials):
        mu = t % m
        xi = bank.patterns[:, mu]
        for _ in range(20):
            x = xi + noise * rng.normal(size=d) / np.sqrt(d)
            if in_basin(x, mu, bank):
                break
            rejected += 1
        else:
            continue
        e_sparse = np.linalg.norm(retrieve_step(x, bank) - xi)
        e_dense = np.linalg.norm(dense_step(x, bank) - xi)
        gap = e_dense - e_sparse
        worst = max(worst, -gap)
        violations += int(e_sparse > e_dense + slack)
        gaps.append(gap)
    return {
        "trials": trials,
        "evaluated": len(gaps),
        "rejected": rejected,
        "violations": violations,
        "mean_gap": float(np.mean(gaps)) if gaps else float("nan"),
        "worst_excess": float(worst),
    }


def energy_descent_experiment(trials: int = 500, d: int = 32, m: int = 8, beta: float = 8.0,
                              alphas=(1.0, 1.5, 2.0), max_iters: int = 100, tol: float = 1e-8,
                              slack: float = 1e-10, seed: int = 0) -> dict:
    """Random Gaussian banks and starts; count energy increases and non-stationary limits."""
    rng = np.random.default_rng(seed)
    violations = stationarity_failures = converged = 0
    worst = -np.inf
    for t in range(trials):
        alpha = alphas[t % len(alphas)]
        bank = MemoryBank(rng.normal(size=(d, m)), beta, alpha)
        tr = retrieve(rng.normal(size=d), bank, max_iters, tol)
        inc = np.diff(tr.energies)
        worst = max(worst, float(inc.max()))
        violations += int((inc > slack).sum())
        if tr.converged:
            converged += 1
            last = tr.states[-1]
            if np.linalg.norm(retrieve_step(last, bank) - last) >= 10 * tol:
                stationarity_failures += 1
    return {"trials": trials, "violations": violations, "worst_increase": worst,
            "converged": converged, "stationarity_failures": stationarity_failures}


def one_step_success_rate(bank: MemoryBank, trials: int, noise: float,
                          rng: np.random.Generator) -> float:
    """Fraction of noisy queries whose one-step retrieval lands within R_min of the target."""
    r_min = separation_radius(bank)
    d, m = bank.patterns.shape
    hits = 0
    for t in range(trials):
        mu = int(rng.integers(m))
        xi = bank.patterns[:, mu]
        x = xi + noise * rng.normal(size=d) / np.sqrt(d)
        hits += int(np.linalg.norm(retrieve_step(x, bank) - xi) < r_min)
    return hits / trials


def capacity_trend_experiment(dims, target_success: float = 0.99, beta: float = 1.0,
                              alpha: float = 2.0, noise: float = 0.8, trials: int = 200,
                              max_m: int = 8192, seed: int = 0) -> list[dict]:
    """Empirical capacity per dimension.

    For each d a fixed pattern pool is drawn (an orthonormal frame first, then
    random unit vectors) and the largest prefix size M whose one-step success
    rate reaches ``target_success`` is found by bisection. Returns one row per d.
    """
    dims = list(dims)
    if not dims:
        raise InputError("dims must be non-empty")
    rows = []
    for d in dims:
        rng = np.random.default_rng([seed, d])
        pool = np.concatenate([orthonormal_patterns(d, d, rng),
                               unit_patterns(d, max(max_m - d, 0), rng)], axis=1)[:, :max_m]

        def ok(m):
            bank = MemoryBank(pool[:, :m], beta, alpha)
            return one_step_success_rate(bank, trials, noise, np.random.default_rng([seed, d, m])) >= target_success

        lo, hi = 1, max_m
        if ok(hi):
            lo = hi
        else:
            while hi - lo > 1:  # ok(lo) holds (M=1 always succeeds), ok(hi) fails
                mid = (lo + hi) // 2
                if mid >= 2 and ok(mid):
                    lo = mid
                else:
                    hi = mid
        rows.append({"d": d, "M_hat": lo, "capped": lo == max_m})
    return rows


def beta_decay_profile(bank: MemoryBank, x, mu: int, betas) -> np.ndarray:
    """One-step retrieval error towards pattern ``mu`` for each beta in ``betas``."""
    errs = []
    for b in betas:
        trial = MemoryBank(bank.patterns, b, bank.alpha)
        errs.append(np.linalg.norm(retrieve_step(x, trial) - bank.patterns[:, mu]))
    return np.asarray(errs)


def write_rows_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path
