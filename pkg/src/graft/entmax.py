"""
alpha-EntMax, the Tsallis alpha-entropy and its convex conjugate.

``entmax(z, alpha)`` solves ``argmax_{p in simplex} <p, z> + tsallis(p, alpha)``.
The solution has the thresholded form ``p_i = [(alpha-1) z_i - tau]_+ ** (1/(alpha-1))``;
alpha=1 is softmax and alpha=2 is sparsemax (Euclidean projection onto the simplex).

Works along the last axis of arrays of any rank. Passing a :class:`Tensor`
returns a Tensor wired into the autodiff graph.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError
from .numerics import Tensor, make_node

BISECT_MAX_ITERS = 200
BISECT_TOL = 1e-12
SIMPLEX_TOL = 1e-6


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 1.0 <= alpha <= 2.0:
        raise InputError(f"alpha must lie in [1, 2], got {alpha}")
    return alpha


def _softmax(z, valid):
    zmax = np.where(valid, z, -np.inf).max(axis=-1, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(valid, np.exp(np.where(valid, z - zmax, 0.0)), 0.0)
    total = e.sum(axis=-1, keepdims=True)
    return e / np.where(total > 0, total, 1.0)


def _sparsemax(z, valid):
    # Sort-based exact threshold (Held et al. / Michelot); invalid entries sort last.
    zs = np.where(valid, z, -np.inf)
    srt = -np.sort(-zs, axis=-1)
    k = np.arange(1, z.shape[-1] + 1, dtype=float)
    csum = np.cumsum(np.where(np.isfinite(srt), srt, 0.0), axis=-1) - 1.0
    cond = np.isfinite(srt) & (srt - csum / k > 0)
    support = cond.sum(axis=-1, keepdims=True)
    safe = np.maximum(support, 1)
    tau = np.take_along_axis(csum, safe - 1, axis=-1) / safe
    p = np.where(valid, np.maximum(z - tau, 0.0), 0.0)
    return np.where(support > 0, p, 0.0)


def _entmax_bisect(z, alpha, valid):
    am1 = alpha - 1.0
    inv = 1.0 / am1
    x = np.where(valid, z * am1, -np.inf)
    count = valid.sum(axis=-1, keepdims=True)
    empty = count == 0
    xmax = np.where(empty, 0.0, x.max(axis=-1, keepdims=True))
    # sum(p) >= 1 at lo (largest entry alone reaches 1); sum(p) <= 1 at hi
    lo = xmax - 1.0
    hi = xmax - (1.0 / np.maximum(count, 1)) ** am1
    for _ in range(BISECT_MAX_ITERS):
        tau = 0.5 * (lo + hi)
        mass = (np.maximum(x - tau, 0.0) ** inv).sum(axis=-1, keepdims=True)
        above = mass >= 1.0
        lo = np.where(above, tau, lo)
        hi = np.where(above, hi, tau)
        if np.all(hi - lo <= BISECT_TOL):
            break
    p = np.maximum(x - lo, 0.0) ** inv
    total = p.sum(axis=-1, keepdims=True)
    p = p / np.where(total > 0, total, 1.0)
    return np.where(empty, 0.0, p)


def _entmax_array(z: np.ndarray, alpha: float, mask) -> np.ndarray:
    if z.ndim == 0 or z.shape[-1] == 0:
        raise DimensionError("entmax needs at least one score along the last axis")
    valid = np.ones(z.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), z.shape)
    if not np.all(np.isfinite(z[valid])):
        raise InputError("entmax scores must be finite")
    if alpha == 1.0:
        return _softmax(z, valid)
    if alpha == 2.0:
        return _sparsemax(z, valid)
    return _entmax_bisect(z, alpha, valid)


def entmax_vjp(p: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    """Vector-Jacobian product of entmax at output ``p``.

    The Jacobian is ``diag(s) - s s^T / sum(s)`` with ``s = p**(2-alpha)`` on the support.
    """
    support = p > 0
    s = np.where(support, np.where(support, p, 1.0) ** (2.0 - alpha), 0.0)
    ssum = s.sum(axis=-1, keepdims=True)
    proj = (s * grad).sum(axis=-1, keepdims=True) / np.where(ssum > 0, ssum, 1.0)
    return s * (grad - proj)


def entmax(z, alpha: float = 1.5, mask=None):
    """Map scores (last axis) to a sparse probability vector.

    ``mask`` (broadcastable, True = keep) removes entries from the simplex; a row
    with every entry masked maps to all zeros.
    """
    alpha = check_alpha(alpha)
    if isinstance(z, Tensor):
        p = _entmax_array(z.data, alpha, mask)
        return make_node(p, (z,), lambda g: (entmax_vjp(p, g, alpha),))
    return _entmax_array(np.asarray(z, dtype=float), alpha, mask)


def softmax(z, mask=None):
    return entmax(z, 1.0, mask)


def sparsemax(z, mask=None):
    return entmax(z, 2.0, mask)


def tsallis_entropy(p, alpha: float) -> float | np.ndarray:
    """Tsallis alpha-entropy along the last axis (Shannon entropy at alpha=1)."""
    alpha = check_alpha(alpha)
    p = np.asarray(p, dtype=float)
    if np.any(p < -SIMPLEX_TOL) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise InputError("tsallis_entropy expects points on the probability simplex")
    p = np.clip(p, 0.0, None)
    if alpha == 1.0:
        pos = p > 0
        return -(np.where(pos, p * np.log(np.where(pos, p, 1.0)), 0.0)).sum(axis=-1)
    return (p - p**alpha).sum(axis=-1) / (alpha * (alpha - 1.0))


def conjugate_value(z, alpha: float = 1.5) -> float | np.ndarray:
    """Convex conjugate of the negative Tsallis entropy restricted to the simplex.

    Equal to ``<p*, z> + tsallis(p*)`` with ``p* = entmax(z)``; log-sum-exp at alpha=1.
    """
    z = np.asarray(z, dtype=float)
    p = entmax(z, alpha)
    return (p * z).sum(axis=-1) + tsallis_entropy(p, alpha)


def support_size(p, atol: float = 0.0) -> np.ndarray:
    return (np.asarray(p) > atol).sum(axis=-1)
