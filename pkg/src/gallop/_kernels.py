"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time: setting the environment variable
``GALLOP_NO_NUMBA`` to a non-empty value (or running without numba installed)
selects the numpy implementations. Both paths make identical selection
decisions; float results agree to ~1e-15 (summation order differs).

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

import numpy as np

_want_numba = not os.environ.get("GALLOP_NO_NUMBA")

if _want_numba:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _want_numba = False

BACKEND = "numba" if _want_numba else "numpy"


def _topk_block_mask_np(sims, k):
    # Stable argsort on -sims orders by descending value, ties by ascending
    # row index, which is exactly the k-th-rank tie-break contract.
    order = np.argsort(-sims, axis=1, kind="stable")
    mask = np.zeros_like(sims)
    np.put_along_axis(mask, order[:, :k, :], 1.0, axis=1)
    return mask


def _ce_mean_np(logits, labels):
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    lse = np.log(denom[:, 0]) + row_max[:, 0]
    losses = lse - logits[np.arange(logits.shape[0]), labels]
    return losses.mean(), probs


if _want_numba:

    @njit(cache=True)
    def _topk_block_mask_nb(sims, k):
        B, L, C = sims.shape
        if 2 * k <= L:
            mask = np.zeros_like(sims)
            for b in range(B):
                for c in range(C):
                    for _ in range(k):
                        best = -1
                        best_val = -np.inf
                        for i in range(L):
                            # strict > keeps the lowest index among ties
                            if mask[b, i, c] == 0.0 and sims[b, i, c] > best_val:
                                best_val = sims[b, i, c]
                                best = i
                        mask[b, best, c] = 1.0
            return mask
        # large k: evict the L-k smallest instead; ties at the boundary must
        # drop the highest index first, the mirror of the selection rule
        mask = np.ones_like(sims)
        for b in range(B):
            for c in range(C):
                for _ in range(L - k):
                    worst = -1
                    worst_val = np.inf
                    for i in range(L - 1, -1, -1):
                        if mask[b, i, c] == 1.0 and sims[b, i, c] < worst_val:
                            worst_val = sims[b, i, c]
                            worst = i
                    mask[b, worst, c] = 0.0
        return mask

    @njit(cache=True)
    def _ce_mean_nb(logits, labels):
        B, C = logits.shape
        probs = np.empty_like(logits)
        total = 0.0
        for b in range(B):
            row_max = logits[b, 0]
            for c in range(1, C):
                if logits[b, c] > row_max:
                    row_max = logits[b, c]
            denom = 0.0
            for c in range(C):
                e = np.exp(logits[b, c] - row_max)
                probs[b, c] = e
                denom += e
            for c in range(C):
                probs[b, c] /= denom
            total += np.log(denom) + row_max - logits[b, labels[b]]
        return total / B, probs


def topk_block_mask(sims, k):
    """0/1 mask of the k largest entries along axis 1 of a (B, L, C) array.

    Ties at the k-th rank go to the lowest row index. The mask is used both
    for the forward top-k average and as the frozen selection in its
    backward pass.
    """
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    if BACKEND == "numba":
        return _topk_block_mask_nb(sims, k)
    return _topk_block_mask_np(sims, k)


def ce_mean(logits, labels):
    """Mean cross-entropy over rows, computed in log space from logits.

    Returns ``(loss, probs)`` where ``probs`` is the row-wise softmax cached
    for the backward pass ``(probs - onehot) / B``.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if BACKEND == "numba":
        return _ce_mean_nb(logits, labels)
    return _ce_mean_np(logits, labels)
