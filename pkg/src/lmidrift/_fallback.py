"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``."""

from math import factorial

import numpy as np


def _class_prob(logits, cls):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[..., cls] / e.sum(axis=-1)


def shapley_walk_linear(contrib, mask_contrib, bias, cls, perms):
    contrib = np.asarray(contrib, dtype=np.float64)
    mask_contrib = np.asarray(mask_contrib, dtype=np.float64)
    perms = np.asarray(perms, dtype=np.int64)
    m, n = perms.shape
    base = bias + n * mask_contrib
    steps = contrib[perms] - mask_contrib          # (m, n, C)
    logits = base + np.cumsum(steps, axis=1)        # after adding each position
    probs = _class_prob(np.concatenate([np.broadcast_to(base, (m, 1, base.size)), logits], axis=1), cls)
    deltas = np.diff(probs, axis=1)                 # (m, n), in permutation order
    out_sum = np.zeros(n)
    out_sq = np.zeros(n)
    np.add.at(out_sum, perms, deltas)
    np.add.at(out_sq, perms, deltas * deltas)
    return out_sum, out_sq


def coalition_values_linear(contrib, mask_contrib, bias, cls):
    contrib = np.asarray(contrib, dtype=np.float64)
    n = contrib.shape[0]
    present = ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(np.float64)
    logits = bias + present @ contrib + (n - present.sum(axis=1, keepdims=True)) * mask_contrib
    return _class_prob(logits, cls)


def shapley_from_values(values, n):
    values = np.asarray(values, dtype=np.float64)
    subsets = np.arange(1 << n)
    sizes = np.array([bin(s).count("1") for s in subsets])
    weights = np.array([factorial(s) * factorial(n - s - 1) / factorial(n) for s in range(n)])
    scores = np.zeros(n)
    for i in range(n):
        without = subsets[(subsets >> i) & 1 == 0]
        scores[i] = np.sum(weights[sizes[without]] * (values[without | (1 << i)] - values[without]))
    return scores
