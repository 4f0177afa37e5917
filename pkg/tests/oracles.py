"""Slow, independent reference computations the fast paths are checked against."""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


def conv_direct(x, kernels, bias):
    h, w, cin = x.shape
    cout = kernels.shape[3]
    out = np.zeros((h, w, cout))
    for y in range(h):
        for xx in range(w):
            for o in range(cout):
                total = bias[o]
                for ky in range(3):
                    for kx in range(3):
                        sy, sx = y + ky - 1, xx + kx - 1
                        if 0 <= sy < h and 0 <= sx < w:
                            for c in range(cin):
                                total += x[sy, sx, c] * kernels[ky, kx, c, o]
                out[y, xx, o] = total
    return out


def maxpool_direct(x):
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c))
    for y in range(0, h, 2):
        for xx in range(0, w, 2):
            for ch in range(c):
                out[y // 2, xx // 2, ch] = max(
                    x[y, xx, ch], x[y, xx + 1, ch], x[y + 1, xx, ch], x[y + 1, xx + 1, ch]
                )
    return out


def collapse(path, blank):
    out = []
    prev = None
    for c in path:
        if c != prev and c != blank:
            out.append(c)
        prev = c
    return out


def ctc_enumerate(logits, target, blank):
    """-ln sum over every class sequence whose collapse equals ``target``."""
    logits = np.asarray(logits, dtype=float)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    steps, k = probs.shape
    total = 0.0
    for path in itertools.product(range(k), repeat=steps):
        if collapse(path, blank) == list(target):
            total += float(np.prod([probs[t, c] for t, c in enumerate(path)]))
    return -np.log(total)


def edit_distance(a, b):
    """Memoized recursive Levenshtein distance."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def pr_sweep(scores, labels):
    """Every distinct score as a threshold, metrics of score >= threshold."""
    scores = list(scores)
    labels = list(labels)
    positives = sum(labels)
    points = []
    for thr in sorted(set(scores)):
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 0)
        precision = tp / (tp + fp) if tp + fp else 1.0
        points.append((thr, precision, tp / positives))
    return points


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_unroll(x, w, u, b):
    """Left-to-right GRU over a T×F sequence, one explicit step at a time."""
    hidden = u.shape[0]
    h = np.zeros(hidden)
    outs = []
    for t in range(x.shape[0]):
        xw = x[t] @ w + b
        z = sigmoid(xw[:hidden] + h @ u[:, :hidden])
        r = sigmoid(xw[hidden:2 * hidden] + h @ u[:, hidden:2 * hidden])
        n = np.tanh(xw[2 * hidden:] + (r * h) @ u[:, 2 * hidden:])
        h = (1 - z) * n + z * h
        outs.append(h)
    return np.array(outs)


def lstm_unroll(x, w, u, b):
    hidden = u.shape[0]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    outs = []
    for t in range(x.shape[0]):
        g = x[t] @ w + b + h @ u
        i, f, o = sigmoid(g[:hidden]), sigmoid(g[hidden:2 * hidden]), sigmoid(g[2 * hidden:3 * hidden])
        c = f * c + i * np.tanh(g[3 * hidden:])
        h = o * np.tanh(c)
        outs.append(h)
    return np.array(outs)


def finite_difference_check(loss_fn, params, rng, n_coords=100, h=1e-5):
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn()`` must rebuild the graph from the current parameter values and
    return a scalar Tensor. ``n_coords`` coordinates are drawn across all params.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    sizes = np.array([p.size for p in params])
    worst = 0.0
    for _ in range(n_coords):
        which = rng.choice(len(params), p=sizes / sizes.sum())
        p = params[which]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = loss_fn().item()
        p.data[idx] = orig - h
        down = loss_fn().item()
        p.data[idx] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[which][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst


def ctc_label_table(logits, blank):
    """Total probability of every label reachable in ``len(logits)`` steps.

    Enumerates all class sequences once and buckets them by their collapse,
    so one call covers every target for a given (T, A).
    """
    logits = np.asarray(logits, dtype=float)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    steps, k = probs.shape
    paths = np.array(list(itertools.product(range(k), repeat=steps)), dtype=int)
    path_probs = np.prod(probs[np.arange(steps), paths], axis=1)
    table = {}
    for path, p in zip(map(tuple, paths), path_probs):
        key = tuple(collapse(path, blank))
        table[key] = table.get(key, 0.0) + float(p)
    return table
