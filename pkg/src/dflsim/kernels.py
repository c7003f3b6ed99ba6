"""Dense forward/backward kernels for the two-block network.

Each kernel has a pure-numpy implementation and a loop-based twin compiled
with numba. The compiled path is used when numba imports cleanly and the
environment variable ``DFLSIM_DISABLE_NUMBA`` is unset; set it to 1 to force
the numpy path (useful for debugging and for the benchmark).
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return wrap


def _jit_wanted() -> bool:
    flag = os.environ.get("DFLSIM_DISABLE_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag not in ("1", "true", "yes")


JIT_ENABLED = _jit_wanted()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def logits_np(X, W1, b1, W2, b2):
    """Forward pass: tanh hidden layer, affine head. Returns (n, C) logits."""
    H = np.tanh(X @ W1.T + b1)
    return H @ W2.T + b2


def loss_np(X, y, W1, b1, W2, b2):
    """Mean cross-entropy over the batch."""
    Z = logits_np(X, W1, b1, W2, b2)
    Z = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(Z).sum(axis=1))
    return float(np.mean(lse - Z[np.arange(len(y)), y]))


def loss_grads_np(X, y, W1, b1, W2, b2):
    """Loss plus gradients for all four parameter tensors."""
    n = X.shape[0]
    H = np.tanh(X @ W1.T + b1)
    Z = H @ W2.T + b2
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    P = E / E.sum(axis=1, keepdims=True)
    idx = np.arange(n)
    loss = float(np.mean(np.log(E.sum(axis=1)) - Z[idx, y]))
    D = P.copy()
    D[idx, y] -= 1.0
    D /= n
    gW2 = D.T @ H
    gb2 = D.sum(axis=0)
    dH = (D @ W2) * (1.0 - H * H)
    gW1 = dH.T @ X
    gb1 = dH.sum(axis=0)
    return loss, gW1, gb1, gW2, gb2


def accuracy_np(X, y, W1, b1, W2, b2):
    """Fraction of argmax predictions matching y."""
    Z = logits_np(X, W1, b1, W2, b2)
    return float(np.mean(Z.argmax(axis=1) == y))


# ---------------------------------------------------------------------------
# numba twins (explicit loops, single-threaded, deterministic order)
# ---------------------------------------------------------------------------

@njit(cache=False)
def _logits_nb(X, W1, b1, W2, b2):
    n, d = X.shape
    h = W1.shape[0]
    c = W2.shape[0]
    out = np.empty((n, c))
    hid = np.empty(h)
    for i in range(n):
        for j in range(h):
            s = b1[j]
            for k in range(d):
                s += W1[j, k] * X[i, k]
            hid[j] = math.tanh(s)
        for a in range(c):
            s = b2[a]
            for j in range(h):
                s += W2[a, j] * hid[j]
            out[i, a] = s
    return out


@njit(cache=False)
def _loss_nb(X, y, W1, b1, W2, b2):
    n = X.shape[0]
    Z = _logits_nb(X, W1, b1, W2, b2)
    c = Z.shape[1]
    total = 0.0
    for i in range(n):
        mx = Z[i, 0]
        for a in range(1, c):
            if Z[i, a] > mx:
                mx = Z[i, a]
        z = 0.0
        for a in range(c):
            z += math.exp(Z[i, a] - mx)
        total += math.log(z) - (Z[i, y[i]] - mx)
    return total / n


@njit(cache=False)
def _loss_grads_nb(X, y, W1, b1, W2, b2):
    n, d = X.shape
    h = W1.shape[0]
    c = W2.shape[0]
    gW1 = np.zeros((h, d))
    gb1 = np.zeros(h)
    gW2 = np.zeros((c, h))
    gb2 = np.zeros(c)
    hid = np.empty(h)
    logit = np.empty(c)
    p = np.empty(c)
    loss = 0.0
    for i in range(n):
        for j in range(h):
            s = b1[j]
            for k in range(d):
                s += W1[j, k] * X[i, k]
            hid[j] = math.tanh(s)
        mx = -1e300
        for a in range(c):
            s = b2[a]
            for j in range(h):
                s += W2[a, j] * hid[j]
            logit[a] = s
            if s > mx:
                mx = s
        z = 0.0
        for a in range(c):
            p[a] = math.exp(logit[a] - mx)
            z += p[a]
        loss += math.log(z) - (logit[y[i]] - mx)
        for a in range(c):
            p[a] /= z
        p[y[i]] -= 1.0
        for a in range(c):
            da = p[a] / n
            gb2[a] += da
            for j in range(h):
                gW2[a, j] += da * hid[j]
        for j in range(h):
            s = 0.0
            for a in range(c):
                s += (p[a] / n) * W2[a, j]
            dh = s * (1.0 - hid[j] * hid[j])
            gb1[j] += dh
            for k in range(d):
                gW1[j, k] += dh * X[i, k]
    return loss / n, gW1, gb1, gW2, gb2


@njit(cache=False)
def _accuracy_nb(X, y, W1, b1, W2, b2):
    Z = _logits_nb(X, W1, b1, W2, b2)
    n, c = Z.shape
    hits = 0
    for i in range(n):
        best = 0
        for a in range(1, c):
            if Z[i, a] > Z[i, best]:
                best = a
        if best == y[i]:
            hits += 1
    return hits / n


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _as64(X, y, W1, b1, W2, b2):
    return (
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.int64),
        np.ascontiguousarray(W1, dtype=np.float64),
        np.ascontiguousarray(b1, dtype=np.float64),
        np.ascontiguousarray(W2, dtype=np.float64),
        np.ascontiguousarray(b2, dtype=np.float64),
    )


def logits(X, W1, b1, W2, b2):
    if JIT_ENABLED:
        return _logits_nb(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(W1, dtype=np.float64),
            np.ascontiguousarray(b1, dtype=np.float64),
            np.ascontiguousarray(W2, dtype=np.float64),
            np.ascontiguousarray(b2, dtype=np.float64),
        )
    return logits_np(X, W1, b1, W2, b2)


def loss(X, y, W1, b1, W2, b2):
    if JIT_ENABLED:
        return float(_loss_nb(*_as64(X, y, W1, b1, W2, b2)))
    return loss_np(X, y, W1, b1, W2, b2)


def loss_grads(X, y, W1, b1, W2, b2):
    if JIT_ENABLED:
        l, gW1, gb1, gW2, gb2 = _loss_grads_nb(*_as64(X, y, W1, b1, W2, b2))
        return float(l), gW1, gb1, gW2, gb2
    return loss_grads_np(X, y, W1, b1, W2, b2)


def accuracy(X, y, W1, b1, W2, b2):
    if JIT_ENABLED:
        return float(_accuracy_nb(*_as64(X, y, W1, b1, W2, b2)))
    return accuracy_np(X, y, W1, b1, W2, b2)
