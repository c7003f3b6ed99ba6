"""One-hidden-layer network split into a shared block and a personal head.

The shared block `w` holds the input-to-hidden affine map (tanh activation)
and is what clients exchange; the head `beta` holds the hidden-to-logit
affine map and never leaves its owner. Both blocks are stored flat in
float64 so they can be averaged and perturbed as plain vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .core import DivergedError, ModelParams, ShapeMismatchError


@dataclass(frozen=True)
class ModelShape:
    d_in: int
    d_hidden: int
    num_classes: int

    @property
    def w_size(self) -> int:
        return self.d_hidden * (self.d_in + 1)

    @property
    def beta_size(self) -> int:
        return self.num_classes * (self.d_hidden + 1)


def unpack_w(shape: ModelShape, w: np.ndarray):
    """Views (W1, b1) into the flat shared block."""
    if w.size != shape.w_size:
        raise ShapeMismatchError(f"shape-mismatch: w has {w.size}, expected {shape.w_size}")
    cut = shape.d_hidden * shape.d_in
    return w[:cut].reshape(shape.d_hidden, shape.d_in), w[cut:]


def unpack_beta(shape: ModelShape, beta: np.ndarray):
    """Views (W2, b2) into the flat head block."""
    if beta.size != shape.beta_size:
        raise ShapeMismatchError(f"shape-mismatch: beta has {beta.size}, expected {shape.beta_size}")
    cut = shape.num_classes * shape.d_hidden
    return beta[:cut].reshape(shape.num_classes, shape.d_hidden), beta[cut:]


def pack_grads(shape: ModelShape, gW1, gb1, gW2, gb2):
    g_w = np.concatenate([gW1.ravel(), gb1])
    g_beta = np.concatenate([gW2.ravel(), gb2])
    return g_w, g_beta


def init_params(shape: ModelShape, rng: np.random.Generator) -> ModelParams:
    """Gaussian fan-in init for the weights, zero biases."""
    W1 = rng.normal(0.0, 1.0, (shape.d_hidden, shape.d_in)) / np.sqrt(shape.d_in)
    W2 = rng.normal(0.0, 1.0, (shape.num_classes, shape.d_hidden)) / np.sqrt(shape.d_hidden)
    w = np.concatenate([W1.ravel(), np.zeros(shape.d_hidden)])
    beta = np.concatenate([W2.ravel(), np.zeros(shape.num_classes)])
    return ModelParams(w, beta)


def forward(shape: ModelShape, params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Logits for a batch (or a single example given as a 1-d vector)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W1, b1 = unpack_w(shape, params.w)
    W2, b2 = unpack_beta(shape, params.beta)
    return kernels.logits(X, W1, b1, W2, b2)


def loss(shape: ModelShape, params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    W1, b1 = unpack_w(shape, params.w)
    W2, b2 = unpack_beta(shape, params.beta)
    return kernels.loss(X, y, W1, b1, W2, b2)


def loss_and_grads(shape: ModelShape, params: ModelParams, X, y):
    """Returns (loss, g_w, g_beta) with both gradients flattened."""
    W1, b1 = unpack_w(shape, params.w)
    W2, b2 = unpack_beta(shape, params.beta)
    l, gW1, gb1, gW2, gb2 = kernels.loss_grads(X, y, W1, b1, W2, b2)
    g_w, g_beta = pack_grads(shape, gW1, gb1, gW2, gb2)
    return l, g_w, g_beta


def accuracy(shape: ModelShape, params: ModelParams, X, y) -> float:
    W1, b1 = unpack_w(shape, params.w)
    W2, b2 = unpack_beta(shape, params.beta)
    return kernels.accuracy(X, y, W1, b1, W2, b2)


def proxy_gradient(shape: ModelShape, params: ModelParams, X, y) -> np.ndarray:
    """Similarity proxy: the flattened shared-block gradient on one batch."""
    _, g_w, _ = loss_and_grads(shape, params, X, y)
    return g_w


# ---------------------------------------------------------------------------
# local update
# ---------------------------------------------------------------------------

Batcher = Callable[[], tuple[np.ndarray, np.ndarray]]


def make_batcher(X: np.ndarray, y: np.ndarray, batch_size: int,
                 rng: np.random.Generator) -> Batcher:
    """Minibatch sampler; degenerates to full-batch when the shard is small.

    Full-batch mode consumes no randomness, so a batcher over a shard with
    n <= batch_size is deterministic regardless of the generator handed in.
    """
    n = len(y)
    if batch_size >= n:
        def full() -> tuple[np.ndarray, np.ndarray]:
            return X, y
        return full

    def draw() -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(n, size=batch_size, replace=False)
        return X[idx], y[idx]
    return draw


def local_update(shape: ModelShape, params: ModelParams, batcher: Batcher,
                 k_beta: int, k_w: int, eta_beta: float, eta_w: float,
                 momentum: float = 0.0):
    """Blockwise SGD: head steps first with `w` frozen, then shared-block
    steps with the new head frozen. Returns (new params, last batch used),
    where the batch is None when both step counts are zero.

    The input params are not modified.
    """
    p = params.copy()
    last = None
    # overflow on the way to the finiteness check below is expected, not a bug
    with np.errstate(over="ignore", invalid="ignore"):
        vel_beta = np.zeros_like(p.beta)
        for _ in range(k_beta):
            Xb, yb = batcher()
            _, _, g_beta = loss_and_grads(shape, p, Xb, yb)
            if momentum > 0.0:
                vel_beta = momentum * vel_beta + g_beta
                p.beta -= eta_beta * vel_beta
            else:
                p.beta -= eta_beta * g_beta
            last = (Xb, yb)
        vel_w = np.zeros_like(p.w)
        for _ in range(k_w):
            Xb, yb = batcher()
            _, g_w, _ = loss_and_grads(shape, p, Xb, yb)
            if momentum > 0.0:
                vel_w = momentum * vel_w + g_w
                p.w -= eta_w * vel_w
            else:
                p.w -= eta_w * g_w
            last = (Xb, yb)
    if not np.all(np.isfinite(p.w)) or not np.all(np.isfinite(p.beta)):
        raise DivergedError("local update")
    return p, last
