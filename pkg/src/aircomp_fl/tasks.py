"""Learning tasks: loss, stochastic gradient and accuracy on flat parameter vectors.

A task is any object with ``dim``, ``init(rng)``, ``loss``, ``gradient`` and
``accuracy``; batches are passed as ``(X, y)`` arrays. Tasks with a known
optimum also expose ``f_star``, ``L``, ``objective`` and ``objective_gradient``.
"""
from __future__ import annotations

from typing import Protocol

import numpy as np
from scipy.special import log_softmax, softmax


class LearningTask(Protocol):
    dim: int

    def init(self, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray: ...

    def loss(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float: ...

    def gradient(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    def accuracy(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float: ...


class QuadraticTask:
    """F(w) = 1/2 ||w - w*||^2 with sample offsets as gradient noise.

    Sample ``x`` contributes ``1/2||w - w*||^2 + <x, w - w*>``; on a dataset
    whose offsets average to zero this is exactly the population objective,
    so ``f_star = 0`` and ``L = 1``.
    """

    L = 1.0
    f_star = 0.0

    def __init__(self, w_star: np.ndarray):
        self.w_star = np.asarray(w_star, dtype=float)
        self.dim = self.w_star.size

    def init(self, rng, scale=1.0):
        return self.w_star + scale * rng.standard_normal(self.dim)

    def objective(self, w):
        r = w - self.w_star
        return 0.5 * float(r @ r)

    def objective_gradient(self, w):
        return w - self.w_star

    def loss(self, w, X, y=None):
        r = w - self.w_star
        return 0.5 * float(r @ r) + float(X.mean(axis=0) @ r)

    def gradient(self, w, X, y=None):
        return (w - self.w_star) + X.mean(axis=0)

    def accuracy(self, w, X=None, y=None):
        # proximity score in (0, 1]; the quadratic task has no labels
        return 1.0 / (1.0 + 2.0 * self.objective(w))


def quadratic_task(d: int, rng: np.random.Generator | None = None) -> QuadraticTask:
    if d < 1:
        raise ValueError("d must be >= 1")
    w_star = np.zeros(d) if rng is None else rng.standard_normal(d)
    return QuadraticTask(w_star)


class LogisticTask:
    """Multinomial logistic regression; ``w = [W.ravel(), b]`` with ``W`` of shape (classes, n)."""

    def __init__(self, n: int, classes: int):
        if n < 1 or classes < 2:
            raise ValueError("need n >= 1 and classes >= 2")
        self.n = n
        self.classes = classes
        self.dim = n * classes + classes

    def unpack(self, w):
        c, n = self.classes, self.n
        return w[: c * n].reshape(c, n), w[c * n:]

    def init(self, rng, scale=0.01):
        return scale * rng.standard_normal(self.dim)

    def logits(self, w, X):
        W, b = self.unpack(w)
        return X @ W.T + b

    def loss(self, w, X, y):
        lp = log_softmax(self.logits(w, X), axis=1)
        return float(-lp[np.arange(len(y)), y].mean())

    def gradient(self, w, X, y):
        P = softmax(self.logits(w, X), axis=1)
        P[np.arange(len(y)), y] -= 1.0
        P /= len(y)
        return np.concatenate([(P.T @ X).ravel(), P.sum(axis=0)])

    def accuracy(self, w, X, y):
        return float(np.mean(np.argmax(self.logits(w, X), axis=1) == y))

    def lipschitz_bound(self, X) -> float:
        """Upper bound on the gradient Lipschitz constant of the mean loss over ``X``."""
        Xt = np.hstack([X, np.ones((X.shape[0], 1))])
        return 0.5 * float(np.linalg.eigvalsh(Xt.T @ Xt / X.shape[0])[-1])


def logistic_task(n: int, classes: int) -> LogisticTask:
    return LogisticTask(n, classes)


class TinyMLPTask:
    """One tanh hidden layer and a softmax output."""

    def __init__(self, n: int, hidden: int, classes: int):
        if hidden < 1 or hidden > 64:
            raise ValueError("hidden units must be in [1, 64]")
        self.n, self.h, self.classes = n, hidden, classes
        self.dim = n * hidden + hidden + hidden * classes + classes

    def unpack(self, w):
        n, h, c = self.n, self.h, self.classes
        i = 0
        W1 = w[i:i + h * n].reshape(h, n); i += h * n
        b1 = w[i:i + h]; i += h
        W2 = w[i:i + c * h].reshape(c, h); i += c * h
        b2 = w[i:i + c]
        return W1, b1, W2, b2

    def init(self, rng, scale=None):
        W1s = np.sqrt(1.0 / self.n) if scale is None else scale
        W2s = np.sqrt(1.0 / self.h) if scale is None else scale
        n, h, c = self.n, self.h, self.classes
        return np.concatenate([
            W1s * rng.standard_normal(h * n), np.zeros(h),
            W2s * rng.standard_normal(c * h), np.zeros(c),
        ])

    def _forward(self, w, X):
        W1, b1, W2, b2 = self.unpack(w)
        H = np.tanh(X @ W1.T + b1)
        return H, H @ W2.T + b2

    def loss(self, w, X, y):
        _, Z = self._forward(w, X)
        return float(-log_softmax(Z, axis=1)[np.arange(len(y)), y].mean())

    def gradient(self, w, X, y):
        W1, b1, W2, b2 = self.unpack(w)
        H, Z = self._forward(w, X)
        G = softmax(Z, axis=1)
        G[np.arange(len(y)), y] -= 1.0
        G /= len(y)
        dH = (G @ W2) * (1.0 - H * H)
        return np.concatenate([(dH.T @ X).ravel(), dH.sum(axis=0), (G.T @ H).ravel(), G.sum(axis=0)])

    def accuracy(self, w, X, y):
        _, Z = self._forward(w, X)
        return float(np.mean(np.argmax(Z, axis=1) == y))


def tiny_mlp_task(n: int, hidden: int, classes: int) -> TinyMLPTask:
    return TinyMLPTask(n, hidden, classes)
