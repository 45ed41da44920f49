"""Fit a radial IMQ expansion to one Yat atom on an annulus and probe its far tail."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import biased_atom
from .adam import Adam, AdamConfig


class DivergenceError(FloatingPointError):
    pass


def annulus_samples(n: int, r1: float, r2: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform-by-area points in the planar annulus r1 <= ||x|| <= r2."""
    r = np.sqrt(r1 * r1 + rng.uniform(size=n) * (r2 * r2 - r1 * r1))
    th = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def yat_atom_values(X: np.ndarray, w: np.ndarray, b: float, eps: float) -> np.ndarray:
    diff = X - w[None, :]
    s = X @ w + b
    return s * s / (np.einsum("ij,ij->i", diff, diff) + eps)


@dataclass
class ImqModel:
    """F(x) = sum_j a_j / (||x - c_j||^2 + exp(s))."""

    a: np.ndarray
    c: np.ndarray
    s: np.ndarray  # shape (1,) so Adam can update it in place

    @property
    def bandwidth(self) -> float:
        return float(np.exp(self.s[0]))

    def _q(self, X: np.ndarray) -> np.ndarray:
        sq = (
            np.einsum("ij,ij->i", X, X)[:, None]
            - 2.0 * X @ self.c.T
            + np.einsum("ij,ij->i", self.c, self.c)[None, :]
        )
        return 1.0 / (np.maximum(sq, 0.0) + np.exp(self.s[0]))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self._q(X) @ self.a

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray):
        q = self._q(X)
        F = q @ self.a
        res = F - y
        loss = float(np.mean(res * res))
        r = 2.0 * res / X.shape[0]
        ga = q.T @ r
        # P_ij = r_i a_j q_ij^2
        P = (r[:, None] * q * q) * self.a[None, :]
        colsum = P.sum(axis=0)
        gc = 2.0 * (P.T @ X - colsum[:, None] * self.c)
        gs = np.array([-np.exp(self.s[0]) * colsum.sum()])
        return loss, [ga, gc, gs]


@dataclass
class TailResult:
    model: ImqModel
    losses: np.ndarray
    radii: np.ndarray
    target: np.ndarray
    fitted: np.ndarray
    tail_from: float

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.target - self.fitted)

    @property
    def tail_mask(self) -> np.ndarray:
        return self.radii >= self.tail_from

    @property
    def tail_mean(self) -> float:
        return float(self.errors[self.tail_mask].mean())

    @property
    def tail_max(self) -> float:
        return float(self.errors[self.tail_mask].max())


def train_tail_model(
    M: int,
    adam: AdamConfig,
    rng: np.random.Generator,
    N: int = 4000,
    r_inner: float = 50.0,
    r_outer: float = 100.0,
    w_star=(1.0, 0.0),
    b_star: float = 1.0,
    eps: float = 1.0,
    r_eval_max: float = 500.0,
    n_eval: int = 1001,
    tail_from: float = 400.0,
) -> TailResult:
    w_star = np.asarray(w_star, dtype=np.float64)
    X = annulus_samples(N, r_inner, r_outer, rng)
    y = yat_atom_values(X, w_star, b_star, eps)
    # centers start on training points; bandwidth starts at the squared typical spacing
    c0 = X[rng.choice(N, size=M, replace=False)].copy()
    spacing2 = math.pi * (r_outer**2 - r_inner**2) / M
    model = ImqModel(np.zeros(M), c0, np.array([math.log(spacing2)]))
    opt = Adam([model.a, model.c, model.s], adam)
    losses = np.empty(adam.epochs)
    for t in range(adam.epochs):
        loss, grads = model.loss_and_grads(X, y)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became {loss} at epoch {t}")
        losses[t] = loss
        opt.step(grads)
    u = w_star / np.linalg.norm(w_star)
    radii = np.linspace(0.0, r_eval_max, n_eval)
    P = radii[:, None] * u[None, :]
    target = np.array([biased_atom(p, w_star, b_star, eps) for p in P])
    return TailResult(model, losses, radii, target, model(P), tail_from)
