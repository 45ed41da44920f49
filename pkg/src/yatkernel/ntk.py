"""Monte-Carlo estimates of the infinite-width Yat NTK and finite-width convergence."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

import numpy as np

from .core import KernelParams, as_points, as_vector
from .gram import GramMatrix


@dataclass(frozen=True)
class NtkConfig:
    sigma_w: float = 1.0
    b: float = 0.0
    eps: float = 1.0
    width: int = 1
    mc_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_w > 0:
            raise ValueError("sigma_w must be > 0")
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.width < 1 or self.mc_samples < 1:
            raise ValueError("width and mc_samples must be >= 1")


class NtkEstimate(NamedTuple):
    theta_alpha: float
    theta_w: float
    std_err: float


class ConvergenceRow(NamedTuple):
    width: int
    variance: float
    mean: float


def _features(X: np.ndarray, W: np.ndarray, b: float, eps: float):
    """Atom values g (n, S) and center gradients (n, S, d) for every point/sample pair."""
    S = X @ W.T + b
    diff = X[:, None, :] - W[None, :, :]
    D = np.einsum("nsd,nsd->ns", diff, diff) + eps
    g = S * S / D
    grad = (2.0 * S / D)[:, :, None] * X[:, None, :] + (2.0 * S * S / (D * D))[:, :, None] * diff
    return g, grad


def _draw_centers(cfg: NtkConfig, count: int, d: int, stream: Sequence[int]) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, *stream]))
    return cfg.sigma_w * rng.standard_normal((count, d))


def ntk_mc(x, x2, cfg: NtkConfig, chunk: int = 20_000) -> NtkEstimate:
    """E[g(x) g(x')] and E<grad_w g(x), grad_w g(x')> over w ~ N(0, sigma_w^2 I)."""
    x = as_vector(x, "x")
    x2 = as_vector(x2, "x2")
    if x.size != x2.size:
        raise ValueError("x and x2 differ in dimension")
    # order-independent so ntk_mc(x, x') and ntk_mc(x', x) use identical draws
    W = _draw_centers(cfg, cfg.mc_samples, x.size, [0])
    ta = np.empty(cfg.mc_samples)
    tw = np.empty(cfg.mc_samples)
    X = np.stack([x, x2])
    for lo in range(0, cfg.mc_samples, chunk):
        g, grad = _features(X, W[lo : lo + chunk], cfg.b, cfg.eps)
        ta[lo : lo + chunk] = g[0] * g[1]
        tw[lo : lo + chunk] = np.einsum("sd,sd->s", grad[0], grad[1])
    tot = ta + tw
    se = float(tot.std(ddof=1) / math.sqrt(cfg.mc_samples)) if cfg.mc_samples > 1 else math.inf
    return NtkEstimate(float(ta.mean()), float(tw.mean()), se)


def ntk_gram(points, cfg: NtkConfig, chunk: int = 5_000) -> GramMatrix:
    """Theta on the points from ONE shared set of center draws (an exact feature Gram)."""
    X = as_points(points, "points")
    W = _draw_centers(cfg, cfg.mc_samples, X.shape[1], [0])
    n = X.shape[0]
    G = np.zeros((n, n))
    for lo in range(0, cfg.mc_samples, chunk):
        g, grad = _features(X, W[lo : lo + chunk], cfg.b, cfg.eps)
        F = np.concatenate([g, grad.reshape(n, -1)], axis=1)
        G += F @ F.T
    G /= cfg.mc_samples
    return GramMatrix(G, X, KernelParams(b=cfg.b, eps=cfg.eps))


def empirical_ntk(X: np.ndarray, W: np.ndarray, alpha: np.ndarray, b: float, eps: float) -> np.ndarray:
    """Finite-width NTK of f(x) = m^{-1/2} sum_j alpha_j g(x; w_j) in NTK parametrisation."""
    g, grad = _features(X, W, b, eps)
    m = W.shape[0]
    Gw = np.einsum("isd,jsd,s->ij", grad, grad, alpha * alpha)
    return (g @ g.T + Gw) / m


def empirical_ntk_convergence(
    points, cfg: NtkConfig, widths: Sequence[int], seeds_per_width: int
) -> List[ConvergenceRow]:
    """Across-seed variance (averaged over Gram entries) and mean entry per width."""
    X = as_points(points, "points")
    widths = [int(w) for w in widths]
    if any(w < 1 for w in widths) or any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be positive and strictly increasing")
    if seeds_per_width < 2:
        raise ValueError("need at least two seeds per width")
    iu = np.triu_indices(X.shape[0])
    rows = []
    for m in widths:
        samples = []
        for s in range(seeds_per_width):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, m, s]))
            W = cfg.sigma_w * rng.standard_normal((m, X.shape[1]))
            alpha = rng.standard_normal(m)
            samples.append(empirical_ntk(X, W, alpha, cfg.b, cfg.eps)[iu])
        S = np.array(samples)
        rows.append(ConvergenceRow(m, float(S.var(axis=0, ddof=1).mean()), float(S.mean())))
    return rows


def variance_slope(rows: Sequence[ConvergenceRow]) -> float:
    """Least-squares slope of log variance against log width."""
    w = np.log([r.width for r in rows])
    v = np.log([r.variance for r in rows])
    return float(np.polyfit(w, v, 1)[0])


def convergence_csv(rows: Sequence[ConvergenceRow]) -> str:
    buf = io.StringIO()
    buf.write("width,variance,mean\n")
    for r in rows:
        buf.write(f"{r.width},{r.variance:.17g},{r.mean:.17g}\n")
    return buf.getvalue()
