"""Kernel ridge regression, complexity bounds, MMD testing and certified radii."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import Family, KernelParams, as_points, as_vector, kernel_matrix, yat_grad_input_batch
from .gram import Expansion, build_gram, rkhs_norm_sq, spd_factor
from .spectrum import SpectrumResult, effective_dimension


@dataclass
class LabeledSample:
    points: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.points = as_points(self.points, "points")
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.labels.size != self.points.shape[0]:
            raise ValueError("points and labels differ in length")
        if self.num_classes is not None:
            y = self.labels
            if np.any(y != np.round(y)) or np.any(y < 0) or np.any(y >= self.num_classes):
                raise ValueError(f"class indices must be integers in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class BoundReport:
    value: float
    constituents: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "constituents": dict(self.constituents)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class MmdResult:
    mmd2: float
    threshold: float
    reject: bool
    n: int
    p_value: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


class RademacherEstimate(NamedTuple):
    bound: float
    mc_estimate: float
    mc_se: float


def _positive(**kw) -> None:
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be > 0, got {v}")


def krr_fit(data: LabeledSample, p: KernelParams, ridge: float) -> Expansion:
    """Representer solve (K + n*ridge*I) alpha = y."""
    _positive(ridge=ridge)
    n = data.n
    K = build_gram(data.points, p).entries
    fac, _ = spd_factor(K + n * ridge * np.eye(n))
    alpha = scipy.linalg.cho_solve(fac, data.labels)
    return Expansion(data.points.copy(), alpha, p)


def krr_bound_eval(
    norm_f_star: float,
    sigma2: float,
    lam: float,
    n: int,
    spectrum: SpectrumResult,
    R: float,
    eps: float,
    C: float = 1.0,
) -> BoundReport:
    """lam ||f*||^2 + sigma2 N(lam) / n + C sigma2 R^4 / (eps n^2 lam)."""
    _positive(lam=lam, n=n, R=R, eps=eps)
    if norm_f_star < 0 or sigma2 < 0:
        raise ValueError("norm_f_star and sigma2 must be >= 0")
    neff = effective_dimension(spectrum, lam)
    bias = lam * norm_f_star**2
    variance = sigma2 * neff / n
    remainder = C * sigma2 * R**4 / eps / (n * n * lam)
    return BoundReport(
        bias + variance + remainder,
        {
            "approximation": bias,
            "effective_dimension_term": variance,
            "remainder": remainder,
            "effective_dimension": neff,
            "lambda": lam,
            "n": n,
            "sigma2": sigma2,
            "norm_f_star": norm_f_star,
            "R": R,
            "eps": eps,
            "C": C,
        },
    )


def rademacher_bound(B: float, R: float, n: int, p: KernelParams) -> BoundReport:
    """Worst-case complexity of the radius-B ball over inputs in B_R."""
    _positive(B=B, R=R, n=n)
    v = B * (R * R + p.b) / (math.sqrt(n) * math.sqrt(p.eps))
    return BoundReport(v, {"B": B, "R": R, "n": n, "b": p.b, "eps": p.eps})


def rademacher_empirical(
    sample: LabeledSample, B: float, p: KernelParams, mc_draws: int = 1000, seed: int = 0
) -> RademacherEstimate:
    """Sample-dependent bound and a Monte-Carlo estimate of the same complexity.

    The estimate uses sup_{||f|| <= B} (1/n) sum sigma_i f(x_i) = (B/n) sqrt(sigma' K sigma).
    """
    if mc_draws < 1000:
        raise ValueError("mc_draws must be >= 1000")
    X = sample.points
    n = X.shape[0]
    sq = np.sum(X * X, axis=1) + p.b
    bound = B / math.sqrt(n * p.eps) * math.sqrt(float(np.mean(sq * sq)))
    K = build_gram(X, p).entries
    rng = np.random.default_rng(seed)
    sigma = rng.choice(np.array([-1.0, 1.0]), size=(mc_draws, n))
    quad = np.einsum("ti,ij,tj->t", sigma, K, sigma)
    vals = (B / n) * np.sqrt(np.clip(quad, 0.0, None))
    return RademacherEstimate(bound, float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_draws)))


def _check_heads(heads: Sequence[Expansion]) -> None:
    if not heads:
        raise ValueError("need at least one head")
    c0, p0 = heads[0].centers, heads[0].params
    for h in heads[1:]:
        if h.params != p0 or h.centers.shape != c0.shape or not np.array_equal(h.centers, c0):
            raise ValueError("heads must share centers and kernel parameters")


def heads_norm(heads: Sequence[Expansion]) -> float:
    """B = sqrt(sum_c ||f_c||^2)."""
    _check_heads(heads)
    return math.sqrt(sum(rkhs_norm_sq(h) for h in heads))


def multiclass_margin_bound(
    heads: Sequence[Expansion], gamma: float, R: float, n: int, delta: float
) -> BoundReport:
    """Complexity plus confidence terms of the margin generalisation gap."""
    _positive(gamma=gamma, R=R, n=n, delta=delta)
    if delta >= 1:
        raise ValueError("delta must lie in (0, 1)")
    C = len(heads)
    B = heads_norm(heads)
    p = heads[0].params
    kappa = (R * R + p.b) / math.sqrt(p.eps)
    complexity = 2.0 * math.sqrt(2.0) * C * (C - 1) * B * kappa / (gamma * math.sqrt(n))
    confidence = 3.0 * (C - 1) * math.sqrt(math.log(2.0 / delta) / (2.0 * n))
    return BoundReport(
        complexity + confidence,
        {
            "complexity": complexity,
            "confidence": confidence,
            "B": B,
            "kappa": kappa,
            "gamma": gamma,
            "C": C,
            "n": n,
            "R": R,
            "delta": delta,
            "b": p.b,
            "eps": p.eps,
        },
    )


def _mmd2_from_blocks(Kxx: np.ndarray, Kyy: np.ndarray, Kxy: np.ndarray) -> float:
    n = Kxx.shape[0]
    m = Kyy.shape[0]
    sxx = (Kxx.sum() - np.trace(Kxx)) / (n * (n - 1))
    syy = (Kyy.sum() - np.trace(Kyy)) / (m * (m - 1))
    return float(sxx + syy - 2.0 * Kxy.mean())


def mmd_u_statistic(X, Y, p: KernelParams, threshold: float = 0.0) -> MmdResult:
    """Unbiased MMD^2 estimate; rejects equality when it exceeds ``threshold``."""
    X = as_points(X, "X")
    Y = as_points(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("samples must have equal size")
    n = X.shape[0]
    if n < 2:
        raise ValueError("MMD U-statistic needs n >= 2")
    v = _mmd2_from_blocks(kernel_matrix(X, X, p), kernel_matrix(Y, Y, p), kernel_matrix(X, Y, p))
    return MmdResult(v, float(threshold), v > threshold, n)


def mmd_permutation_test(
    X, Y, p: KernelParams, n_permutations: int = 500, alpha: float = 0.05, seed: int = 0
) -> MmdResult:
    """Permutation-calibrated test; threshold is the (1 - alpha) null quantile."""
    X = as_points(X, "X")
    Y = as_points(Y, "Y")
    n = X.shape[0]
    if Y.shape[0] != n or n < 2:
        raise ValueError("samples must have equal size n >= 2")
    Z = np.vstack([X, Y])
    K = kernel_matrix(Z, Z, p)
    observed = _mmd2_from_blocks(K[:n, :n], K[n:, n:], K[:n, n:])
    rng = np.random.default_rng(seed)
    null = np.empty(n_permutations)
    for i in range(n_permutations):
        idx = rng.permutation(2 * n)
        a, b = idx[:n], idx[n:]
        null[i] = _mmd2_from_blocks(K[np.ix_(a, a)], K[np.ix_(b, b)], K[np.ix_(a, b)])
    p_value = (1.0 + np.sum(null >= observed)) / (n_permutations + 1.0)
    threshold = float(np.quantile(null, 1.0 - alpha))
    return MmdResult(observed, threshold, observed > threshold, n, float(p_value))


def mmd_sample_size(R: float, p: KernelParams, eta: float, beta: float, C: float = 1.0) -> int:
    """Smallest n with n >= C (R^2+b)^4 / (eps^2 eta^2 beta)."""
    _positive(R=R, eta=eta, beta=beta, C=C)
    v = C * (R * R + p.b) ** 4 / (p.eps**2 * eta**2 * beta)
    # guard against ceil(2000.0000000000002) style round-off
    return int(math.ceil(v * (1.0 - 1e-12)))


def lipschitz_constant(R: float, eps: float, d: int) -> float:
    """Gradient-norm bound on B_R for unit-norm elements of the unbiased Yat RKHS."""
    _positive(R=R, eps=eps, d=d)
    return math.sqrt(2.0 * R * R * (1 + d) / eps + 2.0 * d * R**4 / eps**2)


def mixed_partial_trace(x, eps: float) -> float:
    """sum_i d^2 k(x, x') / dx_i dx'_i at x' = x, for b = 0."""
    x = as_vector(x, "x")
    d = x.size
    s = float(x @ x)
    return 2.0 * s * (1 + d) / eps + 2.0 * d * s * s / eps**2


def expansion_gradient(e: Expansion, x) -> np.ndarray:
    """grad_x of sum_j alpha_j k(w_j, x) for a shared-bias Yat expansion."""
    if e.params.family is not Family.YAT or e.per_atom_bias is not None:
        raise ValueError("gradient is implemented for shared-bias Yat expansions")
    G = yat_grad_input_batch(e.centers, as_vector(x, "x"), e.params.b, e.params.eps)
    return e.coefficients @ G


def certified_radius(heads: Sequence[Expansion], x, R: float):
    """Return ``(radius, predicted_class, margin)`` for an argmax classifier.

    radius = margin / (2 B L) with B = sqrt(sum_c ||f_c||^2), clipped to
    R - ||x|| so every certified perturbation stays where L is valid.
    """
    _check_heads(heads)
    p = heads[0].params
    if p.family is not Family.YAT or p.b != 0:
        raise ValueError("certified radius needs unbiased Yat heads (b = 0)")
    x = as_vector(x, "x")
    if float(np.linalg.norm(x)) > R:
        raise ValueError("x lies outside the ball of radius R")
    scores = np.array([float(h.evaluate(x[None, :])[0]) for h in heads])
    cls = int(np.argmax(scores))
    if len(heads) == 1:
        return math.inf, cls, math.inf
    rest = np.delete(scores, cls)
    margin = float(scores[cls] - rest.max())
    if margin <= 0:
        return 0.0, cls, max(margin, 0.0)
    B = heads_norm(heads)
    if B == 0:
        return 0.0, cls, margin
    L = lipschitz_constant(R, p.eps, x.size)
    radius = min(margin / (2.0 * B * L), R - float(np.linalg.norm(x)))
    return radius, cls, margin
