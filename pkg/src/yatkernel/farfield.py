"""Bias finite-difference identities, far-field traces and ridge constructions."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Family, KernelParams, as_vector, biased_atom
from .gram import Expansion


@dataclass(frozen=True)
class AtomRef:
    center: np.ndarray
    bias: float = 0.0


@dataclass(frozen=True)
class ShellBoundInputs:
    Lambda: float
    W: float
    R: float
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.Lambda < 0 or self.W < 0:
            raise ValueError("Lambda and W must be >= 0")
        if self.R <= self.W:
            raise ValueError(f"shell radius R={self.R} must exceed W={self.W}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be > 0")


@dataclass(frozen=True)
class TraceResult:
    estimate: float
    exact: float
    error_bound: float
    estimate_coarse: float


def _check_h(h: float) -> None:
    if not h > 0:
        raise ValueError(f"stencil step h must be > 0, got {h}")


def imq_from_yat_triplet(x, w, h: float, eps: float):
    """Second bias difference g(3h) - 2g(2h) + g(h) and its closed form 2h^2/D."""
    _check_h(h)
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    lhs = (
        biased_atom(x, w, 3 * h, eps)
        - 2.0 * biased_atom(x, w, 2 * h, eps)
        + biased_atom(x, w, h, eps)
    )
    diff = x - w
    rhs = 2.0 * h * h / (float(diff @ diff) + eps)
    return lhs, rhs


def unbiased_from_biased_triplet(x, w, h: float, eps: float):
    """Extrapolation 3g(h) - 3g(2h) + g(3h) back to the unbiased atom g(0)."""
    _check_h(h)
    lhs = (
        3.0 * biased_atom(x, w, h, eps)
        - 3.0 * biased_atom(x, w, 2 * h, eps)
        + biased_atom(x, w, 3 * h, eps)
    )
    rhs = biased_atom(x, w, 0.0, eps)
    return lhs, rhs


def rewrite_imq_expansion_as_yat(e: Expansion, h: float) -> Expansion:
    """Replace each IMQ atom by three positive-bias Yat atoms at the same center.

    The result has per-atom biases (h, 2h, 3h) and agrees with ``e`` pointwise.
    """
    _check_h(h)
    if e.params.family is not Family.IMQ:
        raise ValueError("input expansion must be IMQ")
    m = len(e)
    stencil = np.array([1.0, -2.0, 1.0])
    centers = np.repeat(e.centers, 3, axis=0)
    coeffs = (e.coefficients[:, None] * stencil[None, :] / (2.0 * h * h)).reshape(-1)
    biases = np.tile(np.array([h, 2 * h, 3 * h]), m)
    params = KernelParams(b=h, eps=e.params.eps, family=Family.YAT)
    return Expansion(centers.reshape(3 * m, e.dim), coeffs, params, per_atom_bias=biases)


def eta_r_bound(w, b: float, eps: float, R: float) -> float:
    """Uniform far-field error of one Yat atom on radii r in [R, 2R]."""
    w = as_vector(w, "w")
    W = float(np.linalg.norm(w))
    if R <= W:
        raise ValueError(f"R={R} must exceed ||w||={W}")
    num = 4.0 * R * W * (b + W * W) + b * b + W * W * (W * W + eps)
    return num / ((R - W) ** 2 + eps)


def directional_trace(w, b: float, eps: float, u, r_max: float = 1e6) -> TraceResult:
    """Radial-limit estimate g(r_max u) against the exact trace (u.w)^2."""
    w = as_vector(w, "w")
    u = as_vector(u, "u")
    if abs(float(np.linalg.norm(u)) - 1.0) > 1e-12:
        raise ValueError("direction u must have unit norm")
    if r_max < 1e3:
        raise ValueError("r_max must be >= 1e3")
    exact = float(u @ w) ** 2
    est = biased_atom(r_max * u, w, b, eps)
    coarse = biased_atom((r_max / 10.0) * u, w, b, eps)
    bound = eta_r_bound(w, b, eps, r_max) if r_max > np.linalg.norm(w) else math.inf
    return TraceResult(est, exact, bound, coarse)


def expansion_on_ray(e: Expansion, u, radii) -> np.ndarray:
    u = as_vector(u, "u")
    radii = np.asarray(radii, dtype=np.float64)
    return e.evaluate(radii[:, None] * u[None, :])


def imq_shell_decay(Lambda: float, W: float, R: float, eps: float) -> float:
    """Sup of |F| on ||x|| >= R for IMQ expansions with mass Lambda and centers in B_W."""
    return Lambda / ((R - W) ** 2 + eps)


def rbf_shell_decay(Lambda: float, W: float, R: float, gamma: float) -> float:
    return Lambda * math.exp(-gamma * (R - W) ** 2)


def shell_separation_lower_bound(inputs: ShellBoundInputs, w_star, b: float, eps: float) -> float:
    """Lower bound on the sup error of any bounded-variation radial fit on the shell."""
    w_star = as_vector(w_star, "w_star")
    W_star = float(np.linalg.norm(w_star))
    if W_star == 0.0:
        raise ValueError("w_star must be nonzero")
    if inputs.W < W_star:
        raise ValueError("W must be >= ||w_star||")
    eta = eta_r_bound(w_star, b, eps, inputs.R)
    if inputs.gamma is None:
        decay = imq_shell_decay(inputs.Lambda, inputs.W, inputs.R, eps)
    else:
        decay = rbf_shell_decay(inputs.Lambda, inputs.W, inputs.R, inputs.gamma)
    return max(0.0, W_star * W_star - eta - decay)


def poly_fit_sup_residual(t, values, degree: int = 2) -> float:
    """Sup-norm residual of the least-squares polynomial fit of ``values`` on ``t``."""
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    coef = np.polynomial.polynomial.polyfit(t, values, degree)
    return float(np.max(np.abs(values - np.polynomial.polynomial.polyval(t, coef))))


def poly_gap_residual(w_star, b: float, eps: float, interval, n_samples: int = 401) -> float:
    """How far the Yat section along its own axis is from any quadratic."""
    w_star = as_vector(w_star, "w_star")
    lo, hi = map(float, interval)
    if not hi > lo:
        raise ValueError("degenerate interval")
    if n_samples < 4:
        raise ValueError("need at least 4 samples to separate from a quadratic")
    rho = float(np.linalg.norm(w_star))
    if rho == 0.0:
        raise ValueError("w_star must be nonzero")
    t = np.linspace(lo, hi, n_samples)
    vals = (rho * t + b) ** 2 / ((t - rho) ** 2 + eps)
    return poly_fit_sup_residual(t, vals, 2)


def ridge_alpha0(d: int, R: float, eps: float, delta: float) -> float:
    return max(
        8.0 * R**3 * d**1.5 / delta,
        2.0 * math.sqrt(d * R * R * (d * R * R + eps) / delta),
    )


def ridge_atom(w_star, delta: float, R: float, eps: float, d: int):
    """Single unbiased atom approximating (w_star.x)^2 to within delta on [-R, R]^d."""
    w_star = as_vector(w_star, "w_star")
    if w_star.size != d:
        raise ValueError("w_star dimension does not match d")
    if abs(float(np.linalg.norm(w_star)) - 1.0) > 1e-12:
        raise ValueError("w_star must be a unit vector")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    a0 = ridge_alpha0(d, R, eps, delta)
    return a0, AtomRef(a0 * w_star, 0.0)


def cube_samples(d: int, R: float, per_axis: int = 41, n_random: int = 100_000, seed: int = 0):
    """Full tensor grid of [-R, R]^d for d <= 4, seeded uniform samples above."""
    if d <= 4:
        axis = np.linspace(-R, R, per_axis)
        return np.array(list(itertools.product(axis, repeat=d)))
    rng = np.random.default_rng(seed)
    return rng.uniform(-R, R, size=(n_random, d))


def quadratic_target(A, X) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", X, A, X)


def quadratic_form_expansion(A, delta: float, R: float, eps: float) -> Expansion:
    """Unbiased Yat expansion with rank(A) atoms approximating x'Ax on [-R, R]^d."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=0, rtol=1e-12):
        raise ValueError("A must be a symmetric matrix")
    d = A.shape[0]
    lam, vec = np.linalg.eigh(A)
    scale = float(np.max(np.abs(lam))) if lam.size else 0.0
    keep = np.abs(lam) > 1e-10 * scale if scale > 0 else np.zeros(d, bool)
    lam, vec = lam[keep], vec[:, keep]
    r = lam.size
    params = KernelParams(b=0.0, eps=eps)
    if r == 0:
        return Expansion(np.zeros((0, d)), np.zeros(0), params)
    centers = []
    for k in range(r):
        alpha = ridge_alpha0(d, R, eps, delta / (r * abs(lam[k])))
        centers.append(alpha * vec[:, k])
    return Expansion(np.array(centers), lam.copy(), params)


def log_imq_atom_count_lower_bound(lambda_max, R, delta, eps, Lambda, d) -> float:
    if not delta < lambda_max * R * R:
        raise ValueError("need delta < lambda_max * R^2")
    rho2 = Lambda / (lambda_max * R * R - delta) - eps
    if rho2 <= 0:
        raise ValueError("need Lambda > eps * (lambda_max R^2 - delta) so that rho^2 > 0")
    k = d - 1
    return (
        k * math.log(2.0 * R)
        + math.lgamma((d + 1) / 2.0)
        - 0.5 * k * math.log(math.pi)
        - 0.5 * k * math.log(rho2)
    )


def imq_atom_count_lower_bound(lambda_max, R, delta, eps, Lambda, d) -> float:
    """Covering lower bound on IMQ atom count; +inf once it overflows a float."""
    logm = log_imq_atom_count_lower_bound(lambda_max, R, delta, eps, Lambda, d)
    return math.exp(logm) if logm < 709.0 else math.inf
