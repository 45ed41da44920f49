"""Pointwise kernel evaluation: Yat, IMQ, Gaussian RBF and quadratic polynomial.

The Yat kernel is

    k_{b,eps}(w, x) = (w.x + b)^2 / (||x - w||^2 + eps)

and the biased atom ``g(x; w, b)`` is the same expression with the bias
given per atom.  All arithmetic is float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class Family(str, enum.Enum):
    YAT = "yat"
    IMQ = "imq"
    RBF = "rbf"
    POLY2 = "poly2"


@dataclass(frozen=True)
class KernelParams:
    """Shared kernel hyperparameters.

    ``b < 0`` is only accepted with ``allow_negative_bias=True``; that mode
    exists to reproduce the non-PSD counterexample and nothing else.
    """

    b: float = 0.0
    eps: float = 1.0
    family: Family = Family.YAT
    gamma: Optional[float] = None
    allow_negative_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in ("b", "eps"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.b < 0 and not self.allow_negative_bias:
            raise ValueError(
                f"b={self.b} < 0 breaks positive semidefiniteness; "
                "pass allow_negative_bias=True for counterexample mode"
            )
        if self.family is Family.RBF:
            if self.gamma is None or not math.isfinite(self.gamma) or self.gamma <= 0:
                raise ValueError("RBF family needs a finite gamma > 0")

    def with_family(self, family, **kw) -> "KernelParams":
        return KernelParams(
            b=kw.get("b", self.b),
            eps=kw.get("eps", self.eps),
            family=family,
            gamma=kw.get("gamma", self.gamma),
            allow_negative_bias=self.allow_negative_bias,
        )

    def to_dict(self) -> dict:
        d = {"family": self.family.value, "b": self.b, "eps": self.eps}
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d


def as_vector(v, name="vector") -> np.ndarray:
    """Convert to a finite 1-D float64 array (validation happens here, once)."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_points(points, name="points") -> np.ndarray:
    """Convert a list of vectors to a finite (n, d) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a list of vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def regularized_sq_distance(x, w, eps: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_dims(x, w)
    if eps <= 0:
        raise ValueError("eps must be > 0")
    diff = x - w
    return float(diff @ diff + eps)


def biased_atom(x, w, b: float, eps: float) -> float:
    """g(x; w, b) with an explicit per-atom bias (any real b)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_dims(x, w)
    diff = x - w
    num = float(w @ x) + b
    return num * num / (float(diff @ diff) + eps)


def yat_eval(w, x, p: KernelParams) -> float:
    if p.family is not Family.YAT:
        raise ValueError(f"yat_eval needs the Yat family, got {p.family.value}")
    return biased_atom(x, w, p.b, p.eps)


def kernel_eval(a, x, p: KernelParams) -> float:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(a, x)
    diff = x - a
    sq = float(diff @ diff)
    if p.family is Family.YAT:
        num = float(a @ x) + p.b
        return num * num / (sq + p.eps)
    if p.family is Family.IMQ:
        return 1.0 / (sq + p.eps)
    if p.family is Family.RBF:
        return math.exp(-p.gamma * sq)
    num = float(a @ x) + p.b
    return num * num


def kernel_matrix(A, X, p: KernelParams) -> np.ndarray:
    """Cross-kernel matrix ``K[i, j] = k(A[i], X[j])`` (vectorised)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dims(A, X)
    diff = A[:, None, :] - X[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if p.family is Family.IMQ:
        return 1.0 / (sq + p.eps)
    if p.family is Family.RBF:
        return np.exp(-p.gamma * sq)
    dot = np.einsum("ik,jk->ij", A, X) + p.b
    if p.family is Family.POLY2:
        return dot * dot
    return dot * dot / (sq + p.eps)


def yat_diagonal(x, b: float, eps: float):
    """(||x||^2 + b)^2 / eps, row-wise for 2-D input."""
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=-1) + b
    return sq * sq / eps


def yat_compact_bound(R: float, W: float, b: float, eps: float) -> float:
    """Sup of the Yat kernel over ||x|| <= R, ||w|| <= W."""
    return (R * W + b) ** 2 / eps


def yat_supremum_unbiased(w, eps: float):
    """Global supremum over x of the unbiased section k_{0,eps}(w, .).

    Returns ``(value, argmax)``; for ``w = 0`` the section is identically zero
    and ``argmax`` is ``None``.
    """
    w = as_vector(w, "w")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    u = float(w @ w)
    if u == 0.0:
        return 0.0, None
    return u * u / eps + u, (1.0 + eps / u) * w


def yat_grad_center(w, x, p: KernelParams) -> np.ndarray:
    """Gradient of k_{b,eps}(w, x) with respect to the center w."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(w, x)
    s = float(w @ x) + p.b
    diff = x - w
    D = float(diff @ diff) + p.eps
    return 2.0 * s * x / D + 2.0 * s * s * diff / (D * D)


def yat_grad_input(w, x, p: KernelParams) -> np.ndarray:
    """Gradient of k_{b,eps}(w, x) with respect to the input x."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(w, x)
    s = float(w @ x) + p.b
    diff = x - w
    D = float(diff @ diff) + p.eps
    return (2.0 * s * w * D - 2.0 * s * s * diff) / (D * D)


def yat_grad_input_batch(W, x, b: float, eps: float) -> np.ndarray:
    """Input gradients of every atom ``k(W[j], x)``, shape (m, d)."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    s = W @ x + b
    diff = x[None, :] - W
    D = np.einsum("ij,ij->i", diff, diff) + eps
    return (2.0 * (s / D)[:, None] * W) - (2.0 * (s * s / (D * D)))[:, None] * diff


def yat_grad_center_batch(W, x, b: float, eps: float) -> np.ndarray:
    """Center gradients of ``k(W[j], x)`` for every row of W, shape (m, d)."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    s = W @ x + b
    diff = x[None, :] - W
    D = np.einsum("ij,ij->i", diff, diff) + eps
    return (2.0 * (s / D))[:, None] * x[None, :] + (2.0 * (s * s / (D * D)))[:, None] * diff


def layer_atom_lipschitz(R: float, W: float, b: float, eps: float) -> float:
    """Lipschitz constant M_{R,W,b,eps} of one Yat atom on the ball B_R."""
    a = R * W + b
    return 2.0 * a * W / eps + 2.0 * a * a * (R + W) / (eps * eps)
