"""Gram matrices, PSD certification and closed-form RKHS norms."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .core import Family, KernelParams, as_points, kernel_matrix


class SingularGramError(np.linalg.LinAlgError):
    """Raised when an inverse-based operation meets a singular Gram matrix."""


@dataclass
class GramMatrix:
    entries: np.ndarray
    nodes: np.ndarray
    params: KernelParams

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        p = self.params
        buf.write(
            f"# n={self.n},d={self.nodes.shape[1]},family={p.family.value},b={p.b!r},eps={p.eps!r}\n"
        )
        np.savetxt(buf, self.entries, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str) -> tuple[dict, np.ndarray]:
        """Parse the CSV form back into ``(header, entries)``; nodes are not stored."""
        first, _, body = text.partition("\n")
        if not first.startswith("#"):
            raise ValueError("missing Gram CSV header line")
        header = {}
        for item in first[1:].strip().split(","):
            k, _, v = item.partition("=")
            header[k.strip()] = v.strip()
        for k in ("n", "d"):
            header[k] = int(header[k])
        for k in ("b", "eps"):
            header[k] = float(header[k])
        entries = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        if entries.shape != (header["n"], header["n"]):
            raise ValueError("Gram CSV body does not match header size")
        return header, entries


@dataclass
class Expansion:
    """Finite kernel expansion f = sum_j alpha_j k(w_j, .)."""

    centers: np.ndarray
    coefficients: np.ndarray
    params: KernelParams
    per_atom_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        m = self.coefficients.size
        c = np.asarray(self.centers, dtype=np.float64)
        if c.size == 0:
            c = c.reshape(m, c.shape[-1] if c.ndim == 2 else 0)
        self.centers = as_points(c, "centers")
        if self.centers.shape[0] != m:
            raise ValueError(f"{self.centers.shape[0]} centers but {m} coefficients")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("coefficients contain NaN or Inf")
        if self.per_atom_bias is not None:
            self.per_atom_bias = np.asarray(self.per_atom_bias, dtype=np.float64).reshape(-1)
            if self.per_atom_bias.size != m:
                raise ValueError("per_atom_bias length must match the number of atoms")
            if np.any(self.per_atom_bias < 0) and not self.params.allow_negative_bias:
                raise ValueError("negative per-atom bias outside counterexample mode")

    def __len__(self) -> int:
        return self.coefficients.size

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self) == 0:
            return np.zeros(X.shape[0])
        if self.per_atom_bias is None:
            return kernel_matrix(X, self.centers, self.params) @ self.coefficients
        if self.params.family is not Family.YAT:
            raise ValueError("per-atom biases only make sense for the Yat family")
        diff = X[:, None, :] - self.centers[None, :, :]
        D = np.einsum("ijk,ijk->ij", diff, diff) + self.params.eps
        s = X @ self.centers.T + self.per_atom_bias[None, :]
        return (s * s / D) @ self.coefficients

    def to_dict(self) -> dict:
        d = {
            "params": self.params.to_dict(),
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
        }
        if self.per_atom_bias is not None:
            d["per_atom_bias"] = self.per_atom_bias.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Expansion":
        pp = d["params"]
        params = KernelParams(
            b=float(pp.get("b", 0.0)),
            eps=float(pp["eps"]),
            family=Family(pp.get("family", "yat")),
            gamma=pp.get("gamma"),
        )
        return cls(
            centers=np.asarray(d["centers"], dtype=np.float64),
            coefficients=np.asarray(d["coefficients"], dtype=np.float64),
            params=params,
            per_atom_bias=d.get("per_atom_bias"),
        )


@dataclass
class PsdReport:
    min_eigenvalue: float
    max_eigenvalue: float
    tolerance: float
    is_psd: bool
    jitter_used: float = 0.0
    eigenvalues: np.ndarray = field(default=None, repr=False)


def _symmetrize_upper(K: np.ndarray) -> np.ndarray:
    return np.triu(K) + np.triu(K, 1).T


def build_gram(nodes, p: KernelParams) -> GramMatrix:
    X = as_points(nodes, "nodes")
    if X.shape[0] == 0:
        raise ValueError("build_gram needs at least one node")
    K = _symmetrize_upper(kernel_matrix(X, X, p))
    return GramMatrix(K, X, p)


def psd_report(K: np.ndarray, rel_tol: float = 1e-8) -> PsdReport:
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("PSD check needs a square matrix")
    ev = scipy.linalg.eigh(K, eigvals_only=True)
    lo, hi = float(ev[0]), float(ev[-1])
    tol = rel_tol * max(1.0, hi)
    return PsdReport(lo, hi, tol, lo >= -tol, 0.0, ev)


def psd_check(g: GramMatrix, rel_tol: float = 1e-8) -> PsdReport:
    """Smallest eigenvalue against the scale-aware tolerance rel_tol * max(1, max eig)."""
    return psd_report(g.entries, rel_tol)


def spd_factor(K: np.ndarray, jitter: Optional[float] = None):
    """Cholesky factor of K, retrying once with diagonal jitter 1e-10 * trace / n.

    Returns ``(cho_factor, jitter_used)``.
    """
    K = np.asarray(K, dtype=np.float64)
    try:
        if jitter:
            raise np.linalg.LinAlgError
        return scipy.linalg.cho_factor(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        n = K.shape[0]
        j = jitter if jitter else 1e-10 * float(np.trace(K)) / n
        try:
            return scipy.linalg.cho_factor(K + j * np.eye(n), lower=True), j
        except np.linalg.LinAlgError as exc:
            raise SingularGramError("Gram matrix is not positive definite even with jitter") from exc


def _require_shared(e: Expansion) -> None:
    if e.per_atom_bias is not None:
        raise ValueError(
            "expansion has per-atom biases: it lives in the biased span, not a single RKHS"
        )
    if e.params.b < 0:
        raise ValueError("RKHS norm requires b >= 0")


def rkhs_norm_sq(e: Expansion) -> float:
    _require_shared(e)
    if len(e) == 0:
        return 0.0
    K = build_gram(e.centers, e.params).entries
    a = e.coefficients
    return float(a @ K @ a)


def channel_grams(nodes, p: KernelParams):
    """Radial, linear-alignment and quadratic-alignment channel Grams."""
    if p.b < 0:
        raise ValueError("channel decomposition requires b >= 0")
    X = as_points(nodes, "nodes")
    H = build_gram(X, p.with_family(Family.IMQ)).entries
    dot = _symmetrize_upper(X @ X.T)
    imq = p.with_family(Family.IMQ)
    g0 = GramMatrix(p.b * p.b * H, X, imq)
    g1 = GramMatrix(2.0 * p.b * dot * H, X, p)
    g2 = GramMatrix(dot * dot * H, X, p)
    return g0, g1, g2


def loewner_difference(nodes, p: KernelParams) -> np.ndarray:
    """K_Y - b^2 K_I on the node set.

    Assembled as (x.x')(x.x' + 2b) K_I so the difference carries no
    cancellation error (it is exactly 0 at the origin).
    """
    X = as_points(nodes, "nodes")
    KI = build_gram(X, p.with_family(Family.IMQ)).entries
    dot = _symmetrize_upper(X @ X.T)
    return dot * (dot + 2.0 * p.b) * KI


def loewner_domination_check(nodes, p: KernelParams, rel_tol: float = 1e-8) -> PsdReport:
    if p.b < 0:
        raise ValueError("Loewner domination requires b >= 0")
    return psd_report(loewner_difference(nodes, p), rel_tol)


def eigen_domination_check(nodes, p: KernelParams, tol: float = 1e-10) -> bool:
    """Sorted-eigenvalue check lambda_j(K_Y) >= b^2 lambda_j(K_I) - tol."""
    return bool(np.all(eigen_domination_gaps(nodes, p) >= -tol))


def eigen_domination_gaps(nodes, p: KernelParams) -> np.ndarray:
    if p.b <= 0:
        raise ValueError("spectral domination check requires b > 0")
    X = as_points(nodes, "nodes")
    ey = scipy.linalg.eigh(build_gram(X, p.with_family(Family.YAT)).entries, eigvals_only=True)
    ei = scipy.linalg.eigh(build_gram(X, p.with_family(Family.IMQ)).entries, eigvals_only=True)
    return ey - p.b * p.b * ei


def _reject_duplicates(X: np.ndarray) -> None:
    if np.unique(X, axis=0).shape[0] != X.shape[0]:
        raise SingularGramError("duplicate nodes make the Gram matrix singular")


def interpolation_norm_compare(nodes, y, p: KernelParams):
    """Return ``(y' K_Y^{-1} y, b^{-2} y' K_I^{-1} y)``.

    The first is the minimum squared Yat-RKHS norm interpolating y at the
    nodes; it never exceeds the second.
    """
    if p.b <= 0:
        raise ValueError("interpolation norm comparison requires b > 0")
    X = as_points(nodes, "nodes")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != X.shape[0]:
        raise ValueError("label vector length must match the number of nodes")
    _reject_duplicates(X)
    out = []
    for fam in (Family.YAT, Family.IMQ):
        K = build_gram(X, p.with_family(fam)).entries
        try:
            c = scipy.linalg.cho_factor(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularGramError(f"{fam.value} Gram is not strictly positive definite") from exc
        out.append(float(y @ scipy.linalg.cho_solve(c, y)))
    return out[0], out[1] / (p.b * p.b)


def alignment_excess(e: Expansion):
    """Split the squared norm into ``(radial, excess)`` with excess >= 0."""
    _require_shared(e)
    if len(e) == 0:
        return 0.0, 0.0
    a = e.coefficients
    p = e.params
    KI = build_gram(e.centers, p.with_family(Family.IMQ)).entries
    radial = p.b * p.b * float(a @ KI @ a)
    excess = float(a @ loewner_difference(e.centers, p) @ a)
    return radial, excess
