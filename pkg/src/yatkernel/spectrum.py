"""Funk-Hecke spectrum of zonal kernels on the unit sphere S^{d-1}.

Eigenvalues use the surface-measure convention: with spherical harmonics
orthonormal in L^2(S^{d-1}, dsigma),

    lambda_l = |S^{d-2}| / C_l(1) * int_{-1}^{1} kappa(t) C_l(t) (1-t^2)^{(d-3)/2} dt,

where C_l is the Gegenbauer polynomial of index (d-2)/2.  Under this
convention sum_l N(l, d) lambda_l = |S^{d-1}| kappa(1).

Rational zonal kernels kappa(t) = A / (t* - t) + poly(t) (Yat and IMQ) are
split into their pole and polynomial parts.  The pole part's Gegenbauer
moments decay like rho*^{-l}; a plain quadrature loses them to cancellation
once they drop below ~1e-16 of lambda_0, so they are generated by Miller's
backward recurrence, normalised by the zeroth moment from Gauss-Jacobi
quadrature.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln, roots_jacobi

from .core import Family, KernelParams


class QuadratureError(RuntimeError):
    pass


@dataclass
class ZonalKernel:
    """kappa(t) on [-1, 1], optionally with its pole decomposition.

    When ``pole`` is set, kappa(t) = residue / (pole - t) + polyval(t, poly).
    """

    eps: float
    b: float
    kappa: Callable[[np.ndarray], np.ndarray]
    pole: Optional[float] = None
    residue: float = 0.0
    poly: tuple = ()


@dataclass
class SpectrumResult:
    d: int
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    rho_star: float
    fitted_rho: float = float("nan")
    nodes: int = 0
    doubling_rel_change: np.ndarray = field(default=None, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("l,multiplicity,eigenvalue\n")
        for l, (n, lam) in enumerate(zip(self.multiplicities, self.eigenvalues)):
            buf.write(f"{l},{int(n)},{lam:.17g}\n")
        return buf.getvalue()


def rho_star(eps: float) -> float:
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return 1.0 + eps / 2.0 + math.sqrt(eps + eps * eps / 4.0)


def sphere_area(d: int) -> float:
    """|S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def harmonic_multiplicity(l: int, d: int) -> int:
    """Dimension N(l, d) of degree-l spherical harmonics on S^{d-1}."""
    if l == 0:
        return 1
    return math.comb(l + d - 1, d - 1) - math.comb(l + d - 3, d - 1)


def zonal_reduce(p: KernelParams) -> ZonalKernel:
    """Restrict a Yat or IMQ kernel to the sphere, as a function of t = u.v."""
    eps, b = p.eps, p.b
    ts = 1.0 + eps / 2.0
    if p.family is Family.YAT:
        def kappa(t):
            t = np.asarray(t, dtype=np.float64)
            return (t + b) ** 2 / (eps + 2.0 - 2.0 * t)

        # (t+b)^2 = (t*+b)^2 - (t*-t)(t+t*+2b)
        return ZonalKernel(eps, b, kappa, ts, (ts + b) ** 2 / 2.0, (-(ts + 2 * b) / 2.0, -0.5))
    if p.family is Family.IMQ:
        def kappa(t):
            return 1.0 / (eps + 2.0 - 2.0 * np.asarray(t, dtype=np.float64))

        return ZonalKernel(eps, b, kappa, ts, 0.5, ())
    raise ValueError("zonal reduction is defined for the Yat and IMQ families")


def gegenbauer_table(t, L: int, nu: float) -> np.ndarray:
    """C_l^{nu}(t) for l = 0..L by upward three-term recurrence, shape (L+1, len(t))."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    C = np.empty((L + 1, t.size))
    C[0] = 1.0
    if L >= 1:
        C[1] = 2.0 * nu * t
    for l in range(1, L):
        C[l + 1] = (2.0 * (l + nu) * t * C[l] - (l + 2.0 * nu - 1.0) * C[l - 1]) / (l + 1.0)
    return C


def gegenbauer_at_one(L: int, nu: float) -> np.ndarray:
    l = np.arange(L + 1)
    return np.exp(gammaln(l + 2.0 * nu) - gammaln(l + 1.0) - gammaln(2.0 * nu))


_MAX_MILLER_STEPS = 200_000


def _pole_moments(ts: float, L: int, nu: float, I0: float) -> np.ndarray:
    """I_l = int C_l(t) w(t) / (t* - t) dt for l = 0..L via Miller's algorithm."""
    rho = ts + math.sqrt(ts * ts - 1.0)
    extra = int(math.ceil(45.0 / math.log(rho))) + 30
    if extra > _MAX_MILLER_STEPS:
        raise QuadratureError(f"pole at {ts!r} is too close to [-1, 1] for the backward recurrence")
    N = L + extra
    vals = np.zeros(N + 2)
    vals[N] = 1e-300
    for l in range(N, 0, -1):
        vals[l - 1] = (2.0 * (l + nu) * ts * vals[l] - (l + 1.0) * vals[l + 1]) / (l + 2.0 * nu - 1.0)
        if abs(vals[l - 1]) > 1e250:
            vals[l - 1 : N + 2] *= 1e-250
    return vals[: L + 1] * (I0 / vals[0])


def _pole_mass(ts: float, a: float) -> float:
    """int (1 - t^2)^a / (t* - t) dt over [-1, 1].

    Gauss-Jacobi nodes carry ~1e-10 relative error near the endpoints, which
    the near-singular integrand amplifies, so this uses the adaptive
    algebraic-weight rule instead (closed form when a = 0).
    """
    if a == 0:
        return math.log1p(2.0 / (ts - 1.0))
    val, _ = quad(lambda t: 1.0 / (ts - t), -1.0, 1.0, weight="alg", wvar=(a, a), epsabs=0.0, epsrel=1e-13, limit=1000)
    return float(val)


def _eigenvalues_at(z: ZonalKernel, d: int, L: int, n: int) -> np.ndarray:
    nu = (d - 2) / 2.0
    a = (d - 3) / 2.0
    t, w = roots_jacobi(n, a, a)
    c1 = gegenbauer_at_one(L, nu)
    area = sphere_area(d - 1)
    if z.pole is None:
        C = gegenbauer_table(t, L, nu)
        return area * (C @ (w * z.kappa(t))) / c1
    I0 = _pole_mass(z.pole, a)
    lam = area * z.residue * _pole_moments(z.pole, L, nu, I0) / c1
    if z.poly:
        deg = min(len(z.poly) - 1, L)
        C = gegenbauer_table(t, deg, nu)
        pv = np.polynomial.polynomial.polyval(t, np.asarray(z.poly, dtype=np.float64))
        lam[: deg + 1] += area * (C @ (w * pv)) / c1[: deg + 1]
    return lam


def funk_hecke_eigenvalues(
    z: ZonalKernel, d: int, L: int, n_nodes: int = 128, rtol: float = 1e-10, max_nodes: int = 1 << 13
) -> SpectrumResult:
    """Eigenvalues lambda_0..lambda_L with node doubling until stable.

    Rational kernels are checked per eigenvalue in relative terms; a generic
    kappa is checked relative to max |lambda_l| since its high-degree
    moments sit at the quadrature noise floor.
    """
    if d < 3:
        raise ValueError("d >= 3 required (the d = 2 Chebyshev branch is not provided)")
    if not 0 <= L <= 200:
        raise ValueError("L must lie in 0..200")
    n = max(int(n_nodes), L + 2)
    lam = _eigenvalues_at(z, d, L, n)
    while True:
        n2 = 2 * n
        if n2 > max_nodes:
            raise QuadratureError(f"eigenvalues did not stabilise up to {max_nodes} nodes")
        lam2 = _eigenvalues_at(z, d, L, n2)
        if z.pole is not None:
            scale = np.maximum(np.abs(lam2), np.finfo(float).tiny)
        else:
            scale = np.full(L + 1, max(float(np.max(np.abs(lam2))), np.finfo(float).tiny))
        change = np.abs(lam2 - lam) / scale
        n, lam = n2, lam2
        if np.all(change < rtol):
            break
    mult = np.array([harmonic_multiplicity(l, d) for l in range(L + 1)])
    res = SpectrumResult(d, lam, mult, rho_star(z.eps), nodes=n, doubling_rel_change=change)
    if L >= 60 and z.pole is not None:
        res.fitted_rho = 1.0 / fit_decay_ratio(res.eigenvalues, 20, 60)
    return res


def fit_decay_ratio(eigenvalues, lo: int, hi: int, algebraic: bool = True) -> float:
    """Geometric decay ratio of lambda_l over l in [lo, hi].

    Least squares on log lambda_l.  With ``algebraic`` the model is
    c + l log r + p log l, i.e. the ratio r is fitted jointly with a power-law
    prefactor; otherwise the model is the pure geometric c + l log r.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)[lo : hi + 1]
    if np.any(lam <= 0):
        raise ValueError("decay fit needs positive eigenvalues")
    l = np.arange(lo, hi + 1, dtype=np.float64)
    cols = [np.ones_like(l), l]
    if algebraic:
        cols.append(np.log(l))
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), np.log(lam), rcond=None)
    return float(np.exp(coef[1]))


def effective_dimension(s: SpectrumResult, lam: float, tail_tol: float = 1e-6) -> float:
    """sum_l N(l, d) lambda_l / (lambda_l + lam) over the retained degrees."""
    if lam <= 0:
        raise ValueError("regularisation lam must be > 0")
    ev = np.asarray(s.eigenvalues)
    mult = np.asarray(s.multiplicities, dtype=np.float64)
    tail = abs(ev[-1]) * mult[-1] / lam
    if tail >= tail_tol:
        raise ValueError(
            f"spectrum truncated too early: tail term {tail:.3g} >= {tail_tol}; increase L"
        )
    pos = np.clip(ev, 0.0, None)
    return float(np.sum(mult * pos / (pos + lam)))


def operator_trace(s: SpectrumResult) -> float:
    return float(np.sum(np.asarray(s.multiplicities, dtype=np.float64) * s.eigenvalues))
