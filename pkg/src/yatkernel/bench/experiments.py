"""Experiment runners: each takes an ExperimentConfig and returns a ResultRecord."""

from __future__ import annotations

import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .. import __version__
from ..bounds import certified_radius, mmd_permutation_test
from ..core import Family, KernelParams, biased_atom
from ..farfield import imq_from_yat_triplet, unbiased_from_biased_triplet
from ..gram import (
    Expansion,
    alignment_excess,
    build_gram,
    channel_grams,
    eigen_domination_gaps,
    loewner_difference,
    psd_report,
    rkhs_norm_sq,
)
from ..ntk import NtkConfig, convergence_csv, empirical_ntk_convergence, ntk_gram, variance_slope
from ..spectrum import (
    fit_decay_ratio,
    funk_hecke_eigenvalues,
    operator_trace,
    rho_star,
    sphere_area,
    zonal_reduce,
)
from .adam import AdamConfig
from .tail import train_tail_model

EXPERIMENTS = (
    "tail_bench",
    "cv_bench",
    "spectrum",
    "identity_suite",
    "psd_suite",
    "mmd_test",
    "certify",
    "ntk_convergence",
    "gram_report",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output_path: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; choose one of {', '.join(EXPERIMENTS)}"
            )
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass
class ResultRecord:
    experiment: str
    parameters: dict
    metrics: dict
    passed: Optional[bool]
    runtime_ms: int
    seed: int
    artifact_version: str = __version__
    table: Optional[str] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "parameters": self.parameters,
            "metrics": self.metrics,
            "pass": self.passed,
            "runtime_ms": self.runtime_ms,
            "seed": self.seed,
            "artifact_version": self.artifact_version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


DEFAULTS: Dict[str, dict] = {
    "tail_bench": {
        "M": 50,
        "lr": None,
        "epochs": 5000,
        "N": 4000,
        "r_inner": 50.0,
        "r_outer": 100.0,
        "eps": 1.0,
        "b_star": 1.0,
        "w_star": [1.0, 0.0],
        "r_eval_max": 500.0,
        "n_eval": 1001,
        "tail_from": 400.0,
        "band": [0.95, 1.05],
    },
    "cv_bench": {"dims": [64, 256, 1024], "samples": 100_000, "b": 0.0, "eps": 1.0, "chunk": 10_000},
    "spectrum": {"d": 3, "eps": 1.0, "b": 0.0, "family": "yat", "L": 60, "fit_range": [20, 60]},
    "identity_suite": {"draws": 10_000, "dims": [1, 2, 8, 64], "log10_range": [-3.0, 3.0], "tol": 1e-11},
    "psd_suite": {
        "instances": 10,
        "n": 200,
        "dims": [2, 8, 64],
        "biases": [0.0, 0.5, 2.0],
        "eps": 1.0,
        "rel_tol": 1e-8,
        "eig_tol": 1e-10,
    },
    "mmd_test": {
        "trials": 500,
        "n": 50,
        "d": 2,
        "permutations": 200,
        "alpha": 0.05,
        "b": 1.0,
        "eps": 1.0,
        "shift": 0.0,
    },
    "certify": {
        "heads": 20,
        "classes": 3,
        "atoms": 8,
        "d": 2,
        "R": 1.0,
        "eps": 1.0,
        "perturbations": 1000,
        "model": None,
    },
    "ntk_convergence": {
        "points": 5,
        "d": 3,
        "widths": [16, 64, 256],
        "seeds_per_width": 200,
        "sigma_w": 1.0,
        "b": 0.0,
        "eps": 1.0,
        "gram_samples": 20_000,
    },
    "gram_report": {"expansion": None, "nodes": None, "rel_tol": 1e-8},
}

REQUIRED = {"gram_report": ("expansion",)}


def resolve_parameters(experiment: str, given: dict) -> dict:
    """Merge ``given`` over the defaults, rejecting unknown and missing keys."""
    defaults = DEFAULTS[experiment]
    extra = sorted(set(given) - set(defaults))
    if extra:
        raise ConfigError(
            f"unknown parameter(s) {extra} for {experiment}; allowed: {sorted(defaults)}"
        )
    params = {**defaults, **given}
    missing = [k for k in REQUIRED.get(experiment, ()) if params.get(k) is None]
    if missing:
        raise ConfigError(f"{experiment} requires parameter(s) {missing}")
    return params


def _trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _map_trials(fn: Callable[[int], object], count: int, threads: int) -> list:
    if threads == 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def _csv(header: List[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in r) + "\n")
    return buf.getvalue()


def run_tail_benchmark(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("tail_bench", cfg.parameters)
    lr = p["lr"] if p["lr"] is not None else (1e-3 if p["M"] <= 50 else 5e-4)
    res = train_tail_model(
        int(p["M"]),
        AdamConfig(lr=float(lr), epochs=int(p["epochs"])),
        np.random.default_rng(cfg.seed),
        N=int(p["N"]),
        r_inner=p["r_inner"],
        r_outer=p["r_outer"],
        w_star=p["w_star"],
        b_star=p["b_star"],
        eps=p["eps"],
        r_eval_max=p["r_eval_max"],
        n_eval=int(p["n_eval"]),
        tail_from=p["tail_from"],
    )
    w = np.asarray(p["w_star"], dtype=float)
    u = w / np.linalg.norm(w)
    lo, hi = p["band"]
    metrics = {
        "tail_mean_error": res.tail_mean,
        "tail_max_error": res.tail_max,
        "predicted_limit": float(u @ w) ** 2,
        "final_loss": float(res.losses[-1]),
        "initial_loss": float(res.losses[0]),
        "learned_bandwidth": res.model.bandwidth,
        "lr": lr,
    }
    table = _csv(
        ["r", "target", "fitted", "abs_error"],
        zip(res.radii.tolist(), res.target.tolist(), res.fitted.tolist(), res.errors.tolist()),
    )
    return ResultRecord("tail_bench", {**p, "lr": lr}, metrics, lo <= res.tail_mean <= hi, 0, cfg.seed, table=table)


def _cv_moments(d: int, samples: int, b: float, eps: float, chunk: int, seed: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, d]))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    N = np.empty(samples)
    D = np.empty(samples)
    for lo in range(0, samples, chunk):
        X = rng.standard_normal((min(chunk, samples - lo), d))
        z = X @ w
        N[lo : lo + X.shape[0]] = (z + b) ** 2
        diff = X - w[None, :]
        D[lo : lo + X.shape[0]] = np.einsum("ij,ij->i", diff, diff) + eps
    yat = N / D
    imq = 1.0 / D
    cov_terms = (N - N.mean()) * (D - D.mean())
    sq = math.sqrt(samples)
    return {
        "cv_yat": float(yat.std(ddof=1) / yat.mean()),
        "cv_imq": float(imq.std(ddof=1) / imq.mean()),
        "mean_D": float(D.mean()),
        "mean_D_se": float(D.std(ddof=1) / sq),
        "var_D": float(D.var(ddof=1)),
        "cov_ND": float(cov_terms.sum() / (samples - 1)),
        "cov_ND_se": float(cov_terms.std(ddof=1) / sq),
        "mean_N": float(N.mean()),
        "mean_N_se": float(N.std(ddof=1) / sq),
    }


def run_cv_benchmark(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("cv_bench", cfg.parameters)
    dims = [int(d) for d in p["dims"]]
    b, eps = float(p["b"]), float(p["eps"])
    per = _map_trials(
        lambda i: _cv_moments(dims[i], int(p["samples"]), b, eps, int(p["chunk"]), cfg.seed),
        len(dims),
        cfg.threads,
    )
    slope = float(np.polyfit(np.log(dims), np.log([m["cv_imq"] for m in per]), 1)[0])
    cv_yat = [m["cv_yat"] for m in per]
    ratio = max(cv_yat) / min(cv_yat)
    z_mu = [abs(m["mean_D"] - (d + 1 + eps)) / m["mean_D_se"] for d, m in zip(dims, per)]
    z_cov = [abs(m["cov_ND"] - (2 - 4 * b)) / m["cov_ND_se"] for m in per]
    z_n = [abs(m["mean_N"] - (1 + b * b)) / m["mean_N_se"] for m in per]
    metrics = {
        "imq_cv_slope": slope,
        "yat_cv_ratio": ratio,
        "max_z_mean_D": max(z_mu),
        "max_z_cov_ND": max(z_cov),
        "max_z_mean_N": max(z_n),
        "per_dimension": {str(d): m for d, m in zip(dims, per)},
    }
    ok = -0.6 <= slope <= -0.4 and ratio <= 1.5 and max(z_mu) <= 3 and max(z_cov) <= 3
    rows = [(d, m["cv_yat"], m["cv_imq"], m["mean_D"], m["cov_ND"]) for d, m in zip(dims, per)]
    table = _csv(["d", "cv_yat", "cv_imq", "mean_D", "cov_ND"], rows)
    return ResultRecord("cv_bench", p, metrics, ok, 0, cfg.seed, table=table)


def run_spectrum(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("spectrum", cfg.parameters)
    params = KernelParams(b=float(p["b"]), eps=float(p["eps"]), family=Family(p["family"]))
    z = zonal_reduce(params)
    d, L = int(p["d"]), int(p["L"])
    s = funk_hecke_eigenvalues(z, d, L)
    lo, hi = (int(v) for v in p["fit_range"])
    if hi > L:
        raise ConfigError("fit_range exceeds L")
    ratio = fit_decay_ratio(s.eigenvalues, lo, hi)
    naive = fit_decay_ratio(s.eigenvalues, lo, hi, algebraic=False)
    target = 1.0 / rho_star(params.eps)
    rel = abs(ratio - target) / target
    exact_trace = sphere_area(d) * float(z.kappa(1.0))
    metrics = {
        "fitted_ratio": ratio,
        "target_ratio": target,
        "ratio_rel_error": rel,
        "pure_geometric_ratio": naive,
        "pure_geometric_rel_error": abs(naive - target) / target,
        "max_doubling_change": float(np.max(s.doubling_rel_change)),
        "quadrature_nodes": s.nodes,
        "trace_rel_error": abs(operator_trace(s) - exact_trace) / exact_trace,
        "min_eigenvalue_over_lambda0": float(s.eigenvalues.min() / s.eigenvalues[0]),
    }
    ok = rel <= 0.01 and metrics["max_doubling_change"] < 1e-10
    return ResultRecord("spectrum", p, metrics, ok, 0, cfg.seed, table=s.to_csv())


def stencil_deviation(terms, coeffs, rhs: float) -> float:
    """|sum c_k t_k - rhs| relative to sum |c_k t_k| + |rhs| (the float64 cancellation scale)."""
    lhs = sum(c * t for c, t in zip(coeffs, terms))
    scale = sum(abs(c * t) for c, t in zip(coeffs, terms)) + abs(rhs)
    return abs(lhs - rhs) / scale if scale > 0 else 0.0


def run_identity_suite(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("identity_suite", cfg.parameters)
    rng = np.random.default_rng(cfg.seed)
    dims = [int(d) for d in p["dims"]]
    lo, hi = p["log10_range"]
    dev_imq = dev_b0 = rel_imq = rel_b0 = 0.0
    for i in range(int(p["draws"])):
        d = dims[i % len(dims)]
        x = rng.standard_normal(d) / math.sqrt(d)
        w = rng.standard_normal(d) / math.sqrt(d)
        h = 10.0 ** rng.uniform(lo, hi)
        eps = 10.0 ** rng.uniform(lo, hi)
        t = [biased_atom(x, w, k * h, eps) for k in (1, 2, 3)]
        _, r1 = imq_from_yat_triplet(x, w, h, eps)
        _, r2 = unbiased_from_biased_triplet(x, w, h, eps)
        dev_imq = max(dev_imq, stencil_deviation(t, (1.0, -2.0, 1.0), r1))
        dev_b0 = max(dev_b0, stencil_deviation(t, (3.0, -3.0, 1.0), r2))
        l1 = t[0] - 2 * t[1] + t[2]
        l2 = 3 * t[0] - 3 * t[1] + t[2]
        rel_imq = max(rel_imq, abs(l1 - r1) / abs(r1))
        if r2 != 0:
            rel_b0 = max(rel_b0, abs(l2 - r2) / abs(r2))
    metrics = {
        "max_deviation_imq_identity": dev_imq,
        "max_deviation_unbiased_identity": dev_b0,
        "max_pointwise_rel_error_imq_identity": rel_imq,
        "max_pointwise_rel_error_unbiased_identity": rel_b0,
    }
    ok = max(dev_imq, dev_b0) <= p["tol"]
    return ResultRecord("identity_suite", p, metrics, ok, 0, cfg.seed)


def _psd_instance(i: int, p: dict, seed: int) -> dict:
    rng = _trial_rng(seed, i)
    dims, biases = p["dims"], p["biases"]
    d = int(dims[i % len(dims)])
    b = float(biases[(i // len(dims)) % len(biases)])
    n = int(rng.integers(2, int(p["n"]) + 1))
    X = rng.standard_normal((n, d)) / math.sqrt(d)
    kp = KernelParams(b=b, eps=float(p["eps"]))
    rep = psd_report(build_gram(X, kp).entries, p["rel_tol"])
    low = psd_report(loewner_difference(X, kp), p["rel_tol"])
    chans = [psd_report(g.entries, p["rel_tol"]) for g in channel_grams(X, kp)]
    out = {
        "d": d,
        "b": b,
        "n": n,
        "min_eig_ratio": rep.min_eigenvalue / max(1.0, rep.max_eigenvalue),
        "psd": rep.is_psd,
        "loewner_psd": low.is_psd,
        "channels_psd": all(c.is_psd for c in chans),
        "eig_gap_min": math.inf,
    }
    if b > 0:
        out["eig_gap_min"] = float(np.min(eigen_domination_gaps(X, kp)))
    return out


def counterexample_min_eigenvalue(eps: float = 1.0) -> float:
    kp = KernelParams(b=-1.0, eps=eps, allow_negative_bias=True)
    return psd_report(build_gram(np.eye(2), kp).entries).min_eigenvalue


def run_psd_suite(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("psd_suite", cfg.parameters)
    count = int(p["instances"]) * len(p["dims"]) * len(p["biases"])
    rows = _map_trials(lambda i: _psd_instance(i, p, cfg.seed), count, cfg.threads)
    ce = counterexample_min_eigenvalue(float(p["eps"]))
    ce_expected = -1.0 / (2.0 + float(p["eps"]))
    gaps = [r["eig_gap_min"] for r in rows if math.isfinite(r["eig_gap_min"])]
    ratios = np.array([r["min_eig_ratio"] for r in rows])
    hist, edges = np.histogram(ratios, bins=10)
    metrics = {
        "instances": count,
        "all_psd": all(r["psd"] for r in rows),
        "all_loewner_psd": all(r["loewner_psd"] for r in rows),
        "all_channels_psd": all(r["channels_psd"] for r in rows),
        "worst_min_eig_ratio": float(ratios.min()),
        "worst_eig_domination_gap": min(gaps) if gaps else None,
        "counterexample_min_eig": ce,
        "counterexample_expected": ce_expected,
        "min_eig_ratio_histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
    }
    ok = (
        metrics["all_psd"]
        and metrics["all_loewner_psd"]
        and metrics["all_channels_psd"]
        and (not gaps or min(gaps) >= -p["eig_tol"])
        and abs(ce - ce_expected) <= 1e-12
    )
    table = _csv(
        ["d", "b", "n", "min_eig_ratio", "eig_gap_min"],
        [(r["d"], r["b"], r["n"], r["min_eig_ratio"], r["eig_gap_min"]) for r in rows],
    )
    return ResultRecord("psd_suite", p, metrics, bool(ok), 0, cfg.seed, table=table)


def run_mmd_test(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("mmd_test", cfg.parameters)
    kp = KernelParams(b=float(p["b"]), eps=float(p["eps"]))
    n, d = int(p["n"]), int(p["d"])
    shift = np.zeros(d)
    shift[0] = float(p["shift"])

    def trial(i):
        rng = _trial_rng(cfg.seed, i)
        X = rng.standard_normal((n, d))
        Y = rng.standard_normal((n, d)) + shift
        r = mmd_permutation_test(
            X, Y, kp, int(p["permutations"]), float(p["alpha"]), seed=int(rng.integers(2**32))
        )
        return r.mmd2, r.reject

    res = _map_trials(trial, int(p["trials"]), cfg.threads)
    stats = np.array([r[0] for r in res])
    rate = float(np.mean([r[1] for r in res]))
    se = float(stats.std(ddof=1) / math.sqrt(len(stats)))
    metrics = {
        "rejection_rate": rate,
        "mean_mmd2": float(stats.mean()),
        "mean_mmd2_se": se,
        "nominal_alpha": p["alpha"],
    }
    if p["shift"] == 0:
        ok = rate <= 1.5 * p["alpha"] and abs(stats.mean()) <= 3 * se
    else:
        ok = rate > p["alpha"]
    table = _csv(["trial", "mmd2", "reject"], [(i, r[0], int(r[1])) for i, r in enumerate(res)])
    return ResultRecord("mmd_test", p, metrics, bool(ok), 0, cfg.seed, table=table)


def random_heads(rng: np.random.Generator, classes: int, atoms: int, d: int, R: float, eps: float):
    """Toy argmax heads with shared centers in the ball of radius R."""
    C = rng.standard_normal((atoms, d))
    C *= (R * rng.uniform(size=atoms) ** (1.0 / d) / np.linalg.norm(C, axis=1))[:, None]
    kp = KernelParams(b=0.0, eps=eps)
    return [Expansion(C, rng.standard_normal(atoms), kp) for _ in range(classes)]


def ball_samples(rng: np.random.Generator, count: int, d: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((count, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (radius * rng.uniform(size=count) ** (1.0 / d))[:, None]


def attack_head(heads, x, radius: float, cls: int, count: int, rng) -> int:
    """Random perturbations strictly inside the radius (half on its boundary shell)."""
    d = x.size
    deltas = ball_samples(rng, count, d, radius)
    half = count // 2
    deltas[:half] *= (radius * (1 - 1e-9)) / np.maximum(
        np.linalg.norm(deltas[:half], axis=1, keepdims=True), np.finfo(float).tiny
    )
    P = x[None, :] + deltas
    scores = np.column_stack([h.evaluate(P) for h in heads])
    return int(np.sum(np.argmax(scores, axis=1) != cls))


def run_certify(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("certify", cfg.parameters)
    R, d = float(p["R"]), int(p["d"])
    fixed = None
    if p["model"] is not None:
        with open(p["model"]) as fh:
            fixed = [Expansion.from_dict(h) for h in json.load(fh)["heads"]]
        d = fixed[0].dim

    def trial(i):
        rng = _trial_rng(cfg.seed, i)
        heads = fixed or random_heads(rng, int(p["classes"]), int(p["atoms"]), d, R, float(p["eps"]))
        x = ball_samples(rng, 1, d, R)[0]
        radius, cls, margin = certified_radius(heads, x, R)
        flips = attack_head(heads, x, radius, cls, int(p["perturbations"]), rng) if radius > 0 else 0
        return radius, margin, flips

    res = _map_trials(trial, int(p["heads"]), cfg.threads)
    flips = sum(r[2] for r in res)
    metrics = {
        "total_flips": flips,
        "mean_radius": float(np.mean([r[0] for r in res])),
        "min_radius": float(min(r[0] for r in res)),
        "trials": len(res),
    }
    table = _csv(["trial", "radius", "margin", "flips"], [(i, *r) for i, r in enumerate(res)])
    return ResultRecord("certify", p, metrics, flips == 0, 0, cfg.seed, table=table)


def run_ntk_convergence(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("ntk_convergence", cfg.parameters)
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((int(p["points"]), int(p["d"]))) / math.sqrt(int(p["d"]))
    ncfg = NtkConfig(
        sigma_w=float(p["sigma_w"]), b=float(p["b"]), eps=float(p["eps"]),
        mc_samples=int(p["gram_samples"]), seed=cfg.seed,
    )
    rows = empirical_ntk_convergence(X, ncfg, p["widths"], int(p["seeds_per_width"]))
    slope = variance_slope(rows)
    g = ntk_gram(X, ncfg)
    rep = psd_report(g.entries, 1e-10)
    metrics = {
        "variance_slope": slope,
        "gram_min_eig_ratio": rep.min_eigenvalue / max(1.0, rep.max_eigenvalue),
        "gram_psd": rep.is_psd,
        "rows": [r._asdict() for r in rows],
    }
    ok = abs(slope + 1.0) <= 0.2 and rep.is_psd
    return ResultRecord("ntk_convergence", p, metrics, ok, 0, cfg.seed, table=convergence_csv(rows))


def run_gram_report(cfg: ExperimentConfig) -> ResultRecord:
    p = resolve_parameters("gram_report", cfg.parameters)
    with open(p["expansion"]) as fh:
        e = Expansion.from_dict(json.load(fh))
    nodes = e.centers
    if p["nodes"] is not None:
        with open(p["nodes"]) as fh:
            nodes = np.asarray(json.load(fh), dtype=np.float64)
    g = build_gram(nodes, e.params)
    rep = psd_report(g.entries, p["rel_tol"])
    metrics = {
        "rkhs_norm_sq": rkhs_norm_sq(e),
        "atoms": len(e),
        "min_eigenvalue": rep.min_eigenvalue,
        "max_eigenvalue": rep.max_eigenvalue,
        "psd": rep.is_psd,
    }
    if e.params.family is Family.YAT:
        radial, excess = alignment_excess(e)
        metrics.update(radial_part=radial, alignment_excess=excess)
    return ResultRecord("gram_report", p, metrics, rep.is_psd, 0, cfg.seed, table=g.to_csv())


RUNNERS = {
    "tail_bench": run_tail_benchmark,
    "cv_bench": run_cv_benchmark,
    "spectrum": run_spectrum,
    "identity_suite": run_identity_suite,
    "psd_suite": run_psd_suite,
    "mmd_test": run_mmd_test,
    "certify": run_certify,
    "ntk_convergence": run_ntk_convergence,
    "gram_report": run_gram_report,
}


def run(cfg: ExperimentConfig) -> ResultRecord:
    t0 = time.perf_counter()
    rec = RUNNERS[cfg.experiment](cfg)
    rec.runtime_ms = int(round((time.perf_counter() - t0) * 1000))
    return rec
