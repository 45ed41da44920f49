"""Yat kernel k(w, x) = (w.x + b)^2 / (||x - w||^2 + eps) and its tooling."""

__version__ = "0.1.0"

from .core import Family, KernelParams, biased_atom, kernel_eval, kernel_matrix, yat_eval
from .gram import Expansion, GramMatrix, build_gram, psd_check, rkhs_norm_sq

__all__ = [
    "Expansion",
    "Family",
    "GramMatrix",
    "KernelParams",
    "biased_atom",
    "build_gram",
    "kernel_eval",
    "kernel_matrix",
    "psd_check",
    "rkhs_norm_sq",
    "yat_eval",
]
