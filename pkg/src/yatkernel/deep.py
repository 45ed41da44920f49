"""Stacks of vector-valued Yat layers: forward maps, pullback Grams, Lipschitz bounds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .core import Family, KernelParams, as_points, kernel_matrix, layer_atom_lipschitz
from .gram import GramMatrix, build_gram, loewner_difference


@dataclass
class LayerSpec:
    """[T(z)]_c = sum_j readout[j, c] k(centers[j], z)."""

    centers: np.ndarray
    readout: np.ndarray
    params: KernelParams

    def __post_init__(self):
        self.centers = as_points(self.centers, "centers")
        self.readout = np.atleast_2d(np.asarray(self.readout, dtype=np.float64))
        if self.readout.shape[0] != self.centers.shape[0]:
            raise ValueError(
                f"readout has {self.readout.shape[0]} rows but the layer has {self.centers.shape[0]} centers"
            )
        if not np.all(np.isfinite(self.readout)):
            raise ValueError("readout contains NaN or Inf")
        if self.params.family is not Family.YAT or self.params.b < 0:
            raise ValueError("layers use the Yat kernel with b >= 0")

    @property
    def d_in(self) -> int:
        return self.centers.shape[1]

    @property
    def d_out(self) -> int:
        return self.readout.shape[1]

    def apply(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        return kernel_matrix(Z, self.centers, self.params) @ self.readout


@dataclass
class StackSpec:
    layers: List[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i].d_in != self.layers[i - 1].d_out:
                raise ValueError(
                    f"layer {i + 1} expects dimension {self.layers[i].d_in}, "
                    f"layer {i} produces {self.layers[i - 1].d_out}"
                )

    def __len__(self) -> int:
        return len(self.layers)

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "centers": l.centers.tolist(),
                    "readout": l.readout.tolist(),
                    "b": l.params.b,
                    "eps": l.params.eps,
                }
                for l in self.layers
            ]
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "StackSpec":
        layers = []
        for i, l in enumerate(d["layers"]):
            missing = {"centers", "readout", "b", "eps"} - set(l)
            if missing:
                raise ValueError(f"layer {i + 1} is missing {sorted(missing)}")
            layers.append(
                LayerSpec(l["centers"], l["readout"], KernelParams(b=float(l["b"]), eps=float(l["eps"])))
            )
        return cls(layers)

    @classmethod
    def from_json(cls, text: str) -> "StackSpec":
        return cls.from_dict(json.loads(text))


def _forward_batch(stack: StackSpec, X: np.ndarray, start: int = 0) -> List[np.ndarray]:
    out = [X]
    for layer in stack.layers[start:]:
        out.append(layer.apply(out[-1]))
    return out


def forward(stack: StackSpec, x) -> List[np.ndarray]:
    """All representations Phi_0 = x, ..., Phi_L for one input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if stack.layers and x.size != stack.layers[0].d_in:
        raise ValueError(f"input has dimension {x.size}, stack expects {stack.layers[0].d_in}")
    return [z[0] for z in _forward_batch(stack, x[None, :])]


def _prefix_images(stack: StackSpec, layer_index: int, probes) -> np.ndarray:
    if not 1 <= layer_index <= len(stack):
        raise ValueError(f"layer_index must lie in 1..{len(stack)}")
    X = as_points(probes, "probes")
    Z = X
    for layer in stack.layers[: layer_index - 1]:
        Z = layer.apply(Z)
    return Z


def pullback_gram(stack: StackSpec, layer_index: int, probe_points) -> GramMatrix:
    """Gram of k_l(Phi_{l-1}(x), Phi_{l-1}(x')) at the probes (layers are 1-based)."""
    Z = _prefix_images(stack, layer_index, probe_points)
    g = build_gram(Z, stack.layers[layer_index - 1].params)
    return GramMatrix(g.entries, as_points(probe_points), g.params)


def pullback_loewner_difference(stack: StackSpec, layer_index: int, probe_points) -> np.ndarray:
    """Pulled-back K_Y - b^2 K_I at the probes."""
    Z = _prefix_images(stack, layer_index, probe_points)
    return loewner_difference(Z, stack.layers[layer_index - 1].params)


def per_layer_norm_bounds(stack: StackSpec) -> List[float]:
    """Per layer, Tr(A' K A): an upper bound on the summed squared pullback norms."""
    out = []
    for layer in stack.layers:
        K = build_gram(layer.centers, layer.params).entries
        A = layer.readout
        out.append(float(np.einsum("jc,jk,kc->", A, K, A)))
    return out


def layer_lipschitz(layer: LayerSpec, R: float) -> float:
    """Lipschitz constant of z -> T(z) on the ball of radius R."""
    if not R > 0:
        raise ValueError("R must be > 0")
    W = float(np.max(np.linalg.norm(layer.centers, axis=1))) if layer.centers.size else 0.0
    M = layer_atom_lipschitz(R, W, layer.params.b, layer.params.eps)
    per_out = np.abs(layer.readout).sum(axis=0) * M
    return float(np.sqrt(np.sum(per_out * per_out)))


@dataclass
class PerturbationReport:
    """End-to-end deviation bound for a perturbed stack.

    ``bound_probe`` is sum_l delta_l prod_{r>l} L_r with the deltas measured
    on the probes; it bounds ``observed`` exactly.  ``bound`` inflates every
    delta by ``margin`` to cover intermediate points not hit by a probe.
    """

    bound: float
    observed: float
    bound_probe: float
    deltas: List[float]
    lipschitz: List[float]
    radii: List[float]
    margin: float


def _norm_max(Z: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(Z, axis=1))) if Z.size else 0.0


def perturbation_bound(
    stack: StackSpec,
    perturbed: StackSpec,
    R0: float,
    probes,
    margin: float = 0.1,
    radius_factor: float = 1.1,
) -> PerturbationReport:
    """Layerwise perturbation propagation through the stack.

    Telescoping Phi_L - Phi~_L over the hybrid maps T_L o ... o T_{l+1} o T~_l o Phi~_{l-1}:
    delta_l is measured at Phi~_{l-1}(probes) and L_r is taken on a ball
    covering every hybrid trajectory (max norm times ``radius_factor``).
    """
    if len(stack) != len(perturbed):
        raise ValueError("stacks differ in depth")
    for a, b in zip(stack.layers, perturbed.layers):
        if a.centers.shape != b.centers.shape or a.readout.shape != b.readout.shape:
            raise ValueError("stacks differ in layer shapes")
    X = as_points(probes, "probes")
    if _norm_max(X) > R0 * (1 + 1e-12):
        raise ValueError("probes must lie in the ball of radius R0")
    L = len(stack)
    if L == 0:
        return PerturbationReport(0.0, 0.0, 0.0, [], [], [], margin)

    pert_traj = _forward_batch(perturbed, X)
    deltas = []
    # input radius seen by each original layer over all hybrid trajectories
    in_radius = [0.0] * L
    for l in range(L):
        Z = pert_traj[l]
        orig_out = stack.layers[l].apply(Z)
        deltas.append(_norm_max(orig_out - pert_traj[l + 1]))
        in_radius[l] = max(in_radius[l], _norm_max(Z))
        for r, img in enumerate(_forward_batch(stack, orig_out, start=l + 1)[:-1], start=l + 1):
            in_radius[r] = max(in_radius[r], _norm_max(img))
        for r in range(l + 1, L):
            in_radius[r] = max(in_radius[r], _norm_max(pert_traj[r]))
    radii = [max(radius_factor * r, np.finfo(float).tiny) for r in in_radius]
    lips = [layer_lipschitz(layer, R) for layer, R in zip(stack.layers, radii)]

    def total(ds):
        s = 0.0
        for l in range(L):
            s += ds[l] * math.prod(lips[l + 1 :])
        return s

    observed = _norm_max(_forward_batch(stack, X)[-1] - pert_traj[-1])
    bound_probe = total(deltas)
    bound = total([d * (1.0 + margin) for d in deltas])
    return PerturbationReport(bound, observed, bound_probe, deltas, lips, radii, margin)
