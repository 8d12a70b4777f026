"""Model catalog: coefficient layouts, projections, moment tensors and tier sizes.

Coefficients are ordered l-major, then radial index s, then order m
ascending.  For the MRA models the per-frequency pair is (cos, sin).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import group
from .harmonics import slice_coeff

KINDS = ("mra", "mra_projected", "sphere", "cryo", "cryo_projected", "procrustes")


class HypothesisError(ValueError):
    """The requested model lies outside the range where tier sizes are known."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    L: int = 0
    S: tuple = ()
    m: int = 0

    @property
    def d(self) -> int:
        if self.kind in ("mra", "mra_projected"):
            return 2 * self.L + 1
        if self.kind == "sphere":
            return (self.L + 1) ** 2
        if self.kind in ("cryo", "cryo_projected"):
            return sum((2 * l + 1) * s for l, s in enumerate(self.S))
        return 3 * self.m

    @property
    def projected(self) -> bool:
        return self.kind in ("mra_projected", "cryo_projected")

    @property
    def d_proj(self) -> int:
        """Dimension of an observation: d~ for projected kinds, d otherwise."""
        if self.kind == "mra_projected":
            return self.L + 1
        if self.kind == "cryo_projected":
            return max(self.S) * (2 * self.L + 1)
        return self.d

    @property
    def group(self) -> str:
        return group._group_name(self)

    def labels(self) -> list[tuple]:
        """Coordinate labels in storage order."""
        if self.kind in ("mra", "mra_projected"):
            return [(0, 1, 0)] + [(l, 1, c) for l in range(1, self.L + 1) for c in (1, 2)]
        if self.kind == "sphere":
            return [(l, 1, mm) for l in range(self.L + 1) for mm in range(-l, l + 1)]
        if self.kind in ("cryo", "cryo_projected"):
            return [(l, s + 1, mm) for l, S in enumerate(self.S) for s in range(S)
                    for mm in range(-l, l + 1)]
        return [(i, j + 1, 0) for i in range(3) for j in range(self.m)]

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "L": self.L, "S": list(self.S), "m": self.m})

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        doc = json.loads(text)
        return make_model(doc["kind"], L=doc.get("L"), S=doc.get("S") or None,
                          m=doc.get("m") or None)


def make_model(kind: str, L: int | None = None, S=None, m: int | None = None) -> ModelSpec:
    """Build and validate a model descriptor.

    ``S`` may be a sequence of length L+1 or a single int used for every l.
    """
    kind = kind.replace("-", "_")
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == "procrustes":
        if m is None or m < 3:
            raise ValueError("procrustes needs m >= 3 atoms")
        return ModelSpec(kind, m=int(m))
    if L is None:
        raise ValueError(f"{kind} needs a bandlimit L")
    L = int(L)
    if kind in ("cryo", "cryo_projected"):
        if L < 0:
            raise ValueError("L must be nonnegative")
        if S is None:
            raise ValueError(f"{kind} needs radial bandlimits S")
        S = (int(S),) * (L + 1) if np.isscalar(S) else tuple(int(s) for s in S)
        if len(S) != L + 1:
            raise ValueError(f"S must have L+1={L + 1} entries, got {len(S)}")
        if min(S) < 1:
            raise ValueError("every S_l must be at least 1")
        return ModelSpec(kind, L=L, S=S)
    if L < 1:
        raise ValueError("L must be at least 1")
    return ModelSpec(kind, L=L)


# ----------------------------------------------------------------- projection

@lru_cache(maxsize=32)
def _cryo_projection(model: ModelSpec) -> np.ndarray:
    L, Smax = model.L, max(model.S)
    n = 2 * L + 1
    Pc = np.zeros((Smax * n, model.d))
    col = 0
    for l, S in enumerate(model.S):
        for s in range(S):
            for mm in range(-l, l + 1):
                Pc[s * n + mm + L, col] = slice_coeff(l, mm)
                col += 1
    Vt = group.image_transform_matrix(Smax, L)
    Vh = group.transform_matrix(model)
    P = Vt.conj().T @ Pc @ Vh
    if np.abs(P.imag).max() > 1e-12:
        raise AssertionError("projection is not real")
    return P.real


def projection_matrix(model: ModelSpec) -> np.ndarray:
    """The d~ x d matrix Pi of a projected model."""
    if model.kind == "mra_projected":
        P = np.zeros((model.L + 1, model.d))
        P[0, 0] = np.sqrt(2.0)
        for l in range(1, model.L + 1):
            P[l, 2 * l - 1] = np.sqrt(2.0)
        return P
    if model.kind == "cryo_projected":
        out = _cryo_projection(model)
        out.setflags(write=False)
        return out
    raise ValueError(f"{model.kind} is not a projected model")


def project(model: ModelSpec, theta) -> np.ndarray:
    return np.asarray(theta, dtype=float) @ projection_matrix(model).T


def observation_matrices(model: ModelSpec, rule):
    """Matrices A_j = Pi g_j (or g_j when unprojected) with their weights."""
    G, w = group.rep_matrices(model, rule)
    if model.projected:
        G = np.einsum("ab,jbc->jac", projection_matrix(model), G)
    return G, w


# -------------------------------------------------------------- moment tensors

@dataclass
class MomentStack:
    tensors: list
    dim: int

    def vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors])


def rule_degree(rule) -> int:
    """Largest bandlimit integrated exactly by the rule."""
    if rule.group == "SO2":
        return len(rule) - 1
    na, nb, nc = rule.meta.get("shape", (0, 0, 0))
    return min(na, nb, nc) - 1


def model_bandlimit(model: ModelSpec) -> int:
    return 1 if model.kind == "procrustes" else model.L


def check_rule(model: ModelSpec, rule, k: int) -> bool:
    ok = rule_degree(rule) >= k * model_bandlimit(model)
    if not ok:
        warnings.warn(f"quadrature rule degree {rule_degree(rule)} is below "
                      f"{k * model_bandlimit(model)} needed for order {k}", stacklevel=3)
    return ok


def moment_tensor(model: ModelSpec, theta, k: int, rule) -> MomentStack:
    """Quadrature estimates of T_1..T_k of (Pi) g theta."""
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    check_rule(model, rule, k)
    A, w = observation_matrices(model, rule)
    X = A @ np.asarray(theta, dtype=float)
    D = X.shape[1]
    if k == 3 and D > 64:
        raise MemoryError("third-order tensor materialized only for dimension <= 64")
    out = [w @ X]
    if k >= 2:
        out.append(np.einsum("j,ja,jb->ab", w, X, X))
    if k >= 3:
        out.append(np.einsum("j,ja,jb,jc->abc", w, X, X, X))
    return MomentStack(out, D)


# ------------------------------------------------------------------ tier sizes

@dataclass(frozen=True)
class DimLedger:
    d0: int
    dims: tuple  # (d_1, ..., d_K)

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def ladder(self) -> tuple:
        return tuple(int(x) for x in np.cumsum(self.dims))

    @property
    def total(self) -> int:
        return self.d0 + sum(self.dims)


def gram_rank_formula(l: int, S: int) -> int:
    """Generic rank of the Jacobian of all pairwise inner products of S vectors in R^{2l+1}."""
    n = 2 * l + 1
    return S * (S + 1) // 2 if S < n else n * (S - l)


def _trim(d0: int, dims: list) -> DimLedger:
    while len(dims) > 1 and dims[-1] == 0:
        dims.pop()
    return DimLedger(d0, tuple(dims))


def predicted_dims(model: ModelSpec) -> DimLedger:
    """Tier sizes (d_0; d_1, ..., d_K) at a generic point."""
    d = model.d
    if model.kind in ("mra", "mra_projected"):
        return _trim(1, [1, model.L, model.L - 1])
    if model.kind == "sphere":
        if model.L < 10:
            raise HypothesisError(f"sphere tier sizes are established for L >= 10, got L={model.L}")
        return _trim(3, [1, model.L, model.L * (model.L + 1) - 3])
    if model.kind in ("cryo", "cryo_projected"):
        need = 2 if model.kind == "cryo" else 4
        if model.L < 1:
            raise HypothesisError(f"{model.kind} tier sizes need L >= 1")
        if min(model.S) < need:
            raise HypothesisError(f"{model.kind} tier sizes need every S_l >= {need}, "
                                  f"got S={list(model.S)}")
        t1 = model.S[0]
        t2 = sum(gram_rank_formula(l, S) for l, S in enumerate(model.S))
        return _trim(3, [t1, t2 - t1, d - 3 - t2])
    return DimLedger(3, (0, d - 3))
