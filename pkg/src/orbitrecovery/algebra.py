"""Numerical transcendence degrees of invariant moment algebras.

trdeg of the invariants up to order k equals the rank of the cumulative
Hessian sum of s_1..s_k at a generic point.  Each Hessian is a Jacobian
Gram matrix R_k' R_k, so we take the numerical rank of the stacked R_k,
expressed in the real chart eta below.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import group
from .models import HypothesisError, ModelSpec, predicted_dims
from .moments import eval_features, weighted_jacobian

log = logging.getLogger(__name__)

MAX_REDRAWS = 5


class NoRankGap(RuntimeError):
    """The singular spectrum has no clear gap at the numerical rank."""


class Gap(NamedTuple):
    index: int   # number of singular values above the gap
    ratio: float


# ------------------------------------------------------------------ eta chart

@dataclass
class EtaChart:
    """Real coordinates eta = E theta built from (Re, Im) of u_m for m >= 0.

    Entries with m >= 1 carry a factor sqrt(2) so that E is orthogonal.  The
    m = 0 entry of each block keeps only the part not forced to zero by
    parity: Re u_0 for the sphere and for even l in the cryo model, Im u_0
    for odd l in the cryo model.
    """

    model: ModelSpec
    E: np.ndarray
    labels: list

    @staticmethod
    def for_model(model: ModelSpec) -> "EtaChart":
        if model.kind in ("mra", "mra_projected", "procrustes"):
            return EtaChart(model, np.eye(model.d), [("theta", i) for i in range(model.d)])
        Vh = group.transform_matrix(model)
        rows, labels = [], []
        count = {}
        for l, sl in group.complex_blocks(model):
            count[l] = count.get(l, 0) + 1
            s = count[l]
            c = sl.start + l
            odd = model.kind != "sphere" and l % 2 == 1
            rows.append(Vh[c].imag if odd else Vh[c].real)
            labels.append(("w" if odd else "v", l, s, 0))
            for m in range(1, l + 1):
                rows.append(np.sqrt(2.0) * Vh[c + m].real)
                labels.append(("v", l, s, m))
                rows.append(np.sqrt(2.0) * Vh[c + m].imag)
                labels.append(("w", l, s, m))
        return EtaChart(model, np.array(rows), labels)

    def to_eta(self, theta) -> np.ndarray:
        return self.E @ np.asarray(theta, dtype=float)

    def to_theta(self, eta) -> np.ndarray:
        return self.E.T @ np.asarray(eta, dtype=float)


# --------------------------------------------------------------- numerical rank

def singular_gap(sv: np.ndarray) -> Gap:
    """Largest ratio sigma_i / sigma_{i+1} between consecutive singular values."""
    sv = np.asarray(sv, dtype=float)
    if sv.size == 0 or sv[0] == 0:
        return Gap(0, np.inf)
    if sv.size == 1:
        return Gap(1, np.inf)
    hi, lo = sv[:-1], sv[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)
    ratio[hi == 0] = 0.0
    i = int(np.argmax(ratio))
    return Gap(i + 1, float(ratio[i]))


def numerical_rank(M, tol: float = 1e-9) -> tuple[int, Gap]:
    """Rank = #{sigma > tol * sigma_max}, plus the largest relative gap."""
    M = np.asarray(M)
    if M.size == 0:
        return 0, Gap(0, np.inf)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0:
        return 0, Gap(0, np.inf)
    return int(np.sum(sv > tol * sv[0])), singular_gap(sv)


def _cut_ratio(sv: np.ndarray, r: int) -> float:
    if r == 0 or r >= sv.size or sv[r] == 0:
        return np.inf
    return float(sv[r - 1] / sv[r])


def balance(M: np.ndarray, drop: float = 1e-10) -> np.ndarray:
    """Scale rows, then columns, to unit norm; rows of round-off size are dropped."""
    M = np.asarray(M, dtype=float)
    rn = np.linalg.norm(M, axis=1)
    if rn.size == 0 or rn.max() == 0:
        return M[:0]
    keep = rn > drop * rn.max()
    M = M[keep] / rn[keep, None]
    cn = np.linalg.norm(M, axis=0)
    cn[cn == 0] = 1.0
    return M / cn


# ------------------------------------------------------------------- reports

@dataclass
class RankReport:
    model: ModelSpec
    ranks: tuple
    predicted: tuple | None
    singular_values: list
    cut_ratios: tuple
    tol: float
    redraws: int
    theta_star: np.ndarray = field(repr=False)

    @property
    def matches(self) -> bool | None:
        return None if self.predicted is None else tuple(self.ranks) == tuple(self.predicted)

    def to_json(self) -> str:
        return json.dumps({
            "model": json.loads(self.model.to_json()),
            "ranks": list(self.ranks),
            "predicted": None if self.predicted is None else list(self.predicted),
            "matches": self.matches,
            "tol": self.tol,
            "redraws": self.redraws,
            "cut_ratios": [r if np.isfinite(r) else None for r in self.cut_ratios],
            "singular_values": [[float(x) for x in sv] for sv in self.singular_values],
            "theta_star": [float(x) for x in self.theta_star],
        }, indent=1)


def _predicted_ladder(model: ModelSpec, kmax: int):
    """Predicted cumulative ranks for k = 1..kmax (flat after the last tier)."""
    try:
        lad = list(predicted_dims(model).ladder)
    except HypothesisError:
        return None
    lad += [lad[-1]] * (kmax - len(lad))
    return tuple(lad[:kmax])


def cumulative_ranks(model: ModelSpec, theta_star, kmax: int, tol: float = 1e-9,
                     gap_min: float = 1e3):
    """Numerical ranks of the stacked weighted Jacobians for k = 1..kmax (eta chart)."""
    E = EtaChart.for_model(model).E
    blocks, ranks, svs, cuts = [], [], [], []
    for k in range(1, kmax + 1):
        R = weighted_jacobian(model, theta_star, k)
        if R.shape[0]:
            blocks.append(R @ E.T)
        M = balance(np.vstack(blocks)) if blocks else np.zeros((0, model.d))
        sv = np.linalg.svd(M, compute_uv=False) if M.size else np.zeros(0)
        r = int(np.sum(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
        ranks.append(r)
        svs.append(sv)
        cuts.append(_cut_ratio(sv, r))
    ok_gap = all(c >= gap_min for c in cuts)
    return tuple(ranks), svs, tuple(cuts), ok_gap


def trdeg_ladder(model: ModelSpec, theta_star=None, tol: float = 1e-9, gap_min: float = 1e3,
                 kmax: int = 3, rng: np.random.Generator | None = None,
                 max_redraws: int = MAX_REDRAWS) -> RankReport:
    """Cumulative trdeg ladder at theta_star (or a random draw).

    A draw that shows no clear gap, or that misses the predicted ladder, is
    treated as non-generic and replaced by a fresh standard normal draw, at
    most ``max_redraws`` times.  Mismatches that survive are reported, not
    hidden; a missing gap raises NoRankGap.
    """
    predicted = _predicted_ladder(model, kmax)
    if rng is None:
        rng = np.random.default_rng(0)
    th = rng.standard_normal(model.d) if theta_star is None else np.asarray(theta_star, float)
    redraws = 0
    while True:
        ranks, svs, cuts, ok_gap = cumulative_ranks(model, th, kmax, tol, gap_min)
        good = ok_gap and (predicted is None or ranks == predicted)
        if good or redraws >= max_redraws:
            break
        redraws += 1
        log.info("redraw %d for %s: ranks %s, cut ratios %s", redraws, model.kind, ranks, cuts)
        th = rng.standard_normal(model.d)
    if not ok_gap:
        raise NoRankGap(f"no relative gap >= {gap_min:g} at ranks {ranks} "
                        f"(cut ratios {cuts}) after {redraws} redraws")
    return RankReport(model, ranks, predicted, svs, cuts, tol, redraws, th)


# ------------------------------------------------------------ Jacobians in eta

def bispectrum_jacobian(model: ModelSpec, eta) -> np.ndarray:
    """Jacobian of the bispectrum map with respect to eta.

    Complex for the sphere, real for the cryo kinds (whose bispectra are real).
    """
    if model.kind not in ("sphere", "cryo", "cryo_projected"):
        raise ValueError("bispectrum Jacobian is defined for sphere and cryo models")
    chart = EtaChart.for_model(model)
    _, J = eval_features(model, chart.to_theta(eta), 3, jac=True)
    J = J @ chart.E.T
    return J if model.kind == "sphere" else J.real


def gram_jacobian(X: np.ndarray) -> np.ndarray:
    """Jacobian of the map X -> (<x_s, x_t>)_{s <= t}, X of shape (n, S), vec by column."""
    n, S = X.shape
    pairs = [(s, t) for s in range(S) for t in range(s, S)]
    J = np.zeros((len(pairs), n * S))
    for r, (s, t) in enumerate(pairs):
        J[r, s * n:(s + 1) * n] += X[:, t]
        J[r, t * n:(t + 1) * n] += X[:, s]
    return J


def pairwise_gram_rank(l: int, S: int, rng: np.random.Generator | None = None,
                       tol: float = 1e-9) -> int:
    """Numerical rank of the pairwise inner-product map of S random vectors in R^{2l+1}."""
    if l < 0 or S < 1:
        raise ValueError("need l >= 0 and S >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    X = rng.standard_normal((2 * l + 1, S))
    return numerical_rank(gram_jacobian(X), tol)[0]
