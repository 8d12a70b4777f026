"""Series terms s_1, s_2, s_3 of the high-noise expansion.

Every closed form here is a weighted sum of squared differences of
low-degree invariant features (means, power spectra, Gram entries,
bispectra).  Those features are polynomials of degree <= 3 in the complex
coefficients u = Vh theta, which gives gradients and the Gauss-Newton
Hessians at theta* directly.  ``s_oracle`` evaluates the same quantities by
quadrature over the group, independently of the closed forms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from . import group
from .harmonics import cg_table, clebsch_gordan, slice_coeff
from .models import ModelSpec, check_rule, observation_matrices


@dataclass
class SeriesTerm:
    k: int
    value: float
    gradient: np.ndarray | None = None


@dataclass
class BispectrumVector:
    """Bispectrum values; real for the cryo kinds, where ``imag_residual`` is the discarded max |Im|."""

    values: np.ndarray
    index: list
    imag_residual: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["tuple", "real", "imag"])
            for key, v in zip(self.index, self.values):
                v = complex(v)
                wr.writerow([repr(key), f"{v.real:.17g}", f"{v.imag:.17g}"])


# ------------------------------------------------------------ feature structure

@dataclass
class FeatureSpec:
    """Polynomial features F(u) and the quadratic form s = dRe' Wr dRe + dIm' Wi dIm.

    Monomials are (feature, coef, a, b, c) for coef*conj(u_a)*conj(u_b)*u_c,
    (feature, coef, a, b) for coef*conj(u_a)*u_b, or (feature, coef, a) for
    coef*u_a.  Wr, Wi are vectors (diagonal) or square matrices.
    """

    n: int
    degree: int
    rows: np.ndarray
    coef: np.ndarray
    idx: tuple
    w_re: np.ndarray
    w_im: np.ndarray
    index: list


def _empty_spec() -> FeatureSpec:
    z = np.zeros(0)
    return FeatureSpec(0, 1, z.astype(int), z, (z.astype(int),), z, z, [])


def _complex_map(model: ModelSpec) -> np.ndarray:
    if model.kind == "procrustes":
        return np.eye(model.d)
    return group.transform_matrix(model)


def _block_offsets(model: ModelSpec) -> dict:
    """Map (l, s) -> offset of u^{(ls)} in the complex vector (s from 1)."""
    out, count = {}, {}
    for l, sl in group.complex_blocks(model):
        count[l] = count.get(l, 0) + 1
        out[(l, count[l])] = sl.start
    return out


def triple_index(L: int) -> list:
    """Tuples (l, l', l'') with 0 <= l, l', l'' <= L and |l-l'| <= l'' <= l+l'."""
    return [(l, lp, lpp) for l in range(L + 1) for lp in range(L + 1)
            for lpp in range(abs(l - lp), min(l + lp, L) + 1)]


def _bispectrum_monomials(model: ModelSpec):
    """Monomials of B_{(l,s),(l',s'),(l'',s'')} = sum C conj(u_m) conj(u'_m') u''_{m+m'}."""
    offs = _block_offsets(model)
    S = model.S if model.kind != "sphere" else (1,) * (model.L + 1)
    rows, coef, A, B, Cc, index = [], [], [], [], [], []
    f = 0
    for l, lp, lpp in triple_index(model.L):
        C = cg_table(l, lp, lpp)
        mi, mpi = np.nonzero(C)
        vals = C[mi, mpi]
        mm = mi - l
        mmp = mpi - lp
        for s in range(1, S[l] + 1):
            for sp in range(1, S[lp] + 1):
                for spp in range(1, S[lpp] + 1):
                    rows.append(np.full(len(vals), f))
                    coef.append(vals)
                    A.append(offs[(l, s)] + mm + l)
                    B.append(offs[(lp, sp)] + mmp + lp)
                    Cc.append(offs[(lpp, spp)] + mm + mmp + lpp)
                    index.append(((l, s), (lp, sp), (lpp, spp)) if model.kind != "sphere"
                                 else (l, lp, lpp))
                    f += 1
    cat = np.concatenate
    return f, cat(rows), cat(coef), (cat(A), cat(B), cat(Cc)), index


def _gram_monomials(model: ModelSpec, ls):
    """Monomials of <u^{(l s)}, u^{(l s')}> over the listed (l, S) pairs."""
    offs = _block_offsets(model)
    rows, coef, A, B, index = [], [], [], [], []
    f = 0
    for l, S in ls:
        ms = np.arange(2 * l + 1)
        for s in range(1, S + 1):
            for sp in range(1, S + 1):
                rows.append(np.full(ms.size, f))
                coef.append(np.ones(ms.size))
                A.append(offs[(l, s)] + ms)
                B.append(offs[(l, sp)] + ms)
                index.append((l, s, sp))
                f += 1
    cat = np.concatenate
    return f, cat(rows), cat(coef), (cat(A), cat(B)), index


def _mra_spec(model: ModelSpec, k: int) -> FeatureSpec:
    L = model.L
    proj = model.kind == "mra_projected"
    if k == 1:
        w = np.array([1.0 if proj else 0.5])
        return FeatureSpec(1, 1, np.array([0]), np.array([1.0]), (np.array([0]),),
                           w, np.zeros(1), [(0,)])
    if k == 2:
        ls = np.arange(L + 1)
        w = np.r_[1.0 if proj else 0.25, np.full(L, 0.25 if proj else 0.125)]
        return FeatureSpec(L + 1, 2, ls, np.ones(L + 1), (ls, ls), w, np.zeros(L + 1),
                           [(l,) for l in ls])
    # k == 3: x = u_l conj(u_l' u_l'') over l = l' + l''
    trip = []
    if proj:
        trip += [(0, 0, 0)] + [(l, 0, l) for l in range(1, L + 1)]
        trip += [(l, lp, l - lp) for l in range(2, L + 1) for lp in range(1, l)]
        wr = np.r_[2.0 / 3.0, np.full(L, 0.5), np.full(len(trip) - L - 1, 0.125)]
        wi = np.zeros(len(trip))
    else:
        trip = [(l, lp, l - lp) for l in range(L + 1) for lp in range(l + 1)]
        wr = np.array([1.0 / 12.0 if t == (0, 0, 0) else 1.0 / 16.0 for t in trip])
        wi = wr.copy()
    arr = np.array(trip)
    n = len(trip)
    return FeatureSpec(n, 3, np.arange(n), np.ones(n), (arr[:, 1], arr[:, 2], arr[:, 0]),
                       wr, wi, trip)


def _q_coupling(L: int) -> np.ndarray:
    Q = np.zeros((L + 1, L + 1))
    for k in range(L + 1):
        for l in range(L + 1):
            t = sum(slice_coeff(k, q) ** 2 * slice_coeff(l, q) ** 2
                    for q in range(-min(k, l), min(k, l) + 1))
            Q[k, l] = (-1) ** (k + l) * t / ((2 * k + 1) * (2 * l + 1))
    return Q


def _m_coupling(L: int) -> np.ndarray:
    trip = triple_index(L)
    M = np.zeros((len(trip), len(trip)))
    for i, (k, kp, kpp) in enumerate(trip):
        for j, (l, lp, lpp) in enumerate(trip):
            tot = 0.0
            for q in range(-min(k, l), min(k, l) + 1):
                for qp in range(-min(kp, lp), min(kp, lp) + 1):
                    qpp = q + qp
                    if abs(qpp) > min(kpp, lpp):
                        continue
                    tot += (clebsch_gordan(k, kp, kpp, q, qp, qpp)
                            * clebsch_gordan(l, lp, lpp, q, qp, qpp)
                            * slice_coeff(k, q) * slice_coeff(kp, qp) * slice_coeff(kpp, qpp)
                            * slice_coeff(l, q) * slice_coeff(lp, qp) * slice_coeff(lpp, qpp))
            M[i, j] = (-1) ** (kpp + lpp) * tot / ((2 * kpp + 1) * (2 * lpp + 1))
    return M


@lru_cache(maxsize=64)
def feature_spec(model: ModelSpec, k: int) -> FeatureSpec:
    if k not in (1, 2, 3):
        raise ValueError(f"no series term of order {k}")
    kind = model.kind
    if kind in ("mra", "mra_projected"):
        return _mra_spec(model, k)
    if kind == "procrustes":
        if k != 2:
            return _empty_spec()  # odd moments vanish under the reflection -I
        m = model.m
        i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        i, j = i.ravel(), j.ravel()
        rows = np.repeat(np.arange(m * m), 3)
        a = (np.arange(3)[None, :] * m + i[:, None]).ravel()
        b = (np.arange(3)[None, :] * m + j[:, None]).ravel()
        w = np.full(m * m, 1.0 / 12.0)
        return FeatureSpec(m * m, 2, rows, np.ones(rows.size), (a, b), w, np.zeros(m * m),
                           list(zip(i.tolist(), j.tolist())))
    # SO(3) models
    if k == 1:
        offs = _block_offsets(model)
        S0 = 1 if kind == "sphere" else model.S[0]
        idx = np.array([offs[(0, s)] for s in range(1, S0 + 1)])
        c = 0.5 * (slice_coeff(0, 0) ** 2 if kind == "cryo_projected" else 1.0)
        return FeatureSpec(S0, 1, np.arange(S0), np.ones(S0), (idx,), np.full(S0, c),
                           np.zeros(S0), [(0, s) for s in range(1, S0 + 1)])
    if k == 2:
        if kind == "sphere":
            offs = _block_offsets(model)
            rows = np.concatenate([np.full(2 * l + 1, l) for l in range(model.L + 1)])
            a = np.concatenate([offs[(l, 1)] + np.arange(2 * l + 1) for l in range(model.L + 1)])
            w = np.array([0.25 / (2 * l + 1) for l in range(model.L + 1)])
            return FeatureSpec(model.L + 1, 2, rows, np.ones(rows.size), (a, a), w,
                               np.zeros(model.L + 1), list(range(model.L + 1)))
        n, rows, coef, idx, index = _gram_monomials(model, list(enumerate(model.S)))
        if kind == "cryo":
            w = np.array([0.25 / (2 * key[0] + 1) for key in index])
        else:
            Q = _q_coupling(model.L)
            w = np.zeros((n, n))
            pos = {key: i for i, key in enumerate(index)}
            for (k1, s, sp), i in pos.items():
                for l in range(model.L + 1):
                    j = pos.get((l, s, sp))
                    if j is not None:
                        w[i, j] = 0.25 * Q[k1, l]
        return FeatureSpec(n, 2, rows, coef, idx, w, np.zeros_like(w), index)
    n, rows, coef, idx, index = _bispectrum_monomials(model)
    if kind == "cryo_projected":
        trip = triple_index(model.L)
        tpos = {t: i for i, t in enumerate(trip)}
        M = _m_coupling(model.L)
        w = np.zeros((n, n))
        groups = {}
        for i, key in enumerate(index):
            ls = tuple(p[0] for p in key)
            ss = tuple(p[1] for p in key)
            groups.setdefault(ss, []).append((i, tpos[ls]))
        for members in groups.values():
            ii = np.array([m[0] for m in members])
            tt = np.array([m[1] for m in members])
            w[np.ix_(ii, ii)] = M[np.ix_(tt, tt)] / 12.0
        return FeatureSpec(n, 3, rows, coef, idx, w, w.copy(), index)
    lpp = np.array([key[2] if kind == "sphere" else key[2][0] for key in index])
    w = 1.0 / (12.0 * (2 * lpp + 1))
    return FeatureSpec(n, 3, rows, coef, idx, w, w.copy(), index)


# ------------------------------------------------------------------ evaluation

def _sum_rows(rows: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    return (np.bincount(rows, weights=vals.real, minlength=n)
            + 1j * np.bincount(rows, weights=vals.imag, minlength=n))


def eval_features(model: ModelSpec, theta, k: int, jac: bool = False):
    """Feature values F(theta) (complex) and optionally dF/dtheta (complex, n x d)."""
    spec = feature_spec(model, k)
    Vh = _complex_map(model)
    theta = np.asarray(theta, dtype=float)
    u = Vh @ theta
    if spec.n == 0:
        return (np.zeros(0, complex), np.zeros((0, model.d), complex)) if jac else np.zeros(0, complex)
    if spec.degree == 1:
        (a,) = spec.idx
        F = _sum_rows(spec.rows, spec.coef * u[a], spec.n)
        parts = [(spec.coef, a, False)]
    elif spec.degree == 2:
        a, b = spec.idx
        F = _sum_rows(spec.rows, spec.coef * u[a].conj() * u[b], spec.n)
        parts = [(spec.coef * u[b], a, True), (spec.coef * u[a].conj(), b, False)]
    else:
        a, b, c = spec.idx
        ua, ub, uc = u[a].conj(), u[b].conj(), u[c]
        F = _sum_rows(spec.rows, spec.coef * ua * ub * uc, spec.n)
        parts = [(spec.coef * ub * uc, a, True), (spec.coef * ua * uc, b, True),
                 (spec.coef * ua * ub, c, False)]
    if not jac:
        return F
    nu = Vh.shape[0]
    J = np.zeros((spec.n, model.d), dtype=complex)
    for vals, col, conj in parts:
        Sm = sparse.csr_matrix((vals, (spec.rows, col)), shape=(spec.n, nu))
        J += Sm @ (Vh.conj() if conj else Vh)
    return F, J


def _qform(W: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(x @ (W * y)) if W.ndim == 1 else float(x @ W @ y)


def _wmul(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    return W * x if W.ndim == 1 else W @ x


def s_features(model: ModelSpec, theta, theta_star, k: int, grad: bool = False) -> SeriesTerm:
    """s_k from invariant features (the B-form closed expressions)."""
    spec = feature_spec(model, k)
    if grad:
        F, J = eval_features(model, theta, k, jac=True)
    else:
        F = eval_features(model, theta, k)
    dF = F - eval_features(model, theta_star, k)
    val = _qform(spec.w_re, dF.real, dF.real) + _qform(spec.w_im, dF.imag, dF.imag)
    g = None
    if grad:
        g = 2.0 * (J.real.T @ _wmul(spec.w_re, dF.real) + J.imag.T @ _wmul(spec.w_im, dF.imag))
    return SeriesTerm(k, val, g)


def weighted_jacobian(model: ModelSpec, theta_star, k: int) -> np.ndarray:
    """Real matrix R with R'R = Hessian of s_k at theta* (Gauss-Newton form, exact there)."""
    spec = feature_spec(model, k)
    _, J = eval_features(model, theta_star, k, jac=True)
    blocks = []
    for W, part in ((spec.w_re, J.real), (spec.w_im, J.imag)):
        if W.size == 0:
            continue
        if W.ndim == 1:
            keep = W > 0
            blocks.append(np.sqrt(2.0 * W[keep])[:, None] * part[keep])
        else:
            ev, U = np.linalg.eigh(2.0 * W)
            if ev.min() < -1e-12 * max(1.0, ev.max()):
                raise ValueError("coupling matrix is not positive semidefinite")
            keep = ev > 1e-14 * max(ev.max(), 1e-300)
            blocks.append((np.sqrt(ev[keep])[:, None] * U[:, keep].T) @ part)
    if not blocks:
        return np.zeros((0, model.d))
    return np.vstack(blocks)


def s_hessian_at_star(model: ModelSpec, theta_star, k: int) -> np.ndarray:
    """Hessian of s_k at theta = theta*, as a Jacobian Gram matrix."""
    R = weighted_jacobian(model, theta_star, k)
    H = R.T @ R
    return 0.5 * (H + H.T)


# -------------------------------------------------------- printed MRA formulas

def _mra_polar(theta):
    theta = np.asarray(theta, dtype=float)
    u = theta[1::2] + 1j * theta[2::2]
    return theta[0], np.abs(u), np.angle(u)


def _mra_closed(model: ModelSpec, theta, theta_star, k: int) -> float:
    t0, r, lam = _mra_polar(theta)
    s0, rs, lams = _mra_polar(theta_star)
    proj = model.kind == "mra_projected"
    if k == 1:
        return (1.0 if proj else 0.5) * (t0 - s0) ** 2
    if k == 2:
        a, b = (1.0, 0.25) if proj else (0.25, 0.125)
        return a * (t0**2 - s0**2) ** 2 + b * np.sum((r**2 - rs**2) ** 2)
    L = model.L
    c0, c1 = (2.0 / 3.0, 0.5) if proj else (1.0 / 12.0, 0.125)
    val = c0 * (t0**3 - s0**3) ** 2 + c1 * np.sum((t0 * r**2 - s0 * rs**2) ** 2)
    for l in range(2, L + 1):
        for lp in range(1, l):
            lpp = l - lp
            R = r[l - 1] * r[lp - 1] * r[lpp - 1]
            Rs = rs[l - 1] * rs[lp - 1] * rs[lpp - 1]
            la = lam[l - 1] - lam[lp - 1] - lam[lpp - 1]
            las = lams[l - 1] - lams[lp - 1] - lams[lpp - 1]
            term = R**2 + Rs**2 - 2 * R * Rs * np.cos(las - la)
            if proj:
                term += (R**2 * np.cos(2 * la) + Rs**2 * np.cos(2 * las)
                         - 2 * R * Rs * np.cos(las + la))
            val += term / 16.0
    return float(val)


def _procrustes_closed(model: ModelSpec, theta, theta_star, k: int) -> float:
    if k != 2:
        return 0.0
    X = np.asarray(theta, dtype=float).reshape(3, model.m)
    Y = np.asarray(theta_star, dtype=float).reshape(3, model.m)
    return float(np.sum((X.T @ X - Y.T @ Y) ** 2) / 12.0)


def s_closed(model: ModelSpec, theta, theta_star, k: int, grad: bool = False) -> SeriesTerm:
    """Closed-form series term s_k(theta) for true signal theta_star."""
    if k not in (1, 2, 3):
        raise ValueError(f"no closed form for k={k}")
    if model.kind in ("mra", "mra_projected"):
        val = _mra_closed(model, theta, theta_star, k)
    elif model.kind == "procrustes":
        val = _procrustes_closed(model, theta, theta_star, k)
    else:
        return s_features(model, theta, theta_star, k, grad=grad)
    g = s_features(model, theta, theta_star, k, grad=True).gradient if grad else None
    return SeriesTerm(k, val, g)


# ----------------------------------------------------------------------- oracle

def _orbit_power_mean(A, w, x, y, k, projected):
    X = A @ x
    if projected:
        Y = A @ y
        return float(w @ (X @ Y.T) ** k @ w)
    return float(w @ (X @ y) ** k)


def s_oracle(model: ModelSpec, theta, theta_star, k: int, rule) -> SeriesTerm:
    """s_k by quadrature: (1/(2 k!)) E[<a,b>^k - 2<a,b*>^k + <a*,b*>^k].

    Unprojected: a = theta, b = g theta.  Projected: a = Pi g theta and
    b = Pi h theta with g, h independent.
    """
    check_rule(model, rule, k)
    A, w = observation_matrices(model, rule)
    th = np.asarray(theta, dtype=float)
    ts = np.asarray(theta_star, dtype=float)
    pr = model.projected
    if pr:
        e = (_orbit_power_mean(A, w, th, th, k, True) - 2 * _orbit_power_mean(A, w, th, ts, k, True)
             + _orbit_power_mean(A, w, ts, ts, k, True))
    else:
        e = (_orbit_power_mean(A, w, th, th, k, False) - 2 * _orbit_power_mean(A, w, ts, th, k, False)
             + _orbit_power_mean(A, w, ts, ts, k, False))
    return SeriesTerm(k, e / (2 * math.factorial(k)))


# -------------------------------------------------------------------- bispectrum

def bispectrum(model: ModelSpec, theta) -> BispectrumVector:
    """Degree-3 invariants: CG-weighted triples (SO(3) kinds) or Fourier triples (MRA)."""
    if model.kind in ("mra", "mra_projected"):
        L = model.L
        trip = [(l, lp, l - lp) for l in range(L + 1) for lp in range(l + 1)]
        u = group.to_complex(model, theta)
        vals = np.array([u[a] * np.conj(u[b] * u[c]) for a, b, c in trip])
        return BispectrumVector(vals, trip)
    if model.kind == "procrustes":
        raise ValueError("no bispectrum for the Procrustes model")
    spec = feature_spec(model, 3)
    F = eval_features(model, theta, 3)
    if model.kind == "sphere":
        return BispectrumVector(F, list(spec.index))
    res = float(np.abs(F.imag).max()) if F.size else 0.0
    return BispectrumVector(F.real.copy(), list(spec.index), res)


def generic_point(model: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(model.d)
