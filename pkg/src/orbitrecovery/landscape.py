"""Optimization landscapes of the moment objectives.

Procrustes: s_2 over R^{3 x m} is globally benign.  MRA: on the variety of
signals with matching mean and power spectrum, s_3 reduces to a function of
the phase offsets t, which for suitable magnitudes has a non-global local
minimizer at t = (pi, 0, ..., 0).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .models import HypothesisError, ModelSpec, make_model
from .moments import s_closed

ARMIJO_C = 1e-4
SHRINK = 0.5


class SearchExhausted(RuntimeError):
    def __init__(self, msg, candidates):
        super().__init__(msg)
        self.candidates = candidates


# --------------------------------------------------------------------- Procrustes

def procrustes_s2(theta, theta_star) -> float:
    X, Y = np.asarray(theta, float), np.asarray(theta_star, float)
    return float(np.sum((X.T @ X - Y.T @ Y) ** 2) / 12.0)


def procrustes_grad_s2(theta, theta_star) -> np.ndarray:
    """Gradient (1/3) theta (theta' theta - theta*' theta*) of s_2, both 3 x m."""
    X, Y = np.asarray(theta, float), np.asarray(theta_star, float)
    return X @ (X.T @ X - Y.T @ Y) / 3.0


def procrustes_hess_s2(theta, theta_star) -> np.ndarray:
    """Hessian of s_2 as a (3m x 3m) matrix in row-major vec order."""
    X, Y = np.asarray(theta, float), np.asarray(theta_star, float)
    M = X.T @ X - Y.T @ Y
    n = X.size
    H = np.empty((n, n))
    for i in range(n):
        D = np.zeros(n)
        D[i] = 1.0
        D = D.reshape(X.shape)
        H[:, i] = ((D @ M + X @ (D.T @ X + X.T @ D)) / 3.0).ravel()
    return 0.5 * (H + H.T)


def _armijo(f, x, fx, g, direction, step):
    slope = float(np.vdot(g, direction))
    while step > 1e-30:
        xn = x + step * direction
        fn = f(xn)
        if fn <= fx + ARMIJO_C * step * slope:
            return xn, fn, step
        step *= SHRINK
    return x, fx, 0.0


def _procrustes_run(theta0, theta_star, tol, max_iter):
    f = lambda X: procrustes_s2(X, theta_star)
    X, step, escapes = np.array(theta0, float), 1.0, 0
    fx = f(X)
    stalled = False
    for it in range(max_iter):
        g = procrustes_grad_s2(X, theta_star)
        if np.linalg.norm(g) <= tol or stalled:
            # stationary to working precision: stop at a minimum, else follow negative curvature
            if fx <= 1e-10:
                return X, fx, it, escapes
            ev, V = np.linalg.eigh(procrustes_hess_s2(X, theta_star))
            if ev[0] >= -1e-12 * max(1.0, abs(ev[-1])):
                return X, fx, it, escapes
            v = V[:, 0].reshape(X.shape)
            a = 1.0
            while a > 1e-8:
                cand = [X + a * v, X - a * v]
                vals = [f(c) for c in cand]
                if min(vals) < fx:
                    break
                a *= SHRINK
            else:
                return X, fx, it, escapes
            X, fx = cand[int(np.argmin(vals))], min(vals)
            escapes += 1
            step, stalled = 1.0, False
            continue
        prev = fx
        X, fx, used = _armijo(f, X, fx, g, -g, 2.0 * step)
        stalled = used == 0.0 or fx >= prev
        step = used if used > 0 else step
    return X, fx, max_iter, escapes


@dataclass
class DescentSummary:
    m: int
    trials: int
    successes: int
    final_s2: list
    iterations: list
    escapes: list

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "trials": self.trials, "successes": self.successes,
                           "final_s2": [float(v) for v in self.final_s2],
                           "iterations": self.iterations, "escapes": self.escapes}, indent=1)


def procrustes_descent_experiment(m: int, trials: int, seed=0, theta_star=None, starts=None,
                                  tol: float = 1e-10, max_iter: int = 50_000) -> DescentSummary:
    """Backtracking gradient descent on s_2 from random starts.

    A run succeeds when its terminal s_2 is at most 1e-10.  Near-critical
    points with negative curvature are left along the lowest eigenvector.
    """
    if m < 3:
        raise HypothesisError("procrustes descent needs m >= 3")
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((3, m)) if theta_star is None else np.asarray(theta_star, float)
    if np.linalg.matrix_rank(Y) < 3:
        raise ValueError("theta_star must have rank 3")
    out = DescentSummary(m, trials, 0, [], [], [])
    for t in range(trials):
        X0 = rng.standard_normal((3, m)) if starts is None else np.asarray(starts[t], float)
        _, fx, it, esc = _procrustes_run(X0, Y, tol, max_iter)
        out.final_s2.append(fx)
        out.iterations.append(it)
        out.escapes.append(esc)
        out.successes += int(fx <= 1e-10)
    return out


# ----------------------------------------------------------- MRA phase objective

@lru_cache(maxsize=16)
def _phase_triples(L: int):
    """Ordered (l, l', l'') with l', l'' >= 1 and l = l' + l'' <= L."""
    return [(lp + lpp, lp, lpp) for lp in range(1, L) for lpp in range(1, L - lp + 1)]


@lru_cache(maxsize=16)
def _phase_matrix(L: int) -> np.ndarray:
    trip = _phase_triples(L)
    W = np.zeros((L, len(trip)))
    for c, (l, lp, lpp) in enumerate(trip):
        W[l - 1, c] += 1
        W[lp - 1, c] -= 1
        W[lpp - 1, c] -= 1
    W.setflags(write=False)
    return W


def phase_matrix(L: int) -> np.ndarray:
    """Columns w = e_l - e_l' - e_l'' (1-based frequencies stored at index l-1)."""
    return _phase_matrix(L).copy()


def _sincos_pi(x):
    """sin(pi x), cos(pi x) with exact zeros at integers and half-integers."""
    n = np.round(2.0 * x)
    f = x - n / 2.0
    s, c = np.sin(np.pi * f), np.cos(np.pi * f)
    k = n.astype(int) % 4
    sin = np.choose(k, [s, c, -s, -c])
    cos = np.choose(k, [c, -s, -c, s])
    return sin, cos


def mra_phase_objective(r_star, t):
    """s_3 restricted to the power-spectrum variety, as a function of phase offsets t.

    s(t) = 1/8 sum R^2 (1 - cos(w't)), R = r_l r_l' r_l'' over ordered triples
    l = l' + l'' with l', l'' >= 1.  Returns (value, gradient, Hessian).
    """
    r = np.asarray(r_star, dtype=float)
    t = np.asarray(t, dtype=float)
    L = r.size
    if np.any(r < 0):
        raise ValueError("magnitudes must be nonnegative")
    W = _phase_matrix(L)
    trip = _phase_triples(L)
    R2 = np.array([(r[l - 1] * r[lp - 1] * r[lpp - 1]) ** 2 for l, lp, lpp in trip]) / 8.0
    sin, cos = _sincos_pi(W.T @ t / np.pi)
    val = float(np.sum(R2 * (1.0 - cos)))
    grad = W @ (R2 * sin)
    hess = (W * (R2 * cos)) @ W.T
    return val, grad, hess


def orbit_tangent(L: int) -> np.ndarray:
    return np.arange(1, L + 1, dtype=float)


def complement_basis(e: np.ndarray) -> np.ndarray:
    """Orthonormal basis of e-perp, by Gram-Schmidt on (e, e_1, e_2, ...)."""
    L = e.size
    Q, _ = np.linalg.qr(np.column_stack([e, np.eye(L)]))
    B = Q[:, 1:L]
    return B


# ---------------------------------------------------------------------- reports

@dataclass
class CriticalPointReport:
    point: np.ndarray
    value: float
    grad_norm: float
    projected_eigs: np.ndarray
    null_residual: float
    classification: str
    info: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        ev = self.projected_eigs
        if ev.size == 0:
            return 0
        return int(np.sum(np.abs(ev) > 1e-12 * np.abs(ev).max()))

    def to_json(self) -> str:
        return json.dumps({"point": self.point.tolist(), "value": self.value,
                           "grad_norm": self.grad_norm,
                           "projected_eigs": self.projected_eigs.tolist(),
                           "null_residual": self.null_residual, "rank": self.rank,
                           "classification": self.classification, "info": self.info}, indent=1)


def classify(value, grad_norm, eigs, scale, grad_tol, value_tol=1e-10, eig_tol=1e-12):
    lam = eigs.min() if eigs.size else 0.0
    if value <= value_tol * scale:
        return "global-min"  # s_k >= 0, so a vanishing value is a global minimum
    if grad_norm > grad_tol:
        return "unresolved"
    if lam < -eig_tol * scale:
        return "saddle"
    if lam > eig_tol * scale:
        return "spurious-min"
    return "unresolved"


def _phase_report(r, t, grad_tol, info=None, value=None):
    val, g, H = mra_phase_objective(r, t)
    e = orbit_tangent(r.size)
    B = complement_basis(e)
    ev = np.linalg.eigvalsh(B.T @ H @ B)
    hn = np.linalg.norm(H)
    nres = float(np.linalg.norm(H @ e) / hn) if hn > 0 else 0.0
    scale = max(float(np.abs(ev).max()) if ev.size else 0.0, 1e-300)
    s = val if value is None else value
    cls = classify(s, float(np.linalg.norm(g)), ev, scale, grad_tol)
    return CriticalPointReport(np.asarray(t, float), float(s), float(np.linalg.norm(g)), ev,
                               nres, cls, dict(info or {}))


def spurious_magnitudes(L: int, kappa: float, delta: float) -> np.ndarray:
    """Squared magnitudes (1, L^kappa, delta, 1, ..., 1)."""
    q = np.ones(L)
    q[1] = float(L) ** kappa
    q[2] = delta
    return q


def spurious_signal(L: int, kappa: float, delta: float):
    """(theta*, theta) in the MRA layout: zero mean, true phases 0, lambda_1 = pi."""
    r = np.sqrt(spurious_magnitudes(L, kappa, delta))
    ts = np.zeros(2 * L + 1)
    ts[1::2] = r
    th = ts.copy()
    th[1] = -r[0]
    return ts, th


def mra_spurious_search(L: int, kappas=(2, 3, 4, 5), deltas=None) -> CriticalPointReport:
    """Certify a non-global local minimizer of s_3 on the power-spectrum variety.

    Squared magnitudes q = (1, L^kappa, delta, 1, ..., 1), trial point
    t = (pi, 0, ..., 0).  The phase gradient vanishes there for every q; the
    grid point whose Hessian on e-perp has the largest relative margin
    lambda_min / lambda_max is reported.
    """
    if L < 30:
        raise HypothesisError(f"the spurious construction needs L >= 30, got L={L}")
    if deltas is None:
        deltas = np.logspace(-4, -1, 7)
    t = np.zeros(L)
    t[0] = np.pi
    best, cands = None, []
    for kappa in kappas:
        for delta in deltas:
            r = np.sqrt(spurious_magnitudes(L, kappa, delta))
            rep = _phase_report(r, t, grad_tol=1e-10, info={"kappa": float(kappa),
                                                              "delta": float(delta)})
            margin = float(rep.projected_eigs.min() / np.abs(rep.projected_eigs).max())
            rep.info["margin"] = margin
            cands.append((float(kappa), float(delta), margin))
            if best is None or margin > best.info["margin"]:
                best = rep
    if best.classification != "spurious-min" or best.info["margin"] <= 0:
        raise SearchExhausted(f"no grid point gives a positive definite projected Hessian "
                              f"(best margin {best.info['margin']:.3g})", cands)
    kappa, delta = best.info["kappa"], best.info["delta"]
    ts, th = spurious_signal(L, kappa, delta)
    best.info["s3"] = s_closed(make_model("mra", L), th, ts, 3).value
    best.info["candidates"] = cands
    best.value = best.info["s3"]
    if not best.value > 0:
        best.classification = "unresolved"
    return best


# ----------------------------------------------------------------- variety charts

@dataclass
class VarietyChart:
    """Explicit charts of the MRA moment varieties.

    k = 2: V_1 = {theta_0 = theta*_0}; coordinates are theta_1..theta_{2L}.
    k = 3: V_2 = {same mean and magnitudes}; coordinates are phase offsets t,
    theta = (theta*_0, r*_l cos(lambda*_l + t_l), r*_l sin(lambda*_l + t_l)).
    """

    model: ModelSpec
    k: int
    theta_star: np.ndarray

    def __post_init__(self):
        if self.model.kind != "mra":
            raise ValueError("variety charts are implemented for the mra model")
        if self.k not in (2, 3):
            raise ValueError("k must be 2 or 3")
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        u = self.theta_star[1::2] + 1j * self.theta_star[2::2]
        self.r_star, self.lam_star = np.abs(u), np.angle(u)

    @property
    def dim(self) -> int:
        return 2 * self.model.L if self.k == 2 else self.model.L

    def to_theta(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.k == 2:
            return np.r_[self.theta_star[0], x]
        th = np.empty(self.model.d)
        th[0] = self.theta_star[0]
        ang = self.lam_star + x
        th[1::2] = self.r_star * np.cos(ang)
        th[2::2] = self.r_star * np.sin(ang)
        return th

    def objective(self, x):
        """(value, gradient, Hessian) of s_k in chart coordinates."""
        if self.k == 3:
            return mra_phase_objective(self.r_star, x)
        x = np.asarray(x, dtype=float)
        f = lambda z: s_closed(self.model, self.to_theta(z), self.theta_star, 2, grad=True)
        st = f(x)
        h = 1e-6 * max(1.0, np.linalg.norm(x))
        H = np.array([(f(x + h * e).gradient - f(x - h * e).gradient)[1:] / (2 * h)
                      for e in np.eye(x.size)])
        return st.value, st.gradient[1:], 0.5 * (H + H.T)


def minimize_sk_on_variety(chart: VarietyChart, init, step_policy: str = "armijo",
                           tol: float = 1e-10, max_iter: int = 20_000) -> CriticalPointReport:
    """Descend s_k in chart coordinates and classify the end point.

    ``tol`` is relative to the size of the objective's coefficients.
    'newton' uses the Hessian on the complement of the orbit direction when
    it is positive definite and a gradient step otherwise; both policies
    backtrack with the Armijo rule.
    """
    if step_policy not in ("armijo", "newton"):
        raise ValueError(f"unknown step policy {step_policy!r}")
    x = np.asarray(init, dtype=float).copy()
    f = lambda z: chart.objective(z)[0]
    val, g, H = chart.objective(x)
    scale = max(1.0, float(np.abs(H).max()), float(np.abs(chart.objective(np.zeros_like(x))[2]).max()))
    step = 1.0 / scale
    if chart.k == 3:
        B = complement_basis(orbit_tangent(chart.model.L))
    else:
        B = np.eye(x.size)
    it = 0
    for it in range(max_iter):
        if np.linalg.norm(g) <= tol * scale or val <= 1e-24 * scale:
            break
        d = -g
        if step_policy == "newton":
            Hp = B.T @ H @ B
            ev, V = np.linalg.eigh(Hp)
            if ev.min() > 1e-14 * abs(ev).max():
                d = -B @ (V @ ((V.T @ (B.T @ g)) / ev))
                x_new, v_new, used = _armijo(f, x, val, g, d, 1.0)
                if used == 0.0:
                    d = -g
                else:
                    x, val = x_new, v_new
                    val, g, H = chart.objective(x)
                    continue
        x, val, used = _armijo(f, x, val, g, d, 2.0 * step)
        step = used if used > 0 else step * SHRINK
        if used == 0.0 and step < 1e-30:
            break
        val, g, H = chart.objective(x)
    info = {"iterations": it, "step_policy": step_policy, "k": chart.k}
    if chart.k == 3:
        return _phase_report(chart.r_star, x, tol * scale, info)
    ev = np.linalg.eigvalsh(H)
    gn = float(np.linalg.norm(g))
    cls = classify(val, gn, ev, scale, tol * scale)
    r = np.hypot(x[0::2], x[1::2])
    info["magnitude_error"] = float(np.abs(r - chart.r_star).max())
    if cls == "spurious-min":
        cls = "unresolved"  # s_2 has no isolated minimizers on V_1
    if cls == "unresolved" and info["magnitude_error"] <= 1e-8 and val <= 1e-10 * scale:
        cls = "global-min"
    return CriticalPointReport(x, float(val), gn, ev, 0.0, cls, info)
