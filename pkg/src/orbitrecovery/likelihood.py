"""Samples, marginal negative log-likelihood, and observed Fisher information.

The rotation law is the discrete distribution of a quadrature rule, so the
likelihood of each observation is a finite Gaussian mixture with one
component Pi g_j theta per node.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import group
from .models import ModelSpec, observation_matrices, predicted_dims

PERCENTILES = (10, 30, 50, 70, 90)
FLUSH = 1e-300
_CHUNK_ELEMS = 2_000_000


@dataclass
class SampleBatch:
    model: ModelSpec
    y: np.ndarray
    sigma: float
    seed: int | None
    rotations: np.ndarray = field(repr=False)  # node indices, diagnostics only

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.y.ndim != 2 or self.y.shape[1] != self.model.d_proj:
            raise ValueError(f"observations must have length {self.model.d_proj}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def save(self, path) -> None:
        """Little-endian float64 layout behind a length-prefixed JSON header."""
        head = json.dumps({"model": json.loads(self.model.to_json()), "sigma": self.sigma,
                           "seed": self.seed, "n": self.n, "dim": self.y.shape[1]}).encode()
        with open(path, "wb") as fh:
            fh.write(b"ORBS")
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            fh.write(np.ascontiguousarray(self.y, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.rotations, dtype="<i8").tobytes())

    @staticmethod
    def load(path) -> "SampleBatch":
        with open(path, "rb") as fh:
            if fh.read(4) != b"ORBS":
                raise ValueError("not a sample batch file")
            (hl,) = struct.unpack("<Q", fh.read(8))
            head = json.loads(fh.read(hl))
            n, dim = head["n"], head["dim"]
            y = np.frombuffer(fh.read(8 * n * dim), dtype="<f8").reshape(n, dim).astype(float)
            rot = np.frombuffer(fh.read(8 * n), dtype="<i8").astype(int)
        model = ModelSpec.from_json(json.dumps(head["model"]))
        return SampleBatch(model, y, head["sigma"], head["seed"], rot)


def generate(model: ModelSpec, theta_star, sigma: float, n: int, rule, seed=0) -> SampleBatch:
    """Draw y_i = Pi g_i theta* + sigma eps_i with g_i from the rule's weighted nodes."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = group.seed_stream(seed)
    idx = group.sample_indices(rule, n, rng)
    A, _ = observation_matrices(model, rule)
    X = A @ np.asarray(theta_star, dtype=float)
    y = X[idx] + sigma * rng.standard_normal((n, X.shape[1]))
    return SampleBatch(model, y, float(sigma), seed, idx)


# ---------------------------------------------------------------- evaluation

def _chunks(n: int, width: int):
    step = max(1, _CHUNK_ELEMS // max(width, 1))
    for s in range(0, n, step):
        yield slice(s, min(n, s + step))


def _log_posterior(y, X, logw, sigma):
    """Unnormalized log weights log w_j - |y_i - X_j|^2 / 2 sigma^2 and their logsumexp."""
    d2 = (np.sum(y * y, axis=1)[:, None] - 2.0 * y @ X.T + np.sum(X * X, axis=1)[None, :])
    np.maximum(d2, 0.0, out=d2)
    a = logw[None, :] - d2 / (2.0 * sigma**2)
    lse = logsumexp(a, axis=1)
    bad = ~np.isfinite(lse)
    if bad.any():
        raise FloatingPointError(f"non-finite log-likelihood at sample {int(np.argmax(bad))}")
    return a, lse


def _posterior(a, lse):
    p = np.exp(a - lse[:, None])
    p[p < FLUSH] = 0.0
    return p


def _setup(model, theta, rule):
    A, w = observation_matrices(model, rule)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return A, w, logw, A @ np.asarray(theta, dtype=float)


def neg_log_lik(model: ModelSpec, theta, batch: SampleBatch, rule) -> float:
    """Empirical R_n(theta), including the Gaussian normalizer."""
    A, _, logw, X = _setup(model, theta, rule)
    tot = 0.0
    for sl in _chunks(batch.n, len(logw)):
        _, lse = _log_posterior(batch.y[sl], X, logw, batch.sigma)
        tot += lse.sum()
    D = X.shape[1]
    return float(-tot / batch.n + 0.5 * D * np.log(2 * np.pi * batch.sigma**2))


def nll_gradient(model: ModelSpec, theta, batch: SampleBatch, rule) -> np.ndarray:
    """-(1/(n sigma^2)) sum_i sum_j p_ij A_j'(y_i - A_j theta)."""
    A, _, logw, X = _setup(model, theta, rule)
    AtX = np.einsum("jDd,jD->jd", A, X)
    Py = np.zeros_like(X)
    psum = np.zeros(len(logw))
    for sl in _chunks(batch.n, len(logw)):
        a, lse = _log_posterior(batch.y[sl], X, logw, batch.sigma)
        p = _posterior(a, lse)
        Py += p.T @ batch.y[sl]
        psum += p.sum(axis=0)
    g = np.einsum("jDd,jD->d", A, Py) - psum @ AtX
    return -g / (batch.n * batch.sigma**2)


def nll_hessian(model: ModelSpec, theta, batch: SampleBatch, rule) -> np.ndarray:
    """(1/sigma^2) E_post[A'A] - (1/sigma^4) Cov_post[A'(y - A theta)], averaged over samples."""
    A, _, logw, X = _setup(model, theta, rule)
    N, _, d = A.shape
    AtX = np.einsum("jDd,jD->jd", A, X)
    psum = np.zeros(N)
    second = np.zeros((d, d))
    outer_mean = np.zeros((d, d))
    for sl in _chunks(batch.n, N * d):
        y = batch.y[sl]
        a, lse = _log_posterior(y, X, logw, batch.sigma)
        p = _posterior(a, lse)
        psum += p.sum(axis=0)
        b = np.einsum("jDd,iD->ijd", A, y) - AtX[None]          # (c, N, d)
        sb = (np.sqrt(p)[:, :, None] * b).reshape(-1, d)
        second += sb.T @ sb
        m = np.einsum("ij,ijd->id", p, b)
        outer_mean += m.T @ m
    AtA = np.einsum("j,jDd,jDe->de", psum, A, A)
    s2 = batch.sigma**2
    H = AtA / s2 - (second - outer_mean) / s2**2
    H /= batch.n
    return 0.5 * (H + H.T)


def observed_fisher(model: ModelSpec, theta_star, batch: SampleBatch, rule) -> np.ndarray:
    return nll_hessian(model, theta_star, batch, rule)


# ------------------------------------------------------------- tier scaling

@dataclass
class SpectrumReport:
    model: ModelSpec
    alphas: np.ndarray
    eigenvalues: np.ndarray         # (n_alpha, d), descending
    tiers: tuple                    # (d_1, ..., d_K)
    d0: int
    percentiles: np.ndarray         # (n_alpha, K, len(PERCENTILES))
    slopes: np.ndarray              # per tier, log median vs log(1/alpha)
    residuals: np.ndarray           # rms residual of each fit
    runtime: float = 0.0

    def tier_slices(self):
        out, start = [], 0
        for t in self.tiers:
            out.append(slice(start, start + t))
            start += t
        return out

    def csv_rows(self):
        for a, P in zip(self.alphas, self.percentiles):
            for k, row in enumerate(P, start=1):
                for q, v in zip(PERCENTILES, row):
                    yield a, k, q, v

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("alpha,tier,percentile,eigenvalue\n")
            for a, k, q, v in self.csv_rows():
                fh.write(f"{a:.17g},{k},{q},{v:.17g}\n")

    def summary(self) -> dict:
        return {"model": json.loads(self.model.to_json()), "alphas": self.alphas.tolist(),
                "tiers": list(self.tiers), "d0": self.d0, "slopes": self.slopes.tolist(),
                "residuals": self.residuals.tolist(), "runtime": self.runtime,
                "eigenvalues": self.eigenvalues.tolist()}


def tier_percentiles(eigs: np.ndarray, tiers) -> np.ndarray:
    out, start = [], 0
    for t in tiers:
        out.append(np.percentile(eigs[start:start + t], PERCENTILES))
        start += t
    return np.array(out)


def tier_scaling(model: ModelSpec, theta_star, alphas, n: int, rule, seed=0) -> SpectrumReport:
    """Observed Fisher spectra over an alpha grid and per-tier log-log slopes."""
    import time

    alphas = np.asarray(alphas, dtype=float)
    if alphas.size < 3:
        raise ValueError("alpha grid needs at least 3 points")
    if np.any(alphas <= 0):
        raise ValueError("alpha values must be positive")
    if np.ptp(np.log(alphas)) == 0:
        raise ValueError("alpha grid has zero spread; slopes are undefined")
    led = predicted_dims(model)
    t0 = time.perf_counter()
    th = np.asarray(theta_star, dtype=float)
    norm = np.linalg.norm(th)
    eigs, pct = [], []
    for i, a in enumerate(alphas):
        batch = generate(model, th, np.sqrt(a) * norm, n, rule, seed=(seed, i))
        ev = np.linalg.eigvalsh(observed_fisher(model, th, batch, rule))[::-1]
        eigs.append(ev)
        pct.append(tier_percentiles(ev, led.dims))
    pct = np.array(pct)
    x = np.log(1.0 / alphas)
    slopes, res = [], []
    for k in range(led.K):
        yk = np.log(np.abs(pct[:, k, PERCENTILES.index(50)]))
        c = np.polyfit(x, yk, 1)
        slopes.append(c[0])
        res.append(float(np.sqrt(np.mean((np.polyval(c, x) - yk) ** 2))))
    return SpectrumReport(model, alphas, np.array(eigs), led.dims, led.d0, pct,
                          np.array(slopes), np.array(res), time.perf_counter() - t0)
