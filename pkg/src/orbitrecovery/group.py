"""Group elements, Haar quadrature on SO(2)/SO(3), and coefficient transforms.

A model's real coefficient vector theta is acted on by real orthogonal
matrices.  For the SO(3) models these are V D(g) V^*, where V maps complex
harmonic coefficients u to theta and D(g) is block-diagonal in Wigner
D-matrices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from .harmonics import assoc_legendre, cg_table, wigner_d, wigner_small_d

TWO_PI = 2.0 * np.pi


class QuadratureError(RuntimeError):
    """Raised when the beta-weight system cannot be solved acceptably."""


@dataclass(frozen=True)
class GroupElement:
    """An element of SO(2) (angle in [0,1)), SO(3) (z-y-z Euler angles), or O(3).

    O(3) elements are stored as a rotation plus a determinant sign.
    """

    kind: str
    params: tuple

    @staticmethod
    def so2(angle: float) -> "GroupElement":
        return GroupElement("SO2", (float(angle) % 1.0,))

    @staticmethod
    def so3(alpha: float, beta: float, gamma: float) -> "GroupElement":
        a, b, c = _canonical_euler(alpha, beta, gamma)
        return GroupElement("SO3", (a, b, c))

    @staticmethod
    def o3(alpha: float, beta: float, gamma: float, sign: int = 1) -> "GroupElement":
        a, b, c = _canonical_euler(alpha, beta, gamma)
        return GroupElement("O3", (a, b, c, 1 if sign >= 0 else -1))

    @staticmethod
    def identity(kind: str) -> "GroupElement":
        if kind == "SO2":
            return GroupElement.so2(0.0)
        if kind == "SO3":
            return GroupElement.so3(0.0, 0.0, 0.0)
        return GroupElement.o3(0.0, 0.0, 0.0, 1)

    @property
    def euler(self) -> tuple:
        return self.params[:3]

    def rotation_matrix(self) -> np.ndarray:
        """3x3 matrix for SO(3)/O(3) elements, 2x2 rotation for SO(2)."""
        if self.kind == "SO2":
            c, s = np.cos(TWO_PI * self.params[0]), np.sin(TWO_PI * self.params[0])
            return np.array([[c, s], [-s, c]])
        R = Rotation.from_euler("ZYZ", self.euler).as_matrix()
        return R * self.params[3] if self.kind == "O3" else R


def _canonical_euler(alpha, beta, gamma):
    beta = float(beta)
    if not -1e-12 <= beta <= np.pi + 1e-12:
        R = Rotation.from_euler("ZYZ", [alpha, beta, gamma])
        alpha, beta, gamma = R.as_euler("ZYZ")
    return float(alpha) % TWO_PI, min(max(beta, 0.0), np.pi), float(gamma) % TWO_PI


def compose(g2: GroupElement, g1: GroupElement) -> GroupElement:
    """The product g2 * g1 (apply g1 first)."""
    if g1.kind != g2.kind:
        raise TypeError("cannot compose elements of different groups")
    if g1.kind == "SO2":
        return GroupElement.so2(g2.params[0] + g1.params[0])
    R = Rotation.from_euler("ZYZ", g2.euler) * Rotation.from_euler("ZYZ", g1.euler)
    a, b, c = R.as_euler("ZYZ")
    if g1.kind == "SO3":
        return GroupElement.so3(a, b, c)
    return GroupElement.o3(a, b, c, g1.params[3] * g2.params[3])


@dataclass
class QuadratureRule:
    """Weighted nodes approximating Haar measure.

    ``nodes`` has shape (n, 1) for SO(2) and (n, 3) Euler angles for SO(3).
    """

    group: str
    nodes: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.weights)

    def element(self, j: int) -> GroupElement:
        if self.group == "SO2":
            return GroupElement.so2(self.nodes[j, 0])
        return GroupElement.so3(*self.nodes[j])

    def to_json(self) -> str:
        doc = {"group": self.group, "nodes": self.nodes.tolist(),
               "weights": self.weights.tolist(), "meta": self.meta}
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "QuadratureRule":
        doc = json.loads(text)
        return QuadratureRule(doc["group"], np.asarray(doc["nodes"], dtype=float),
                              np.asarray(doc["weights"], dtype=float), doc.get("meta", {}))


def so2_rule(n: int) -> QuadratureRule:
    """n equally spaced angles with equal weights; exact for frequencies |l| < n."""
    if n < 2:
        raise ValueError("an SO(2) rule needs at least 2 nodes")
    nodes = (np.arange(n) / n)[:, None]
    return QuadratureRule("SO2", nodes, np.full(n, 1.0 / n), {"n": n})


def beta_weights(n_beta: int):
    """Weights on equally spaced beta in [0, pi] with sum_i w_i P_l(cos beta_i) = 1{l=0}.

    Solved for all 0 <= l < n_beta in least squares.  Returns (betas, weights, residual).
    """
    betas = np.linspace(0.0, np.pi, n_beta)
    x = np.cos(betas)
    A = np.array([assoc_legendre(l, 0, x) for l in range(n_beta)])
    rhs = np.zeros(n_beta)
    rhs[0] = 1.0
    w, *_ = linalg.lstsq(A, rhs)
    resid = float(np.linalg.norm(A @ w - rhs))
    return betas, w, resid


def so3_rule(n_alpha: int, n_beta: int, n_gamma: int) -> QuadratureRule:
    """Product rule on z-y-z Euler angles: uniform in alpha and gamma, solved weights in beta."""
    if min(n_alpha, n_beta, n_gamma) < 2:
        raise ValueError("each grid dimension needs at least 2 points")
    betas, wb, resid = beta_weights(n_beta)
    neg = float(-wb[wb < 0].sum())
    if neg >= 1e-8 or not np.isfinite(resid):
        raise QuadratureError(f"beta-weight system failed: residual {resid:.3e}, "
                              f"negative mass {neg:.3e}")
    wb = wb / wb.sum()
    alphas = TWO_PI * np.arange(n_alpha) / n_alpha
    gammas = TWO_PI * np.arange(n_gamma) / n_gamma
    A, B, C = np.meshgrid(alphas, betas, gammas, indexing="ij")
    nodes = np.stack([A.ravel(), B.ravel(), C.ravel()], axis=1)
    weights = np.broadcast_to(wb[None, :, None], A.shape).ravel() / (n_alpha * n_gamma)
    meta = {"shape": [n_alpha, n_beta, n_gamma], "beta_residual": resid,
            "negative_mass": neg}
    return QuadratureRule("SO3", nodes, weights.copy(), meta)


def seed_stream(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; ``seed`` may be an int or SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def sample_indices(rule: QuadratureRule, n: int, rng: np.random.Generator) -> np.ndarray:
    """Node indices drawn with probability equal to the weights."""
    if len(rule) == 0:
        raise ValueError("empty rule")
    p = np.clip(rule.weights, 0.0, None)
    return rng.choice(len(rule), size=n, p=p / p.sum())


def sample_rotation(rule: QuadratureRule, rng: np.random.Generator) -> GroupElement:
    return rule.element(int(sample_indices(rule, 1, rng)[0]))


# ---------------------------------------------------------------- transforms

def _sphere_block(l: int) -> np.ndarray:
    # rows m=-l..l of u = V^* theta for one degree l
    Vh = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    r2 = 1.0 / np.sqrt(2.0)
    for m in range(-l, l + 1):
        i, ip, im = m + l, abs(m) + l, -abs(m) + l
        if m > 0:
            Vh[i, ip] = (-1) ** m * r2
            Vh[i, im] = -1j * (-1) ** m * r2
        elif m == 0:
            Vh[i, l] = 1.0
        else:
            Vh[i, ip] = r2
            Vh[i, im] = 1j * r2
    return Vh


def _cryo_block(l: int) -> np.ndarray:
    # as the sphere block, but with (-1)^{l+m} for m > 0 and i^l at m = 0,
    # matching the symmetry u_m = (-1)^{l+m} conj(u_{-m}) of a real volume
    Vh = _sphere_block(l)
    Vh[l + 1:] *= (-1) ** l
    Vh[l, l] = 1j**l
    return Vh


def complex_blocks(model) -> list[tuple[int, np.ndarray]]:
    """List of (degree l, slice) blocks of the complex coefficient vector."""
    if model.kind in ("mra", "mra_projected"):
        return [(l, slice(l, l + 1)) for l in range(model.L + 1)]
    if model.kind == "sphere":
        return [(l, slice(l * l, (l + 1) ** 2)) for l in range(model.L + 1)]
    if model.kind in ("cryo", "cryo_projected"):
        out, off = [], 0
        for l, S in enumerate(model.S):
            for _ in range(S):
                out.append((l, slice(off, off + 2 * l + 1)))
                off += 2 * l + 1
        return out
    raise ValueError(f"model kind {model.kind!r} has no complex coefficients")


@lru_cache(maxsize=64)
def _transform_matrix(model) -> np.ndarray:
    if model.kind in ("mra", "mra_projected"):
        Vh = np.zeros((model.L + 1, model.d), dtype=complex)
        Vh[0, 0] = 1.0
        for l in range(1, model.L + 1):
            Vh[l, 2 * l - 1] = 1.0
            Vh[l, 2 * l] = 1j
        return Vh
    Vh = np.zeros((model.d, model.d), dtype=complex)
    block = _sphere_block if model.kind == "sphere" else _cryo_block
    for l, sl in complex_blocks(model):
        Vh[sl, sl] = block(l)
    return Vh


def transform_matrix(model) -> np.ndarray:
    """Matrix Vh with u = Vh @ theta (u^{(l)} = theta_1 + i theta_2 for MRA)."""
    out = _transform_matrix(model)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def image_transform_matrix(S: int, L: int) -> np.ndarray:
    """Unitary map from real image coefficients to u~_m^{(s)}, blocks s, orders m=-L..L."""
    n = 2 * L + 1
    Vt = np.zeros((S * n, S * n), dtype=complex)
    r2 = 1.0 / np.sqrt(2.0)
    for s in range(S):
        o = s * n
        for m in range(-L, L + 1):
            i, ip, im = o + m + L, o + abs(m) + L, o - abs(m) + L
            if m > 0:
                Vt[i, ip] = (-1) ** m * r2
                Vt[i, im] = -1j * (-1) ** m * r2
            elif m == 0:
                Vt[i, ip] = 1.0
            else:
                Vt[i, ip] = r2
                Vt[i, im] = 1j * r2
    Vt.setflags(write=False)
    return Vt


def to_complex(model, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != model.d:
        raise ValueError(f"expected length {model.d}, got {theta.shape[-1]}")
    return theta @ transform_matrix(model).T


def from_complex(model, u) -> np.ndarray:
    u = np.asarray(u)
    Vh = transform_matrix(model)
    if u.shape[-1] != Vh.shape[0]:
        raise ValueError(f"expected length {Vh.shape[0]}, got {u.shape[-1]}")
    if model.kind in ("mra", "mra_projected"):
        out = np.zeros(u.shape[:-1] + (model.d,))
        out[..., 0] = u[..., 0].real
        out[..., 1::2] = u[..., 1:].real
        out[..., 2::2] = u[..., 1:].imag
        return out
    return (u @ Vh.conj()).real


# ------------------------------------------------------------ representations

def _group_name(model) -> str:
    if model.kind in ("mra", "mra_projected"):
        return "SO2"
    return "O3" if model.kind == "procrustes" else "SO3"


def _mra_matrices(L: int, angles: np.ndarray) -> np.ndarray:
    n = angles.size
    G = np.zeros((n, 2 * L + 1, 2 * L + 1))
    G[:, 0, 0] = 1.0
    for l in range(1, L + 1):
        c, s = np.cos(TWO_PI * l * angles), np.sin(TWO_PI * l * angles)
        i = 2 * l - 1
        G[:, i, i], G[:, i, i + 1] = c, s
        G[:, i + 1, i], G[:, i + 1, i + 1] = -s, c
    return G


def _so3_matrices(model, euler: np.ndarray) -> np.ndarray:
    n = euler.shape[0]
    G = np.zeros((n, model.d, model.d))
    blocks = complex_blocks(model)
    cache = {}
    for l, sl in blocks:
        if l not in cache:
            Vh = (_sphere_block if model.kind == "sphere" else _cryo_block)(l)
            D = wigner_d(l, euler)
            cache[l] = np.einsum("qa,nqm,mb->nab", Vh.conj(), D, Vh).real
        G[:, sl, sl] = cache[l]
    return G


def _procrustes_matrices(m: int, euler: np.ndarray, signs: np.ndarray) -> np.ndarray:
    R = Rotation.from_euler("ZYZ", euler).as_matrix() * signs[:, None, None]
    eye = np.eye(m)
    return np.einsum("nij,kl->nikjl", R, eye).reshape(len(R), 3 * m, 3 * m)


def rep_matrices(model, rule: QuadratureRule):
    """Orthogonal matrices and weights of the model's group action over a rule.

    For the Procrustes model the SO(3) rule is doubled by the reflection -I,
    giving a rule on O(3).
    """
    if model.kind in ("mra", "mra_projected"):
        if rule.group != "SO2":
            raise TypeError("MRA models need an SO(2) rule")
        return _mra_matrices(model.L, rule.nodes[:, 0]), rule.weights
    if rule.group != "SO3":
        raise TypeError(f"{model.kind} models need an SO(3) rule")
    if model.kind == "procrustes":
        n = len(rule)
        euler = np.concatenate([rule.nodes, rule.nodes])
        signs = np.concatenate([np.ones(n), -np.ones(n)])
        w = np.concatenate([rule.weights, rule.weights]) / 2.0
        return _procrustes_matrices(model.m, euler, signs), w
    return _so3_matrices(model, rule.nodes), rule.weights


def element_matrix(model, g: GroupElement) -> np.ndarray:
    """The d x d orthogonal matrix of a single group element."""
    want = _group_name(model)
    if model.kind == "procrustes":
        if g.kind not in ("SO3", "O3"):
            raise TypeError("Procrustes acts by O(3) elements")
        sign = g.params[3] if g.kind == "O3" else 1
        return _procrustes_matrices(model.m, np.array([g.euler]), np.array([float(sign)]))[0]
    if g.kind != want:
        raise TypeError(f"{model.kind} acts by {want} elements, got {g.kind}")
    if want == "SO2":
        return _mra_matrices(model.L, np.array([g.params[0]]))[0]
    return _so3_matrices(model, np.array([g.euler]))[0]


def act(model, g: GroupElement, theta) -> np.ndarray:
    """Apply g to the coefficient vector theta."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != model.d:
        raise ValueError(f"expected length {model.d}, got {theta.shape[-1]}")
    return theta @ element_matrix(model, g).T


def random_element(model, rng: np.random.Generator) -> GroupElement:
    """A Haar-random group element for the model's group."""
    kind = _group_name(model)
    if kind == "SO2":
        return GroupElement.so2(rng.uniform())
    a, b, c = Rotation.random(random_state=rng).as_euler("ZYZ")
    if kind == "SO3":
        return GroupElement.so3(a, b, c)
    return GroupElement.o3(a, b, c, 1 if rng.uniform() < 0.5 else -1)


# ------------------------------------------------------ quadrature identities

IDENTITY_THRESHOLDS = {"mean": 1e-9, "pair": 1e-8, "triple": 1e-7}


@dataclass
class IdentityResidual:
    identity: str
    degree: tuple
    residual: float
    threshold: float

    @property
    def ok(self) -> bool:
        return bool(self.residual <= self.threshold)


def _product_factors(rule: QuadratureRule):
    """(alphas, betas, beta weights, gammas) when the rule is a product rule, else None."""
    shape = rule.meta.get("shape")
    if rule.group != "SO3" or shape is None or int(np.prod(shape)) != len(rule):
        return None
    na, nb, nc = shape
    nodes = rule.nodes.reshape(na, nb, nc, 3)
    W = rule.weights.reshape(na, nb, nc)
    wb = W.sum(axis=(0, 2))
    if not np.allclose(W, wb[None, :, None] / (na * nc), rtol=0, atol=1e-15):
        return None
    return nodes[:, 0, 0, 0], nodes[0, :, 0, 1], wb, nodes[0, 0, :, 2]


def _cg3(l, lp, lpp):
    """C[q, q', q''] = <l q; l' q' | l'' q''> as a dense 3-index array."""
    T = cg_table(l, lp, lpp)
    out = np.zeros((2 * l + 1, 2 * lp + 1, 2 * lpp + 1))
    q = np.arange(-l, l + 1)[:, None]
    qp = np.arange(-lp, lp + 1)[None, :]
    qq = q + qp
    ok = np.abs(qq) <= lpp
    i, j = np.nonzero(ok)
    out[i, j, (qq + lpp)[ok]] = T[i, j]
    return out


def _so3_expectations(rule, degrees):
    """E[prod of D^{l_i}_{q_i m_i}] (last factor conjugated when len > 1) as a dense tensor."""
    fac = _product_factors(rule)
    ls = list(degrees)
    k = len(ls)
    signs = [1] * k if k == 1 else [1] * (k - 1) + [-1]
    if fac is None:
        Ds = [wigner_d(l, rule.nodes) for l in ls]
        Ds = [D if s > 0 else D.conj() for D, s in zip(Ds, signs)]
        sub = ",".join(f"n{c}{c.upper()}" for c in "abc"[:k])
        return np.einsum("n," + sub + "->" + "".join(f"{c}{c.upper()}" for c in "abc"[:k]),
                         rule.weights, *Ds)
    alphas, betas, wb, gammas = fac
    ds = [wigner_small_d(l, betas) for l in ls]
    sub = ",".join(f"n{c}{c.upper()}" for c in "abc"[:k])
    out_idx = "".join(f"{c}{c.upper()}" for c in "abc"[:k])
    B = np.einsum("n," + sub + "->" + out_idx, wb, *ds)

    def phase(angles):
        # mean over angles of exp(-i sum_i s_i q_i angle)
        tot = 0
        for l, s in zip(ls, signs):
            tot = np.add.outer(tot, s * np.arange(-l, l + 1)) if np.ndim(tot) else s * np.arange(-l, l + 1)
        return np.exp(-1j * np.multiply.outer(angles, tot)).mean(axis=0)

    Pa, Pc = phase(alphas), phase(gammas)
    # interleave (q_1, m_1, q_2, m_2, ...) to match B
    shp = []
    for l in ls:
        shp += [2 * l + 1, 1]
    Pa_b = Pa.reshape(shp)
    shp = []
    for l in ls:
        shp += [1, 2 * l + 1]
    Pc_b = Pc.reshape(shp)
    return Pa_b * B * Pc_b


def quadrature_identities(rule: QuadratureRule, l_mean: int, l_pair: int, l_triple: int,
                          thresholds: dict | None = None) -> list:
    """Max residual of the mean, orthogonality and third-order identities per degree.

    SO(3): E[D^l] = 1{l=0}; E[D^l_{qm} conj D^l'_{q'm'}] = delta/(2l+1);
    E[D^l_{qm} D^l'_{q'm'} conj D^l''_{q''m''}] = C_{q q' q''} C_{m m' m''}/(2l''+1).
    SO(2): the same with exp(i l alpha) in place of D^l.
    """
    th = dict(IDENTITY_THRESHOLDS, **(thresholds or {}))
    out = []
    if rule.group == "SO2":
        a = TWO_PI * rule.nodes[:, 0]
        E = lambda n: complex(rule.weights @ np.exp(1j * n * a))
        for l in range(l_mean + 1):
            out.append(IdentityResidual("mean", (l,), abs(E(l) - (l == 0)), th["mean"]))
        for l in range(l_pair + 1):
            for lp in range(l_pair + 1):
                out.append(IdentityResidual("pair", (l, lp), abs(E(l - lp) - (l == lp)), th["pair"]))
        for l in range(l_triple + 1):
            for lp in range(l_triple + 1):
                for lpp in range(l_triple + 1):
                    r = abs(E(l + lp - lpp) - (l + lp == lpp))
                    out.append(IdentityResidual("triple", (l, lp, lpp), r, th["triple"]))
        return out
    for l in range(l_mean + 1):
        M = _so3_expectations(rule, (l,))
        ref = np.eye(1) if l == 0 else 0.0
        out.append(IdentityResidual("mean", (l,), float(np.abs(M - ref).max()), th["mean"]))
    for l in range(l_pair + 1):
        for lp in range(l_pair + 1):
            M = _so3_expectations(rule, (l, lp))
            ref = 0.0
            if l == lp:
                n = 2 * l + 1
                ref = np.einsum("ac,bd->abcd", np.eye(n), np.eye(n)) / n
            out.append(IdentityResidual("pair", (l, lp), float(np.abs(M - ref).max()), th["pair"]))
    for l in range(l_triple + 1):
        for lp in range(l_triple + 1):
            for lpp in range(l_triple + 1):
                M = _so3_expectations(rule, (l, lp, lpp))
                C = _cg3(l, lp, lpp)
                ref = np.einsum("acx,bdy->abcdxy", C, C) / (2 * lpp + 1)
                out.append(IdentityResidual("triple", (l, lp, lpp),
                                            float(np.abs(M - ref).max()), th["triple"]))
    return out
