"""Data-adapted radial bases from Fourier-domain volumes on a spherical grid.

The basis maximizes the power of the projection of f(rho, .) onto
span{z_1..z_S} in L^2(rho^2 d rho).  With a = rho sqrt(w_rho) the problem
becomes a symmetric eigenproblem for K = diag(a) Re(C) diag(a), where
C(rho, rho') = sum_u w_u f(rho, u) conj(f(rho', u)); then z_s = v_s / a.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .harmonics import sph_harm


class DegenerateKernel(ValueError):
    def __init__(self, rank, S):
        super().__init__(f"radial kernel has rank {rank} < S={S}")
        self.rank = rank


@dataclass
class SphericalGridVolume:
    """Values f(rho, phi1, phi2) on a tensor grid with product quadrature.

    Radial nodes are Gauss-Legendre on (0, rho_max), so rho = 0 is never a
    node.  Angular nodes are Gauss-Legendre in cos(phi1) and uniform in phi2;
    the angular weight already contains the sin(phi1) factor.
    """

    rho: np.ndarray
    w_rho: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    w_ang: np.ndarray      # (n_phi1, n_phi2)
    values: np.ndarray     # complex (n_rho, n_phi1, n_phi2)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.rho.size, self.phi1.size, self.phi2.size):
            raise ValueError("value table does not match the grid")
        if np.any(self.w_rho <= 0) or np.any(self.w_ang <= 0) or np.any(self.rho <= 0):
            raise ValueError("grid weights and radii must be positive")

    @property
    def shape(self):
        return self.values.shape

    @staticmethod
    def grid(n_rho: int, n_phi1: int, n_phi2: int, rho_max: float = 1.0, values=None):
        x, w = np.polynomial.legendre.leggauss(n_rho)
        rho = 0.5 * rho_max * (x + 1.0)
        w_rho = 0.5 * rho_max * w
        c, wc = np.polynomial.legendre.leggauss(n_phi1)
        phi1 = np.arccos(c[::-1])
        phi2 = 2 * np.pi * np.arange(n_phi2) / n_phi2
        w_ang = np.outer(wc[::-1], np.full(n_phi2, 2 * np.pi / n_phi2))
        if values is None:
            values = np.zeros((n_rho, n_phi1, n_phi2), complex)
        return SphericalGridVolume(rho, w_rho, phi1, phi2, w_ang, values)

    def with_values(self, values) -> "SphericalGridVolume":
        return SphericalGridVolume(self.rho, self.w_rho, self.phi1, self.phi2, self.w_ang, values)

    def total_power(self) -> float:
        return float(np.einsum("r,ruv,uv->", self.rho**2 * self.w_rho,
                               np.abs(self.values) ** 2, self.w_ang))

    # CSV: one row per node, columns rho, phi1, phi2, w_rho, w_ang, re, im
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["rho", "phi1", "phi2", "w_rho", "w_ang", "re", "im"])
            for i, r in enumerate(self.rho):
                for j, p1 in enumerate(self.phi1):
                    for k, p2 in enumerate(self.phi2):
                        v = self.values[i, j, k]
                        wr.writerow([f"{x:.17g}" for x in (r, p1, p2, self.w_rho[i],
                                                           self.w_ang[j, k], v.real, v.imag)])

    @staticmethod
    def from_csv(path) -> "SphericalGridVolume":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        rho, i = np.unique(data[:, 0], return_inverse=True)
        phi1, j = np.unique(data[:, 1], return_inverse=True)
        phi2, k = np.unique(data[:, 2], return_inverse=True)
        vals = np.zeros((rho.size, phi1.size, phi2.size), complex)
        vals[i, j, k] = data[:, 5] + 1j * data[:, 6]
        w_rho = np.zeros(rho.size)
        w_rho[i] = data[:, 3]
        w_ang = np.zeros((phi1.size, phi2.size))
        w_ang[j, k] = data[:, 4]
        return SphericalGridVolume(rho, w_rho, phi1, phi2, w_ang, vals)


@dataclass
class RadialBasis:
    rho: np.ndarray
    w_rho: np.ndarray
    z: np.ndarray            # (S, n_rho)
    eigenvalues: np.ndarray  # all kernel eigenvalues, descending

    @property
    def S(self) -> int:
        return self.z.shape[0]

    def gram(self) -> np.ndarray:
        """Matrix of sum_rho rho^2 w_rho z_s z_s'."""
        return (self.z * (self.rho**2 * self.w_rho)) @ self.z.T

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["rho", "w_rho"] + [f"z{s + 1}" for s in range(self.S)])
            for i in range(self.rho.size):
                wr.writerow([f"{x:.17g}" for x in (self.rho[i], self.w_rho[i], *self.z[:, i])])

    @staticmethod
    def from_csv(path) -> "RadialBasis":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return RadialBasis(data[:, 0], data[:, 1], data[:, 2:].T.copy(), np.zeros(0))


def kernel_matrix(vol: SphericalGridVolume) -> np.ndarray:
    """K = diag(a) Re(C) diag(a), a = rho sqrt(w_rho)."""
    F = vol.values.reshape(vol.rho.size, -1)
    C = (F * vol.w_ang.ravel()) @ F.conj().T
    a = vol.rho * np.sqrt(vol.w_rho)
    K = a[:, None] * C.real * a[None, :]
    return 0.5 * (K + K.T)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
    return -v if nz.size and v[nz[0]] < 0 else v


def radial_basis(vol: SphericalGridVolume, S: int, rank_tol: float = 1e-12) -> RadialBasis:
    """Leading-S eigenfunctions of the weighted radial cross-covariance kernel."""
    if not 0 <= S <= vol.rho.size:
        raise ValueError(f"S must lie in [0, {vol.rho.size}]")
    K = kernel_matrix(vol)
    ev, V = np.linalg.eigh(K)
    ev, V = ev[::-1], V[:, ::-1]
    rank = int(np.sum(ev > rank_tol * max(ev[0], 1e-300))) if ev[0] > 0 else 0
    if rank < S:
        raise DegenerateKernel(rank, S)
    a = vol.rho * np.sqrt(vol.w_rho)
    z = np.array([_fix_sign(V[:, s]) / a for s in range(S)]).reshape(S, vol.rho.size)
    return RadialBasis(vol.rho.copy(), vol.w_rho.copy(), z, ev)


def captured_power(vol: SphericalGridVolume, basis: RadialBasis) -> float:
    """sum_s sum_u w_u |h_s(u)|^2 with h_s(u) = sum_rho f(rho, u) z_s(rho) rho^2 w_rho."""
    if basis.S == 0:
        return 0.0
    if basis.rho.shape != vol.rho.shape or not np.allclose(basis.rho, vol.rho, rtol=0, atol=1e-14):
        raise ValueError("basis and volume use different radial grids")
    F = vol.values.reshape(vol.rho.size, -1)
    h = (basis.z * (vol.rho**2 * vol.w_rho)) @ F
    return float(np.sum(np.abs(h) ** 2 * vol.w_ang.ravel()))


# ---------------------------------------------------------------- generators

def radial_profiles(rho: np.ndarray, n: int) -> np.ndarray:
    """n smooth test profiles rho^j exp(-rho^2), j = 0..n-1."""
    return np.array([rho**j * np.exp(-rho**2) for j in range(n)])


def random_volume(vol: SphericalGridVolume, L: int, n_radial: int, rng) -> SphericalGridVolume:
    """Random bandlimited volume: sum over (l, m, j) of c * profile_j(rho) * y_lm(phi)."""
    P1, P2 = np.meshgrid(vol.phi1, vol.phi2, indexing="ij")
    prof = radial_profiles(vol.rho, n_radial)
    vals = np.zeros(vol.shape, complex)
    for l in range(L + 1):
        for m in range(-l, l + 1):
            y = sph_harm(l, m, P1, P2)
            c = rng.standard_normal(n_radial) + 1j * rng.standard_normal(n_radial)
            vals += (c @ prof)[:, None, None] * y[None]
    return vol.with_values(vals)


def separable_volume(vol: SphericalGridVolume, z: np.ndarray, h: np.ndarray) -> SphericalGridVolume:
    """f(rho, u) = z(rho) h(u)."""
    return vol.with_values(np.asarray(z)[:, None, None] * np.asarray(h)[None])


def white_volume(vol: SphericalGridVolume, rng) -> SphericalGridVolume:
    """Independent complex normal values at every node (full-rank kernel)."""
    return vol.with_values(rng.standard_normal(vol.shape) + 1j * rng.standard_normal(vol.shape))
