"""Special functions on the sphere and on SO(3).

Associated Legendre functions (without the Condon-Shortley phase), complex
spherical harmonics, Clebsch-Gordan coefficients, the Fourier-slice values
p_lm and Wigner D-matrices in the z-y-z Euler convention.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np


def _check_lm(l: int, m: int) -> None:
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid harmonic index (l={l}, m={m})")


@lru_cache(maxsize=None)
def _fact(n: int) -> int:
    return math.factorial(n)


def _legendre_nonneg(l: int, m: int, x: np.ndarray) -> np.ndarray:
    # upward recurrence in l at fixed m >= 0, seeded by (2m-1)!! (1-x^2)^{m/2}
    pmm = np.full_like(x, float(math.prod(range(1, 2 * m, 2)) if m > 0 else 1.0))
    if m > 0:
        pmm = pmm * (1.0 - x * x) ** (m / 2.0)
    if l == m:
        return pmm
    p_prev, p = pmm, x * (2 * m + 1) * pmm
    for ll in range(m + 2, l + 1):
        p_prev, p = p, ((2 * ll - 1) * x * p - (ll + m - 1) * p_prev) / (ll - m)
    return p


def assoc_legendre(l: int, m: int, x):
    """Associated Legendre function P_lm(x), with no Condon-Shortley phase.

    Negative orders use P_{l,-m} = (-1)^m (l-m)!/(l+m)! P_{lm}.
    Accepts scalar or array ``x`` in [-1, 1].
    """
    _check_lm(l, m)
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0):
        raise ValueError("x must lie in [-1, 1]")
    am = abs(m)
    val = _legendre_nonneg(l, am, np.atleast_1d(xa))
    if m < 0:
        val = (-1) ** am * (_fact(l - am) / _fact(l + am)) * val
    return val.reshape(xa.shape) if xa.ndim else float(val[0])


def legendre_at_zero(l: int, m: int) -> float:
    """Closed form of P_lm(0); vanishes unless l+m is even."""
    _check_lm(l, m)
    if (l + m) % 2:
        return 0.0
    num = (-1) ** ((l - m) // 2) * math.comb(l, (l + m) // 2) * _fact(l + m)
    return float(Fraction(num, 2**l * _fact(l)))


def sph_harm(l: int, m: int, phi1, phi2):
    """Complex spherical harmonic y_lm at colatitude phi1, longitude phi2."""
    _check_lm(l, m)
    norm = math.sqrt((2 * l + 1) / (4 * math.pi) * _fact(l - m) / _fact(l + m))
    p = assoc_legendre(l, m, np.cos(phi1))
    return (-1) ** m * norm * p * np.exp(1j * m * np.asarray(phi2))


@lru_cache(maxsize=None)
def _cg_exact(l: int, lp: int, lpp: int, m: int, mp: int) -> tuple[int, Fraction]:
    """Sign and exact square of a Clebsch-Gordan coefficient."""
    mpp = m + mp
    pre = Fraction((2 * lpp + 1) * _fact(l + lp - lpp) * _fact(l - lp + lpp)
                   * _fact(-l + lp + lpp), _fact(l + lp + lpp + 1))
    pre *= (_fact(l - m) * _fact(l + m) * _fact(lp - mp) * _fact(lp + mp)
            * _fact(lpp - mpp) * _fact(lpp + mpp))
    kmin = max(0, lp - lpp - m, l - lpp + mp)
    kmax = min(l + lp - lpp, l - m, lp + mp)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (_fact(k) * _fact(l + lp - lpp - k) * _fact(l - m - k) * _fact(lp + mp - k)
               * _fact(lpp - lp + m + k) * _fact(lpp - l - mp + k))
        total += Fraction((-1) ** k, den)
    if total == 0:
        return 0, Fraction(0)
    return (1 if total > 0 else -1), pre * total * total


def clebsch_gordan(l: int, lp: int, lpp: int, m: int, mp: int, mpp: int) -> float:
    """Clebsch-Gordan coefficient <l,m; lp,mp | lpp,mpp>.

    Defined as 0 outside the triangle window, when an order exceeds its
    degree, or when mpp != m + mp.  The factorial sum is carried out in
    exact rational arithmetic, so only the final square root rounds.
    """
    if min(l, lp, lpp) < 0 or mpp != m + mp:
        return 0.0
    if abs(m) > l or abs(mp) > lp or abs(mpp) > lpp:
        return 0.0
    if not abs(l - lp) <= lpp <= l + lp:
        return 0.0
    sign, sq = _cg_exact(l, lp, lpp, m, mp)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(sq)


@lru_cache(maxsize=None)
def cg_table(l: int, lp: int, lpp: int) -> np.ndarray:
    """Array C[m+l, mp+lp] = <l,m; lp,mp | lpp,m+mp> (zero where |m+mp| > lpp)."""
    out = np.zeros((2 * l + 1, 2 * lp + 1))
    if abs(l - lp) <= lpp <= l + lp:
        for m in range(-l, l + 1):
            for mp in range(-lp, lp + 1):
                if abs(m + mp) <= lpp:
                    out[m + l, mp + lp] = clebsch_gordan(l, lp, lpp, m, mp, m + mp)
    out.setflags(write=False)
    return out


def cg_nonvanishing(l: int, lp: int, lpp: int, m: int, mp: int, mpp: int) -> bool:
    """Sufficient condition for a nonzero Clebsch-Gordan coefficient.

    True only when the coefficient is inside its domain and l >= lp,
    l >= lpp + 1, |mp| in {lp-1, lp}, |mpp| in {lpp-1, lpp}, and the three
    "one below the top" cases with lp == lpp do not occur together.
    """
    if mpp != m + mp or abs(m) > l or abs(mp) > lp or abs(mpp) > lpp:
        return False
    if min(l, lp, lpp) < 0 or not abs(l - lp) <= lpp <= l + lp:
        return False
    if not (l >= lp and l >= lpp + 1):
        return False
    if abs(mp) not in (lp - 1, lp) or abs(mpp) not in (lpp - 1, lpp):
        return False
    if abs(m) == l - 1 and abs(mp) == lp - 1 and abs(mpp) == lpp - 1 and lp == lpp:
        return False
    return True


def slice_coeff(l: int, m: int) -> float:
    """Fourier-slice value p_lm = y_lm(pi/2, .) / b_m; zero when l+m is odd."""
    _check_lm(l, m)
    if (l + m) % 2:
        return 0.0
    sign = (-1) ** ((l + m) // 2)
    mag = (math.sqrt((2 * l + 1) / 2.0) / (2**l * _fact(l)) * math.comb(l, (l + m) // 2)
           * math.sqrt(_fact(l - m) * _fact(l + m)))
    return sign * mag


@lru_cache(maxsize=None)
def _small_d_terms(l: int):
    # integer data of the factorial sum: (q, m, sign, coef, cos power, sin power)
    rows = []
    for q in range(-l, l + 1):
        for m in range(-l, l + 1):
            root = math.sqrt(_fact(l + q) * _fact(l - q) * _fact(l + m) * _fact(l - m))
            for s in range(max(0, m - q), min(l + m, l - q) + 1):
                den = _fact(l + m - s) * _fact(s) * _fact(q - m + s) * _fact(l - q - s)
                rows.append((q + l, m + l, (-1) ** (q - m + s), root / den,
                             2 * l + m - q - 2 * s, q - m + 2 * s))
    arr = np.array(rows, dtype=float)
    return (arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2] * arr[:, 3],
            arr[:, 4].astype(int), arr[:, 5].astype(int))


def wigner_small_d(l: int, beta) -> np.ndarray:
    """Wigner little-d matrices d^l_{qm}(beta), shape beta.shape + (2l+1, 2l+1)."""
    b = np.atleast_1d(np.asarray(beta, dtype=float))
    qi, mi, coef, pc, ps = _small_d_terms(l)
    c = np.cos(b / 2.0)[:, None]
    s = np.sin(b / 2.0)[:, None]
    vals = coef * c**pc * s**ps
    out = np.zeros((b.size, 2 * l + 1, 2 * l + 1))
    flat = qi * (2 * l + 1) + mi
    for k in range(b.size):
        out[k].flat[:] = np.bincount(flat, weights=vals[k], minlength=(2 * l + 1) ** 2)
    return out.reshape(np.shape(beta) + (2 * l + 1, 2 * l + 1))


def wigner_d(l: int, euler) -> np.ndarray:
    """Complex Wigner D-matrix D^l_{qm}(alpha, beta, gamma), rows q, columns m.

    z-y-z convention: D_{qm} = exp(-i q alpha) d_{qm}(beta) exp(-i m gamma),
    a unitary representation with D(R1 R2) = D(R1) D(R2).
    ``euler`` may be a triple or an array of shape (n, 3).
    """
    e = np.asarray(euler, dtype=float)
    single = e.ndim == 1
    e = np.atleast_2d(e)
    ms = np.arange(-l, l + 1)
    d = wigner_small_d(l, e[:, 1])
    left = np.exp(-1j * np.outer(e[:, 0], ms))
    right = np.exp(-1j * np.outer(e[:, 2], ms))
    out = left[:, :, None] * d * right[:, None, :]
    return out[0] if single else out
