import math

import numpy as np
import pytest
from scipy.special import lpmv, sph_harm_y

from orbitrecovery.harmonics import (assoc_legendre, cg_nonvanishing, cg_table, clebsch_gordan,
                                     legendre_at_zero, slice_coeff, sph_harm, wigner_d,
                                     wigner_small_d)

sympy = pytest.importorskip("sympy")
from sympy.physics.quantum.cg import CG  # noqa: E402
from sympy.physics.quantum.spin import Rotation  # noqa: E402


def test_legendre_matches_scipy_without_phase():
    x = np.linspace(-1, 1, 41)
    for l in range(9):
        for m in range(l + 1):
            ref = (-1) ** m * lpmv(m, l, x)
            np.testing.assert_allclose(assoc_legendre(l, m, x), ref, rtol=1e-12, atol=1e-12)


def test_legendre_negative_order_relation():
    x = np.linspace(-0.9, 0.9, 7)
    for l in range(6):
        for m in range(1, l + 1):
            ref = (-1) ** m * math.factorial(l - m) / math.factorial(l + m) * assoc_legendre(l, m, x)
            np.testing.assert_allclose(assoc_legendre(l, -m, x), ref, rtol=1e-13, atol=1e-15)


def test_legendre_at_zero_closed_form():
    for l in range(12):
        for m in range(-l, l + 1):
            assert legendre_at_zero(l, m) == pytest.approx(assoc_legendre(l, m, 0.0), abs=1e-9)
    assert legendre_at_zero(3, 0) == 0.0


def test_legendre_rejects_bad_input():
    with pytest.raises(ValueError):
        assoc_legendre(2, 3, 0.1)
    with pytest.raises(ValueError):
        assoc_legendre(2, 1, 1.5)


def test_sph_harm_matches_scipy():
    rng = np.random.default_rng(0)
    th, ph = rng.uniform(0, np.pi, 20), rng.uniform(0, 2 * np.pi, 20)
    for l in range(7):
        for m in range(-l, l + 1):
            np.testing.assert_allclose(sph_harm(l, m, th, ph), sph_harm_y(l, m, th, ph),
                                       rtol=1e-11, atol=1e-12)


def test_sph_harm_orthonormal_on_gauss_grid():
    c, wc = np.polynomial.legendre.leggauss(12)
    ph = 2 * np.pi * np.arange(24) / 24
    T, P = np.meshgrid(np.arccos(c), ph, indexing="ij")
    W = np.outer(wc, np.full(24, 2 * np.pi / 24))
    idx = [(l, m) for l in range(5) for m in range(-l, l + 1)]
    Y = np.array([sph_harm(l, m, T, P).ravel() for l, m in idx])
    G = (Y * W.ravel()) @ Y.conj().T
    np.testing.assert_allclose(G, np.eye(len(idx)), atol=1e-12)


def test_cg_spot_values():
    assert clebsch_gordan(0, 0, 0, 0, 0, 0) == 1.0
    assert clebsch_gordan(3, 2, 2, 2, -1, 1) == 0.0
    assert clebsch_gordan(1, 1, 0, 1, -1, 0) == pytest.approx(1 / math.sqrt(3), abs=1e-15)
    assert clebsch_gordan(1, 1, 2, 1, 1, 2) == 1.0


def test_cg_outside_domain_is_zero():
    assert clebsch_gordan(1, 1, 3, 0, 0, 0) == 0.0
    assert clebsch_gordan(1, 1, 1, 1, 1, 1) == 0.0
    assert clebsch_gordan(1, 1, 1, 1, 0, 0) == 0.0
    assert clebsch_gordan(2, 1, 1, 3, 0, 3) == 0.0


def test_cg_matches_sympy():
    rng = np.random.default_rng(1)
    for _ in range(60):
        l, lp = rng.integers(0, 5, 2)
        lpp = int(rng.integers(abs(l - lp), l + lp + 1))
        m = int(rng.integers(-l, l + 1))
        mp = int(rng.integers(-lp, lp + 1))
        if abs(m + mp) > lpp:
            continue
        ref = float(CG(int(l), m, int(lp), mp, lpp, m + mp).doit())
        assert clebsch_gordan(int(l), int(lp), lpp, m, mp, m + mp) == pytest.approx(ref, abs=1e-14)


def test_cg_orthogonality():
    l, lp = 3, 2
    rows = []
    for lpp in range(abs(l - lp), l + lp + 1):
        for mpp in range(-lpp, lpp + 1):
            rows.append([clebsch_gordan(l, lp, lpp, m, mp, mpp)
                         for m in range(-l, l + 1) for mp in range(-lp, lp + 1)])
    U = np.array(rows)
    np.testing.assert_allclose(U @ U.T, np.eye(U.shape[0]), atol=1e-13)


def test_cg_table_layout_and_readonly():
    T = cg_table(2, 1, 2)
    assert T.shape == (5, 3)
    assert T[1 + 2, -1 + 1] == clebsch_gordan(2, 1, 2, 1, -1, 0)
    with pytest.raises(ValueError):
        T[0, 0] = 1.0


def test_nonvanishing_guard_never_wrong_small():
    for l in range(4):
        for lp in range(4):
            for lpp in range(abs(l - lp), min(l + lp, 3) + 1):
                for m in range(-l, l + 1):
                    for mp in range(-lp, lp + 1):
                        if cg_nonvanishing(l, lp, lpp, m, mp, m + mp):
                            assert clebsch_gordan(l, lp, lpp, m, mp, m + mp) != 0.0


def test_slice_coeff_definition_and_parity():
    ph = 0.37
    for l in range(8):
        for m in range(-l, l + 1):
            ref = sph_harm(l, m, np.pi / 2, ph) * np.sqrt(2 * np.pi) * np.exp(-1j * m * ph)
            assert slice_coeff(l, m) == pytest.approx(ref.real, abs=1e-12)
            assert abs(ref.imag) < 1e-12
            assert slice_coeff(l, m) == pytest.approx((-1) ** m * slice_coeff(l, -m), abs=1e-13)
            if (l + m) % 2:
                assert slice_coeff(l, m) == 0.0


def test_small_d_matches_sympy():
    for l in (1, 2, 3):
        b = 0.83
        ref = np.array([[complex(Rotation.d(l, q, m, b).doit().evalf()).real
                         for m in range(-l, l + 1)] for q in range(-l, l + 1)])
        np.testing.assert_allclose(wigner_small_d(l, b), ref, atol=1e-13)


def test_wigner_d_unitary_and_homomorphic():
    from scipy.spatial.transform import Rotation as R
    rng = np.random.default_rng(2)
    r1, r2 = R.random(random_state=rng), R.random(random_state=rng)
    e1, e2, e12 = r1.as_euler("ZYZ"), r2.as_euler("ZYZ"), (r1 * r2).as_euler("ZYZ")
    for l in (1, 4, 12):
        D1, D2 = wigner_d(l, e1), wigner_d(l, e2)
        np.testing.assert_allclose(D1 @ D1.conj().T, np.eye(2 * l + 1), atol=1e-12)
        np.testing.assert_allclose(D1 @ D2, wigner_d(l, e12), atol=1e-12)


def test_wigner_d_batched_shape():
    eul = np.random.default_rng(3).uniform(0, 1, (5, 3))
    D = wigner_d(2, eul)
    assert D.shape == (5, 5, 5)
    np.testing.assert_allclose(D[3], wigner_d(2, eul[3]))
