import numpy as np
import pytest

from orbitrecovery.basisgen import (DegenerateKernel, RadialBasis, SphericalGridVolume,
                                    captured_power, kernel_matrix, radial_basis, random_volume,
                                    separable_volume, white_volume)
from orbitrecovery.harmonics import sph_harm


@pytest.fixture
def grid():
    return SphericalGridVolume.grid(16, 8, 12, rho_max=2.0)


def test_grid_quadrature_integrates_rho_squared(grid):
    vol = grid.with_values(np.ones(grid.shape))
    # int_0^2 rho^2 d rho * 4 pi
    assert vol.total_power() == pytest.approx(8.0 / 3.0 * 4 * np.pi, rel=1e-12)


def test_grid_rejects_bad_shapes(grid):
    with pytest.raises(ValueError):
        grid.with_values(np.ones((3, 3, 3)))


def test_kernel_symmetric_psd(grid, rng):
    K = kernel_matrix(random_volume(grid, 3, 4, rng))
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10 * np.abs(K).max()


def test_basis_orthonormal(grid, rng):
    B = radial_basis(white_volume(grid, rng), 6)
    np.testing.assert_allclose(B.gram(), np.eye(6), atol=1e-10)
    assert np.all(np.diff(B.eigenvalues) <= 0)


def test_separable_captured_at_rank_one(grid):
    z = grid.rho * np.exp(-grid.rho)
    P1, P2 = np.meshgrid(grid.phi1, grid.phi2, indexing="ij")
    h = sph_harm(2, 1, P1, P2) + 0.3 * sph_harm(1, 0, P1, P2)
    vol = separable_volume(grid, z, h)
    B = radial_basis(vol, 1)
    assert captured_power(vol, B) / vol.total_power() >= 1 - 1e-8
    # the recovered profile is z up to normalization and sign
    zz = B.z[0] / B.z[0][np.argmax(np.abs(B.z[0]))] * z[np.argmax(np.abs(B.z[0]))]
    np.testing.assert_allclose(zz, z, rtol=1e-8, atol=1e-12)


def test_captured_power_monotone_and_complete(grid, rng):
    vol = white_volume(grid, rng)
    caps = [captured_power(vol, radial_basis(vol, S)) for S in range(grid.rho.size + 1)]
    assert caps[0] == 0.0
    assert np.all(np.diff(caps) >= -1e-10)
    assert caps[-1] == pytest.approx(vol.total_power(), rel=1e-10)


def test_eigenbasis_beats_random_competitors(grid, rng):
    vol = random_volume(grid, 3, 5, rng)
    S = 3
    best = captured_power(vol, radial_basis(vol, S))
    a = grid.rho * np.sqrt(grid.w_rho)
    for _ in range(200):
        Q, _ = np.linalg.qr(rng.standard_normal((grid.rho.size, S)))
        comp = RadialBasis(grid.rho, grid.w_rho, (Q / a[:, None]).T, np.zeros(0))
        assert captured_power(vol, comp) <= best * (1 + 1e-12)


def test_degenerate_kernel(grid, rng):
    vol = random_volume(grid, 2, 2, rng)  # radial rank 2
    with pytest.raises(DegenerateKernel) as exc:
        radial_basis(vol, 3)
    assert exc.value.rank == 2
    with pytest.raises(ValueError):
        radial_basis(vol, grid.rho.size + 1)


def test_sign_convention(grid, rng):
    B = radial_basis(white_volume(grid, rng), 4)
    for z in B.z:
        nz = np.flatnonzero(np.abs(z) > 1e-12 * np.abs(z).max())
        assert z[nz[0]] > 0


def test_rotation_invariance_of_basis(rng):
    # rotating about the z axis shifts phi2 by a grid step and leaves the basis unchanged
    grid = SphericalGridVolume.grid(10, 6, 8)
    vol = white_volume(grid, rng)
    rolled = vol.with_values(np.roll(vol.values, 3, axis=2))
    np.testing.assert_allclose(radial_basis(vol, 3).z, radial_basis(rolled, 3).z, atol=1e-10)


def test_mismatched_grid(grid, rng):
    other = SphericalGridVolume.grid(12, 8, 12)
    B = radial_basis(white_volume(other, rng), 2)
    with pytest.raises(ValueError):
        captured_power(white_volume(grid, rng), B)


def test_csv_roundtrips(grid, rng, tmp_path):
    vol = random_volume(SphericalGridVolume.grid(5, 4, 6), 2, 3, rng)
    vol.to_csv(tmp_path / "v.csv")
    back = SphericalGridVolume.from_csv(tmp_path / "v.csv")
    np.testing.assert_array_equal(back.values, vol.values)
    np.testing.assert_array_equal(back.w_ang, vol.w_ang)
    B = radial_basis(vol, 2)
    B.to_csv(tmp_path / "b.csv")
    C = RadialBasis.from_csv(tmp_path / "b.csv")
    np.testing.assert_array_equal(C.z, B.z)
