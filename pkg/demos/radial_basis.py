"""Build a data-adapted radial basis and report captured power against S."""
import numpy as np

from orbitrecovery.basisgen import (SphericalGridVolume, captured_power, radial_basis,
                                    random_volume)

if __name__ == "__main__":
    rng = np.random.default_rng(0)
    grid = SphericalGridVolume.grid(24, 10, 20, rho_max=3.0)
    vol = random_volume(grid, 4, 8, rng)
    total = vol.total_power()
    for S in range(1, 9):
        basis = radial_basis(vol, S)
        print(f"S={S}  captured {captured_power(vol, basis) / total:.6f}")
