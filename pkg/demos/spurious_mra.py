"""Find the non-global local minimizer of s_3 for MRA at L=30 and probe it by descent."""
import numpy as np

from orbitrecovery.landscape import (VarietyChart, minimize_sk_on_variety, mra_spurious_search,
                                     spurious_signal)
from orbitrecovery.models import make_model

if __name__ == "__main__":
    L = 30
    rep = mra_spurious_search(L)
    print(f"kappa={rep.info['kappa']:g} delta={rep.info['delta']:.3g} "
          f"lambda_min={rep.projected_eigs.min():.4g} rank={rep.rank} s3={rep.value:.4g}")

    # Newton descent started near the certified point stays there
    ts, _ = spurious_signal(L, rep.info["kappa"], rep.info["delta"])
    chart = VarietyChart(make_model("mra", L), 3, ts)
    rng = np.random.default_rng(1)
    start = rep.point + 1e-3 * rng.standard_normal(L)
    local = minimize_sk_on_variety(chart, start, step_policy="newton")
    print(f"perturbed start -> {local.classification}, s3={local.value:.4g}")

    # random phase starts, with a short iteration budget
    counts = {}
    for _ in range(4):
        r = minimize_sk_on_variety(chart, rng.uniform(-np.pi, np.pi, L), step_policy="newton",
                                   max_iter=2000)
        counts[r.classification] = counts.get(r.classification, 0) + 1
    print("random starts:", counts)
