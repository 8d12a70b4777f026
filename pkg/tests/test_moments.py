import numpy as np
import pytest

from orbitrecovery import group
from orbitrecovery.group import random_element, so2_rule, so3_rule
from orbitrecovery.models import make_model
from orbitrecovery.moments import (bispectrum, s_closed, s_features, s_hessian_at_star, s_oracle,
                                   weighted_jacobian)

CASES = [
    (make_model("mra", 3), so2_rule(40)),
    (make_model("mra_projected", 3), so2_rule(40)),
    (make_model("sphere", 2), so3_rule(10, 10, 10)),
    (make_model("cryo", 1, (2, 1)), so3_rule(8, 8, 8)),
    (make_model("cryo_projected", 1, (4, 4)), so3_rule(8, 8, 8)),
    (make_model("procrustes", m=4), so3_rule(6, 6, 6)),
]


@pytest.mark.parametrize("model,rule", CASES, ids=lambda c: getattr(c, "kind", ""))
def test_closed_form_matches_quadrature(model, rule, rng):
    th, ts = rng.standard_normal(model.d), rng.standard_normal(model.d)
    for k in (1, 2, 3):
        a = s_closed(model, th, ts, k).value
        b = s_oracle(model, th, ts, k, rule).value
        assert abs(a - b) <= 1e-9 * max(1.0, abs(b))


def test_mra_s2_example_vanishes():
    # same power spectrum, different signal
    m = make_model("mra", 1)
    assert s_closed(m, [1.0, 0.0, 1.0], [1.0, 1.0, 0.0], 2).value == pytest.approx(0.0, abs=1e-15)
    assert s_closed(m, [1.0, 0.0, 1.0], [1.0, 1.0, 0.0], 3).value == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("model,rule", CASES, ids=lambda c: getattr(c, "kind", ""))
def test_zero_at_truth_and_orbit_invariant(model, rule, rng):
    ts = rng.standard_normal(model.d)
    th = rng.standard_normal(model.d)
    g = random_element(model, rng)
    gth = group.act(model, g, th)
    for k in (1, 2, 3):
        assert s_closed(model, ts, ts, k).value == pytest.approx(0.0, abs=1e-20)
        a, b = s_closed(model, th, ts, k).value, s_closed(model, gth, ts, k).value
        assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


def test_mra_s2_blind_to_phases(rng):
    m = make_model("mra", 4)
    th, ts = rng.standard_normal(m.d), rng.standard_normal(m.d)
    u = group.to_complex(m, th)
    u[1:] *= np.exp(2j * np.pi * rng.uniform(size=m.L))
    th2 = group.from_complex(m, u)
    assert s_closed(m, th, ts, 2).value == pytest.approx(s_closed(m, th2, ts, 2).value, rel=1e-12)
    assert s_closed(m, th, ts, 3).value != pytest.approx(s_closed(m, th2, ts, 3).value, rel=1e-3)


def test_symmetric_in_arguments(rng):
    for model, _ in CASES:
        a, b = rng.standard_normal(model.d), rng.standard_normal(model.d)
        for k in (1, 2, 3):
            assert s_closed(model, a, b, k).value == pytest.approx(s_closed(model, b, a, k).value,
                                                                   rel=1e-11, abs=1e-13)


@pytest.mark.parametrize("model,rule", CASES, ids=lambda c: getattr(c, "kind", ""))
def test_gradient_matches_finite_differences(model, rule, rng):
    th, ts = rng.standard_normal(model.d), rng.standard_normal(model.d)
    h = 1e-6
    for k in (2, 3):
        g = s_features(model, th, ts, k, grad=True).gradient
        fd = np.array([(s_features(model, th + h * e, ts, k).value
                        - s_features(model, th - h * e, ts, k).value) / (2 * h)
                       for e in np.eye(model.d)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * max(1, np.abs(fd).max()))


def test_hessian_matches_finite_differences_sphere(rng):
    m = make_model("sphere", 3)
    ts = rng.standard_normal(m.d)
    H = s_hessian_at_star(m, ts, 3)
    h = 1e-5
    fd = np.array([(s_features(m, ts + h * e, ts, 3, grad=True).gradient
                    - s_features(m, ts - h * e, ts, 3, grad=True).gradient) / (2 * h)
                   for e in np.eye(m.d)])
    np.testing.assert_allclose(H, 0.5 * (fd + fd.T), atol=1e-6 * np.abs(H).max())


@pytest.mark.parametrize("model,rule", CASES, ids=lambda c: getattr(c, "kind", ""))
def test_hessian_psd(model, rule, rng):
    ts = rng.standard_normal(model.d)
    for k in (1, 2, 3):
        assert np.linalg.eigvalsh(s_hessian_at_star(model, ts, k)).min() >= -1e-10


def test_mra_first_order_hessian_rank_one(rng):
    m = make_model("mra", 5)
    H = s_hessian_at_star(m, rng.standard_normal(m.d), 1)
    assert np.linalg.matrix_rank(H, tol=1e-10) == 1


def test_weighted_jacobian_shape(rng):
    m = make_model("cryo_projected", 1, (4, 4))
    R = weighted_jacobian(m, rng.standard_normal(m.d), 2)
    assert R.shape[1] == m.d


def test_bispectrum_invariance_and_zero(rng):
    for model in (make_model("mra", 3), make_model("sphere", 2), make_model("cryo", 2, (1, 1, 1))):
        th = rng.standard_normal(model.d)
        B = bispectrum(model, th)
        Bg = bispectrum(model, group.act(model, random_element(model, rng), th))
        np.testing.assert_allclose(B.values, Bg.values, atol=1e-10)
        assert np.all(bispectrum(model, np.zeros(model.d)).values == 0)


def test_cryo_bispectrum_real():
    m = make_model("cryo", 2, (2, 1, 2))
    B = bispectrum(m, np.random.default_rng(4).standard_normal(m.d))
    assert B.imag_residual <= 1e-12
    assert np.isrealobj(B.values)


def test_sphere_bispectrum_conjugate_symmetry(rng):
    m = make_model("sphere", 3)
    th = rng.standard_normal(m.d)
    # a real signal has real bispectrum up to the (-1)^(l+l'+l'') sign pattern
    B = bispectrum(m, th)
    for key, v in zip(B.index, B.values):
        parity = (-1) ** sum(key[:3])
        assert abs(v - parity * np.conj(v)) <= 1e-10 * max(1.0, abs(v))


def test_procrustes_has_no_bispectrum():
    with pytest.raises(ValueError):
        bispectrum(make_model("procrustes", m=3), np.ones(9))


def test_bispectrum_csv(tmp_path, rng):
    m = make_model("mra", 2)
    B = bispectrum(m, rng.standard_normal(m.d))
    path = tmp_path / "b.csv"
    B.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "tuple,real,imag" and len(rows) == len(B.values) + 1
