import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from transport_uniqueness.errors import ScenarioError, SingularResolvent, SmallnessViolation
from transport_uniqueness.finite_dim_lab import (
    LabScenario,
    build_bundle,
    default_probe_lambda,
    expm,
    extension_divergence,
    fixed_scenario,
    growth_bound,
    random_scenario,
    semigroup_uniqueness_probe,
    similarity_check,
    theta_power,
)

# (e^{-1} - e^{-3}) / 2: the (1, 3) entry of exp(L + e1 e3^T) - exp(L), by hand
FIXED_DIVERGENCE_T1 = 0.1590461864017892


def _taylor_expm(A, terms=60):
    # oracle for small-norm matrices: plain Taylor series with squaring
    s = max(0, int(math.ceil(math.log2(max(np.linalg.norm(A, 1), 1e-300)))) + 1)
    B = A / 2.0**s
    E = np.eye(len(A))
    term = np.eye(len(A))
    for k in range(1, terms):
        term = term @ B / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def test_fixed_scenario_bundle():
    s = fixed_scenario()
    b = build_bundle(s)
    assert b.phi_R_u == 0.0
    assert np.linalg.matrix_rank(b.C) == 1
    # Theta = u (phi R) has a single non-zero entry, at (1, 3)
    expected = np.zeros((3, 3))
    expected[0, 2] = 1.0 / (1.0 - (-3.0))
    np.testing.assert_allclose(b.Theta, expected, atol=1e-16)
    np.testing.assert_allclose(b.U @ b.U_inv, np.eye(3), atol=1e-10)


def test_u_in_D_truncates_the_neumann_series():
    s = fixed_scenario((0.0, 2.0, 0.0))
    b = build_bundle(s)
    np.testing.assert_allclose(b.Theta @ b.Theta, 0.0, atol=0.0)
    np.testing.assert_allclose(b.U_inv, np.eye(3) + b.Theta, atol=1e-15)
    np.testing.assert_allclose(b.U_inv_neumann, np.eye(3) + b.Theta, atol=1e-15)


def test_scenario_rejections():
    with pytest.raises(ScenarioError):
        LabScenario(np.diag([-1.0, -2.0]), np.eye(2)[:, :1], [0.0, 0.0], [1.0, 0.0], 1.0).validate()
    with pytest.raises(ScenarioError):
        # phi does not vanish on D
        LabScenario(np.diag([-1.0, -2.0]), np.eye(2)[:, :1], [1.0, 1.0], [1.0, 0.0], 1.0).validate()
    with pytest.raises(SingularResolvent):
        LabScenario(np.diag([-1.0, 2.0]), np.eye(2)[:, :1], [0.0, 1.0], [1.0, 0.0], 2.0).validate()
    with pytest.raises(SmallnessViolation):
        # phi(R u) = 3 / (1 + 1) >= 1
        LabScenario(np.diag([-1.0, -1.0]), np.eye(2)[:, :1], [0.0, 1.0], [0.0, 3.0], 1.0).validate()


def test_similarity_examples():
    s = fixed_scenario()
    assert similarity_check(s, build_bundle(s)) <= 1e-12
    zero = LabScenario(s.L, s.D_basis, s.phi, np.zeros(3), 1.0, allow_zero_u=True)
    assert similarity_check(zero, build_bundle(zero)) == 0.0
    r = random_scenario(8, 5, 0.9, seed=3)
    b = build_bundle(r)
    assert abs(b.phi_R_u) == pytest.approx(0.9, rel=1e-12)
    assert similarity_check(r, b) <= 1e-9


def test_fixed_extension_divergence():
    s = fixed_scenario()
    rows = extension_divergence(s, build_bundle(s), [0.0, 0.5, 1.0])
    assert rows[0][2] == 0.0
    assert all(r[1] <= 1e-14 for r in rows)
    assert rows[2][2] == pytest.approx(FIXED_DIVERGENCE_T1, rel=1e-12)


def test_zero_perturbation_has_no_divergence():
    s = fixed_scenario()
    zero = LabScenario(s.L, s.D_basis, s.phi, np.zeros(3), 1.0, allow_zero_u=True)
    assert all(r[2] == 0.0 for r in extension_divergence(zero, build_bundle(zero), [0.5, 1.0, 3.0]))


def test_two_admissible_u_give_distinct_semigroups():
    s1, s2 = fixed_scenario((1.0, 0.0, 0.0)), fixed_scenario((0.0, 1.0, 0.0))
    b1, b2 = build_bundle(s1), build_bundle(s2)
    E1, E2 = expm(s1.L + b1.C), expm(s2.L + b2.C)
    assert np.linalg.norm(E1 - E2) > 0.1
    # both still agree with exp(L) on D
    np.testing.assert_allclose((E1 - E2)[:, :2], 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_expm_against_scipy_and_taylor(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    A = rng.standard_normal((n, n)) * rng.uniform(0.1, 10.0) / math.sqrt(n)
    ours = expm(A)
    ref = scipy.linalg.expm(A)
    assert np.linalg.norm(ours - ref) <= 1e-12 * np.linalg.norm(ref) * max(1.0, np.linalg.norm(A, 1))
    small = A / np.linalg.norm(A, 1)
    np.testing.assert_allclose(expm(small), _taylor_expm(small), rtol=1e-13, atol=1e-14)


def test_expm_of_zero_and_diagonal():
    np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))
    d = np.array([-3.0, 0.5, 2.0])
    np.testing.assert_allclose(expm(np.diag(d)), np.diag(np.exp(d)), rtol=1e-14)


def test_annihilator_of_fixed_scenario():
    s = fixed_scenario()
    rep = semigroup_uniqueness_probe(s, build_bundle(s), 1.0)
    assert rep.dimension == 1 and not rep.is_core
    np.testing.assert_allclose(np.abs(rep.annihilator[:, 0]), [0.0, 0.0, 1.0], atol=1e-15)


def test_full_subspace_is_a_core():
    s = LabScenario(np.diag([-1.0, -2.0, -3.0]), np.eye(3), [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 1.0)
    rep = semigroup_uniqueness_probe(s, None, 1.0)
    assert rep.dimension == 0 and rep.is_core


def test_probe_requires_lambda_above_growth_bound():
    s = fixed_scenario()
    with pytest.raises(ValueError):
        semigroup_uniqueness_probe(s, build_bundle(s), -2.0)


def test_random_scenarios_satisfy_all_identities():
    for seed in range(100):
        n = 2 + seed % 7
        k = seed % n
        target = 0.05 * (1 + seed % 10)
        s = random_scenario(n, k, target, seed)
        b = build_bundle(s)
        assert abs(b.phi_R_u) == pytest.approx(target, rel=1e-12)
        assert b.inverse_agreement <= 1e-10
        assert similarity_check(s, b) <= 1e-9
        for m in (2, 3, 4):
            P = np.linalg.matrix_power(b.Theta, m)
            closed = theta_power(s.phi, b.R, s.u, m)
            assert np.linalg.norm(P - closed) <= 1e-12 * np.linalg.norm(P)
        rows = extension_divergence(s, b, [0.5, 1.0])
        assert rows[0][1] <= 1e-12 and max(r[2] for r in rows) > 0
        rep = semigroup_uniqueness_probe(s, b, default_probe_lambda(s, b))
        assert rep.dimension == n - k


def test_random_scenario_is_seeded():
    a, b = random_scenario(6, 3, 0.4, 17), random_scenario(6, 3, 0.4, 17)
    np.testing.assert_array_equal(a.L, b.L)
    np.testing.assert_array_equal(a.u, b.u)
    assert a.lambda0 == pytest.approx(1 + growth_bound(a.L))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000), st.floats(0.01, 0.5))
def test_neumann_form_matches_solve(n, seed, target):
    s = random_scenario(n, seed % n, target, seed)
    b = build_bundle(s)
    assert np.linalg.norm(b.U_inv - b.U_inv_neumann) <= 1e-10 * np.linalg.norm(b.U_inv)
