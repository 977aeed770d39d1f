import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gscreen.exponents import (
    check_corollary_conditions,
    lambda_k_star,
    omega_min,
    phase_boundary,
    rho_df,
    rho_gs_block,
    rho_lasso_block,
    rho_ss_block,
    rho_star_j,
    schur_complement,
    table1,
    universal_exponent,
)
from gscreen.graphs import Gosd
from oracles import grid_omega, inverse_schur


def random_corr(rng, k, ridge=0.3):
    A = rng.standard_normal((k, k))
    M = A @ A.T + ridge * np.eye(k)
    d = np.sqrt(np.diag(M))
    return M / np.outer(d, d)


@st.composite
def pd_matrices(draw, k_min=2, k_max=4):
    k = draw(st.integers(k_min, k_max))
    vals = draw(st.lists(st.floats(-1, 1), min_size=k * k, max_size=k * k))
    A = np.array(vals).reshape(k, k)
    return A @ A.T + 0.2 * np.eye(k)


def pair(h):
    return np.array([[1.0, h], [h, 1.0]])


# ------------------------------------------------------------ omega_min


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_omega_identity(k):
    val, x = omega_min(np.eye(k))
    assert val == pytest.approx(k, abs=1e-12)
    assert np.all(np.abs(np.abs(x) - 1) < 1e-12)


@pytest.mark.parametrize("h", [-0.9, -0.4, 0.0, 0.3, 0.7])
def test_omega_pair_closed_form(h):
    val, x = omega_min(pair(h))
    assert val == pytest.approx(2 * (1 - abs(h)), abs=1e-12)
    if h != 0:
        np.testing.assert_allclose(x * x[0], [1.0, -np.sign(h)], atol=1e-12)


def test_omega_matches_grid_oracle():
    rng = np.random.default_rng(21)
    for k in (2, 3):
        for _ in range(10):
            M = random_corr(rng, k)
            assert omega_min(M)[0] == pytest.approx(grid_omega(M), abs=1e-4)


def test_omega_witness_is_feasible_and_attains_value():
    rng = np.random.default_rng(2)
    for _ in range(20):
        M = random_corr(rng, 4)
        val, x = omega_min(M)
        assert np.all(np.abs(x) >= 1 - 1e-12)
        assert x @ M @ x == pytest.approx(val, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(pd_matrices(), st.floats(0.1, 10))
def test_omega_homogeneous(M, c):
    assert omega_min(c * M)[0] == pytest.approx(c * omega_min(M)[0], rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(pd_matrices())
def test_omega_at_least_lambda_min_times_k(M):
    k = M.shape[0]
    assert omega_min(M)[0] >= np.linalg.eigvalsh(M)[0] * k - 1e-9


def test_omega_errors():
    with pytest.raises(ValueError, match="positive definite"):
        omega_min(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError, match="k <= 8"):
        omega_min(np.eye(9))


# ------------------------------------------------------------ Schur complement


def test_schur_empty_f():
    M = random_corr(np.random.default_rng(0), 4)
    np.testing.assert_array_equal(schur_complement(M, [0, 2], []), M[np.ix_([0, 2], [0, 2])])


def test_schur_scalar():
    assert schur_complement(pair(0.6), [0], [1])[0, 0] == pytest.approx(1 - 0.36, abs=1e-15)


def test_schur_matches_block_inverse():
    rng = np.random.default_rng(4)
    for _ in range(20):
        M = random_corr(rng, 4)
        D, F = [1, 3], [0, 2]
        np.testing.assert_allclose(schur_complement(M, D, F), inverse_schur(M, D, F),
                                   atol=1e-12, rtol=0)


def test_schur_errors():
    with pytest.raises(ValueError, match="disjoint"):
        schur_complement(np.eye(3), [0, 1], [1])
    with pytest.raises(ValueError, match="singular"):
        schur_complement(np.ones((3, 3)), [0], [1, 2])


# ------------------------------------------------------------ rho_df and rho_star_j


@pytest.mark.parametrize("theta,r", [(0.3, 2.0), (0.5, 4.0), (0.1, 0.5)])
def test_rho_df_identity_singleton(theta, r):
    assert rho_df(theta, r, np.eye(3), [1], []) == pytest.approx((theta + r) ** 2 / (4 * r), abs=1e-12)


@pytest.mark.parametrize("h", [0.2, -0.5, 0.8])
def test_rho_df_pair_cases(h):
    theta, r = 0.4, 3.0
    assert rho_df(theta, r, pair(h), [0, 1], []) == pytest.approx(theta + (1 - abs(h)) * r / 2, abs=1e-12)
    w = (1 - h * h) * r
    want = 2 * theta + max(math.sqrt(w) - theta / math.sqrt(w), 0) ** 2 / 4
    assert rho_df(theta, r, pair(h), [0], [1]) == pytest.approx(want, abs=1e-12)


def test_rho_star_identity_and_isolated():
    theta, r = 0.35, 3.0
    want = (theta + r) ** 2 / (4 * r)
    g = Gosd.from_edges(4, [(1, 2)])
    assert rho_star_j(theta, r, np.eye(4), Gosd.from_edges(4, []), 0, 4) == pytest.approx(want, abs=1e-12)
    # node 0 is isolated even though 1-2 are linked
    M = np.eye(4)
    M[1, 2] = M[2, 1] = 0.5
    assert rho_star_j(theta, r, M, g, 0, 4) == pytest.approx(want, abs=1e-12)


def test_rho_star_block_example():
    g = Gosd.from_edges(2, [(0, 1)])
    assert rho_star_j(0.5, 4.0, pair(0.8), g, 0, 2) == pytest.approx(0.9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(1.0, 12.0), st.floats(-0.9, 0.9))
def test_rho_star_on_pair_equals_gs_block(theta, r, h):
    # on one block, the (D, F) pairs are exactly the three terms of the block formula
    g = Gosd.from_edges(2, [(0, 1)])
    assert rho_star_j(theta, r, pair(h), g, 0, 2) == pytest.approx(
        rho_gs_block(theta, r, h).value, rel=1e-10, abs=1e-12)


# ------------------------------------------------------------ lambda_k_star


def test_lambda_identity_and_block():
    assert lambda_k_star(np.eye(6), 3) == pytest.approx(1.0)
    from gscreen.simlab import gen_omega
    assert lambda_k_star(gen_omega("block2", 8, h0=0.6), 2) == pytest.approx(0.4, abs=1e-12)


def test_lambda_restricted_vs_bruteforce():
    rng = np.random.default_rng(8)
    for _ in range(5):
        p = 20
        # connected backbone plus random extra edges; diagonally dominant
        edges = [(i, i + 1) for i in range(p - 1)]
        edges += [(i, j) for i, j in itertools.combinations(range(p), 2)
                  if j > i + 1 and rng.random() < 0.05]
        M = np.eye(p)
        for i, j in edges:
            M[i, j] = M[j, i] = rng.uniform(-0.3, 0.3)
        g = Gosd.from_edges(p, edges)
        full = lambda_k_star(M, 3)
        restricted = lambda_k_star(M, 3, gosd=g)
        assert restricted >= full - 1e-12
        # every component has >= 3 nodes, so interlacing gives equality
        assert restricted == pytest.approx(full, abs=1e-12)


def test_lambda_restricted_can_exceed_when_components_small():
    M = np.eye(4)
    M[0, 1] = M[1, 0] = 0.5
    g = Gosd.from_edges(4, [(0, 1)])
    # {0,1} is the only connected pair; both coincide here
    assert lambda_k_star(M, 2, gosd=g) == pytest.approx(lambda_k_star(M, 2))
    # with an off-pattern entry the unrestricted search sees it
    M[2, 3] = M[3, 2] = 0.9
    assert lambda_k_star(M, 2, gosd=g) > lambda_k_star(M, 2)


def test_lambda_refuses_large_dense():
    with pytest.raises(ValueError, match="refused"):
        lambda_k_star(np.eye(31), 2)


# ------------------------------------------------------------ block closed forms


def test_block_rates_examples():
    assert rho_gs_block(0.1, 11, 0.8).value == pytest.approx(1.1406, abs=5e-5)
    assert rho_lasso_block(0.1, 11, 0.8).value == pytest.approx(0.2, abs=1e-12)
    assert rho_gs_block(0.5, 4, 0.8).value == pytest.approx(0.9, abs=1e-12)


def test_ss_closed_form_value():
    theta, r, h = 0.3, 9.0, 0.8
    w = 1 - h * h
    terms = [(theta + r) ** 2 / (4 * r), theta + (1 - h) * r / 2,
             (2 * theta + w * r) ** 2 / (4 * w * r),
             2 * (math.sqrt(2 * (1 - h) * r) - math.sqrt((1 - h) * r - theta)) ** 2]
    assert rho_ss_block(theta, r, h).value == pytest.approx(min(terms), abs=1e-12)


def test_block_rates_report_branch():
    rep = rho_lasso_block(0.1, 11, 0.8)
    assert rep.branch in rep.terms and rep.terms[rep.branch] == rep.value
    assert rep.method == "lasso"


def test_block_rates_ordering_on_grid():
    for theta in np.linspace(0.05, 0.95, 10):
        for r in np.linspace(theta * 1.05, 15, 25):
            for h in np.linspace(-0.9, 0.9, 13):
                gs = rho_gs_block(theta, r, h).value
                ss = rho_ss_block(theta, r, h).value
                la = rho_lasso_block(theta, r, h).value
                assert gs >= ss - 1e-12 and ss >= la - 1e-12
                assert la >= 0


@pytest.mark.parametrize("theta,r", [(0.1, 3.0), (0.3, 4.0), (0.5, 2.0), (0.8, 1.5)])
def test_h0_zero_matches_rho_star(theta, r):
    g = Gosd.from_edges(2, [(0, 1)])
    star = rho_star_j(theta, r, np.eye(2), g, 0, 2)
    assert rho_gs_block(theta, r, 0).value == pytest.approx(star, abs=1e-12)
    assert rho_ss_block(theta, r, 0).value == pytest.approx(star, abs=1e-12)
    assert star == pytest.approx((theta + r) ** 2 / (4 * r), abs=1e-12)


def test_block_rate_argument_checks():
    with pytest.raises(ValueError):
        rho_gs_block(0.5, 0.4, 0.1)
    with pytest.raises(ValueError):
        rho_ss_block(0.5, 2.0, 1.0)


def test_table1_layout():
    rows = table1()
    assert len(rows) == 8
    assert {"rho_gs", "rho_ss", "rho_lasso"} <= set(rows[0])


# ------------------------------------------------------------ universal exponent


def test_universal_exponent_examples():
    assert universal_exponent(0.4, 0.4)[0] == 0.0
    r = (1 + math.sqrt(0.75)) ** 2
    assert r == pytest.approx(3.482, abs=1e-3)
    assert universal_exponent(0.25, r)[1] == pytest.approx(1.0, abs=1e-12)
    assert universal_exponent(0.5, 2.0)[1] == pytest.approx(0.78125, abs=1e-15)
    assert universal_exponent(0.5, 2.0)[0] == pytest.approx(1.5**2 / 8, abs=1e-15)
    assert universal_exponent(0.5, 0.2)[0] == 0.0


# ------------------------------------------------------------ phase boundary


def test_phase_gs_identity_example():
    (t, r), = phase_boundary("gs", 0.0, [0.5])
    assert r == pytest.approx((1 + math.sqrt(0.5)) ** 2, abs=1e-9)
    assert r == pytest.approx(2.9142, abs=1e-4)


def test_phase_self_consistency():
    for t, r in phase_boundary("gs", 0.5, [0.9, 0.3, 0.1]):
        assert abs(rho_gs_block(t, r, 0.5).value - 1) < 1e-9


@pytest.mark.parametrize("method", ["gs", "ss", "lasso"])
def test_phase_boundary_tends_to_one(method):
    pts = phase_boundary(method, 0.0, [1 - 1e-5])
    assert all(abs(r - 1) < 0.01 for _, r in pts)


def test_phase_lasso_reports_every_root():
    pts = phase_boundary("lasso", 0.5, np.linspace(0.05, 0.95, 19))
    for t, r in pts:
        assert abs(rho_lasso_block(t, r, 0.5).value - 1) < 1e-8
    thetas = [t for t, _ in pts]
    assert len(thetas) >= 19


def test_phase_rejects_bad_grid():
    with pytest.raises(ValueError):
        phase_boundary("gs", 0.0, [1.2])
    with pytest.raises(ValueError):
        phase_boundary("nope", 0.0, [0.5])


# ------------------------------------------------------------ corollary conditions


def test_corollary_identity_holds():
    rep = check_corollary_conditions(np.eye(6), 0.25, 1.0)
    assert rep["entrywise_a"]["holds"]
    assert rep["max_offdiag"] == 0


def test_corollary_block_fails_entry_bound():
    from gscreen.simlab import gen_omega
    rep = check_corollary_conditions(gen_omega("block2", 6, h0=0.7), 0.25, 1.0)
    assert not rep["entrywise_a"]["holds"]
    assert "|Omega(i,j)| <= 4sqrt2-5" in rep["entrywise_a"]["violated"]
    assert 4 * math.sqrt(2) - 5 == pytest.approx(0.6569, abs=1e-4)


def test_corollary_b_constants_and_checks():
    assert 2 * (5 - 2 * math.sqrt(6)) == pytest.approx(0.2021, abs=1e-4)
    assert 5 - 2 * math.sqrt(6) == pytest.approx(0.1011, abs=1e-4)
    assert 8 * math.sqrt(6) - 19 == pytest.approx(0.5959, abs=1e-4)
    ok = check_corollary_conditions(np.eye(6), 0.1, 0.6)
    assert ok["entrywise_b"]["holds"]
    # an equicorrelated triple at -0.42 has lambda_min = 1 - 0.84, below 0.2021,
    # while every entry stays under 0.5959
    M = np.eye(6)
    for i, j in [(0, 1), (1, 2), (0, 2)]:
        M[i, j] = M[j, i] = -0.42
    rep = check_corollary_conditions(M, 0.1, 0.6)
    assert rep["entrywise_b"]["violated"] == ["lambda3* >= 2(5-2sqrt6)"]
