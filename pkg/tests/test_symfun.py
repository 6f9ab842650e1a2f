import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hqflow.symfun import (
    ConeError,
    cone_membership,
    elementary_all,
    gradient_F,
    newton_residuals,
    partial_E,
    quotient_F,
    reduced_sigma,
    sigma_all,
    symmetric_values,
)
from oracles import brute_E, exact_E


# -- worked examples ----------------------------------------------------------

def test_all_ones_normalization():
    assert elementary_all([1.0, 1.0, 1.0]).tolist() == [1.0, 1.0, 1.0, 1.0]


def test_first_is_mean():
    assert elementary_all([1.0, 2.0, 3.0])[1] == 2.0


def test_E2_of_234_matches_subset_sum():
    E = elementary_all([2.0, 3.0, 4.0])
    assert Fraction(E[2]).limit_denominator(1000) == Fraction(26, 3)
    assert E[2] == brute_E([2.0, 3.0, 4.0])[2]


def test_cone_examples():
    assert cone_membership([1.0, 1.0, 1.0], 3).member_of == 3
    rep = cone_membership([3.0, 3.0, -1.0], 2)
    assert rep.in_cone and rep.member_of == 2 and not rep.positive_cone
    assert not cone_membership([3.0, 3.0, -1.0], 3).in_cone
    E = elementary_all([3.0, 3.0, -1.0])
    assert E[1] == pytest.approx(5 / 3) and E[2] == pytest.approx(1.0) and E[3] == pytest.approx(-9.0)
    assert cone_membership([-1.0, -1.0, -1.0], 1).member_of == 0


def test_positive_cone_is_inside_every_cone():
    rep = cone_membership([0.1, 2.0, 5.0, 0.3], 4)
    assert rep.positive_cone and rep.member_of == 4


@pytest.mark.parametrize("n", [2, 3, 5])
@pytest.mark.parametrize("k", [1, 2])
def test_quotient_at_umbilic_point(n, k):
    assert quotient_F(np.ones(n), k) == pytest.approx(1.0, abs=1e-15)
    assert quotient_F(np.full(n, 2.5), k) == pytest.approx(2.5, rel=1e-15)
    assert gradient_F(np.ones(n), k) == pytest.approx(np.full(n, 1.0 / n), rel=1e-14)


def test_quotient_two_dim_example():
    assert quotient_F([1.0, 3.0], 2) == pytest.approx(1.5, rel=1e-15)
    assert gradient_F([1.0, 3.0], 2) == pytest.approx([9 / 8, 1 / 8], rel=1e-14)


def test_quotient_outside_cone_raises():
    with pytest.raises(ConeError, match="Gamma_2"):
        quotient_F([3.0, -2.0], 2)
    with pytest.raises(ConeError):
        gradient_F([-1.0, -1.0, -1.0], 1)


def test_newton_examples():
    assert newton_residuals(np.ones(4), 2) == pytest.approx((0.0, 0.0), abs=1e-15)
    lo, hi = newton_residuals([2.0, 3.0, 4.0], 2)
    assert lo == pytest.approx(26 / 9 - 3, rel=1e-13)
    assert hi <= 0.0


def test_newton_sentinels():
    lo, hi = newton_residuals([1.0, 2.0], 2)
    assert math.isnan(hi)  # E_3 does not exist for n = 2
    lo, hi = newton_residuals([1.0, 2.0, 3.0], 1)
    assert math.isnan(lo)  # E_{-1}


def test_sigma_and_E_share_evaluation_path():
    kappa = np.array([0.3, -0.2, 1.7, 2.2])
    sv = symmetric_values(kappa, 2)
    binom = np.array([math.comb(4, j) for j in range(5)], dtype=float)
    assert np.array_equal(sv.E, sv.sigma / binom)
    assert sv.E[0] == 1.0


def test_partial_E_zero_for_constant():
    assert np.all(partial_E([1.0, 2.0], 0) == 0.0)


def test_reduced_sigma_shapes_and_values():
    red = reduced_sigma([[1.0, 2.0, 3.0]])
    assert red.shape == (1, 3, 3)
    assert red[0, 0].tolist() == [1.0, 5.0, 6.0]


# -- subset-enumeration oracle ----------------------------------------------------

@pytest.mark.parametrize("n", range(2, 7))
def test_brute_force_oracle_exact_on_integers(n):
    # integer entries keep both evaluation orders exact in double precision
    rng = np.random.default_rng(n)
    for _ in range(200):
        kappa = rng.integers(-9, 10, size=n).astype(float)
        assert elementary_all(kappa).tolist() == brute_E(kappa.tolist())


@pytest.mark.parametrize("n", range(2, 7))
def test_against_rational_arithmetic(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(50):
        kappa = rng.uniform(0.05, 3.0, size=n)
        exact = exact_E(kappa.tolist())
        got = elementary_all(kappa)
        for j in range(n + 1):
            assert abs(Fraction(got[j]) - exact[j]) <= 1e-14 * abs(exact[j])


# -- properties ---------------------------------------------------------------------

def cone_vectors(max_n=6):
    @st.composite
    def build(draw):
        n = draw(st.integers(2, max_n))
        k = draw(st.integers(1, n))
        base = draw(st.lists(st.floats(-2.0, 2.0), min_size=n, max_size=n))
        shift = draw(st.floats(0.0, 4.0))
        kappa = np.array(base) + shift
        E = elementary_all(kappa)
        # keep away from the cone boundary where the quotients are ill-conditioned
        scale = np.abs(kappa).max()
        assume(np.all(E[1 : k + 1] > 1e-3 * scale ** np.arange(1, k + 1)))
        return kappa, k

    return build()


def _sigma_ext(kappa):
    return np.append(elementary_all(kappa), 0.0)  # E_{n+1} = 0


@settings(max_examples=300, deadline=None)
@given(cone_vectors())
def test_DS(data):
    kappa, _ = data
    n = len(kappa)
    E = elementary_all(kappa)
    for k in range(1, n + 1):
        lhs = partial_E(kappa, k).sum()
        assert abs(lhs - k * E[k - 1]) <= 1e-12 * (1 + abs(E[k - 1])) * max(1.0, np.abs(kappa).max()) ** (k - 1)


@settings(max_examples=300, deadline=None)
@given(cone_vectors())
def test_SLP(data):
    kappa, _ = data
    n = len(kappa)
    E = _sigma_ext(kappa)
    scale = max(1.0, np.abs(kappa).max())
    for k in range(1, n + 1):
        lhs = (kappa**2 * partial_E(kappa, k)).sum()
        rhs = n * E[1] * E[k] - (n - k) * E[k + 1]
        assert abs(lhs - rhs) <= 1e-12 * scale ** (k + 1) * n**2


@settings(max_examples=300, deadline=None)
@given(cone_vectors())
def test_MT1_MT2_MI1_MI2(data):
    kappa, k = data
    n = len(kappa)
    E = _sigma_ext(kappa)
    grad = gradient_F(kappa, k)
    F = quotient_F(kappa, k)
    Ekm2 = E[k - 2] if k >= 2 else 0.0
    mt1 = k - (k - 1) * E[k] * Ekm2 / E[k - 1] ** 2
    mt2 = (n - k + 1) * E[k] ** 2 / E[k - 1] ** 2 - (n - k) * E[k + 1] / E[k - 1]
    s1 = grad.sum()
    s2 = (kappa**2 * grad).sum()
    assert abs(s1 - mt1) <= 1e-12 * max(1.0, abs(mt1)) * 1e2
    assert abs(s2 - mt2) <= 1e-12 * max(1.0, abs(mt2)) * 1e2
    assert s1 >= 1 - 1e-12
    assert s2 >= F**2 - 1e-12 * max(1.0, F**2)


@settings(max_examples=300, deadline=None)
@given(cone_vectors())
def test_newton_inequalities(data):
    kappa, k = data
    for res in newton_residuals(kappa, k):
        if not math.isnan(res):
            assert res <= 1e-14 * max(1.0, np.abs(kappa).max())


@settings(max_examples=200, deadline=None)
@given(cone_vectors(), st.floats(0.01, 100.0))
def test_homogeneity(data, c):
    kappa, k = data
    assert quotient_F(c * kappa, k) == pytest.approx(c * quotient_F(kappa, k), rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(cone_vectors(), st.randoms(use_true_random=False))
def test_permutation_invariance(data, rnd):
    kappa, k = data
    perm = kappa.copy()
    rnd.shuffle(perm)
    assert elementary_all(perm) == pytest.approx(elementary_all(kappa), rel=1e-13, abs=1e-13)
    assert quotient_F(perm, k) == pytest.approx(quotient_F(kappa, k), rel=1e-13)
    assert cone_membership(perm, k).member_of == cone_membership(kappa, k).member_of


@settings(max_examples=200, deadline=None)
@given(cone_vectors(4), st.data())
def test_concavity_spot_check(data, extra):
    kappa, k = data
    other = kappa + np.array(extra.draw(st.lists(st.floats(0.0, 2.0), min_size=len(kappa), max_size=len(kappa))))
    # kappa + positive vector stays in the cone
    mid = 0.5 * (kappa + other)
    assert quotient_F(mid, k) >= 0.5 * (quotient_F(kappa, k) + quotient_F(other, k)) - 1e-12


@settings(max_examples=100, deadline=None)
@given(cone_vectors(5))
def test_gradient_matches_finite_differences(data):
    kappa, k = data
    # central differences need both stencil points inside the cone
    scale = max(1.0, np.abs(kappa).max())
    E = elementary_all(kappa)
    assume(np.all(E[1 : k + 1] > 1e-3 * scale ** np.arange(1, k + 1)))
    grad = gradient_F(kappa, k)
    step = 1e-6 * scale
    fd = np.empty_like(kappa)
    for i in range(len(kappa)):
        e = np.zeros_like(kappa)
        e[i] = step
        fd[i] = (quotient_F(kappa + e, k) - quotient_F(kappa - e, k)) / (2 * step)
    assert np.allclose(grad, fd, rtol=1e-6, atol=1e-7)


def test_vectorized_over_leading_axes():
    rng = np.random.default_rng(0)
    kappa = rng.uniform(0.1, 2.0, size=(4, 5, 3))
    E = elementary_all(kappa)
    assert E.shape == (4, 5, 4)
    assert np.allclose(E[2, 3], elementary_all(kappa[2, 3]))
    assert np.allclose(sigma_all(kappa)[..., 3], kappa.prod(axis=-1))
