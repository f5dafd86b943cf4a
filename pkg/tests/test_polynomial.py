import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from emzrom.chain import ChainSpec
from emzrom.errors import ContractError, DegreeOverflowError
from emzrom.polynomial import (SparsePoly, apply_kolmogorov, gibbs_expectation, gibbs_inner,
                               monomial_degree_window, r_moment)


def mono(n, **exps):
    """Monomial from keyword exponents such as ``r0=2, p1=1``."""
    key = []
    for name, e in exps.items():
        site = int(name[1:])
        key.append((site if name[0] == "r" else n + site, e))
    return SparsePoly(n, {tuple(key): 1.0})


# -- dense oracle -----------------------------------------------------------

class Dense:
    """Full coefficient tensor over the 2n chain variables."""

    def __init__(self, n, size):
        self.n, self.size = n, size
        self.c = np.zeros((size,) * (2 * n))

    @classmethod
    def from_sparse(cls, poly, size):
        d = cls(poly.n, size)
        for key, c in poly.items():
            idx = [0] * (2 * poly.n)
            for v, e in key:
                idx[v] = e
            d.c[tuple(idx)] += c
        return d

    def diff(self, v):
        out = np.zeros_like(self.c)
        src = [slice(None)] * self.c.ndim
        dst = [slice(None)] * self.c.ndim
        src[v], dst[v] = slice(1, None), slice(0, -1)
        k = np.arange(1, self.size).reshape([-1 if a == v else 1 for a in range(self.c.ndim)])
        out[tuple(dst)] = self.c[tuple(src)] * k
        return self._wrap(out)

    def times(self, v, power=1):
        out = np.zeros_like(self.c)
        src = [slice(None)] * self.c.ndim
        dst = [slice(None)] * self.c.ndim
        src[v], dst[v] = slice(0, self.size - power), slice(power, None)
        assert not np.any(np.take(self.c, range(self.size - power, self.size), axis=v))
        out[tuple(dst)] = self.c[tuple(src)]
        return self._wrap(out)

    def _wrap(self, c):
        d = Dense(self.n, self.size)
        d.c = c
        return d

    def __add__(self, o):
        return self._wrap(self.c + o.c)

    def scale(self, a):
        return self._wrap(a * self.c)


def dense_generator(d, spec, sign=1.0):
    n, m, beta = spec.n, spec.m, spec.beta
    out = d.scale(0.0)
    for j in range(n):
        rj, pj, pjm = j, n + j, n + (j - 1) % n
        dr = d.diff(rj)
        out = out + (dr.times(pj) + dr.times(pjm).scale(-1.0)).scale(sign / m)
        dp = d.diff(pj)
        jp = (j + 1) % n
        force = (dp.times(jp).scale(spec.nu) + dp.times(jp, 3).scale(spec.theta)
                 + dp.times(rj).scale(-spec.nu) + dp.times(rj, 3).scale(-spec.theta))
        out = out + force.scale(sign)
        g = spec.gamma[j]
        out = out + dp.times(pj).scale(-g / m) + dp.diff(pj).scale(g / beta)
    return out


def sparse_poly(n, max_deg):
    var = st.integers(0, 2 * n - 1)
    monomial = st.lists(var, min_size=0, max_size=max_deg).map(
        lambda vs: tuple((v, vs.count(v)) for v in sorted(set(vs))))
    coef = st.floats(-3, 3, allow_nan=False).filter(lambda c: abs(c) > 1e-3)
    return st.dictionaries(monomial, coef, min_size=1, max_size=6).map(lambda t: SparsePoly(n, t))


SPEC3 = ChainSpec.fpu(n=3, m=1.3, nu=0.7, theta=0.4, beta=1.7, gamma=(0.5, 0.0, 1.2))
SPEC4 = ChainSpec.fpu(n=4, m=1.0, nu=1.0, theta=1.0, beta=1.0, gamma=(1.0, 0.3, 0.0, 2.0))


# -- SparsePoly invariants --------------------------------------------------

def test_canonical_terms_and_pruning():
    f = SparsePoly(3, {((4, 1), (0, 2)): 2.0, ((0, 2), (4, 1), (1, 0)): -2.0, ((1, 1),): 1.0})
    assert f.terms == {((1, 1),): 1.0}
    g = SparsePoly(3, {((2, 1), (0, 1)): 1.0})
    assert list(g.terms) == [((0, 1), (2, 1))]


def test_unknown_variable_rejected():
    with pytest.raises(ContractError):
        SparsePoly(3, {((6, 1),): 1.0})


@given(sparse_poly(3, 4))
def test_no_zero_coefficients_or_exponents(f):
    g = apply_kolmogorov(f, SPEC3)
    for poly in (f, g, f * f - f * f + g):
        for key, c in poly.items():
            assert c != 0.0
            assert all(e > 0 for _, e in key)
            assert list(key) == sorted(key)
            assert len({v for v, _ in key}) == len(key)


# -- generator examples -----------------------------------------------------

def test_generator_on_bond_variable():
    spec = ChainSpec.fpu(n=6, m=2.0, theta=0.5)
    got = apply_kolmogorov(SparsePoly.r(3, 6), spec)
    want = (SparsePoly.p(3, 6) - SparsePoly.p(2, 6)) / 2.0
    assert got.allclose(want)


def test_generator_on_momentum():
    n, j = 6, 2
    spec = ChainSpec.fpu(n=n, m=1.0, nu=1.0, theta=1.0, gamma=1.0)
    r = lambda k: SparsePoly.r(k, n)
    want = (r(j + 1) + r(j + 1) ** 3) - (r(j) + r(j) ** 3) - SparsePoly.p(j, n)
    assert apply_kolmogorov(SparsePoly.p(j, n), spec).allclose(want)


def test_generator_annihilates_constants():
    assert apply_kolmogorov(SparsePoly.constant(4.2, 5), ChainSpec.fpu(n=5, theta=1.0)).is_zero()


def test_friction_part_on_p_squared():
    n, j, g, m, beta = 5, 1, 0.7, 1.5, 2.5
    gam = [0.0] * n
    gam[j] = g
    spec = ChainSpec.fpu(n=n, m=m, beta=beta, theta=0.3, gamma=gam)
    out = apply_kolmogorov(SparsePoly.p(j, n) ** 2, spec)
    assert out.coefficient(((n + j, 2),)) == pytest.approx(-2 * g / m)
    assert out.coefficient(()) == pytest.approx(2 * g / beta)


def test_adjoint_flips_hamiltonian_part_only():
    spec = ChainSpec.fpu(n=4, theta=1.0, gamma=0.0)
    f = SparsePoly.p(1, 4) * SparsePoly.r(2, 4)
    assert apply_kolmogorov(f, spec, "adjoint").allclose(-apply_kolmogorov(f, spec))


def test_bad_direction_and_kind():
    with pytest.raises(ContractError):
        apply_kolmogorov(SparsePoly.p(0, 3), SPEC3, "sideways")
    heat = ChainSpec(kind="heat-conduction", n=3)
    with pytest.raises(ContractError):
        apply_kolmogorov(SparsePoly.p(0, 3), heat)


def test_degree_cap_is_explicit():
    f = SparsePoly.p(0, 3)
    with pytest.raises(DegreeOverflowError):
        for _ in range(6):
            f = apply_kolmogorov(f, SPEC3, max_degree=6)


def test_degree_bookkeeping():
    spec = ChainSpec.fpu(n=5, theta=1.0, gamma=0.0)
    # L_r: r^2 -> one more p, one fewer r
    out = apply_kolmogorov(SparsePoly.r(2, 5) ** 2, spec)
    for key, _ in out.items():
        r_deg = sum(e for v, e in key if v < 5)
        p_deg = sum(e for v, e in key if v >= 5)
        assert (r_deg, p_deg) == (1, 1)
    # L_p: p -> r-degree 1 or 3
    out = apply_kolmogorov(SparsePoly.p(2, 5), spec)
    assert sorted({sum(e for _, e in k) for k, _ in out.items()}) == [1, 3]


@given(sparse_poly(3, 4), sparse_poly(3, 4), st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(f, g, a, b):
    lhs = apply_kolmogorov(a * f + b * g, SPEC3)
    rhs = a * apply_kolmogorov(f, SPEC3) + b * apply_kolmogorov(g, SPEC3)
    assert lhs.allclose(rhs, atol=1e-10, rtol=1e-10)


@pytest.mark.parametrize("direction,sign", [("forward", 1.0), ("adjoint", -1.0)])
@given(f=sparse_poly(3, 4))
def test_dense_oracle_agreement(direction, sign, f):
    size = 8
    want = dense_generator(Dense.from_sparse(f, size), SPEC3, sign)
    if sign < 0:
        # the diffusion and friction parts do not flip
        fric = dense_generator(Dense.from_sparse(f, size), SPEC3.with_(gamma=(0.0,) * 3), 1.0)
        want = dense_generator(Dense.from_sparse(f, size), SPEC3, 1.0) + fric.scale(-2.0)
    got = Dense.from_sparse(apply_kolmogorov(f, SPEC3, direction), size)
    np.testing.assert_allclose(got.c, want.c, atol=1e-12)


# -- locality ----------------------------------------------------------------

def test_window_examples():
    assert monomial_degree_window(2, 5)[0] == [4, 5, 6]
    r_sites, p_sites = monomial_degree_window(0, 5)
    assert r_sites == [5]
    assert p_sites == []
    assert monomial_degree_window(3, 0, n_sites=10) == ([0, 1, 9], [0, 1, 8, 9])
    with pytest.raises(ContractError):
        monomial_degree_window(-1, 0)


@pytest.mark.parametrize("j", [0, 7])
def test_iterates_stay_in_window(j):
    n = 16
    spec = ChainSpec.fpu(n=n, theta=1.0, gamma=0.5)
    f = SparsePoly.r(j, n)
    for k in range(1, 9):
        f = apply_kolmogorov(f, spec)
        r_win, p_win = monomial_degree_window(k, j, n_sites=n)
        r_sites, p_sites = f.sites()
        assert r_sites <= set(r_win)
        assert p_sites <= set(p_win)


# -- Gibbs expectations -------------------------------------------------------

def test_gibbs_examples():
    spec = ChainSpec.fpu(n=4, theta=0.0)
    assert gibbs_expectation(SparsePoly.p(1, 4) ** 2, spec) == 1.0
    assert gibbs_expectation(SparsePoly.p(1, 4) ** 4, spec) == 3.0
    assert gibbs_expectation(SparsePoly.r(2, 4) ** 2, spec) == pytest.approx(1.0)
    spec2 = ChainSpec.fpu(n=4, m=2.0, beta=0.5, theta=1.0)
    assert gibbs_expectation(SparsePoly.p(0, 4) ** 6, spec2) == pytest.approx(4.0 ** 3 * 15)


def test_odd_moments_vanish_exactly():
    spec = ChainSpec.fpu(n=4, theta=1.0)
    f = SparsePoly.r(0, 4) ** 3 + SparsePoly.p(1, 4) * SparsePoly.r(2, 4) ** 2 + 7 * SparsePoly.p(3, 4)
    assert gibbs_expectation(f, spec) == 0.0


def _mp_moment(k, beta, nu, theta):
    mpmath.mp.dps = 30
    w = lambda x: mpmath.exp(-beta * (nu * x ** 2 / 2 + theta * x ** 4 / 4))
    num = mpmath.quad(lambda x: x ** k * w(x), [-mpmath.inf, 0, mpmath.inf])
    den = mpmath.quad(w, [-mpmath.inf, 0, mpmath.inf])
    return float(num / den)


def _legendre_moment(k, beta, nu, theta, nodes=400, R=12.0):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x, w = R * x, R * w
    dens = np.exp(-beta * (nu * x ** 2 / 2 + theta * x ** 4 / 4))
    return float(np.sum(w * x ** k * dens) / np.sum(w * dens))


@pytest.mark.parametrize("k,beta,nu,theta", [
    (2, 1.0, 1.0, 1.0), (4, 1.0, 1.0, 1.0), (2, 20.0, 1.0, 0.1), (8, 1.0, 1.0, 0.1),
    (6, 0.5, 0.0, 1.0), (12, 1.0, 1.0, 1.0),
])
def test_r_moments_against_two_quadratures(k, beta, nu, theta):
    spec = ChainSpec.fpu(n=3, beta=beta, nu=nu, theta=theta)
    ours = r_moment(k, spec)
    hp = _mp_moment(k, beta, nu, theta)
    gl = _legendre_moment(k, beta, nu, theta)
    assert hp == pytest.approx(gl, rel=1e-10)
    assert ours == pytest.approx(hp, rel=1e-10)


def test_pure_quartic_closed_form():
    # <r^2> for exp(-r^4/4) is 2 Gamma(3/4) / Gamma(1/4)
    spec = ChainSpec.fpu(n=3, nu=0.0, theta=1.0)
    assert r_moment(2, spec) == pytest.approx(2 * math.gamma(0.75) / math.gamma(0.25), rel=1e-12)


@given(sparse_poly(4, 4))
def test_generator_preserves_gibbs_measure(f):
    val = gibbs_expectation(apply_kolmogorov(f, SPEC4), SPEC4)
    scale = max(1.0, sum(abs(c) for _, c in f.items()))
    assert abs(val) <= 1e-8 * scale


@given(sparse_poly(3, 3), sparse_poly(3, 3))
def test_adjoint_identity(f, g):
    lhs = gibbs_inner(apply_kolmogorov(f, SPEC3), g, SPEC3)
    rhs = gibbs_inner(f, apply_kolmogorov(g, SPEC3, "adjoint"), SPEC3)
    scale = max(1.0, abs(lhs), abs(rhs))
    assert abs(lhs - rhs) <= 1e-8 * scale


@given(sparse_poly(3, 3), sparse_poly(3, 3))
def test_inner_matches_expectation_of_product(f, g):
    a = gibbs_inner(f, g, SPEC3)
    b = gibbs_expectation(f * g, SPEC3)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_adjoint_identity_fixed_case():
    spec = ChainSpec.fpu(n=5, theta=1.0, beta=20.0, gamma=(1, 0, 0, 2, 0))
    f = SparsePoly.p(0, 5) ** 2 * SparsePoly.r(1, 5)
    g = SparsePoly.r(1, 5) * SparsePoly.p(1, 5) + SparsePoly.p(0, 5) ** 2
    for _ in range(2):
        lhs = gibbs_inner(apply_kolmogorov(f, spec), g, spec)
        rhs = gibbs_inner(f, apply_kolmogorov(g, spec, "adjoint"), spec)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
        f, g = apply_kolmogorov(f, spec), apply_kolmogorov(g, spec, "adjoint")
