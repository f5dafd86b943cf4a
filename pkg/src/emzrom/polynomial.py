"""Sparse polynomials over FPU chain variables and exact Gibbs averages.

Variables of an ``n``-site chain are numbered ``r_j -> j`` and
``p_j -> n + j`` (``j`` taken modulo ``n``).  A monomial is a tuple of
``(variable id, exponent)`` pairs sorted by id, with only nonzero exponents
stored; a polynomial maps monomials to nonzero float coefficients.

The Kolmogorov generator of the Langevin FPU chain,

    K = sum_j (p_j - p_{j-1})/m d/dr_j
        + (V'(r_{j+1}) - V'(r_j)) d/dp_j
        - gamma_j p_j/m d/dp_j + (gamma_j/beta) d^2/dp_j^2,

maps polynomials to polynomials, so iterates ``K^n u`` can be formed exactly.
The adjoint in ``L^2(rho_eq)`` flips the sign of the Hamiltonian part.
"""

from __future__ import annotations

from collections import defaultdict
from functools import lru_cache
import math
import re

import numpy as np
from scipy import integrate

from .chain import FPU, ChainSpec
from .errors import ContractError, DegreeOverflowError, NumericalError

DEFAULT_MAX_DEGREE = 64

FORWARD = "forward"
ADJOINT = "adjoint"


def _canon(items):
    return tuple(sorted(items))


class SparsePoly:
    """Immutable sparse polynomial in the ``2n`` chain variables.

    Build with :meth:`r`, :meth:`p`, :meth:`constant` or from a term mapping::

        f = SparsePoly.p(3, n=10) ** 2 - 2.0 * SparsePoly.r(4, n=10)
    """

    __slots__ = ("n", "_terms")

    def __init__(self, n, terms=None):
        n = int(n)
        if n < 1:
            raise ContractError("polynomial needs a positive site count")
        self.n = n
        clean = {}
        for key, c in (terms or {}).items():
            items = key.items() if isinstance(key, dict) else key
            merged = defaultdict(int)
            for v, e in items:
                v, e = int(v), int(e)
                if not 0 <= v < 2 * n:
                    raise ContractError(f"unknown variable id {v} for n={n}")
                if e < 0:
                    raise ContractError("negative exponent")
                merged[v] += e
            k = _canon((v, e) for v, e in merged.items() if e)
            c = float(c)
            if not math.isfinite(c):
                raise ContractError("non-finite coefficient")
            clean[k] = clean.get(k, 0.0) + c
        self._terms = {k: c for k, c in clean.items() if c != 0.0}

    @classmethod
    def _raw(cls, n, terms):
        obj = cls.__new__(cls)
        obj.n = n
        obj._terms = terms
        return obj

    # constructors ------------------------------------------------------
    @classmethod
    def r(cls, j, n):
        return cls._raw(n, {((j % n, 1),): 1.0})

    @classmethod
    def p(cls, j, n):
        return cls._raw(n, {((n + j % n, 1),): 1.0})

    @classmethod
    def constant(cls, c, n):
        return cls(n, {(): c})

    @classmethod
    def zero(cls, n):
        return cls._raw(n, {})

    @classmethod
    def parse(cls, text, n):
        """Parse an observable descriptor like ``"p:50"`` or ``"r:3"``."""
        m = re.fullmatch(r"\s*([rp])\s*[:_]?\s*(-?\d+)\s*", text)
        if not m:
            raise ContractError(f"cannot parse observable {text!r}; use 'p:<site>' or 'r:<site>'")
        kind, j = m.group(1), int(m.group(2))
        return cls.r(j, n) if kind == "r" else cls.p(j, n)

    # inspection --------------------------------------------------------
    @property
    def terms(self):
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def __bool__(self):
        return bool(self._terms)

    def is_zero(self):
        return not self._terms

    def degree(self):
        return max((sum(e for _, e in k) for k in self._terms), default=0)

    def support(self):
        """Set of variable ids that occur with a nonzero exponent."""
        return {v for k in self._terms for v, _ in k}

    def sites(self):
        """``(r_sites, p_sites)`` occurring in the polynomial."""
        sup = self.support()
        return ({v for v in sup if v < self.n}, {v - self.n for v in sup if v >= self.n})

    def coefficient(self, key):
        return self._terms.get(_canon(key), 0.0)

    # arithmetic --------------------------------------------------------
    def _check(self, other):
        if other.n != self.n:
            raise ContractError("polynomials live on chains of different size")

    def __add__(self, other):
        if not isinstance(other, SparsePoly):
            other = SparsePoly.constant(other, self.n)
        self._check(other)
        out = dict(self._terms)
        for k, c in other._terms.items():
            s = out.get(k, 0.0) + c
            if s == 0.0:
                out.pop(k, None)
            else:
                out[k] = s
        return SparsePoly._raw(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return SparsePoly._raw(self.n, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, SparsePoly):
            self._check(other)
            out = defaultdict(float)
            for ka, ca in self._terms.items():
                for kb, cb in other._terms.items():
                    d = dict(ka)
                    for v, e in kb:
                        d[v] = d.get(v, 0) + e
                    out[_canon(d.items())] += ca * cb
            return SparsePoly._raw(self.n, {k: c for k, c in out.items() if c != 0.0})
        a = float(other)
        if a == 0.0:
            return SparsePoly.zero(self.n)
        return SparsePoly._raw(self.n, {k: a * c for k, c in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, a):
        return self * (1.0 / float(a))

    def __pow__(self, k):
        out = SparsePoly.constant(1.0, self.n)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, SparsePoly) and other.n == self.n and other._terms == self._terms

    def __hash__(self):
        return hash((self.n, frozenset(self._terms.items())))

    def allclose(self, other, atol=1e-12, rtol=1e-12):
        """Term-by-term comparison with tolerance."""
        self._check(other)
        for k in set(self._terms) | set(other._terms):
            a, b = self._terms.get(k, 0.0), other._terms.get(k, 0.0)
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    def evaluate(self, r, p):
        """Evaluate at chain states; ``r`` and ``p`` have sites on the last axis."""
        r = np.asarray(r, dtype=float)
        p = np.asarray(p, dtype=float)
        out = np.zeros(np.broadcast_shapes(r.shape[:-1], p.shape[:-1]))
        for k, c in self._terms.items():
            term = c
            for v, e in k:
                x = r[..., v] if v < self.n else p[..., v - self.n]
                term = term * x ** e
            out = out + term
        return out

    def _name(self, v):
        return f"r{v}" if v < self.n else f"p{v - self.n}"

    def __repr__(self):
        if not self._terms:
            return "SparsePoly(0)"
        parts = []
        for k, c in sorted(self._terms.items()):
            mono = "*".join(self._name(v) + (f"^{e}" if e > 1 else "") for v, e in k)
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return "SparsePoly(" + " ".join(parts) + ")"


def _bump(d, v, delta):
    e = d.get(v, 0) + delta
    if e:
        d[v] = e
    else:
        d.pop(v, None)


def apply_kolmogorov(poly, spec, direction=FORWARD, max_degree=DEFAULT_MAX_DEGREE):
    """Apply the FPU Kolmogorov generator (or its ``rho_eq`` adjoint) exactly.

    Parameters
    ----------
    poly : SparsePoly
    spec : ChainSpec
        Must be an ``fpu-langevin`` chain with ``spec.n == poly.n``.
    direction : {"forward", "adjoint"}
        ``forward`` applies ``K = L + S``; ``adjoint`` applies ``K* = -L + S``.
    max_degree : int
        Raise :class:`DegreeOverflowError` if any output term exceeds it.
    """
    if spec.kind != FPU:
        raise ContractError("symbolic generator is only available for the FPU chain")
    if poly.n != spec.n:
        raise ContractError(f"polynomial has n={poly.n}, chain has n={spec.n}")
    if direction == FORWARD:
        sl = 1.0
    elif direction == ADJOINT:
        sl = -1.0
    else:
        raise ContractError(f"direction must be 'forward' or 'adjoint', got {direction!r}")

    n, m, beta = spec.n, spec.m, spec.beta
    nu, theta, gam = spec.nu, spec.theta, spec.gamma
    out = defaultdict(float)
    top = 0
    for key, c in poly.items():
        deg = sum(e for _, e in key)
        for v, e in key:
            if v < n:
                # (1/m)(p_j - p_{j-1}) d/dr_j
                j = v
                base = dict(key)
                _bump(base, v, -1)
                a = sl * c * e / m
                for pv, s in ((n + j, 1.0), (n + (j - 1) % n, -1.0)):
                    d = dict(base)
                    _bump(d, pv, 1)
                    out[_canon(d.items())] += s * a
            else:
                j = v - n
                base = dict(key)
                _bump(base, v, -1)
                a = sl * c * e
                for rv, s in (((j + 1) % n, 1.0), (j, -1.0)):
                    if nu:
                        d = dict(base)
                        _bump(d, rv, 1)
                        out[_canon(d.items())] += s * nu * a
                    if theta:
                        d = dict(base)
                        _bump(d, rv, 3)
                        out[_canon(d.items())] += s * theta * a
                        top = max(top, deg + 2)
                g = gam[j]
                if g:
                    out[key] += -g / m * e * c
                    if e >= 2:
                        d = dict(key)
                        _bump(d, v, -2)
                        out[_canon(d.items())] += g / beta * e * (e - 1) * c
        top = max(top, deg)
    if top > max_degree:
        raise DegreeOverflowError(
            f"generator output reaches total degree {top} > max_degree={max_degree}")
    return SparsePoly._raw(n, {k: c for k, c in out.items() if c != 0.0})


def monomial_degree_window(n, j, n_sites=None):
    """Index windows of sites that ``K^n r_j`` may depend on.

    Returns ``(r_sites, p_sites)`` as sorted lists, reduced modulo
    ``n_sites`` when given.  The r-window is ``j-floor(n/2) .. j+floor(n/2)``
    and the p-window ``j-floor((n+1)/2) .. j+floor((n-1)/2)`` (empty for n=0).
    """
    if n < 0:
        raise ContractError("iteration index must be >= 0")
    rs = range(j - n // 2, j + n // 2 + 1)
    ps = range(j - (n + 1) // 2, j + (n - 1) // 2 + 1)
    if n_sites:
        return sorted({s % n_sites for s in rs}), sorted({s % n_sites for s in ps})
    return list(rs), list(ps)


# ---------------------------------------------------------------------------
# Gibbs moments


def _double_factorial(k):
    return math.prod(range(k - 1, 0, -2)) if k > 1 else 1


def p_moment(k, m, beta):
    """``E[p^k]`` for ``p ~ N(0, m/beta)``."""
    if k % 2:
        return 0.0
    return (m / beta) ** (k // 2) * _double_factorial(k)


@lru_cache(maxsize=4096)
def _r_moment(k, beta, nu, theta):
    if k % 2:
        return 0.0
    if k == 0:
        return 1.0
    if theta == 0.0:
        return (1.0 / (beta * nu)) ** (k // 2) * _double_factorial(k)

    def logf(x, kk):
        return kk * math.log(x) - beta * (0.5 * nu * x * x + 0.25 * theta * x ** 4) if x > 0 else -math.inf

    def integral(kk):
        # peak of x^kk exp(-beta V): solve kk = beta (nu x^2 + theta x^4)
        if kk == 0:
            xs = 0.0
            lpeak = 0.0
        else:
            a = beta * theta
            b = beta * nu
            xs = math.sqrt((-b + math.sqrt(b * b + 4 * a * kk)) / (2 * a))
            lpeak = logf(xs, kk)
        # right cutoff where the integrand drops below 1e-16 of its peak
        hi = max(xs, 1.0) * 2
        while logf(hi, kk) - lpeak > math.log(1e-16):
            hi *= 1.5
        f = lambda x: math.exp(logf(x, kk) - lpeak) if x > 0 else (1.0 if kk == 0 else 0.0)
        pts = [xs] if 0 < xs < hi else None
        res = integrate.quad(f, 0.0, hi, epsabs=0.0, epsrel=1e-12, limit=400,
                             points=pts, full_output=1)
        val, err = res[0], res[1]
        # a 4th element (warning message) means quadpack flagged ier > 0
        if len(res) > 3 and err > 1e-10 * abs(val):
            raise NumericalError(f"r-moment quadrature did not converge for k={kk} (err={err:.2e})")
        return val, lpeak

    num, lnum = integral(k)
    den, lden = integral(0)
    return num / den * math.exp(lnum - lden)


def r_moment(k, spec):
    """``E[r^k]`` under the single-bond Gibbs density ``exp(-beta V(r))``."""
    return _r_moment(int(k), float(spec.beta), float(spec.nu), float(spec.theta))


def _moment(v, k, spec):
    if v < spec.n:
        return r_moment(k, spec)
    return p_moment(k, spec.m, spec.beta)


def gibbs_expectation(poly, spec):
    """Exact expectation of a polynomial under the product Gibbs measure.

    Momenta are i.i.d. ``N(0, m/beta)``; bonds are i.i.d. with density
    proportional to ``exp(-beta V(r))``.  Terms holding any odd power vanish
    exactly.
    """
    if spec.kind != FPU:
        raise ContractError("Gibbs averages are only available for the FPU chain")
    total = 0.0
    for key, c in poly.items():
        if any(e % 2 for _, e in key):
            continue
        w = c
        for v, e in key:
            w *= _moment(v, e, spec)
        total += w
    return total


def _dense(poly, col):
    E = np.zeros((len(poly), len(col)), dtype=np.int64)
    c = np.empty(len(poly))
    for i, (key, coef) in enumerate(poly.items()):
        for v, e in key:
            E[i, col[v]] = e
        c[i] = coef
    return E, c


def gibbs_inner(f, g, spec, chunk=2_000_000):
    """``<f, g>_eq`` without forming the product polynomial.

    Terms are bucketed by exponent parity; only equal-parity pairs can have a
    nonzero joint moment.
    """
    if spec.kind != FPU:
        raise ContractError("Gibbs averages are only available for the FPU chain")
    if f.n != g.n or f.n != spec.n:
        raise ContractError("polynomial and chain sizes differ")
    if not f or not g:
        return 0.0
    variables = sorted(f.support() | g.support())
    if not variables:
        return f.coefficient(()) * g.coefficient(())
    col = {v: i for i, v in enumerate(variables)}
    Ef, cf = _dense(f, col)
    Eg, cg = _dense(g, col)
    ncol = len(variables)
    top = int((Ef.max(axis=0) + Eg.max(axis=0)).max())
    table = np.zeros((ncol, top + 1))
    for i, v in enumerate(variables):
        for k in range(0, top + 1, 2):
            table[i, k] = _moment(v, k, spec)
    colidx = np.arange(ncol)

    def groups(E):
        keys = np.packbits((E & 1).astype(np.uint8), axis=1)
        out = defaultdict(list)
        for i, row in enumerate(keys):
            out[row.tobytes()].append(i)
        return out

    gf, gg = groups(Ef), groups(Eg)
    total = 0.0
    for sig, rows_f in gf.items():
        rows_g = gg.get(sig)
        if rows_g is None:
            continue
        A, ca = Ef[rows_f], cf[rows_f]
        B, cb = Eg[rows_g], cg[rows_g]
        step = max(1, chunk // max(1, len(B) * ncol))
        for s in range(0, len(A), step):
            S = A[s:s + step, None, :] + B[None, :, :]
            mom = table[colidx, S].prod(axis=2)
            total += float(ca[s:s + step] @ mom @ cb)
    return total
