"""First-principle memory kernels from operator cumulants.

For a scalar Mori projection onto ``u0`` the kernel expansion coefficients
follow from the moments

    gamma_n = <K^n u0, u0> / <u0, u0>,
    mu_n    = <K (QK)^(n-1) u0, u0> / <u0, u0>,

where the ``mu_n`` are obtained from the ``gamma_n`` by a convolution-type
recurrence and the ``gamma_n`` are exact Gibbs averages of symbolic
polynomial iterates.
"""

from __future__ import annotations

import math

import numpy as np

from .basis import FABER, LAGUERRE, TAYLOR, BasisSpec, KernelModel, bessel_j, bessel_j_all
from .chain import ChainSpec
from .errors import ContractError, NumericalError
from .polynomial import (ADJOINT, DEFAULT_MAX_DEGREE, FORWARD, SparsePoly, apply_kolmogorov,
                         gibbs_inner)

__all__ = [
    "BasisSpec", "KernelModel", "bessel_j", "bessel_j_all",
    "gamma_coefficients", "mu_from_gamma", "mu_from_gamma_matrix",
    "faber_polynomials", "kernel_from_mu", "default_faber_domain", "calibrate_faber_domain",
    "first_principle_kernel",
]


def gamma_coefficients(u0, n_max, spec, max_degree=DEFAULT_MAX_DEGREE):
    """Normalized moments ``gamma_1 .. gamma_{n_max}`` of the generator.

    Uses the split form ``<K^a u0, (K*)^b u0>`` with ``a = ceil(n/2)``,
    ``b = floor(n/2)`` so that neither side is iterated more than
    ``ceil(n_max/2)`` times.
    """
    if n_max < 1:
        raise ContractError("n_max must be >= 1")
    norm = gibbs_inner(u0, u0, spec)
    if not norm > 0:
        raise ContractError("<u0, u0> must be positive")
    fwd, bwd = [u0], [u0]
    for _ in range((n_max + 1) // 2):
        fwd.append(apply_kolmogorov(fwd[-1], spec, FORWARD, max_degree))
    for _ in range(n_max // 2):
        bwd.append(apply_kolmogorov(bwd[-1], spec, ADJOINT, max_degree))
    return np.array([gibbs_inner(fwd[(n + 1) // 2], bwd[n // 2], spec) / norm
                     for n in range(1, n_max + 1)])


def mu_from_gamma(gamma):
    """``mu_n = gamma_n - sum_{j<n} mu_{n-j} gamma_j`` (1-based indices)."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ContractError("gamma must be a nonempty sequence")
    mu = np.empty_like(g)
    for n in range(g.size):
        # mu[n] <-> mu_{n+1}; sum over j = 1..n of mu_{n+1-j} gamma_j
        mu[n] = g[n] - sum(mu[n - j] * g[j - 1] for j in range(1, n + 1))
    return mu


def mu_from_gamma_matrix(gammas):
    """Matrix recurrence ``M_n = G_n - sum_{i<n} G_{n-i} M_i``."""
    G = [np.atleast_2d(np.asarray(g, dtype=float)) for g in gammas]
    if not G:
        raise ContractError("need at least one moment matrix")
    shape = G[0].shape
    if len(shape) != 2 or shape[0] != shape[1] or any(g.shape != shape for g in G):
        raise ContractError("moment matrices must all be square with equal size")
    M = []
    for n in range(len(G)):
        acc = G[n].copy()
        for i in range(n):
            acc -= G[n - 1 - i] @ M[i]
        M.append(acc)
    return M


def faber_polynomials(order, a, b):
    """Monomial coefficients of the Faber polynomials ``Phi_0 .. Phi_order``.

    Row ``n`` holds the coefficients of ``x^0 .. x^order`` in ``Phi_n(x)``
    for the segment ``[-a - ib, -a + ib]``, i.e. ``Phi_0 = 1`` and
    ``Phi_n(x) = 2 i^n T_n((x + a)/(i b))`` for ``n >= 1``, so that
    ``exp(t x) = sum_n exp(-a t) J_n(b t) Phi_n(x)``.
    """
    if not (a > 0 and b > 0):
        raise ContractError("Faber domain needs a > 0 and b > 0")
    C = np.zeros((order + 1, order + 1))
    C[0, 0] = 1.0
    if order == 0:
        return C
    lin = np.zeros(order + 1)
    lin[0], lin[1] = 2.0 * a / b, 2.0 / b
    C[1, :2] = lin[:2]
    for n in range(1, order):
        prev = C[n - 1] * (2.0 if n == 1 else 1.0)
        shifted = np.zeros(order + 1)
        shifted[1:] = C[n, :-1]
        C[n + 1] = (2.0 / b) * (shifted + a * C[n]) + prev
    return C


def default_faber_domain(gamma):
    """``a = -gamma_1``, ``b = 2 sqrt(max(0, gamma_1^2 - gamma_2))``."""
    g1, g2 = float(gamma[0]), float(gamma[1])
    a = -g1
    b = 2.0 * math.sqrt(max(0.0, g1 * g1 - g2))
    if not (a > 0 and b > 0):
        raise ContractError(
            f"cannot derive a Faber domain from gamma_1={g1}, gamma_2={g2}; pass a and b explicitly")
    return a, b


def calibrate_faber_domain(mu, omega, C, order, starts=None):
    """Choose ``(a, b)`` so the order-``order`` kernel replays a reference ``C(t)``.

    Only the two domain parameters are fitted; the series coefficients still
    come from the moments ``mu``.  The score is
    ``max |C_gle - C/C(0)|`` on the grid of ``C``, minimized by Nelder-Mead in
    ``(log a, log b)`` from several starting points.

    Returns
    -------
    dict
        ``a``, ``b`` and the attained ``score``.
    """
    from scipy import optimize

    from .gle import solve_projected_gle

    ref = np.asarray(C.values, dtype=float) / float(C.values[0])
    t = C.t - C.t0

    def score(x):
        a, b = np.exp(x)
        model = kernel_from_mu(mu, BasisSpec.faber(a, b), order, omega=omega)
        try:
            sol = solve_projected_gle(model, 1.0, t)
        except NumericalError:
            return 1e3
        return float(np.max(np.abs(sol.values - ref)))

    if starts is None:
        starts = [(1.0, 2.0), (2.0, 4.0), (3.0, 2.0), (4.0, 1.0)]
    best = None
    for a0, b0 in starts:
        res = optimize.minimize(score, np.log([a0, b0]), method="Nelder-Mead",
                                options={"xatol": 1e-3, "fatol": 1e-5, "maxiter": 400})
        if best is None or res.fun < best.fun:
            best = res
    a, b = np.exp(best.x)
    return {"a": float(a), "b": float(b), "score": float(best.fun)}


def kernel_from_mu(mu, basis, order, omega=None, observable=""):
    """Series coefficients of the memory kernel from projected moments.

    ``mu`` holds ``mu_1, mu_2, ...`` and must have at least ``order + 2``
    entries.  ``omega`` defaults to ``mu_1`` (equal to ``gamma_1``).
    """
    mu = np.asarray(mu, dtype=float)
    if mu.size < order + 2:
        raise ContractError(f"need {order + 2} projected moments, got {mu.size}")
    tail = mu[1:order + 2]  # mu_2 .. mu_{order+2}
    if basis.kind == TAYLOR:
        coeffs = tail.copy()
    elif basis.kind == FABER:
        coeffs = faber_polynomials(order, basis.a, basis.b) @ tail
    elif basis.kind == LAGUERRE:
        raise ContractError("laguerre coefficients are fit from data, not from moments")
    return KernelModel(omega=float(mu[0] if omega is None else omega), basis=basis,
                       coeffs=coeffs, observable=observable)


def first_principle_kernel(spec, observable, order, basis="faber", a=None, b=None,
                           max_degree=DEFAULT_MAX_DEGREE):
    """End-to-end first-principle kernel for an observable such as ``"p:50"``.

    ``omega`` is the streaming coefficient ``<K u0, u0>/<u0, u0>`` (= gamma_1).
    """
    u0 = observable if isinstance(observable, SparsePoly) else SparsePoly.parse(observable, spec.n)
    name = observable if isinstance(observable, str) else repr(observable)
    gam = gamma_coefficients(u0, order + 2, spec, max_degree)
    mu = mu_from_gamma(gam)
    if basis == TAYLOR:
        bspec = BasisSpec.taylor()
    elif basis == FABER:
        if a is None or b is None:
            da, db = default_faber_domain(gam)
            a = da if a is None else a
            b = db if b is None else b
        bspec = BasisSpec.faber(a, b)
    else:
        raise ContractError(f"first-principle kernels support taylor or faber, not {basis!r}")
    model = kernel_from_mu(mu, bspec, order, omega=gam[0], observable=name)
    model.metadata.update({
        "method": "first-principle",
        "gamma": gam.tolist(),
        "mu": mu.tolist(),
        "c0": gibbs_inner(u0, u0, spec),
        "omega_source": "<K u0, u0>/<u0, u0>",
    })
    return model
