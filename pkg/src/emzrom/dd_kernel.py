"""Data-driven memory kernels by sparse Volterra regression.

Given samples of a correlation function ``C(t)`` and the streaming term
``Omega``, the kernel ``K(t) = sum_n k_n phi_n(t)`` solves

    C'(t_i) - Omega C(t_i) = sum_n k_n int_0^{t_i} phi_n(s) C(t_i - s) ds,

which is linear in ``k``.  The system is solved by LASSO for a grid of
penalties, and the penalty is chosen by replaying the fitted GLE against the
data.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import signal

from .basis import KernelModel, laguerre_basis
from .errors import ContractError, ConvergenceError, NumericalError
from .gle import solve_projected_gle
from .mc import fit_exponential_bound

__all__ = ["laguerre_basis", "derivative_4th", "assemble_regression", "lasso_fit", "LassoResult",
           "fit_kernel_dd", "default_laguerre_sigma", "default_lambda_grid"]


def derivative_4th(f, h):
    """Fourth-order finite-difference derivative (one-sided near the ends)."""
    f = np.asarray(f, dtype=float)
    if f.size < 5:
        raise ContractError("need at least 5 samples for a 4th-order derivative")
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


def assemble_regression(C, omega, basis, order, weight=None):
    """Design matrix and target of the Volterra regression.

    Parameters
    ----------
    C : SampledFunction
        Correlation on ``t_0 = 0, ..., t_J`` with ``J >= 3 * order``.
    omega : float
    basis : BasisSpec
    order : int
        Highest basis index ``N``; ``X`` has ``N + 1`` columns.
    weight : callable or array, optional
        Row weights ``w(t_i)``; rows are scaled by ``sqrt(w)``.

    Returns
    -------
    X : ndarray, shape (J + 1, order + 1)
    y : ndarray, shape (J + 1,)
    """
    vals = np.asarray(C.values, dtype=float)
    if vals.ndim != 1:
        raise ContractError("regression needs a scalar correlation function")
    if C.t0 != 0.0:
        raise ContractError("correlation grid must start at t = 0")
    J = vals.size - 1
    if order < 0 or J < 3 * order or J < 4:
        raise ContractError(f"order {order} too large for {J + 1} grid points (need J >= 3N)")
    if np.all(vals == 0):
        return np.zeros((J + 1, order + 1)), np.zeros(J + 1)
    h = C.dt
    t = C.t
    y = derivative_4th(vals, h) - omega * vals
    phi = basis.functions(order, t)
    X = np.empty((J + 1, order + 1))
    for n in range(order + 1):
        full = signal.fftconvolve(phi[n], vals)[:J + 1]
        X[:, n] = h * (full - 0.5 * (phi[n, 0] * vals + phi[n] * vals[0]))
    X[0] = 0.0
    if weight is not None:
        w = np.asarray(weight(t) if callable(weight) else weight, dtype=float)
        if w.shape != y.shape or np.any(w < 0):
            raise ContractError("row weights must be nonnegative with one entry per sample")
        sw = np.sqrt(w)
        X = X * sw[:, None]
        y = y * sw
    return X, y


class LassoResult(np.ndarray):
    """Coefficient vector carrying the solver report in ``.info``."""

    info: dict

    def __new__(cls, coef, info):
        obj = np.asarray(coef, dtype=float).view(cls)
        obj.info = info
        return obj

    def __array_finalize__(self, obj):
        self.info = getattr(obj, "info", {})


def _soft(x, lam):
    return np.sign(x) * max(abs(x) - lam, 0.0)


def lasso_fit(X, y, lam, tol=1e-10, max_sweeps=100_000, check_every=10):
    """Minimize ``(1/2J) ||y - X k||^2 + lam ||k||_1`` by cyclic coordinate descent.

    ``J`` is the number of rows.  Columns are rescaled to unit mean square for
    the iteration and the result is returned on the original scale.  Every
    ``check_every`` sweeps the current support and signs are used for an
    exact active-set solve, accepted when it satisfies the optimality
    conditions; this keeps ill-conditioned dictionaries from stalling.

    Returns
    -------
    LassoResult
        ``info`` holds ``sweeps``, ``max_change``, ``kkt`` (the largest
        subgradient violation) and ``objective``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ContractError("X must be (J, p) and y must have J entries")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ContractError("non-finite entries in the regression data")
    if not lam >= 0:
        raise ContractError("lambda must be >= 0")
    J, p = X.shape
    scale = np.sqrt(np.mean(X * X, axis=0))
    live = scale > 0
    s = np.where(live, scale, 1.0)
    Z = X / s
    G = Z.T @ Z / J
    c = Z.T @ y / J
    pen = np.where(live, lam / s, np.inf)  # penalty per standardized coordinate
    b = np.zeros(p)
    grad = c.copy()  # c - G b
    change = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for j in range(p):
            if not live[j]:
                continue
            old = b[j]
            new = _soft(grad[j] + G[j, j] * old, pen[j]) / G[j, j]
            if new != old:
                grad -= G[:, j] * (new - old)
                b[j] = new
                change = max(change, abs(new - old))
        if change < tol:
            break
        if sweeps % check_every == 0:
            cand = _active_set_solve(G, c, pen, b)
            if cand is not None:
                b, grad = cand, c - G @ cand
                change = 0.0
                break
    else:
        res = float(np.linalg.norm(y - X @ (b / s)) / np.sqrt(J))
        raise ConvergenceError(
            f"LASSO did not converge in {max_sweeps} sweeps (last change {change:.3e}, "
            f"rms residual {res:.3e})", residual=res)
    k = np.where(live, b / s, 0.0)
    kkt = lasso_kkt(X, y, k, lam)
    r = y - X @ k
    obj = 0.5 * float(r @ r) / J + lam * float(np.abs(k).sum())
    return LassoResult(k, {"sweeps": sweeps, "max_change": float(change), "kkt": kkt,
                           "objective": obj, "lambda": float(lam)})


def _active_set_solve(G, c, pen, b):
    act = np.flatnonzero(b != 0)
    if act.size == 0:
        return None
    sg = np.sign(b[act])
    try:
        sol = np.linalg.solve(G[np.ix_(act, act)], c[act] - pen[act] * sg)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(sol) != sg):
        return None
    cand = np.zeros_like(b)
    cand[act] = sol
    grad = c - G @ cand
    scale = max(1.0, float(np.max(np.abs(c))))
    inactive = np.ones(b.size, bool)
    inactive[act] = False
    fin = np.isfinite(pen)
    if np.any(np.abs(grad[inactive & fin]) > pen[inactive & fin] + 1e-12 * scale):
        return None
    return cand


def lasso_kkt(X, y, k, lam):
    """Largest violation of the LASSO subgradient conditions."""
    J = X.shape[0]
    g = X.T @ (y - X @ k) / J
    nz = k != 0
    viol = np.zeros_like(g)
    viol[nz] = np.abs(g[nz] - lam * np.sign(k[nz]))
    viol[~nz] = np.maximum(np.abs(g[~nz]) - lam, 0.0)
    return float(viol.max()) if viol.size else 0.0


def default_laguerre_sigma(C):
    """``sigma = 2 alpha`` with ``alpha`` the fitted decay rate of ``|C/C(0)|``."""
    fit = fit_exponential_bound(C)
    if not fit.decays:
        raise NumericalError("cannot infer a Laguerre time scale: " + fit.verdict)
    return 2.0 * fit.alpha


def default_lambda_grid(X, y, n=6, lo=1e-7, hi=1e-2):
    """Log-spaced penalties relative to ``lambda_max = max |X^T y| / J``."""
    lam_max = float(np.max(np.abs(X.T @ y)) / X.shape[0])
    if lam_max == 0:
        return np.zeros(1)
    return lam_max * np.logspace(np.log10(lo), np.log10(hi), n)


def replay_error(model, C):
    """``max |C_model - C| / |C(0)|`` with ``C_model`` from the projected GLE."""
    c0 = float(C.values[0])
    try:
        sol = solve_projected_gle(model, c0, C.t - C.t0)
    except NumericalError:
        return np.inf
    return float(np.max(np.abs(sol.values - C.values)) / abs(c0))


def fit_kernel_dd(C, omega, basis, order, lambda_grid=None, weight=None, threads=1,
                  observable=""):
    """Fit a kernel from data and select the penalty by GLE replay.

    Parameters
    ----------
    C : SampledFunction
        Training correlation function.
    omega : float
        Streaming term.
    basis : BasisSpec
    order : int
    lambda_grid : sequence of float, optional
        Candidate penalties; defaults to :func:`default_lambda_grid`.
    threads : int
        Penalties are fitted in parallel; the result does not depend on it.

    Returns
    -------
    KernelModel
        ``metadata["fit"]`` lists per-penalty replay errors, residuals and
        KKT violations plus the chosen penalty.
    """
    X, y = assemble_regression(C, omega, basis, order, weight)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(X, y)
    lambda_grid = [float(v) for v in lambda_grid]
    if not lambda_grid:
        raise ContractError("lambda grid is empty")

    def one(lam):
        try:
            k = lasso_fit(X, y, lam)
        except ConvergenceError as exc:
            return {"lambda": lam, "error": str(exc), "replay": np.inf}, None
        model = KernelModel(float(omega), basis, np.asarray(k), observable)
        rms = float(np.sqrt(np.mean((y - X @ np.asarray(k)) ** 2)))
        return ({"lambda": lam, "replay": replay_error(model, C), "rms_residual": rms,
                 "kkt": k.info["kkt"], "sweeps": k.info["sweeps"],
                 "nonzero": int(np.count_nonzero(k))}, model)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, lambda_grid))
    else:
        results = [one(lam) for lam in lambda_grid]
    scores = [r[0] for r in results]
    best = min(range(len(results)), key=lambda i: (scores[i]["replay"], i))
    if results[best][1] is None or not np.isfinite(scores[best]["replay"]):
        raise NumericalError(f"no penalty produced a stable kernel: {scores}")
    model = results[best][1]
    model.metadata.update({
        "method": "data-driven",
        "fit": {"scores": scores, "lambda": scores[best]["lambda"],
                "replay_error": scores[best]["replay"], "kkt": scores[best]["kkt"],
                "derivative": "4th-order finite differences",
                "c0": float(C.values[0]), "dt": C.dt, "t_end": C.t_end},
    })
    return model
