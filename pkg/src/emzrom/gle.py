"""Projected GLE solver, Karhunen-Loeve fluctuation model and the reduced-order model.

The Volterra equation

    du/dt = Omega u + int_0^t K(t - s) u(s) ds + f(t)

is advanced with the three-step Adams-Bashforth formula.  The memory
integral uses composite trapezoid weights with Gregory end corrections
(fourth order) once enough history exists, and Newton-Cotes rules on the
first few steps, so the overall scheme keeps its third-order accuracy.
The first two steps are bootstrapped by the explicit midpoint rule on
``substeps`` refined sub-intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import linalg

from .basis import KernelModel
from .errors import ContractError, NotPSDError, NumericalError
from .series import SampledFunction

BLOWUP_FACTOR = 1e6

_GREGORY = np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0])
_SHORT_RULES = {
    1: np.array([0.5, 0.5]),
    2: np.array([1.0, 4.0, 1.0]) / 3.0,
    3: np.array([3.0, 9.0, 9.0, 3.0]) / 8.0,
    4: np.array([14.0, 64.0, 24.0, 64.0, 14.0]) / 45.0,
}


def memory_weights(k):
    """Quadrature weights (in units of the step) for ``int_0^{t_k}`` on ``k + 1`` nodes."""
    if k == 0:
        return np.zeros(1)
    if k in _SHORT_RULES:
        return _SHORT_RULES[k].copy()
    w = np.ones(k + 1)
    w[:3] = _GREGORY
    w[-3:] = _GREGORY[::-1]
    return w


def _grid_from(grid):
    """Accept ``(t_end, dt)`` or an explicit uniform time array starting at 0."""
    if isinstance(grid, tuple) and len(grid) == 2:
        t_end, dt = map(float, grid)
        if not (dt > 0 and t_end >= dt):
            raise ContractError("need dt > 0 and t_end >= dt")
        n = int(round(t_end / dt))
        if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
            raise ContractError("t_end must be an integer multiple of dt")
        return dt, n
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
        raise ContractError("time grid must be a 1-D array starting at 0")
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
        raise ContractError("time grid must be uniform")
    return float(dt), t.size - 1


class _Memory:
    """Kernel values on a lag grid and the matching convolution."""

    def __init__(self, kvals, matrix):
        self.k = kvals
        self.matrix = matrix

    def conv(self, w, hist, lag_index):
        """``sum_i w_i K[lag_index[i]] hist[i]``."""
        kk = self.k[lag_index]
        if self.matrix:
            return np.einsum("i,iab,ib...->a...", w, kk, hist)
        return np.tensordot(w * kk, hist, axes=(0, 0))

    def apply(self, a, y):
        return a @ y if self.matrix else a * y


def _volterra(kernel_fn, omega, y0, h, nsteps, forcing=None, noise=None, substeps=8,
              matrix=False):
    """Core AB3 integrator.

    ``y0`` has shape ``S`` (``()``, ``(P,)`` or ``(M, M)``); ``forcing`` has
    shape ``(nsteps + 1,) + S``; ``noise`` holds additive increments of shape
    ``(nsteps,) + S`` applied after each step.  Returns ``(nsteps + 1,) + S``.
    """
    y0 = np.asarray(y0, dtype=float)
    omega = np.asarray(omega, dtype=float)
    mem = _Memory(np.asarray(kernel_fn(h * np.arange(nsteps + 1)), dtype=float), matrix)
    scale = float(np.max(np.abs(y0))) if y0.size else 0.0
    if forcing is not None:
        scale = max(scale, float(np.max(np.abs(forcing))))
    if noise is not None:
        scale = max(scale, float(np.max(np.abs(noise))) if noise.size else 0.0)
    limit = BLOWUP_FACTOR * (scale if scale > 0 else 1.0)

    Y = np.empty((nsteps + 1,) + y0.shape)
    Y[0] = y0
    boot = min(2, nsteps)
    if boot:
        Y[1:boot + 1] = _bootstrap(kernel_fn, omega, y0, h, boot, forcing, substeps, matrix)
        if noise is not None:
            # additive increments are accumulated exactly over the bootstrap
            Y[1] += noise[0]
            if boot == 2:
                Y[2] += noise[0] + noise[1]

    def drift(k):
        w = memory_weights(k)
        c = h * mem.conv(w, Y[:k + 1], np.arange(k, -1, -1)) if k else 0.0
        d = mem.apply(omega, Y[k]) + c
        if forcing is not None:
            d = d + forcing[k]
        return d

    F = [drift(k) for k in range(boot + 1)]
    for k in range(2, nsteps):
        nxt = Y[k] + (h / 12.0) * (23.0 * F[-1] - 16.0 * F[-2] + 5.0 * F[-3])
        if noise is not None:
            nxt = nxt + noise[k]
        if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > limit:
            raise NumericalError(
                f"GLE integration unstable at step {k + 1} (t = {(k + 1) * h:.6g}): "
                f"|u| exceeded {BLOWUP_FACTOR:g} x initial scale")
        Y[k + 1] = nxt
        F = [F[-2], F[-1], drift(k + 1)]
    return Y


def _bootstrap(kernel_fn, omega, y0, h, nsteps, forcing, substeps, matrix):
    """Explicit midpoint on ``substeps`` sub-intervals per step for the first steps."""
    m = int(substeps)
    if m < 1:
        raise ContractError("substeps must be >= 1")
    d = h / m
    nf = nsteps * m
    # kernel on the half-substep lattice: kh[q] = K(q d / 2)
    mem = _Memory(np.asarray(kernel_fn(0.5 * d * np.arange(2 * nf + 2)), dtype=float), matrix)

    def force_at(s):
        if forcing is None:
            return 0.0
        x = s / h
        i = min(int(np.floor(x)), len(forcing) - 2)
        frac = x - i
        return (1.0 - frac) * forcing[i] + frac * forcing[i + 1]

    Yf = np.empty((nf + 1,) + np.shape(y0))
    Yf[0] = y0
    for j in range(nf):
        idx = np.arange(j, -1, -1)
        if j:
            w = np.ones(j + 1)
            w[0] = w[-1] = 0.5
            c_full = d * mem.conv(w, Yf[:j + 1], 2 * idx)
            c_half_hist = d * mem.conv(w, Yf[:j + 1], 2 * idx + 1)
        else:
            c_full = 0.0
            c_half_hist = 0.0
        f0 = mem.apply(omega, Yf[j]) + c_full + force_at(j * d)
        yh = Yf[j] + 0.5 * d * f0
        # history to s_j plus the trapezoid panel [s_j, s_j + d/2]
        tail = 0.25 * d * (mem.apply(mem.k[1], Yf[j]) + mem.apply(mem.k[0], yh))
        fh = mem.apply(omega, yh) + c_half_hist + tail + force_at((j + 0.5) * d)
        Yf[j + 1] = Yf[j] + d * fh
    return Yf[m::m]


def _kernel_parts(kernel, omega):
    if isinstance(kernel, KernelModel):
        return kernel, (kernel.omega if omega is None else omega)
    if callable(kernel):
        if omega is None:
            raise ContractError("omega is required when the kernel is a plain callable")
        return kernel, omega
    raise ContractError("kernel must be a KernelModel or a callable")


def solve_projected_gle(kernel, C0, grid, omega=None, substeps=8):
    """Solve ``dC/dt = Omega C + int_0^t K(t-s) C(s) ds`` with ``C(0) = C0``.

    Parameters
    ----------
    kernel : KernelModel or callable
        Memory kernel.  A callable must map a time array to kernel values
        (shape ``(n,)`` or ``(n, M, M)`` for the matrix form).
    C0 : float or (M, M) array
    grid : (t_end, dt) tuple or uniform time array starting at 0
    omega : float or (M, M) array, optional
        Streaming term; defaults to ``kernel.omega`` for a KernelModel.
    substeps : int
        Refinement of the explicit-midpoint start.

    Returns
    -------
    SampledFunction
    """
    fn, om = _kernel_parts(kernel, omega)
    dt, n = _grid_from(grid)
    C0 = np.asarray(C0, dtype=float)
    matrix = C0.ndim == 2
    if matrix and (C0.shape[0] != C0.shape[1] or np.shape(om) != C0.shape):
        raise ContractError("matrix GLE needs square C0 and omega of the same shape")
    if C0.ndim not in (0, 2):
        raise ContractError("C0 must be a scalar or a square matrix")
    Y = _volterra(fn, om, C0, dt, n, substeps=substeps, matrix=matrix)
    return SampledFunction(0.0, dt, Y, meta={"method": "gle-ab3", "substeps": substeps})


# ---------------------------------------------------------------------------
# Karhunen-Loeve
# ---------------------------------------------------------------------------

def trapezoid_weights(n, dt):
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass
class KLModel:
    """Truncated KL expansion of a stationary covariance on ``[0, T]``."""

    dt: float
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # (modes, n_grid)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        self.eigenfunctions = np.asarray(self.eigenfunctions, dtype=float)
        if self.eigenfunctions.ndim != 2 or len(self.eigenfunctions) != len(self.eigenvalues):
            raise ContractError("eigenfunctions must have one row per eigenvalue")
        if np.any(self.eigenvalues < 0):
            raise ContractError("KL eigenvalues must be nonnegative")
        if np.any(np.diff(self.eigenvalues) > 0):
            raise ContractError("KL eigenvalues must be sorted in decreasing order")

    @property
    def modes(self):
        return len(self.eigenvalues)

    @property
    def n_grid(self):
        return self.eigenfunctions.shape[1]

    @property
    def grid(self):
        return self.dt * np.arange(self.n_grid)

    @property
    def horizon(self):
        return self.dt * (self.n_grid - 1)

    def weights(self):
        return trapezoid_weights(self.n_grid, self.dt)

    def orthonormality_error(self):
        e = self.eigenfunctions
        if not len(e):
            return 0.0
        G = (e * self.weights()) @ e.T
        return float(np.max(np.abs(G - np.eye(len(e)))))

    def covariance(self):
        """``sum_k lambda_k e_k(t) e_k(s)`` on the grid."""
        e = self.eigenfunctions
        return (e.T * self.eigenvalues) @ e

    def to_dict(self):
        return {"format": "emzrom.kl/1", "dt": self.dt,
                "eigenvalues": self.eigenvalues.tolist(),
                "eigenfunctions": self.eigenfunctions.tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        try:
            ef = np.array(d["eigenfunctions"], dtype=float)
            lam = np.array(d["eigenvalues"], dtype=float)
            if ef.size == 0:
                ef = ef.reshape(0, int(d.get("meta", {}).get("n_grid", 0)))
            return cls(float(d["dt"]), lam, ef, d.get("meta", {}))
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed KL file: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def kl_decompose(cov, modes, psd_tol=1e-8):
    """Nystrom KL decomposition of the stationary covariance ``cov(|t - s|)``.

    Parameters
    ----------
    cov : SampledFunction
        Covariance at lags ``0, dt, ..., T``.
    modes : int
        Number of leading eigenpairs kept.
    psd_tol : float
        Relative tolerance: an eigenvalue below ``-psd_tol * lambda_1``
        raises :class:`NotPSDError`.
    """
    vals = np.asarray(cov.values, dtype=float)
    if vals.ndim != 1:
        raise ContractError("KL needs a scalar covariance")
    n = vals.size
    if n < 3 or modes > n:
        raise ContractError(f"grid too coarse: {n} points for {modes} modes")
    if modes < 0:
        raise ContractError("modes must be >= 0")
    w = trapezoid_weights(n, cov.dt)
    sw = np.sqrt(w)
    A = linalg.toeplitz(vals) * np.outer(sw, sw)
    lam_all, v_all = linalg.eigh(A)
    top = lam_all[-1]
    low = lam_all[0]
    if top <= 0 and modes:
        raise NotPSDError("covariance not PSD: largest eigenvalue is not positive")
    if low < -psd_tol * abs(top):
        raise NotPSDError(
            f"covariance not PSD: eigenvalue {low:.3e} below -{psd_tol:g} x lambda_1 "
            f"({top:.3e}); kernel unsuitable for a Gaussian KL model")
    lam = np.clip(lam_all[::-1][:modes], 0.0, None)
    v = v_all[:, ::-1][:, :modes]
    ef = (v / sw[:, None]).T
    # fix the sign so each mode starts nonnegative, for reproducible output
    for k in range(modes):
        pivot = ef[k, np.argmax(np.abs(ef[k]) > 1e-12 * np.max(np.abs(ef[k])))]
        if pivot < 0:
            ef[k] = -ef[k]
    discarded = lam_all[::-1][modes:]
    meta = dict(cov.meta)
    meta.update({"n_grid": n, "min_eigenvalue": float(low),
                 "discarded_sum": float(np.clip(discarded, 0, None).sum())})
    return KLModel(cov.dt, lam, ef.reshape(modes, n), meta)


def sample_fluctuation(kl, rng, size=None):
    """Draw ``f(t) = sum_k eta_k sqrt(lambda_k) e_k(t)`` with ``eta_k ~ N(0, 1)``.

    Returns a SampledFunction for a single draw, or an ``(size, n_grid)``
    array when ``size`` is given.
    """
    n_draw = 1 if size is None else int(size)
    eta = rng.standard_normal((n_draw, kl.modes))
    f = (eta * np.sqrt(kl.eigenvalues)) @ kl.eigenfunctions if kl.modes else \
        np.zeros((n_draw, kl.n_grid))
    if size is None:
        return SampledFunction(0.0, kl.dt, f[0], meta={"kind": "kl-sample"})
    return f


# ---------------------------------------------------------------------------
# Reduced-order model
# ---------------------------------------------------------------------------

def fluctuation_covariance(kernel, c0, t):
    """Second-FDT covariance ``<f(t) f(0)> = -C(0) K(t)`` of the orthogonal force."""
    t = np.asarray(t, dtype=float)
    return SampledFunction.from_times(t, -float(c0) * np.asarray(kernel(t)),
                                      meta={"kind": "fdt-covariance", "c0": float(c0)})


def gaussian_sampler(variance):
    """``u0`` sampler drawing from ``N(0, variance)``."""
    sd = float(np.sqrt(variance))

    def draw(rng, size):
        return sd * rng.standard_normal(size)

    draw.variance = float(variance)
    return draw


def run_rom(kernel, kl, u0_sampler, ens, white_noise=0.0, threads=1, substeps=8,
            observable="u"):
    """Integrate the reduced-order model for ``ens.paths`` independent paths.

    Each path draws ``u(0)`` from ``u0_sampler(rng, size)`` and a fluctuation
    force from ``kl``.  ``white_noise`` adds a Markovian force with intensity
    ``white_noise`` (increments ``N(0, white_noise * dt)``), useful when the
    streaming term itself is dissipative.

    Returns
    -------
    TrajectoryStore
        One observable named ``observable`` sampled at every step.
    """
    from .mc import TrajectoryStore, block_rng, iter_blocks

    if not isinstance(kernel, KernelModel):
        raise ContractError("run_rom needs a KernelModel")
    if white_noise < 0:
        raise ContractError("white_noise must be >= 0")
    stride = int(round(ens.dt / kl.dt))
    if stride < 1 or abs(stride * kl.dt - ens.dt) > 1e-9 * ens.dt:
        raise ContractError("ensemble dt must be an integer multiple of the KL grid step")
    nsteps = int(round(ens.t_end / ens.dt))
    if nsteps * ens.dt > kl.horizon * (1 + 1e-9):
        raise ContractError(
            f"ROM horizon {nsteps * ens.dt} exceeds the KL horizon {kl.horizon}")
    h = ens.dt

    def one_block(block):
        start, stop = block
        rng = block_rng(ens.seed, start, stream="rom")
        b = stop - start
        u0 = np.asarray(u0_sampler(rng, b), dtype=float).reshape(b)
        f = sample_fluctuation(kl, rng, size=b)[:, ::stride][:, :nsteps + 1]
        noise = None
        if white_noise > 0:
            noise = np.sqrt(white_noise * h) * rng.standard_normal((nsteps, b))
        return _volterra(kernel, kernel.omega, u0, h, nsteps, forcing=f.T, noise=noise,
                         substeps=substeps).T

    blocks = list(iter_blocks(ens.paths))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one_block, blocks))
    else:
        parts = [one_block(b) for b in blocks]
    data = np.concatenate(parts, axis=0)
    return TrajectoryStore(dt=h, data={observable: data},
                           manifest={"kind": "rom", "seed": int(ens.seed), "paths": ens.paths,
                                     "dt": h, "t_end": nsteps * h,
                                     "omega": float(kernel.omega),
                                     "white_noise": float(white_noise),
                                     "kl_modes": kl.modes, "kernel": kernel.to_dict()})
