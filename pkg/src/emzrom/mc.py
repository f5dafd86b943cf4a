"""Monte-Carlo simulation of the chain models and ensemble statistics.

Paths are processed in fixed blocks of :data:`BLOCK` paths.  Each block owns
a counter-based (Philox) generator keyed on ``(seed, stream, block index)``,
so results are bit-identical for a given seed whatever the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import os
import re
import zlib

import numpy as np

from .chain import FPU, HEAT, ChainSpec
from .errors import BlowUpError, ContractError
from .series import SampledFunction

BLOCK = 256
CHUNK = 4096  # paths integrated together (a multiple of BLOCK)
INIT_MODES = ("gibbs", "beta0", "point")


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble size, time grid, seed and initial-condition mode.

    ``init`` is ``"gibbs"`` (equilibrium at the model temperature),
    ``"beta0"`` (Gibbs at inverse temperature ``beta0``) or ``"point"``
    (all paths start at the origin).  ``burn_in`` is integrated before
    ``t = 0`` and not recorded.
    """

    paths: int = 1000
    dt: float = 0.01
    t_end: float = 10.0
    seed: int = 0
    init: str = "gibbs"
    beta0: float | None = None
    save_stride: int = 1
    burn_in: float = 0.0

    def __post_init__(self):
        if int(self.paths) < 1:
            raise ContractError("paths must be >= 1")
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ContractError("t_end must be >= dt")
        if self.init not in INIT_MODES:
            raise ContractError(f"init must be one of {INIT_MODES}")
        if self.init == "beta0" and not (self.beta0 is not None and self.beta0 > 0):
            raise ContractError("init='beta0' needs beta0 > 0")
        if int(self.save_stride) < 1:
            raise ContractError("save_stride must be >= 1")
        if self.burn_in < 0:
            raise ContractError("burn_in must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ContractError("seed must fit in 64 bits")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


def iter_blocks(paths, size=BLOCK):
    for start in range(0, int(paths), size):
        yield start, min(start + size, int(paths))


def block_rng(seed, start, stream="mc"):
    """Independent generator for the block beginning at path ``start``."""
    key = (zlib.crc32(stream.encode()), int(start) // BLOCK)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


# ---------------------------------------------------------------------------
# Trajectory store
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryStore:
    """Observable trajectories, one ``(paths, n_times)`` array per name."""

    dt: float
    data: dict
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.data:
            raise ContractError("trajectory store needs at least one observable")
        shapes = {np.shape(v) for v in self.data.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ContractError("all observables must share one (paths, times) shape")

    @property
    def paths(self):
        return next(iter(self.data.values())).shape[0]

    @property
    def n_times(self):
        return next(iter(self.data.values())).shape[1]

    @property
    def times(self):
        return self.dt * np.arange(self.n_times)

    def observable(self, name):
        try:
            return self.data[name]
        except KeyError:
            raise ContractError(
                f"observable {name!r} not in store (have {sorted(self.data)})") from None

    def save(self, directory, fmt="npz"):
        """Write ``manifest.json`` plus one file per observable."""
        os.makedirs(directory, exist_ok=True)
        files = {}
        for name, arr in self.data.items():
            stem = _safe(name)
            if fmt == "npz":
                fn = stem + ".npy"
                np.save(os.path.join(directory, fn), arr)
            elif fmt == "csv":
                fn = stem + ".csv"
                cols = ["t"] + [f"path{i}" for i in range(arr.shape[0])]
                body = np.column_stack([self.times, arr.T])
                np.savetxt(os.path.join(directory, fn), body, delimiter=",", fmt="%.17g",
                           header=",".join(cols), comments="")
            else:
                raise ContractError(f"unknown store format {fmt!r}")
            files[name] = fn
        man = dict(self.manifest, dt=self.dt, files=files, format=fmt)
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(man, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        mpath = os.path.join(directory, "manifest.json")
        if not os.path.exists(mpath):
            raise ContractError(f"no manifest.json in {directory}")
        with open(mpath) as fh:
            man = json.load(fh)
        data = {}
        for name, fn in man["files"].items():
            full = os.path.join(directory, fn)
            if man["format"] == "npz":
                data[name] = np.load(full)
            else:
                data[name] = np.atleast_2d(np.loadtxt(full, delimiter=",", skiprows=1))[:, 1:].T
        dt = man.pop("dt")
        man.pop("files")
        man.pop("format")
        return cls(dt, data, man)


def _safe(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

_OBS = re.compile(r"\s*(r|p|q|rL|rR)\s*(?::\s*(-?\d+))?\s*(?:\^\s*(\d+))?\s*")


def parse_observable(text, spec):
    """``"p:50"``, ``"r:3^2"``, ``"q:0"`` (heat chain), ``"rL"``, ``"rR"``."""
    m = _OBS.fullmatch(text)
    if not m:
        raise ContractError(f"cannot parse observable {text!r}")
    var, site, power = m.group(1), m.group(2), int(m.group(3) or 1)
    allowed = ("r", "p") if spec.kind == FPU else ("q", "p", "rL", "rR")
    if var not in allowed:
        raise ContractError(f"observable {var!r} not available for {spec.kind}")
    if var in ("rL", "rR"):
        if site is not None:
            raise ContractError(f"{var} takes no site index")
        return var, None, power
    if site is None:
        raise ContractError(f"observable {text!r} needs a site index")
    return var, int(site) % spec.n, power


def _observe(state, spec, parsed):
    var, site, power = parsed
    if spec.kind == FPU:
        r, p = state
        x = (r if var == "r" else p)[:, site]
    else:
        q, p, rl, rr = state
        x = {"q": q, "p": p}.get(var)
        x = x[:, site] if x is not None else (rl if var == "rL" else rr)
    return x ** power if power != 1 else x.copy()


# ---------------------------------------------------------------------------
# Initial conditions and integrators
# ---------------------------------------------------------------------------

def sample_bond(spec, rng, size, beta=None):
    """Exact draws from ``exp(-beta V(r))`` by Gaussian-proposal rejection."""
    beta = spec.beta if beta is None else beta
    nu, th = spec.nu, spec.theta
    if nu > 0:
        sd, shift = 1.0 / np.sqrt(beta * nu), 0.0
    else:
        # pure quartic: proposal N(0, s^2) with s^2 = 1/sqrt(beta theta)
        s2 = 1.0 / np.sqrt(beta * th)
        sd, shift = np.sqrt(s2), 0.25
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        x = sd * rng.standard_normal(2 * need + 16)
        if nu > 0:
            logacc = -0.25 * beta * th * x ** 4
        else:
            logacc = -0.25 * beta * th * x ** 4 + x ** 2 / (2 * sd * sd) - shift
        keep = x[np.log(rng.random(x.size)) < logacc][:need]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


def sample_gibbs_initial(spec, rng, size=None, beta=None):
    """Equilibrium state ``(r, p)``; arrays of shape ``(size, n)`` (or ``(n,)``)."""
    if spec.kind != FPU:
        raise ContractError("exact Gibbs sampling is implemented for the FPU chain only")
    beta = spec.beta if beta is None else beta
    b = 1 if size is None else int(size)
    r = sample_bond(spec, rng, b * spec.n, beta).reshape(b, spec.n)
    p = np.sqrt(spec.m / beta) * rng.standard_normal((b, spec.n))
    return (r[0], p[0]) if size is None else (r, p)


class _FpuStepper:
    """In-place BAOAB for a stack of FPU paths.

    ``rngs`` pairs each generator with the row slice whose noise it supplies.
    """

    def __init__(self, spec, dt, shape):
        self.spec, self.dt = spec, dt
        g = np.asarray(spec.gamma)
        self.active = np.flatnonzero(g > 0)
        self.all_active = self.active.size == spec.n
        c = np.exp(-g[self.active] * dt / spec.m)
        self.c = c
        self.s = np.sqrt(spec.m / spec.beta * (1.0 - c * c))
        self.xi = np.empty((shape[0], self.active.size))
        self.f = np.empty(shape)
        self.w = np.empty(shape)

    def _kick(self, r, p, h):
        spec, f, w = self.spec, self.f, self.w
        np.multiply(r, r, out=w)
        w *= spec.theta
        w += spec.nu
        w *= r  # V'(r)
        f[:, :-1] = w[:, 1:]
        f[:, -1] = w[:, 0]
        f -= w
        f *= h
        p += f

    def _drift(self, r, p, h):
        w = self.w
        w[:, 1:] = p[:, 1:]
        w[:, 1:] -= p[:, :-1]
        w[:, 0] = p[:, 0] - p[:, -1]
        w *= h / self.spec.m
        r += w

    def __call__(self, r, p, rngs):
        h = 0.5 * self.dt
        self._kick(r, p, h)
        self._drift(r, p, h)
        if self.active.size:
            for rng, rows in rngs:
                rng.standard_normal(out=self.xi[rows])
            if self.all_active:
                p *= self.c
                p += self.s * self.xi
            else:
                a = self.active
                p[:, a] = self.c * p[:, a] + self.s * self.xi
        self._drift(r, p, h)
        self._kick(r, p, h)


def step_fpu(state, spec, dt, rng, step=None):
    """One BAOAB step of the Langevin FPU chain for state ``(r, p)``."""
    r, p = (np.array(x, dtype=float) for x in state)
    squeeze = r.ndim == 1
    if squeeze:
        r, p = r[None], p[None]
    with np.errstate(over="ignore", invalid="ignore"):
        _FpuStepper(spec, dt, r.shape)(r, p, [(rng, slice(None))])
    _check_finite((r, p), step)
    return (r[0], p[0]) if squeeze else (r, p)


def _heat_drift(q, p, rl, rr, spec):
    v1 = spec.pin_nu * q + spec.pin_theta * q ** 3
    d = np.diff(q, axis=-1)
    v2 = spec.nu * d + spec.theta * d ** 3  # V2'(q_{i+1} - q_i), bonds i = 0..n-2
    fp = -v1
    fp[..., :-1] += v2
    fp[..., 1:] -= v2
    fp[..., 0] += rl
    fp[..., -1] += rr
    drl = -spec.gamma_left * (rl - spec.lambda_left ** 2 * q[..., 0])
    drr = -spec.gamma_right * (rr - spec.lambda_right ** 2 * q[..., -1])
    return p, fp, drl, drr


def step_heat_chain(state, spec, dt, rng, step=None):
    """One Euler-Maruyama step of the heat-conduction chain.

    ``state = (q, p, r_L, r_R)`` with ``q, p`` holding sites ``0..n-1``.
    The bath noise enters the auxiliary variables with amplitude
    ``lambda sqrt(2 gamma T)``.
    """
    q, p, rl, rr = (np.asarray(x, dtype=float) for x in state)
    with np.errstate(over="ignore", invalid="ignore"):
        dq, dp, drl, drr = _heat_drift(q, p, rl, rr, spec)
    sq = np.sqrt(dt)
    xl = rng.standard_normal(np.shape(rl))
    xr = rng.standard_normal(np.shape(rr))
    new = (q + dt * dq, p + dt * dp,
           rl + dt * drl + spec.lambda_left * np.sqrt(2 * spec.gamma_left * spec.t_left) * sq * xl,
           rr + dt * drr + spec.lambda_right * np.sqrt(2 * spec.gamma_right * spec.t_right) * sq * xr)
    _check_finite(new, step)
    return new


def _heat_step_blocks(state, spec, dt, rngs, step, first):
    q, p, rl, rr = state
    dq, dp, drl, drr = _heat_drift(q, p, rl, rr, spec)
    xi = np.empty((len(rl), 2))
    for rng, rows in rngs:
        rng.standard_normal(out=xi[rows])
    sq = np.sqrt(dt)
    new = (q + dt * dq, p + dt * dp,
           rl + dt * drl + spec.lambda_left * np.sqrt(2 * spec.gamma_left * spec.t_left) * sq * xi[:, 0],
           rr + dt * drr + spec.lambda_right * np.sqrt(2 * spec.gamma_right * spec.t_right) * sq * xi[:, 1])
    if step % 64 == 0:
        _check_finite(new, step, first)
    return new


def _check_finite(arrays, step, start=0):
    for a in arrays:
        a = np.asarray(a)
        if not np.all(np.isfinite(a)):
            bad = np.argwhere(~np.isfinite(a.reshape(a.shape[0], -1) if a.ndim > 1 else
                                           a.reshape(-1, 1)))
            path = start + int(bad[0][0]) if a.ndim >= 1 and bad.size else None
            raise BlowUpError(f"non-finite state at step {step} (path {path})",
                              path=path, step=step)


def _initial_block(spec, ens, rng, b):
    if spec.kind == FPU:
        if ens.init == "gibbs":
            return sample_gibbs_initial(spec, rng, b)
        if ens.init == "beta0":
            return sample_gibbs_initial(spec, rng, b, beta=ens.beta0)
        return np.zeros((b, spec.n)), np.zeros((b, spec.n))
    if ens.init != "point":
        raise ContractError("the heat-conduction chain supports init='point' with burn-in only")
    z = np.zeros((b, spec.n))
    return z, z.copy(), np.zeros(b), np.zeros(b)


def simulate_ensemble(spec, ens, observables, threads=1):
    """Simulate ``ens.paths`` independent paths and record ``observables``.

    Returns a :class:`TrajectoryStore` sampled every ``ens.save_stride`` steps
    (including ``t = 0``).
    """
    if isinstance(observables, str):
        observables = [observables]
    if not observables:
        raise ContractError("no observables requested")
    parsed = {name: parse_observable(name, spec) for name in observables}
    n_steps = ens.n_steps
    stride = int(ens.save_stride)
    n_save = n_steps // stride + 1
    n_burn = int(round(ens.burn_in / ens.dt))

    def run_chunk(blocks):
        # overflow surfaces as BlowUpError, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            return _run_chunk(blocks)

    def _run_chunk(blocks):
        # arithmetic is vectorized over the chunk; each block keeps its own stream
        rows, rngs, states = [], [], []
        off = 0
        for start, stop in blocks:
            rng = block_rng(ens.seed, start)
            rngs.append((rng, slice(off, off + stop - start)))
            states.append(_initial_block(spec, ens, rng, stop - start))
            off += stop - start
        state = tuple(np.concatenate(parts) for parts in zip(*states))
        first = blocks[0][0]
        if spec.kind == FPU:
            stepper = _FpuStepper(spec, ens.dt, state[0].shape)

            def advance(s, k):
                stepper(s[0], s[1], rngs)
                if k % 64 == 0 or k == n_steps:
                    _check_finite(s, k, first)
                return s
        else:
            def advance(s, k):
                return _heat_step_blocks(s, spec, ens.dt, rngs, k, first)
        for k in range(n_burn):
            state = advance(state, k - n_burn)
        _check_finite(state, 0, first)
        out = {name: np.empty((off, n_save)) for name in observables}
        for name, ps in parsed.items():
            out[name][:, 0] = _observe(state, spec, ps)
        for k in range(1, n_steps + 1):
            state = advance(state, k)
            if k % stride == 0:
                for name, ps in parsed.items():
                    out[name][:, k // stride] = _observe(state, spec, ps)
        _check_finite(state, n_steps, first)
        return out

    blocks = list(iter_blocks(ens.paths))
    per_chunk = max(1, CHUNK // BLOCK)
    chunks = [blocks[i:i + per_chunk] for i in range(0, len(blocks), per_chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    data = {name: np.concatenate([pt[name] for pt in parts], axis=0) for name in observables}
    manifest = {"kind": "mc", "model": _spec_dict(spec), "seed": int(ens.seed),
                "paths": int(ens.paths), "dt": ens.dt, "t_end": ens.t_end,
                "save_stride": stride, "init": ens.init, "beta0": ens.beta0,
                "burn_in": ens.burn_in}
    return TrajectoryStore(ens.dt * stride, data, manifest)


def _spec_dict(spec):
    d = dict(spec.__dict__)
    g = d.pop("gamma")
    d["gamma_nonzero"] = {str(i): v for i, v in enumerate(g) if v != 0}
    return d


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def _per_path_acf(x, max_lag, time_average):
    """Per-path correlation estimates ``(paths, max_lag + 1)``."""
    if not time_average:
        return x[:, :max_lag + 1] * x[:, :1]
    n = x.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(x, nfft, axis=1)
    raw = np.fft.irfft(fx * np.conj(fx), nfft, axis=1)[:, :max_lag + 1]
    return raw / (n - np.arange(max_lag + 1))


def autocorrelation(store, observable, max_lag=None, time_average=False):
    """Stationary correlation ``C(t) = <u(t) u(0)>`` from an ensemble.

    Parameters
    ----------
    store : TrajectoryStore
    observable : str or list of str
        Several names are averaged (e.g. translation-equivalent sites).
    max_lag : int, optional
        Largest lag in saved samples; defaults to the full record (or half of
        it with time averaging).
    time_average : bool
        Also average over time origins (variance reduction).

    Returns
    -------
    SampledFunction
        With ``err`` set to the standard error across paths.
    """
    names = [observable] if isinstance(observable, str) else list(observable)
    if store.paths < 1 or store.n_times < 1:
        raise ContractError("empty store")
    n = store.n_times
    if max_lag is None:
        max_lag = n - 1 if not time_average else (n - 1) // 2
    if not 0 <= max_lag < n:
        raise ContractError(f"max_lag must be in [0, {n - 1}]")
    per = sum(_per_path_acf(np.asarray(store.observable(nm), dtype=float), max_lag,
                            time_average) for nm in names) / len(names)
    mean = per.mean(axis=0)
    err = per.std(axis=0, ddof=1) / np.sqrt(store.paths) if store.paths > 1 else \
        np.zeros_like(mean)
    if max_lag == 0:
        mean, err = np.repeat(mean, 2), np.repeat(err, 2)
    return SampledFunction(0.0, store.dt, mean, err,
                           {"estimator": "cross-path", "time_average": bool(time_average),
                            "observables": names, "paths": store.paths})


def nonequilibrium_mean(store, observable, equilibrium=None):
    """Ensemble mean ``M(t)`` with an exponential fit of ``|M(t) - M_eq|``.

    ``equilibrium`` defaults to the mean over the last fifth of the record.
    """
    x = np.asarray(store.observable(observable), dtype=float)
    mean = x.mean(axis=0)
    err = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0]) if x.shape[0] > 1 else np.zeros_like(mean)
    m_eq = float(mean[-max(1, len(mean) // 5):].mean()) if equilibrium is None else \
        float(equilibrium)
    meta = {"observable": observable, "paths": x.shape[0], "equilibrium": m_eq}
    dev = SampledFunction(0.0, store.dt, np.abs(mean - m_eq), err)
    if dev.values[0] > 0:
        fit = fit_exponential_bound(dev)
        meta["decay"] = fit.to_dict()
    return SampledFunction(0.0, store.dt, mean, err, meta)


@dataclass
class Density:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float

    def cdf(self, grid=None):
        dx = self.x[1] - self.x[0]
        c = np.concatenate([[0.0], np.cumsum(0.5 * (self.density[1:] + self.density[:-1]) * dx)])
        return c if grid is None else np.interp(grid, self.x, c, left=0.0, right=c[-1])

    def to_csv(self, path, header_comment=None):
        with open(path, "w") as fh:
            if header_comment:
                for line in str(header_comment).splitlines():
                    fh.write(f"# {line}\n")
            fh.write("x,density\n")
            for a, b in zip(self.x, self.density):
                fh.write(f"{a:.17g},{b:.17g}\n")


def kde_marginal(samples, n_grid=512, chunk=4096):
    """Gaussian KDE with Silverman bandwidth on a grid spanning ``mean +- 5 sd``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise ContractError("KDE needs at least 100 samples")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ContractError("degenerate sample: zero variance")
    bw = 1.06 * sd * x.size ** (-0.2)
    mu = x.mean()
    grid = np.linspace(mu - 5 * sd, mu + 5 * sd, n_grid)
    dens = np.zeros(n_grid)
    for i in range(0, x.size, chunk):
        z = (grid[:, None] - x[None, i:i + chunk]) / bw
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * bw * np.sqrt(2 * np.pi)
    return Density(grid, dens, bw)


def kde_ks_distance(a, b, n_grid=2048):
    """Kolmogorov-Smirnov distance between the CDFs of two KDEs."""
    lo, hi = min(a.x[0], b.x[0]), max(a.x[-1], b.x[-1])
    g = np.linspace(lo, hi, n_grid)
    ca, cb = a.cdf(g), b.cdf(g)
    return float(np.max(np.abs(ca / ca[-1] - cb / cb[-1])))


@dataclass
class ExponentialFit:
    c: float
    alpha: float
    decays: bool
    verdict: str
    t_window: float
    n_points: int

    def to_dict(self):
        return dict(self.__dict__)


def fit_exponential_bound(C, noise_floor=None, floor_factor=10.0):
    """Fit ``c exp(-alpha t)`` to the upper envelope of ``|C(t)|``.

    The envelope is the running maximum of ``|C/C(0)|`` taken from the end
    of the record backwards.  The fit uses points where ``|C|`` touches the
    envelope (its peaks, when it oscillates) above the noise floor, which
    defaults to ``floor_factor`` times the mean standard error over the last
    fifth of the record (or the spread of the signal there if no error is
    attached).
    """
    v = np.asarray(C.values, dtype=float)
    if v.ndim != 1 or v.size < 3:
        raise ContractError("need a scalar function with at least 3 samples")
    c0 = v[0]
    if c0 == 0:
        raise ContractError("C(0) must be nonzero")
    y = np.abs(v / c0)
    t = C.t - C.t0
    env = np.maximum.accumulate(y[::-1])[::-1]
    if noise_floor is None:
        tail = slice(-max(2, v.size // 5), None)
        if C.err is not None:
            noise_floor = floor_factor * float(np.mean(C.err[tail])) / abs(c0)
        else:
            noise_floor = floor_factor * float(np.std(y[tail]))
    noise_floor = max(noise_floor, 1e-300)
    touch = (y >= env) & (env > noise_floor)
    peaks = touch.copy()
    peaks[1:-1] &= (y[1:-1] >= y[:-2]) & (y[1:-1] >= y[2:])
    peaks[0] = touch[0]
    sel = peaks if peaks.sum() >= 3 else touch
    idx = np.flatnonzero(sel)
    t_window = float(t[idx[-1]]) if idx.size else 0.0
    if idx.size < 2 or np.ptp(t[idx]) == 0:
        return ExponentialFit(float("nan"), 0.0, False, "no exponential decay observed",
                              t_window, int(idx.size))
    slope, icpt = np.polyfit(t[idx], np.log(y[idx]), 1)
    alpha = float(-slope)
    # a slope this flat over the fit window is indistinguishable from a constant
    decays = alpha * np.ptp(t[idx]) > 1e-6 and idx.size >= 3
    verdict = "exponential decay" if decays else "no exponential decay observed"
    return ExponentialFit(float(abs(c0) * np.exp(icpt)), alpha, bool(decays), verdict, t_window,
                          int(idx.size))
