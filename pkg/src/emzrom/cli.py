"""Command-line experiment runner.

Every command reads the typed configuration (``--config`` plus ``--set``
overrides), writes its artifacts into ``--out-dir`` and records a run
manifest ``<command>.manifest.json``.  CSV artifacts start with a
``# manifest <hash>`` comment so each file can be traced to its run.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .basis import BasisSpec, KernelModel
from .chain import FPU, ChainSpec
from .config import config_hash, load_config
from .dd_kernel import default_laguerre_sigma, derivative_4th, fit_kernel_dd
from .errors import ConfigError, ContractError, EmzError, NumericalError
from .fp_kernel import (calibrate_faber_domain, default_faber_domain, gamma_coefficients,
                        kernel_from_mu, mu_from_gamma)
from .gle import (KLModel, fluctuation_covariance, gaussian_sampler, kl_decompose, run_rom,
                  solve_projected_gle)
from .mc import (EnsembleSpec, TrajectoryStore, autocorrelation, fit_exponential_bound,
                 kde_marginal, nonequilibrium_mean, simulate_ensemble)
from .polynomial import SparsePoly, gibbs_inner
from .series import SampledFunction

THREADS_ENV = "EMZROM_THREADS"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def chain_from_config(cfg):
    m = cfg["model"]
    kw = {k: m[k] for k in ("n", "m", "nu", "theta", "beta", "pin_nu", "pin_theta", "t_left",
                            "t_right", "gamma_left", "gamma_right", "lambda_left",
                            "lambda_right")}
    if m["gamma_site"] >= 0:
        g = [0.0] * m["n"]
        g[m["gamma_site"] % m["n"]] = m["gamma"]
        kw["gamma"] = tuple(g)
    else:
        kw["gamma"] = m["gamma"]
    try:
        return ChainSpec(kind=m["kind"], **kw)
    except ContractError as exc:
        raise ConfigError(f"invalid [model]: {exc}") from None


def ensemble_from_config(cfg, paths=None, seed_shift=0):
    e = cfg["ensemble"]
    try:
        return EnsembleSpec(paths=e["paths"] if paths is None else paths, dt=e["dt"],
                            t_end=e["t_end"], seed=e["seed"] + seed_shift, init=e["init"],
                            beta0=e["beta0"], save_stride=e["save_stride"],
                            burn_in=e["burn_in"])
    except ContractError as exc:
        raise ConfigError(f"invalid [ensemble]: {exc}") from None


def _observables(cfg):
    return cfg["ensemble"]["observables"] or [cfg["model"]["observable"]]


def _file_digest(path):
    h = hashlib.sha256()
    if os.path.isdir(path):
        for fn in sorted(os.listdir(path)):
            with open(os.path.join(path, fn), "rb") as fh:
                h.update(fn.encode())
                h.update(fh.read())
    else:
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()[:16]


def _need(path, what):
    if path is None or not os.path.exists(path):
        raise ConfigError(f"missing input: {what} ({path!r} not found)")
    return path


class Run:
    """Bookkeeping for one command: output paths, manifest and hash."""

    def __init__(self, command, cfg, args, inputs):
        self.command = command
        self.cfg = cfg
        self.out = args.out_dir
        os.makedirs(self.out, exist_ok=True)
        self.inputs = {k: {"path": v, "sha256": _file_digest(v)} for k, v in inputs.items()}
        ident = {"command": command, "config": cfg, "inputs": {k: v["sha256"] for k, v in
                                                               self.inputs.items()},
                 "extra": {k: getattr(args, k) for k in ("method", "normalize", "c0")
                           if hasattr(args, k)},
                 "version": __version__}
        self.hash = config_hash(ident)
        self.t0 = time.perf_counter()
        self.artifacts = []
        self.summary = {}

    def path(self, name):
        return os.path.join(self.out, name)

    def header(self):
        return f"manifest {self.hash}\ncommand {self.command}"

    def write_function(self, name, f):
        f.to_csv(self.path(name), header_comment=self.header())
        self.artifacts.append(name)

    def write_table(self, name, columns, rows):
        with open(self.path(name), "w") as fh:
            for line in self.header().splitlines():
                fh.write(f"# {line}\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)
                                  for v in row) + "\n")
        self.artifacts.append(name)

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True, default=_jsonable)
            fh.write("\n")
        self.artifacts.append(name)

    def finish(self):
        manifest = {
            "command": self.command, "hash": self.hash, "config": self.cfg,
            "seed": self.cfg["ensemble"]["seed"], "inputs": self.inputs,
            "artifacts": self.artifacts, "summary": self.summary,
            "versions": {"emzrom": __version__, "python": platform.python_version(),
                         "numpy": np.__version__},
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        with open(self.path(f"{self.command}.manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True, default=_jsonable)
            fh.write("\n")
        return manifest


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _observable_poly(cfg, spec):
    try:
        return SparsePoly.parse(cfg["model"]["observable"], spec.n)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def _equilibrium_c0(cfg, spec):
    if spec.kind != FPU:
        raise ConfigError("pass --c0 for the heat-conduction chain (no closed-form variance)")
    u0 = _observable_poly(cfg, spec)
    return gibbs_inner(u0, u0, spec)


def _omega(cfg, spec, C=None):
    """Streaming term: exact for the FPU chain, finite-difference estimate otherwise."""
    if spec.kind == FPU:
        return float(gamma_coefficients(_observable_poly(cfg, spec), 1, spec)[0]), "streaming"
    if C is None:
        raise ConfigError("omega for the heat-conduction chain needs a correlation input")
    return float(derivative_4th(C.values, C.dt)[0] / C.values[0]), "finite-difference C'(0)/C(0)"


def _time_grid(cfg):
    e = cfg["ensemble"]
    n = int(round(e["t_end"] / e["dt"]))
    return e["dt"] * np.arange(n + 1)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, args):
    spec = chain_from_config(cfg)
    ens = ensemble_from_config(cfg)
    run = Run("simulate", cfg, args, {})
    obs = _observables(cfg)
    store = simulate_ensemble(spec, ens, obs, threads=args.threads)
    store.save(run.path("store"), fmt=cfg["ensemble"]["store_format"])
    run.artifacts.append("store/")
    if ens.paths == 1:
        rows = np.column_stack([store.times] + [store.observable(o)[0] for o in obs])
        run.write_table("trajectory.csv", ["t"] + obs, rows.tolist())
    run.summary = {"paths": ens.paths, "n_times": store.n_times, "observables": obs}
    return run


def cmd_acf(cfg, args):
    store_dir = _need(args.store or os.path.join(args.out_dir, "store"), "trajectory store")
    run = Run("acf", cfg, args, {"store": store_dir})
    store = TrajectoryStore.load(store_dir)
    obs = args.observable or _observables(cfg)
    obs = [o for o in obs if o in store.data] or list(store.data)
    lag = cfg["ensemble"]["max_lag"]
    C = autocorrelation(store, obs, max_lag=None if lag < 0 else lag,
                        time_average=cfg["ensemble"]["time_average"])
    run.write_function(args.name or "acf.csv", C)
    run.summary = {"c0": float(C.values[0]), "max_stderr": float(np.max(C.err)),
                   "observables": obs}
    return run


def cmd_neq_mean(cfg, args):
    store_dir = _need(args.store or os.path.join(args.out_dir, "store"), "trajectory store")
    run = Run("neq-mean", cfg, args, {"store": store_dir})
    store = TrajectoryStore.load(store_dir)
    obs = args.observable[0] if args.observable else _observables(cfg)[0]
    M = nonequilibrium_mean(store, obs)
    run.write_function("neq_mean.csv", M)
    run.summary = {k: M.meta[k] for k in ("equilibrium", "decay") if k in M.meta}
    return run


def cmd_kde(cfg, args):
    store_dir = _need(args.store or os.path.join(args.out_dir, "store"), "trajectory store")
    run = Run("kde", cfg, args, {"store": store_dir})
    store = TrajectoryStore.load(store_dir)
    obs = args.observable[0] if args.observable else (
        _observables(cfg)[0] if _observables(cfg)[0] in store.data else next(iter(store.data)))
    samples = store.observable(obs)
    dens = kde_marginal(samples)
    dens.to_csv(run.path(args.name or "kde.csv"), header_comment=run.header())
    run.artifacts.append(args.name or "kde.csv")
    run.summary = {"observable": obs, "samples": int(samples.size), "bandwidth": dens.bandwidth,
                   "pooled_over_time": True}
    return run


def _load_acf(path):
    return SampledFunction.from_csv(_need(path, "correlation CSV (--acf)"))


def cmd_fit_kernel(cfg, args):
    spec = chain_from_config(cfg)
    bcfg = cfg["basis"]
    order = bcfg["order"]
    inputs = {"acf": args.acf} if args.acf else {}
    run = Run("fit-kernel", cfg, args, inputs)
    if args.method == "first-principle":
        if spec.kind != FPU:
            raise ConfigError("first-principle kernels are available for the FPU chain only")
        u0 = _observable_poly(cfg, spec)
        gam = gamma_coefficients(u0, order + 2, spec, cfg["fit"]["max_degree"])
        mu = mu_from_gamma(gam)
        domain = {}
        if bcfg["kind"] == "taylor":
            basis = BasisSpec.taylor()
        elif bcfg["kind"] == "faber":
            if bcfg["domain"] == "calibrate":
                C = _load_acf(args.acf)
                domain = calibrate_faber_domain(mu, gam[0], C, order)
                a, b = domain["a"], domain["b"]
            else:
                da, db = (None, None)
                if bcfg["a"] is None or bcfg["b"] is None:
                    da, db = default_faber_domain(gam)
                a = bcfg["a"] if bcfg["a"] is not None else da
                b = bcfg["b"] if bcfg["b"] is not None else db
            basis = BasisSpec.faber(a, b)
        else:
            raise ConfigError("first-principle kernels use basis.kind = taylor or faber")
        model = kernel_from_mu(mu, basis, order, omega=gam[0],
                               observable=cfg["model"]["observable"])
        model.metadata.update({"method": "first-principle", "gamma": gam.tolist(),
                               "mu": mu.tolist(), "c0": gibbs_inner(u0, u0, spec),
                               "omega_source": "streaming", "domain": domain or "config/default"})
    else:
        C = _load_acf(args.acf)
        c0 = float(C.values[0])
        Cn = C.normalized()
        omega, source = _omega(cfg, spec, C)
        if bcfg["kind"] == "laguerre":
            sigma = bcfg["sigma"] if bcfg["sigma"] is not None else default_laguerre_sigma(Cn)
            basis = BasisSpec.laguerre(sigma)
        elif bcfg["kind"] == "faber":
            a, b = bcfg["a"], bcfg["b"]
            if a is None or b is None:
                if spec.kind != FPU:
                    raise ConfigError("set basis.a and basis.b for a data-driven Faber fit")
                da, db = default_faber_domain(
                    gamma_coefficients(_observable_poly(cfg, spec), 2, spec))
                a = da if a is None else a
                b = db if b is None else b
            basis = BasisSpec.faber(a, b)
        else:
            basis = BasisSpec.taylor()
        grid = cfg["fit"]["lambda_grid"] or None
        model = fit_kernel_dd(Cn, omega, basis, order, lambda_grid=grid, threads=args.threads,
                              observable=cfg["model"]["observable"])
        model.metadata.update({"c0": c0, "omega_source": source})
        run.write_json("fit_report.json", model.metadata["fit"])
    model.save(run.path("kernel.json"))
    run.artifacts.append("kernel.json")
    t = _time_grid(cfg)
    run.write_function("kernel.csv", SampledFunction.from_times(t, model(t)))
    run.summary = {"method": args.method, "omega": model.omega, "basis": model.basis.to_dict(),
                   "order": model.order}
    return run


def _load_kernel(path):
    try:
        return KernelModel.load(_need(path, "kernel file (--kernel)"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read kernel {path}: {exc}") from None


def cmd_solve_gle(cfg, args):
    kpath = args.kernel or os.path.join(args.out_dir, "kernel.json")
    run = Run("solve-gle", cfg, args, {"kernel": _need(kpath, "kernel file (--kernel)")})
    model = _load_kernel(kpath)
    c0 = 1.0 if args.c0 is None else args.c0
    C = solve_projected_gle(model, c0, _time_grid(cfg))
    run.write_function("gle.csv", C)
    fit = fit_exponential_bound(C)
    bound = model.metadata.get("c0")
    run.summary = {"c0": c0, "decay": fit.to_dict(),
                   "bounded_by_c0": bool(np.max(np.abs(C.values)) <= abs(c0) * (1 + 1e-9)),
                   "kernel_c0": bound}
    return run


def cmd_kl_build(cfg, args):
    kpath = args.kernel or os.path.join(args.out_dir, "kernel.json")
    run = Run("kl-build", cfg, args, {"kernel": _need(kpath, "kernel file (--kernel)")})
    model = _load_kernel(kpath)
    spec = chain_from_config(cfg)
    c0 = args.c0 if args.c0 is not None else _equilibrium_c0(cfg, spec)
    cov = fluctuation_covariance(model, c0, _time_grid(cfg))
    kl = kl_decompose(cov, min(cfg["rom"]["modes"], len(cov)), psd_tol=cfg["rom"]["psd_tol"])
    kl.meta["c0"] = c0
    kl.save(run.path("kl.json"))
    run.artifacts.append("kl.json")
    run.write_table("kl_eigenvalues.csv", ["k", "eigenvalue"],
                    [(i, float(v)) for i, v in enumerate(kl.eigenvalues)])
    lam1 = float(kl.eigenvalues[0]) if kl.modes else 0.0
    run.summary = {"modes": kl.modes, "lambda_1": lam1,
                   "min_eigenvalue": kl.meta["min_eigenvalue"],
                   "min_ratio": kl.meta["min_eigenvalue"] / lam1 if lam1 else None,
                   "orthonormality_error": kl.orthonormality_error(), "c0": c0}
    return run


def cmd_rom_run(cfg, args):
    kpath = args.kernel or os.path.join(args.out_dir, "kernel.json")
    lpath = args.kl or os.path.join(args.out_dir, "kl.json")
    run = Run("rom-run", cfg, args, {"kernel": _need(kpath, "kernel file (--kernel)"),
                                     "kl": _need(lpath, "KL file (--kl)")})
    model = _load_kernel(kpath)
    kl = KLModel.load(lpath)
    c0 = args.c0 if args.c0 is not None else kl.meta.get("c0")
    if c0 is None:
        c0 = _equilibrium_c0(cfg, chain_from_config(cfg))
    wn = cfg["rom"]["white_noise"]
    if wn is None:
        wn = max(0.0, -2.0 * model.omega * c0)
    ens = ensemble_from_config(cfg, paths=cfg["rom"]["paths"], seed_shift=cfg["rom"]["seed_offset"])
    store = run_rom(model, kl, gaussian_sampler(c0), ens, white_noise=wn, threads=args.threads)
    store.save(run.path("rom"), fmt=cfg["ensemble"]["store_format"])
    run.artifacts.append("rom/")
    run.summary = {"paths": ens.paths, "c0": c0, "white_noise": wn, "omega": model.omega}
    return run


def cmd_compare(cfg, args):
    a_path = _need(args.a, "first CSV (--a)")
    b_path = _need(args.b, "second CSV (--b)")
    run = Run("compare", cfg, args, {"a": a_path, "b": b_path})
    A, B = SampledFunction.from_csv(a_path), SampledFunction.from_csv(b_path)
    if args.normalize:
        A, B = A.normalized(), B.normalized()
    t_end = min(A.t_end, B.t_end) if args.t_end is None else args.t_end
    A = A.restrict(t_end)
    bv = np.interp(A.t, B.t, B.values)
    diff = A.values - bv
    sigma = np.zeros_like(diff)
    for F in (A, B):
        if F.err is not None:
            sigma = np.hypot(sigma, np.interp(A.t, F.t, F.err))
    run.write_table("compare.csv", ["t", "a", "b", "diff"],
                    np.column_stack([A.t, A.values, bv, diff]).tolist())
    sup = float(np.max(np.abs(diff)))
    run.summary = {"sup_norm": sup, "t_end": float(A.t[-1]), "normalized": bool(args.normalize),
                   "max_sigma": float(np.max(sigma))}
    print(f"sup |a - b| = {sup:.6g} on [0, {A.t[-1]:g}]")
    return run


def cmd_decay_fit(cfg, args):
    path = _need(args.input, "CSV to fit (--input)")
    run = Run("decay-fit", cfg, args, {"input": path})
    C = SampledFunction.from_csv(path)
    fit = fit_exponential_bound(C, noise_floor=cfg["fit"]["noise_floor"])
    run.write_json("decay.json", fit.to_dict())
    run.summary = fit.to_dict()
    print(f"c = {fit.c:.10g}, alpha = {fit.alpha:.10g}: {fit.verdict}")
    return run


def cmd_report(cfg, args):
    run = Run("report", cfg, args, {})
    entries = []
    for fn in sorted(glob.glob(os.path.join(args.out_dir, "*.manifest.json"))):
        if fn.endswith("report.manifest.json"):
            continue
        with open(fn) as fh:
            man = json.load(fh)
        entries.append({"command": man["command"], "hash": man["hash"],
                        "artifacts": man["artifacts"], "summary": man["summary"],
                        "wall_time_s": man["wall_time_s"]})
    run.write_json("report.json", {"runs": entries})
    lines = ["# Run report", ""]
    for e in entries:
        lines.append(f"## {e['command']} (manifest {e['hash']})")
        lines.append(f"artifacts: {', '.join(e['artifacts'])}")
        for k, v in sorted(e["summary"].items()):
            lines.append(f"- {k}: {json.dumps(v, default=_jsonable)}")
        lines.append("")
    with open(run.path("report.md"), "w") as fh:
        fh.write("\n".join(lines))
    run.artifacts.append("report.md")
    run.summary = {"runs": len(entries)}
    return run


COMMANDS = {
    "simulate": cmd_simulate, "acf": cmd_acf, "neq-mean": cmd_neq_mean, "kde": cmd_kde,
    "fit-kernel": cmd_fit_kernel, "solve-gle": cmd_solve_gle, "kl-build": cmd_kl_build,
    "rom-run": cmd_rom_run, "compare": cmd_compare, "decay-fit": cmd_decay_fit,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one configuration value")
    common.add_argument("--seed", type=int, help="master seed (overrides ensemble.seed)")
    common.add_argument("--out-dir", default=".", help="directory for artifacts")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    p = argparse.ArgumentParser(prog="emzrom", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("acf", "neq-mean", "kde"):
            sp.add_argument("--store", help="trajectory store directory (default OUT/store)")
            sp.add_argument("--observable", action="append",
                            help="observable name (repeat to average)")
        if name in ("acf", "kde"):
            sp.add_argument("--name", help="output file name")
        if name == "fit-kernel":
            sp.add_argument("--method", choices=("first-principle", "data-driven"),
                            required=True)
            sp.add_argument("--acf", help="correlation CSV (t,value)")
        if name in ("solve-gle", "kl-build", "rom-run"):
            sp.add_argument("--kernel", help="kernel file (default OUT/kernel.json)")
            sp.add_argument("--c0", type=float, help="C(0); defaults depend on the command")
        if name == "rom-run":
            sp.add_argument("--kl", help="KL file (default OUT/kl.json)")
        if name == "compare":
            sp.add_argument("--a", required=True)
            sp.add_argument("--b", required=True)
            sp.add_argument("--normalize", action="store_true")
            sp.add_argument("--t-end", type=float)
        if name == "decay-fit":
            sp.add_argument("--input", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        threads = args.threads if args.threads is not None else int(
            os.environ.get(THREADS_ENV, "1"))
    except ValueError:
        print(f"error: {THREADS_ENV} must be an integer", file=sys.stderr)
        return 2
    args.threads = max(1, threads)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"ensemble.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        run = COMMANDS[args.command](cfg, args)
        run.finish()
    except (ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, EmzError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
