"""Uniformly sampled functions of time (correlations, kernels, KL modes)."""

from __future__ import annotations

from dataclasses import dataclass, field
import io

import numpy as np

from .errors import ContractError


@dataclass
class SampledFunction:
    """Values of a scalar (or ``M x M`` matrix) function on ``t0 + k*dt``.

    ``err`` optionally carries a pointwise standard error (Monte-Carlo
    estimates); ``meta`` records how the values were produced.
    """

    t0: float
    dt: float
    values: np.ndarray
    err: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if self.values.ndim not in (1, 3):
            raise ContractError("values must be a vector or a stack of square matrices")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("sampled values must be finite")
        if self.err is not None:
            self.err = np.asarray(self.err, dtype=float)

    @classmethod
    def from_times(cls, t, values, **kw):
        t = np.asarray(t, dtype=float)
        if t.size < 2:
            raise ContractError("need at least two samples")
        dt = float(t[1] - t[0])
        if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-12 * max(1.0, abs(t[-1]))):
            raise ContractError("time grid is not uniform")
        return cls(float(t[0]), dt, values, **kw)

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def t_end(self):
        return self.t0 + self.dt * (len(self.values) - 1)

    def __len__(self):
        return len(self.values)

    def normalized(self):
        """Copy divided by the value at the first sample."""
        c0 = self.values[0]
        if np.ndim(c0) or c0 == 0:
            raise ContractError("normalization needs a nonzero scalar first value")
        err = None if self.err is None else self.err / abs(c0)
        return SampledFunction(self.t0, self.dt, self.values / c0, err, dict(self.meta))

    def restrict(self, t_end):
        """Samples with ``t <= t_end``."""
        k = int(np.floor((t_end - self.t0) / self.dt + 1e-9)) + 1
        err = None if self.err is None else self.err[:k]
        return SampledFunction(self.t0, self.dt, self.values[:k], err, dict(self.meta))

    def subsample(self, stride):
        err = None if self.err is None else self.err[::stride]
        return SampledFunction(self.t0, self.dt * stride, self.values[::stride], err,
                               dict(self.meta))

    # CSV -----------------------------------------------------------------
    def to_csv(self, path=None, header_comment=None):
        """Write ``t,value[,stderr]`` rows; scalar functions only."""
        if self.values.ndim != 1:
            raise ContractError("CSV export supports scalar functions only")
        buf = io.StringIO()
        if header_comment:
            for line in str(header_comment).splitlines():
                buf.write(f"# {line}\n")
        cols = ["t", "value"] + (["stderr"] if self.err is not None else [])
        buf.write(",".join(cols) + "\n")
        for i, (t, v) in enumerate(zip(self.t, self.values)):
            row = [f"{t:.17g}", f"{v:.17g}"]
            if self.err is not None:
                row.append(f"{self.err[i]:.17g}")
            buf.write(",".join(row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise ContractError(f"{path}: empty CSV")
        head = [h.strip() for h in lines[0].split(",")]
        if head[:2] != ["t", "value"]:
            raise ContractError(f"{path}: expected header 't,value', got {lines[0]!r}")
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        if data.ndim != 2 or len(data) < 2:
            raise ContractError(f"{path}: need at least two data rows")
        err = data[:, 2] if data.shape[1] > 2 and "stderr" in head else None
        return cls.from_times(data[:, 0], data[:, 1], err=err)
