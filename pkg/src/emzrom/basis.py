"""Temporal basis functions and the memory-kernel container.

Three bases are supported for ``K(t) = sum_n k_n g_n(t)``:

* ``taylor``   -- ``g_n(t) = t^n / n!``
* ``faber``    -- ``g_n(t) = exp(-a t) J_n(b t)``
* ``laguerre`` -- ``g_n(t) = L_n(sigma t) exp(-sigma t / 2)``
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .errors import ContractError

TAYLOR = "taylor"
FABER = "faber"
LAGUERRE = "laguerre"
KINDS = (TAYLOR, FABER, LAGUERRE)


def bessel_j_all(nmax, x):
    """``J_0 .. J_nmax`` at every point of ``x``; shape ``(nmax + 1, len(x))``.

    Ascending series for ``|x| <= 1``, Miller's downward recurrence normalized
    by ``J_0 + 2 sum_k J_2k = 1`` elsewhere.
    """
    if nmax < 0:
        raise ContractError("Bessel order must be >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ax = np.abs(x)
    out = np.zeros((nmax + 1, x.size))

    small = ax <= 1.0
    if small.any():
        h = ax[small] / 2.0
        for n in range(nmax + 1):
            term = h ** n / math.factorial(n)
            acc = term.copy()
            for k in range(1, 40):
                term = term * (-(h * h)) / (k * (n + k))
                acc += term
                if np.all(np.abs(term) <= 1e-17 * np.abs(acc)):
                    break
            out[n, small] = acc

    big = ~small
    if big.any():
        xb = ax[big]
        top = max(nmax, int(xb.max()))
        start = 2 * ((top + 16 + int(math.sqrt(40.0 * top))) // 2)
        jp1 = np.zeros_like(xb)
        j = np.full_like(xb, 1e-30)
        norm = np.zeros_like(xb)
        vals = np.zeros((nmax + 1, xb.size))
        for k in range(start, 0, -1):
            jm1 = (2.0 * k / xb) * j - jp1
            jp1, j = j, jm1
            # j now holds the unnormalized J_{k-1}
            if k - 1 <= nmax:
                vals[k - 1] = j
            if (k - 1) % 2 == 0 and k - 1 > 0:
                norm += 2.0 * j
            over = np.abs(j) > 1e200
            if over.any():
                j[over] *= 1e-200
                jp1[over] *= 1e-200
                norm[over] *= 1e-200
                vals[:, over] *= 1e-200
        norm += j
        out[:, big] = vals / norm

    neg = x < 0
    if neg.any():
        odd = np.arange(nmax + 1) % 2 == 1
        out[np.ix_(odd, neg)] *= -1.0
    return out


def bessel_j(n, x):
    """Bessel function of the first kind ``J_n(x)`` for integer ``n >= 0``."""
    res = bessel_j_all(int(n), x)[int(n)]
    return float(res[0]) if np.ndim(x) == 0 else res.reshape(np.shape(x))


def laguerre_all(nmax, x):
    """Laguerre polynomials ``L_0 .. L_nmax`` at ``x`` by the three-term recurrence."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((nmax + 1, x.size))
    out[0] = 1.0
    if nmax >= 1:
        out[1] = 1.0 - x
    for k in range(1, nmax):
        out[k + 1] = ((2 * k + 1 - x) * out[k] - k * out[k - 1]) / (k + 1)
    return out


def laguerre_basis(n, sigma, t):
    """Laguerre function ``L_n(sigma t) exp(-sigma t / 2)``."""
    if n < 0 or not sigma > 0:
        raise ContractError("need n >= 0 and sigma > 0")
    t = np.asarray(t, dtype=float)
    res = laguerre_all(int(n), sigma * t)[int(n)] * np.exp(-0.5 * sigma * t.ravel())
    return float(res[0]) if t.ndim == 0 else res.reshape(t.shape)


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    a: float | None = None
    b: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown basis kind {self.kind!r}")
        if self.kind == FABER and not (self.a is not None and self.a > 0
                                       and self.b is not None and self.b > 0):
            raise ContractError("faber basis needs a > 0 and b > 0")
        if self.kind == LAGUERRE and not (self.sigma is not None and self.sigma > 0):
            raise ContractError("laguerre basis needs sigma > 0")

    @classmethod
    def taylor(cls):
        return cls(TAYLOR)

    @classmethod
    def faber(cls, a, b):
        return cls(FABER, a=float(a), b=float(b))

    @classmethod
    def laguerre(cls, sigma):
        return cls(LAGUERRE, sigma=float(sigma))

    def functions(self, order, t):
        """Basis values ``g_0..g_order`` on ``t``; shape ``(order + 1, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == TAYLOR:
            out = np.empty((order + 1, t.size))
            out[0] = 1.0
            for n in range(1, order + 1):
                out[n] = out[n - 1] * t / n
            return out
        if self.kind == FABER:
            return np.exp(-self.a * t) * bessel_j_all(order, self.b * t)
        return laguerre_all(order, self.sigma * t) * np.exp(-0.5 * self.sigma * t)

    def to_dict(self):
        return {k: v for k, v in (("kind", self.kind), ("a", self.a), ("b", self.b),
                                  ("sigma", self.sigma)) if v is not None}


@dataclass
class KernelModel:
    """Memory kernel ``K(t) = sum_n coeffs[n] g_n(t)`` plus streaming term ``omega``."""

    omega: float
    basis: BasisSpec
    coeffs: np.ndarray
    observable: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size == 0:
            raise ContractError("coefficients must be a nonempty vector")
        if not np.all(np.isfinite(self.coeffs)):
            raise ContractError("kernel coefficients must be finite")

    @property
    def order(self):
        return self.coeffs.size - 1

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        vals = self.coeffs @ self.basis.functions(self.order, t_arr)
        return float(vals[0]) if np.ndim(t) == 0 else vals.reshape(np.shape(t))

    def to_dict(self):
        return {
            "format": "emzrom.kernel/1",
            "observable": self.observable,
            "omega": float(self.omega),
            "basis": self.basis.to_dict(),
            "coeffs": [float(c) for c in self.coeffs],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(omega=float(d["omega"]), basis=BasisSpec(**d["basis"]),
                       coeffs=np.array(d["coeffs"], dtype=float),
                       observable=d.get("observable", ""), metadata=d.get("metadata", {}))
        except (KeyError, TypeError) as exc:
            raise ContractError(f"malformed kernel file: {exc}") from exc

    def save(self, path):
        # json writes floats with repr(), i.e. 17 significant digits
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, default=_jsonable)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")
