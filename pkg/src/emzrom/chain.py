"""Physical model descriptions for the two chain models.

``fpu-langevin``
    Periodic Fermi-Pasta-Ulam chain in bond/momentum coordinates ``(r, p)``
    with per-site Langevin friction ``gamma[j]``.

``heat-conduction``
    Open anharmonic chain with sites ``0..N`` coupled at both ends to
    Ornstein-Uhlenbeck heat baths (auxiliary variables ``r_L``, ``r_R``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .errors import ContractError

FPU = "fpu-langevin"
HEAT = "heat-conduction"


@dataclass(frozen=True)
class ChainSpec:
    """Parameters of a chain model.

    ``nu``/``theta`` are the quadratic/quartic coefficients of the bond
    potential ``V(r) = nu r^2/2 + theta r^4/4``.  For the heat-conduction model
    they describe the nearest-neighbour coupling ``V_2``; ``pin_nu`` and
    ``pin_theta`` describe the on-site pinning ``V_1``.

    ``gamma`` is stored as a tuple of length ``n`` so a ChainSpec stays hashable
    (moment caches are keyed on it).
    """

    kind: str = FPU
    n: int = 100
    m: float = 1.0
    nu: float = 1.0
    theta: float = 0.0
    beta: float = 1.0
    gamma: tuple = field(default=None)
    # heat-conduction only
    pin_nu: float = 1.0
    pin_theta: float = 0.0
    t_left: float = 1.0
    t_right: float = 1.0
    gamma_left: float = 1.0
    gamma_right: float = 1.0
    lambda_left: float = 1.0
    lambda_right: float = 1.0

    def __post_init__(self):
        if self.kind not in (FPU, HEAT):
            raise ContractError(f"unknown model kind {self.kind!r}")
        if self.gamma is None:
            object.__setattr__(self, "gamma", (1.0,) * self.n)
        elif np.isscalar(self.gamma):
            object.__setattr__(self, "gamma", (float(self.gamma),) * self.n)
        else:
            object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if self.n < 2:
            raise ContractError("chain needs at least 2 sites")
        if len(self.gamma) != self.n:
            raise ContractError(f"gamma has {len(self.gamma)} entries, expected {self.n}")
        if not self.m > 0:
            raise ContractError("mass must be positive")
        if not self.beta > 0:
            raise ContractError("beta must be positive")
        if self.nu < 0 or self.theta < 0 or not (self.nu + self.theta > 0):
            raise ContractError("potential must be confining: nu, theta >= 0 and nu + theta > 0")
        if any(g < 0 or not math.isfinite(g) for g in self.gamma):
            raise ContractError("friction coefficients must be finite and >= 0")
        if self.kind == HEAT:
            for name in ("t_left", "t_right", "gamma_left", "gamma_right"):
                if getattr(self, name) < 0:
                    raise ContractError(f"{name} must be >= 0")
            if self.pin_nu < 0 or self.pin_theta < 0:
                raise ContractError("pinning coefficients must be >= 0")

    @classmethod
    def fpu(cls, n=100, m=1.0, nu=1.0, theta=0.0, beta=1.0, gamma=1.0):
        return cls(kind=FPU, n=n, m=m, nu=nu, theta=theta, beta=beta, gamma=gamma)

    @classmethod
    def tagged_friction(cls, n=100, site=50, gamma=1.0, **kw):
        """FPU chain with friction on a single site and none elsewhere."""
        g = [0.0] * n
        g[site % n] = gamma
        return cls(kind=FPU, n=n, gamma=tuple(g), **kw)

    def with_(self, **changes):
        return replace(self, **changes)

    def force(self, r):
        """Bond force ``V'(r)``."""
        return self.nu * r + self.theta * r ** 3

    def potential(self, r):
        return 0.5 * self.nu * r ** 2 + 0.25 * self.theta * r ** 4

    def energy(self, r, p):
        """Hamiltonian of FPU states; arrays with sites on the last axis."""
        return (np.sum(p ** 2, axis=-1) / (2 * self.m)
                + np.sum(self.potential(r), axis=-1))
