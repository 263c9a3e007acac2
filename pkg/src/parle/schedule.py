"""Hyper-parameters and the geometric scoping schedule for gamma and rho.

Scoping anneals the smoothing radius gamma and the elastic coupling rho
toward fixed floors: the smoothed problem collapses onto the original
loss and the replicas collapse onto one model. The decay advances once
per inner cycle (every L steps) at rate (1 - 1/(2B)) per cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import InvalidHyperparameter


@dataclass(frozen=True)
class HyperParams:
    """All scalar knobs of the optimizer family.

    eta        step size for the slow (replica / outer) variable
    eta_prime  step size for the inner descent variable
    eta_dprime reference-variable step; None selects rho/n, which makes
               the reference update a pure average of the replicas
    gamma0     initial smoothing radius (proximal coupling inner<->replica)
    rho0       initial elastic coupling (replica<->reference); may be inf
               to switch the elastic term off entirely
    gamma_floor, rho_floor
               clip values where scoping stops decreasing
    L          inner steps per cycle (communication period)
    alpha      exponential-average weight for the inner trajectory
    momentum   Nesterov momentum for inner and replica updates
    n_replicas replica count
    B          mini-batches per epoch (sets the scoping decay rate)
    """

    eta: float = 0.1
    eta_prime: float = 0.1
    eta_dprime: float | None = None
    gamma0: float = 100.0
    rho0: float = 1.0
    gamma_floor: float = 1.0
    rho_floor: float = 0.1
    L: int = 25
    alpha: float = 0.75
    momentum: float = 0.9
    n_replicas: int = 1
    B: int = 100

    def validate(self) -> "HyperParams":
        # eta == 0 is admitted so frozen-parameter diagnostics can run
        if self.eta < 0 or self.eta_prime < 0:
            raise InvalidHyperparameter("step sizes eta and eta_prime must be >= 0")
        if self.eta_dprime is not None and self.eta_dprime < 0:
            raise InvalidHyperparameter("eta_dprime must be >= 0")
        if not (self.gamma0 > 0 and self.rho0 > 0):
            raise InvalidHyperparameter("gamma0 and rho0 must be > 0")
        if not (self.gamma_floor > 0 and self.rho_floor > 0):
            raise InvalidHyperparameter("floors must be > 0")
        if self.gamma_floor > self.gamma0:
            raise InvalidHyperparameter("gamma_floor must not exceed gamma0")
        if self.rho_floor > self.rho0:
            raise InvalidHyperparameter("rho_floor must not exceed rho0")
        if self.L < 1:
            raise InvalidHyperparameter("L must be a positive integer")
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidHyperparameter("alpha must lie in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidHyperparameter("momentum must lie in [0, 1)")
        if self.n_replicas < 1:
            raise InvalidHyperparameter("n_replicas must be >= 1")
        if self.B < 1:
            raise InvalidHyperparameter("B must be >= 1")
        return self

    def with_(self, **kw) -> "HyperParams":
        return replace(self, **kw)

    @property
    def elastic_off(self) -> bool:
        """True when rho0 is infinite, i.e. the elastic term has weight 0."""
        return math.isinf(self.rho0)


def scoping_value(k: int, hp: HyperParams, v0: float, floor: float) -> float:
    """Annealed value after k inner steps: max(floor, v0*(1-1/(2B))^floor(k/L)).

    Non-increasing in k, constant within each window of L steps, and
    equal to v0 for k < L.
    """
    if hp.B < 1:
        raise InvalidHyperparameter("B must be >= 1 for scoping")
    if k < 0:
        raise ValueError("step index k must be >= 0")
    if v0 <= 0 or floor <= 0:
        raise ValueError("v0 and floor must be > 0")
    decay = 1.0 - 1.0 / (2.0 * hp.B)
    return max(floor, v0 * decay ** (k // hp.L))


def gamma_at(k: int, hp: HyperParams) -> float:
    return scoping_value(k, hp, hp.gamma0, hp.gamma_floor)


def rho_at(k: int, hp: HyperParams) -> float:
    if hp.elastic_off:
        return math.inf
    return scoping_value(k, hp, hp.rho0, hp.rho_floor)
