"""Type-1 Wasserstein ambiguity over a scalar price.

For a stage cost affine in the price, ``J = a * lam + b``, the worst-case
expectation over all distributions within transport distance ``eps`` of an
empirical center has the closed form ``E_center[J] + eps * |a|``.  An exact
transport LP over a price grid is provided as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .forecast import EmpiricalDistribution

__all__ = [
    "AmbiguitySet",
    "AffinePriceCost",
    "worst_case_expectation",
    "worst_case_oracle",
    "dro_horizon_penalty",
    "price_sensitivity",
]


@dataclass(frozen=True)
class AmbiguitySet:
    center: EmpiricalDistribution
    radius: float

    def __post_init__(self):
        if not (self.radius >= 0 and np.isfinite(self.radius)):
            raise ValueError(f"ambiguity radius must be finite and >= 0, got {self.radius}")


@dataclass(frozen=True)
class AffinePriceCost:
    """Stage cost ``a * lam + b``; ``a`` in kWh, ``b`` in EUR."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("affine cost coefficients must be finite")

    def __call__(self, lam):
        return self.a * lam + self.b


def price_sensitivity(P_imp, P_exp, tau: float, delta_s: float, beta_sell: float):
    """Price sensitivity of the market term: ``tau*((1+delta_s)*P_imp - beta_sell*P_exp)``."""
    return tau * ((1.0 + delta_s) * np.asarray(P_imp) - beta_sell * np.asarray(P_exp))


def worst_case_expectation(cost: AffinePriceCost, amb: AmbiguitySet) -> float:
    return cost.a * amb.center.mean + cost.b + amb.radius * abs(cost.a)


def worst_case_oracle(cost: AffinePriceCost, amb: AmbiguitySet,
                      grid_halfwidth: float = 1.0, grid_step: float = 0.05) -> float:
    """Worst-case expectation by brute-force optimal transport.

    Solves ``max sum_ij pi_ij f(lam_j)`` over transport plans ``pi >= 0`` with
    row sums equal to the center weights and transport cost
    ``sum_ij |s_i - lam_j| pi_ij <= eps``, where ``lam_j`` ranges over the
    center's support plus a uniform grid extending ``max(2*eps, halfwidth)``
    beyond it.
    """
    s = amb.center.support
    w = amb.center.weights
    eps = amb.radius
    if grid_step <= 0 or grid_halfwidth < 0:
        raise ValueError("grid_step must be > 0 and grid_halfwidth >= 0")
    reach = max(2.0 * eps, grid_halfwidth)
    lo, hi = s[0] - reach, s[-1] + reach
    n_pts = int(np.ceil((hi - lo) / grid_step)) + 1
    if n_pts * s.size > 2_000_000:
        raise ValueError(f"transport LP too large ({n_pts} grid points x {s.size} atoms)")
    lam = np.unique(np.concatenate([s, lo + grid_step * np.arange(n_pts), [hi]]))

    n, m = s.size, lam.size
    dist = np.abs(s[:, None] - lam[None, :])
    c = -np.tile(cost(lam), n)          # linprog minimizes
    A_eq = np.zeros((n, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    res = linprog(c, A_ub=dist.reshape(1, -1), b_ub=[eps], A_eq=A_eq, b_eq=w,
                  bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(-res.fun)


def dro_horizon_penalty(a_vec, eps: float) -> float:
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return float(eps * np.sum(np.abs(np.asarray(a_vec, dtype=float))))
