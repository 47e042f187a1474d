"""Query accounting: counting local oracles, free initialization oracles, budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bump import SmoothPotential
from .instance import tail_mass, unit_ball_volume


class BudgetExhausted(RuntimeError):
    """Raised when a query would exceed the oracle's budget."""

    def __init__(self, count: int, budget: int):
        super().__init__(f"query budget of {budget} exhausted after {count} queries")
        self.count = count
        self.budget = budget


class CountingOracle:
    """Local oracle returning ``(V(x), grad V(x))`` and counting every call.

    Parameters
    ----------
    potential : SmoothPotential
        The wrapped potential.
    budget : int, optional
        Maximal number of queries; a further query raises
        :class:`BudgetExhausted` and leaves the count unchanged.
    trace : bool
        Record every queried point (off by default to keep long runs
        memory-bounded).
    """

    def __init__(self, potential: SmoothPotential, budget: int | None = None,
                 trace: bool = False):
        if budget is not None and budget < 0:
            raise ValueError("budget must be non-negative")
        self.potential = potential
        self.budget = budget
        self.count = 0
        self.log = [] if trace else None

    @property
    def d(self) -> int:
        return self.potential.d

    @property
    def beta(self) -> float:
        return self.potential.beta

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.count

    def _charge(self, k: int):
        if self.budget is not None and self.count + k > self.budget:
            raise BudgetExhausted(self.count, self.budget)
        self.count += k

    def query(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self._charge(1)
        if self.log is not None:
            self.log.append(x.copy())
        return self.potential(x)

    def query_batch(self, X):
        """Evaluate ``n`` points at once; charges ``n`` queries.

        Used by samplers that run independent chains in lockstep; each row
        corresponds to one query of a single-point algorithm.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if self.d == 1 else X[None, :]
        self._charge(X.shape[0])
        if self.log is not None:
            self.log.extend(row.copy() for row in X)
        return self.potential.batch(X)


def query(oracle: CountingOracle, x):
    """One counted ``(value, gradient)`` evaluation."""
    return oracle.query(x)


@dataclass(frozen=True)
class BudgetReport:
    count: int
    budget: int | None
    trace: list | None = None

    def to_dict(self) -> dict:
        out = {"count": self.count, "budget": self.budget}
        if self.trace is not None:
            out["trace"] = [[float(v) for v in p] for p in self.trace]
        return out


def budget_report(oracle: CountingOracle) -> BudgetReport:
    """Read-only snapshot of the oracle's accounting."""
    trace = None if oracle.log is None else [p.copy() for p in oracle.log]
    return BudgetReport(oracle.count, oracle.budget, trace)


# ----------------------------------------------------------------------------
# initialization oracles
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class InitOracle:
    """Free samples from ``mu_0``.

    ``sampler(rng, size)`` returns an ``(size, d)`` array. ``log_density``
    (normalized, vectorized over ``(n, d)`` arrays) is optional and is meant
    for diagnostics and for envelope builders that the sampling model allows
    to use it. ``K0`` and ``M0`` are the declared KL and sup-log-ratio
    bounds to the target.
    """

    d: int
    sampler: Callable
    log_density: Callable | None = None
    K0: float = math.inf
    M0: float | None = None
    name: str = field(default="init", compare=False)

    def draw(self, rng, size: int | None = None):
        pts = np.asarray(self.sampler(rng, 1 if size is None else size), dtype=float)
        pts = pts.reshape(-1, self.d)
        return pts[0] if size is None else pts


def draw_init(init: InitOracle, rng, size: int | None = None):
    """Sample from the initialization oracle; never touches a query counter."""
    return init.draw(rng, size)


def gaussian_init(d: int, var: float = 1.0, mean=None, K0: float = math.inf,
                  M0: float | None = None) -> InitOracle:
    """``N(mean, var I_d)`` initialization."""
    mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float).reshape(d)
    sd = math.sqrt(var)

    def sampler(rng, size):
        return mean + sd * rng.standard_normal((size, d))

    def log_density(X):
        X = np.asarray(X, dtype=float).reshape(-1, d)
        return (-0.5 * np.sum((X - mean) ** 2, axis=1) / var
                - 0.5 * d * math.log(2 * math.pi * var))

    return InitOracle(d, sampler, log_density, K0, M0, name=f"gaussian(var={var:g})")


def _uniform_directions(rng, size, d):
    z = rng.standard_normal((size, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _tail_radii(rng, size, d, R):
    """Radii ``s >= 0`` with density proportional to ``(s+R)^(d-1) exp(-s^2/2)``."""
    out = np.empty(size)
    filled = 0
    shift = (d - 1) / R
    while filled < size:
        want = size - filled
        batch = max(16, int(1.3 * want) + 8)
        # truncated Gaussian proposal proportional to exp(shift s - s^2 / 2) on s >= 0
        s = np.abs(rng.standard_normal(batch)) if d == 1 else _trunc_normal(rng, batch, shift)
        if d > 1:
            u = s / R
            weight = np.exp((d - 1) * (np.log1p(u) - u))
            s = s[rng.random(batch) < weight]
        take = min(len(s), want)
        out[filled:filled + take] = s[:take]
        filled += take
    return out


def _trunc_normal(rng, size, mean):
    """``N(mean, 1)`` conditioned on being non-negative."""
    out = np.empty(size)
    filled = 0
    while filled < size:
        z = mean + rng.standard_normal(2 * (size - filled) + 8)
        z = z[z >= 0]
        take = min(len(z), size - filled)
        out[filled:filled + take] = z[:take]
        filled += take
    return out


def pi_init_inside_prob(d: int, R: float) -> float:
    """``pi_init(B_R) = V_d R^d / Z_init``."""
    flat = unit_ball_volume(d) * R**d
    return flat / (flat + tail_mass(d, R))


def sample_pi_init(d: int, R: float, rng, size: int | None = None,
                   p_in: float | None = None):
    """Exact sampler for the null measure ``exp(-(|x| - R)_+^2 / 2)``.

    Uniform on ``B_R`` with probability ``V_d R^d / Z_init``; otherwise a
    tail radius ``R + s`` with a uniform direction, ``s`` drawn by rejection
    from a truncated Gaussian. ``p_in`` may carry a precomputed
    :func:`pi_init_inside_prob` to skip its quadrature.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    n = 1 if size is None else size
    if p_in is None:
        p_in = pi_init_inside_prob(d, R)
    inside = rng.random(n) < p_in
    radii = np.empty(n)
    n_in = int(inside.sum())
    radii[inside] = R * rng.random(n_in) ** (1.0 / d)
    radii[~inside] = R + _tail_radii(rng, n - n_in, d, R)
    if d == 1:
        dirs = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    else:
        dirs = _uniform_directions(rng, n, d)
    pts = radii[:, None] * dirs
    return pts[0] if size is None else pts


def pi_init_oracle(d: int, R: float, K0: float = math.log(2.0),
                   M0: float | None = None) -> InitOracle:
    """Initialization oracle drawing from ``pi_init``."""
    flat = unit_ball_volume(d) * R**d
    z = flat + tail_mass(d, R)
    log_z, p_in = math.log(z), flat / z

    def sampler(rng, size):
        return sample_pi_init(d, R, rng, size, p_in)

    def log_density(X):
        X = np.asarray(X, dtype=float).reshape(-1, d)
        excess = np.maximum(np.linalg.norm(X, axis=1) - R, 0.0)
        return -0.5 * excess**2 - log_z

    return InitOracle(d, sampler, log_density, K0, M0, name="pi_init")
