"""Sampling and optimization procedures operating through a counting oracle.

Every potential evaluation made by an algorithm here goes through
:class:`~fisherlab.oracle.CountingOracle`, so query counts are exact.
Envelope construction may additionally use free initialization samples and
quantities declared by the model (``M0``, the quadratic tail outside
``B_R``), never hidden potential evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bump import phi_eval
from .instance import BumpInstance, tail_mass
from .oracle import CountingOracle, InitOracle, _tail_radii, _uniform_directions, sample_pi_init


class EnvelopeViolation(RuntimeError):
    """An acceptance ratio above one was observed."""


class EnvelopeError(ValueError):
    """An envelope cannot be built from the given inputs."""


# ----------------------------------------------------------------------------
# Langevin Monte Carlo
# ----------------------------------------------------------------------------


def lmc_chain(oracle: CountingOracle, x0, h: float, k: int, rng):
    """``k`` full LMC updates ``X <- X - h grad V(X) + sqrt(2h) xi``.

    Consumes exactly ``k`` queries.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if k < 0:
        raise ValueError("k must be non-negative")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    noise = math.sqrt(2.0 * h)
    for _ in range(k):
        _, g = oracle.query(x)
        x = x - h * g + noise * rng.standard_normal(x.shape)
    return x


def lmc_chain_batch(oracle: CountingOracle, X0, h: float, k: int, rng):
    """``n`` independent LMC chains in lockstep (``n k`` queries)."""
    if h <= 0:
        raise ValueError("h must be positive")
    X = np.array(X0, dtype=float).reshape(-1, oracle.d)
    noise = math.sqrt(2.0 * h)
    for _ in range(k):
        _, G = oracle.query_batch(X)
        X = X - h * G + noise * rng.standard_normal(X.shape)
    return X


def averaged_lmc_sample(oracle: CountingOracle, init: InitOracle, h: float, N: int, rng):
    """One draw from the averaged LMC law over ``[0, N h]``.

    Draws ``t ~ U[0, N h]``, runs ``k = floor(t/h)`` full steps from a free
    initialization draw, then a partial update of length ``t - k h``; this
    costs ``k + 1`` queries, or ``k`` when ``t`` falls exactly on ``k h``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if h <= 0:
        raise ValueError("h must be positive")
    t = N * h * rng.random()
    k = min(int(t // h), N - 1)
    tau = t - k * h
    x = lmc_chain(oracle, init.draw(rng), h, k, rng)
    if tau > 0:
        _, g = oracle.query(x)
        x = x - tau * g + math.sqrt(2.0 * tau) * rng.standard_normal(x.shape)
    return x


def averaged_lmc_batch(oracle: CountingOracle, init: InitOracle, h: float, N: int, rng,
                       size: int):
    """``size`` independent averaged-LMC draws run in lockstep.

    Returns ``(points, queries)`` where ``queries[i]`` is what draw ``i``
    alone would have consumed; the oracle is charged their sum.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    t = N * h * rng.random(size)
    k = np.minimum((t // h).astype(np.int64), N - 1)
    tau = t - k * h
    X = init.draw(rng, size)
    noise = math.sqrt(2.0 * h)
    for step in range(int(k.max()) if size else 0):
        active = k > step
        _, G = oracle.query_batch(X[active])
        X[active] = X[active] - h * G + noise * rng.standard_normal(G.shape)
    partial = tau > 0
    if np.any(partial):
        _, G = oracle.query_batch(X[partial])
        scale = np.sqrt(2.0 * tau[partial])[:, None]
        X[partial] = (X[partial] - tau[partial][:, None] * G
                      + scale * rng.standard_normal(G.shape))
    return X, k + partial.astype(np.int64)


def gradient_descent(oracle: CountingOracle, x0, eta: float, T: int):
    """``T`` gradient evaluations along ``x <- x - eta grad V(x)``.

    Returns the evaluated iterate with the smallest gradient norm and that
    norm.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if T < 1:
        raise ValueError("T must be at least 1")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    best, best_norm = x.copy(), math.inf
    for _ in range(T):
        _, g = oracle.query(x)
        norm = float(np.linalg.norm(g))
        if norm < best_norm:
            best, best_norm = x.copy(), norm
        x = x - eta * g
    return best, best_norm


def stationary_gaussian_sample(x, beta: float, rng, size: int | None = None):
    """``N(x, I / beta)`` draws; no queries."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    shape = x.shape if size is None else (size,) + x.shape
    return x + rng.standard_normal(shape) / math.sqrt(beta)


def heat_postprocess(x, t: float, rng):
    """``x + sqrt(t) xi``, realizing ``mu -> mu Q_t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    x = np.asarray(x, dtype=float)
    if t == 0:
        return x.copy()
    return x + math.sqrt(t) * rng.standard_normal(x.shape)


# ----------------------------------------------------------------------------
# rejection sampling
# ----------------------------------------------------------------------------


@dataclass
class Envelope:
    """Upper envelope for rejection sampling.

    ``log_density`` is ``log mu~`` (vectorized over ``(n, d)`` arrays) in the
    normalization ``log pi~(x) = -(V(x) - v_ref)``, where ``v_ref`` is the
    value of one counted reference query (at the origin unless the builder
    says otherwise). ``sampler(rng, size)`` draws exactly
    from ``mu~ / Z``; ``ratio_bound`` bounds ``Z_mu~ / Z_pi~``.
    """

    log_density: Callable
    sampler: Callable
    ratio_bound: float
    v_ref: float
    d: int
    name: str = "envelope"
    info: dict = field(default_factory=dict)


def normalization_query(oracle: CountingOracle) -> float:
    """The single counted query at the origin fixing ``pi~(0) = 1``."""
    v, _ = oracle.query(np.zeros(oracle.d))
    return v


def make_envelope(oracle: CountingOracle, log_density: Callable, sampler: Callable,
                  ratio_bound: float, name: str = "envelope") -> Envelope:
    """Wrap a user-supplied envelope after the normalization query."""
    return Envelope(log_density, sampler, ratio_bound, normalization_query(oracle),
                    oracle.d, name)


def rejection_sample(oracle: CountingOracle, envelope: Envelope, max_iter: int, rng,
                     atol: float = 1e-9):
    """Rejection sampling with one counted query per trial.

    Returns ``(point, accepted, trials)``. After ``max_iter`` rejections a
    fresh envelope draw is returned with ``accepted=False``.

    Raises
    ------
    EnvelopeViolation
        If ``pi~(X) > mu~(X)`` (beyond ``atol`` in log space) is observed.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    for trial in range(1, max_iter + 1):
        x = np.asarray(envelope.sampler(rng, 1), dtype=float).reshape(envelope.d)
        v, _ = oracle.query(x)
        log_ratio = -(v - envelope.v_ref) - float(envelope.log_density(x[None, :])[0])
        if log_ratio > atol:
            raise EnvelopeViolation(
                f"acceptance ratio exp({log_ratio:.3g}) > 1 at {x}; envelope is invalid"
            )
        if math.log(rng.random()) < log_ratio:
            return x, True, trial
    x = np.asarray(envelope.sampler(rng, 1), dtype=float).reshape(envelope.d)
    return x, False, max_iter


def warm_start_envelope(init: InitOracle, oracle: CountingOracle) -> Envelope:
    """Envelope ``exp(2 M0) mu_0 / mu_0(0)`` from a warm start with declared ``M0``.

    Valid whenever ``|log(mu_0 / pi)| <= M0``; then ``Z_mu~ / Z_pi~ <= exp(3 M0)``.
    One normalization query is made.
    """
    if init.log_density is None:
        raise EnvelopeError("warm start envelope needs the initialization density")
    if init.M0 is None:
        raise EnvelopeError("warm start envelope needs a declared M0")
    d = init.d
    log_mu0_at_0 = float(init.log_density(np.zeros((1, d)))[0])
    shift = 2.0 * init.M0 - log_mu0_at_0
    log_dens = init.log_density

    def log_density(X):
        return shift + log_dens(X)

    def sampler(rng, size):
        return init.draw(rng, size)

    v_ref = normalization_query(oracle)
    return Envelope(log_density, sampler, math.exp(3.0 * init.M0), v_ref, d, "warm-start",
                    {"M0": init.M0})


def _legendre_log_mass(g, half, nodes, weights):
    """``log int_{-half}^{half} exp(-g u + u^2/2) du`` per row of ``g``."""
    u = half * nodes
    expo = -np.multiply.outer(g, u) + 0.5 * u * u
    top = expo.max(axis=-1, keepdims=True)
    return (top[..., 0] + np.log(np.sum(weights * np.exp(expo - top), axis=-1))
            + math.log(half))


def _sample_cube_coord(rng, g, half):
    """Draw ``u in [-half, half]`` with density ``~ exp(-g u + u^2/2)`` per entry of ``g``.

    Proposal: truncated exponential ``~ exp(-g u)`` by inverse CDF; accept
    with ``exp(u^2/2 - half^2/2) <= 1``.
    """
    g = np.asarray(g, dtype=float)
    flat_g = g.ravel()
    out = np.empty(flat_g.size)
    pending = np.arange(flat_g.size)
    while pending.size:
        gg = flat_g[pending]
        a = np.abs(gg)
        v = rng.random(pending.size)
        small = a * half < 1e-12
        safe = np.where(small, 1.0, a)
        u0 = -half - np.log1p(v * np.expm1(-2.0 * safe * half)) / safe
        u0 = np.where(small, (2.0 * v - 1.0) * half, u0)
        u = np.clip(np.where(gg >= 0, u0, -u0), -half, half)
        accept = rng.random(pending.size) < np.exp(0.5 * (u * u - half * half))
        out[pending[accept]] = u[accept]
        pending = pending[~accept]
    return out.reshape(g.shape)


def grid_envelope(oracle: CountingOracle, d: int, R: float, spacing: float | None = None,
                  tail_offset: float = 0.0, max_net: int = 200_000) -> Envelope:
    """Envelope from a cubic net of ``B_R`` and the known quadratic tail.

    The net is the cubic lattice of the given spacing (default
    ``min(1, 2/sqrt(d))``, so every point lies within distance 1 of its
    nearest node) restricted to nodes whose Voronoi cube meets ``B_R``.
    Each node is queried once. Inside ``B_R`` the envelope is
    ``exp(-V_hat)`` with
    ``V_hat(x) = V(x_N) + <grad V(x_N), x - x_N> - |x - x_N|^2 / 2``, a lower
    bound on ``V`` for 1-smooth potentials; outside ``B_R`` it is the exact
    tail ``exp(-(|x| - R)^2 / 2 - tail_offset)``. Hence ``Z_mu~ / Z_pi~ <= e``.
    One more query, at the boundary point ``R e_1`` where the tail term
    vanishes, fixes the additive constant; the envelope is then unchanged
    when the oracle's potential is shifted by a constant.

    Raises
    ------
    EnvelopeError
        If the net would exceed ``max_net`` nodes.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if spacing is None:
        spacing = min(1.0, 2.0 / math.sqrt(d))
    half = 0.5 * spacing
    kmax = int(math.ceil((R + half) / spacing))
    est = (2 * kmax + 1) ** d
    if est > 50 * max_net:
        raise EnvelopeError(f"net would need about {est} candidate nodes; R too large for d={d}")
    axis = np.arange(-kmax, kmax + 1)
    ints = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    nodes = ints * spacing
    gap = np.maximum(np.abs(nodes) - half, 0.0)
    keep = np.linalg.norm(gap, axis=1) <= R
    ints, nodes = ints[keep], nodes[keep]
    if len(nodes) > max_net:
        raise EnvelopeError(f"net has {len(nodes)} nodes (limit {max_net})")
    anchor = np.zeros(d)
    anchor[0] = R
    v_ref, _ = oracle.query(anchor)
    vals, grads = oracle.query_batch(nodes)
    vals = vals - v_ref

    gl_nodes, gl_weights = np.polynomial.legendre.leggauss(32)
    log_mass = -vals + np.sum(_legendre_log_mass(grads, half, gl_nodes, gl_weights), axis=1)
    log_tail = math.log(tail_mass(d, R)) - tail_offset
    all_log = np.concatenate([log_mass, [log_tail]])
    top = all_log.max()
    probs = np.exp(all_log - top)
    probs /= probs.sum()

    lookup = -np.ones((2 * kmax + 1,) * d, dtype=np.int64)
    lookup[tuple((ints + kmax).T)] = np.arange(len(nodes))

    def cube_index(X):
        idx = np.rint(X / spacing).astype(np.int64)
        inside = np.all(np.abs(idx) <= kmax, axis=1)
        out = -np.ones(len(X), dtype=np.int64)
        out[inside] = lookup[tuple((idx[inside] + kmax).T)]
        return out

    def log_vhat_density(X, idx):
        u = X - nodes[idx]
        return -(vals[idx] + np.sum(grads[idx] * u, axis=1) - 0.5 * np.sum(u * u, axis=1))

    def log_tail_density(X):
        excess = np.maximum(np.linalg.norm(X, axis=1) - R, 0.0)
        return -0.5 * excess**2 - tail_offset

    def log_density(X):
        X = np.asarray(X, dtype=float).reshape(-1, d)
        r = np.linalg.norm(X, axis=1)
        out = log_tail_density(X)
        inner = r <= R
        if np.any(inner):
            out[inner] = log_vhat_density(X[inner], cube_index(X[inner]))
        return out

    def proposal_log_density(X):
        """Mixture density of the cube pieces plus the tail piece."""
        idx = cube_index(X)
        r = np.linalg.norm(X, axis=1)
        cube = np.full(len(X), -np.inf)
        has = idx >= 0
        cube[has] = log_vhat_density(X[has], idx[has])
        tail = np.where(r > R, log_tail_density(X), -np.inf)
        return np.logaddexp(cube, tail)

    def sampler(rng, size):
        out = np.empty((size, d))
        filled = 0
        while filled < size:
            want = size - filled
            comp = rng.choice(len(all_log), size=want, p=probs)
            X = np.empty((want, d))
            is_tail = comp == len(nodes)
            n_tail = int(is_tail.sum())
            if n_tail:
                radii = R + _tail_radii(rng, n_tail, d, R)
                dirs = (np.where(rng.random(n_tail) < 0.5, -1.0, 1.0)[:, None] if d == 1
                        else _uniform_directions(rng, n_tail, d))
                X[is_tail] = radii[:, None] * dirs
            cube = ~is_tail
            if np.any(cube):
                c = comp[cube]
                X[cube] = nodes[c] + _sample_cube_coord(rng, grads[c], half)
            # thin the proposal mixture to the exact envelope (free: no queries)
            keep_p = np.exp(log_density(X) - proposal_log_density(X))
            X = X[rng.random(want) < np.minimum(keep_p, 1.0)]
            take = min(len(X), want)
            out[filled:filled + take] = X[:take]
            filled += take
        return out

    info = {"net_size": int(len(nodes)), "spacing": spacing,
            "covering_radius": half * math.sqrt(d)}
    return Envelope(log_density, sampler, math.e, v_ref, d, "grid", info)


# ----------------------------------------------------------------------------
# exact sampling from a bump instance (test utility)
# ----------------------------------------------------------------------------


def exact_target_sample(instance: BumpInstance, rng, size: int | None = None,
                        max_expected_trials: float = 1e4, return_trials: bool = False):
    """Exact draws from ``pi_omega`` by rejection from ``pi_init``.

    Uses ``pi~_omega <= exp(r^2 phi(0)) pi~_init``; the acceptance probability
    of a proposal ``x`` is ``exp(r^2 (phi(|x - omega|/r) - phi(0)))``. This
    evaluates the potential directly and is a test utility, not an
    algorithm in the query model.
    """
    ints = instance.integrals
    expected = math.exp(instance.log_peak) * ints.Z_init / ints.Z_omega
    if expected > max_expected_trials:
        raise ValueError(f"expected {expected:.3g} trials per sample exceeds the guard")
    n = 1 if size is None else size
    d, r, R = instance.d, instance.r, instance.R
    omega = instance.omega
    out = np.empty((n, d))
    filled, trials = 0, 0
    while filled < n:
        want = n - filled
        batch = int(math.ceil(1.2 * want * expected)) + 8
        X = sample_pi_init(d, R, rng, batch)
        s = np.linalg.norm(X - omega, axis=1) / r
        phi, _, _ = phi_eval(s, instance.profile)
        acc = rng.random(batch) < np.exp(r * r * (phi - instance.profile.phi0))
        idx = np.flatnonzero(acc)[:want]
        # count proposals up to and including the last one used
        trials += (idx[-1] + 1) if len(idx) == want else batch
        out[filled:filled + len(idx)] = X[idx]
        filled += len(idx)
    res = out[0] if size is None else out
    return (res, trials) if return_trials else res
