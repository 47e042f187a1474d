"""One-dimensional law tracking and divergence / functional-inequality diagnostics.

Densities live on a uniform grid (:class:`GridDensity1D`). Each grid value is
read as the average density over a cell of width ``spacing`` centred on the
node, which makes the LMC transition kernel below mass-conserving and well
behaved for arbitrarily small step sizes.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse, special

from .bump import SmoothPotential

DENSITY_FLOOR = 1e-300


class DomainTooSmallError(ValueError):
    """The grid does not cover the effective support of a density."""


class PreconditionError(ValueError):
    """A numerical method was called outside its validity range."""


class SupportMismatchError(ValueError):
    """Two grid densities do not share a grid or a support."""


# ----------------------------------------------------------------------------
# grid densities
# ----------------------------------------------------------------------------


def trapezoid(values, spacing: float) -> float:
    values = np.asarray(values, dtype=float)
    return float(spacing * (values.sum() - 0.5 * (values[0] + values[-1])))


@dataclass(frozen=True, eq=False)
class GridDensity1D:
    """Probability density sampled on ``n`` uniform nodes of ``[lo, hi]``.

    The constructor normalizes ``values`` by the trapezoid rule.
    """

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 3:
            raise ValueError("a grid density needs at least 3 nodes")
        if not self.hi > self.lo:
            raise ValueError("grid requires hi > lo")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite and non-negative")
        mass = trapezoid(v, (self.hi - self.lo) / (v.size - 1))
        if mass <= 0:
            raise ValueError("density has zero mass")
        v /= mass
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def mass(self) -> float:
        return trapezoid(self.values, self.spacing)

    def mean(self) -> float:
        return trapezoid(self.x * self.values, self.spacing)

    def var(self) -> float:
        m = self.mean()
        return trapezoid((self.x - m) ** 2 * self.values, self.spacing)

    def expect(self, f_values) -> float:
        return trapezoid(np.asarray(f_values) * self.values, self.spacing)

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral at the nodes (starts at 0, ends at 1)."""
        v = self.values
        inc = 0.5 * self.spacing * (v[1:] + v[:-1])
        return np.concatenate([[0.0], np.cumsum(inc)])

    def cdf_at(self, points) -> np.ndarray:
        return np.interp(points, self.x, self.cdf(), left=0.0, right=1.0)

    def same_grid(self, other: "GridDensity1D") -> bool:
        return self.n == other.n and self.lo == other.lo and self.hi == other.hi

    def with_values(self, values) -> "GridDensity1D":
        return GridDensity1D(self.lo, self.hi, values)


def uniform_grid(lo: float, hi: float, n: int) -> GridDensity1D:
    return GridDensity1D(lo, hi, np.ones(n))


def gaussian_grid(mean: float, var: float, lo: float, hi: float, n: int) -> GridDensity1D:
    x = np.linspace(lo, hi, n)
    return GridDensity1D(lo, hi, np.exp(-0.5 * (x - mean) ** 2 / var))


def _values_and_grads(potential, x):
    """Evaluate a 1-D potential on nodes. Accepts a SmoothPotential or a
    callable mapping an array of points to ``(values, grads)``."""
    x = np.asarray(x, dtype=float)
    if isinstance(potential, SmoothPotential):
        if potential.d != 1:
            raise ValueError("law tracking is one-dimensional")
        v, g = potential.batch(x[:, None])
        return v, g[:, 0]
    v, g = potential(x)
    return np.asarray(v, dtype=float), np.asarray(g, dtype=float).reshape(x.shape)


def grid_from_potential(potential, lo: float, hi: float, n: int,
                        tail_tol: float = 1e-12) -> GridDensity1D:
    """``exp(-V)`` on the grid, normalized.

    Raises
    ------
    DomainTooSmallError
        If the density at either end exceeds ``tail_tol`` times its peak.
    """
    x = np.linspace(lo, hi, n)
    v, _ = _values_and_grads(potential, x)
    logd = -(v - v.min())
    dens = np.exp(logd)
    edge = max(dens[0], dens[-1])
    if edge > tail_tol:
        raise DomainTooSmallError(
            f"density at the domain edge is {edge:.3g} of its peak; widen [lo, hi]"
        )
    return GridDensity1D(lo, hi, dens)


def export_csv(grid: GridDensity1D, path) -> None:
    """Write a two-column ``x,density`` CSV."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for xi, vi in zip(grid.x, grid.values):
            w.writerow([f"{xi:.10g}", f"{vi:.10g}"])


# ----------------------------------------------------------------------------
# law evolution
# ----------------------------------------------------------------------------


def _G(z):
    """Antiderivative of the standard normal CDF, split as
    ``G(z) = max(z, 0) + G(-|z|)`` for tail accuracy."""
    a = np.abs(z)
    return np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi) - a * special.ndtr(-a)


def _cell_kernel(a, b, c_lo, c_hi, sigma):
    """Probability that ``U + sigma * xi`` lands in ``[c_lo, c_hi]`` with
    ``U ~ Uniform[a, b]``."""
    z = np.stack([(c_hi - a), (c_hi - b), (c_lo - a), (c_lo - b)]) / sigma
    sign = np.array([1.0, -1.0, -1.0, 1.0]).reshape(4, *([1] * (z.ndim - 1)))
    tails = np.sum(sign * _G(z), axis=0)
    linear = np.sum(sign * np.maximum(z, 0.0), axis=0)
    # the linear parts cancel exactly when all four arguments share a sign
    same = np.all(z >= 0, axis=0) | np.all(z <= 0, axis=0)
    linear = np.where(same, 0.0, linear)
    width = np.maximum(b - a, 1e-300)
    return np.clip(sigma * (tails + linear) / width, 0.0, 1.0)


def lmc_transition(potential, lo: float, hi: float, n: int, tau: float,
                   beta: float | None = None, band: float = 10.0,
                   compensate: bool = True):
    """Sparse transition matrix of one LMC update of length ``tau``.

    Column ``i`` holds the distribution over target cells of
    ``T(U) + sqrt(2 tau) xi`` where ``U`` is uniform on source cell ``i``
    and ``T(x) = x - tau V'(x)``; the image of a cell is approximated as
    uniform on ``[T(left edge), T(right edge)]``. Applying the matrix to
    cell masses realizes the drift pushforward followed by the Gaussian
    convolution.

    Re-projecting onto cells adds a variance of about ``spacing**2 / 6`` per
    application; with ``compensate`` the Gaussian variance is reduced by
    that amount whenever it is large enough to absorb it.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if beta is None:
        beta = getattr(potential, "beta", None)
    if beta is not None and tau * beta >= 1.0:
        raise PreconditionError(
            f"tau * beta = {tau * beta:.3g} >= 1; the drift map is not invertible"
        )
    dx = (hi - lo) / (n - 1)
    edges = lo + dx * (np.arange(n + 1) - 0.5)
    _, g = _values_and_grads(potential, edges)
    img = edges - tau * g
    if np.any(np.diff(img) <= 0):
        raise PreconditionError("drift map is not strictly increasing on the grid")
    a, b = img[:-1], img[1:]
    var = 2.0 * tau
    if compensate and var > dx * dx / 3.0:
        var -= dx * dx / 6.0
    sigma = math.sqrt(var)
    reach = band * sigma + 0.5 * (b - a).max() + dx
    half = int(math.ceil(reach / dx))
    center = np.rint((0.5 * (a + b) - lo) / dx).astype(np.int64)
    offsets = np.arange(-half, half + 1)
    rows = center[None, :] + offsets[:, None]
    cols = np.broadcast_to(np.arange(n), rows.shape)
    keep = (rows >= 0) & (rows < n)
    r_k, c_k = rows[keep], cols[keep]
    y = lo + dx * r_k
    vals = _cell_kernel(a[c_k], b[c_k], y - 0.5 * dx, y + 0.5 * dx, sigma)
    mat = sparse.csr_matrix((vals, (r_k, c_k)), shape=(n, n))
    mat.eliminate_zeros()
    return mat


def _apply(mat, values, max_loss):
    out = mat @ values
    lost = 1.0 - out.sum() / values.sum()
    if lost > max_loss:
        raise DomainTooSmallError(f"an LMC step leaked {lost:.3g} of the mass out of the grid")
    return out


def evolve_lmc_law(potential, mu0: GridDensity1D, h: float, steps: int,
                   beta: float | None = None, max_loss: float = 1e-6) -> list:
    """Exact-in-law LMC: returns ``[mu_0, mu_h, ..., mu_{steps h}]``.

    Raises
    ------
    PreconditionError
        If ``h * beta >= 1`` (drift map not invertible).
    DomainTooSmallError
        If a step loses more than ``max_loss`` of the mass through the edges.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    mat = lmc_transition(potential, mu0.lo, mu0.hi, mu0.n, h, beta)
    laws = [mu0]
    cur = np.array(mu0.values)
    for _ in range(steps):
        cur = _apply(mat, cur, max_loss)
        laws.append(mu0.with_values(cur))
    return laws


def _partial_times(h, refinement):
    return (np.arange(refinement) + 0.5) * h / refinement


def averaged_law(laws, h: float, refinement: int = 0, potential=None,
                 beta: float | None = None) -> GridDensity1D:
    """Uniform-in-time mixture over ``[0, N h]`` of an LMC run.

    ``laws`` are the step-start laws ``mu_0, ..., mu_{N-1}``. With
    ``refinement = m > 0`` each step interval is represented by ``m``
    midpoint partial updates of length ``(j + 1/2) h / m`` (this needs
    ``potential``); ``refinement = 0`` averages the step-start laws only.
    """
    laws = list(laws)
    if not laws:
        raise ValueError("averaged_law needs at least one law")
    ref = laws[0]
    total = np.zeros(ref.n)
    for law in laws:
        if not law.same_grid(ref):
            raise SupportMismatchError("all laws must share one grid")
        total += law.values
    return _mix_partial(total, ref, h, refinement, potential, beta)


def _mix_partial(total, ref, h, refinement, potential, beta):
    if refinement == 0:
        return ref.with_values(total)
    if potential is None:
        raise ValueError("partial updates need the potential")
    acc = np.zeros(ref.n)
    for tau in _partial_times(h, refinement):
        mat = lmc_transition(potential, ref.lo, ref.hi, ref.n, float(tau), beta)
        acc += mat @ total
    return ref.with_values(acc)


def averaged_lmc_law(potential, mu0: GridDensity1D, h: float, N: int,
                     refinement: int = 8, beta: float | None = None,
                     checkpoints=None, max_loss: float = 1e-6):
    """Law of averaged LMC after ``N`` steps, without storing the trajectory.

    With ``checkpoints`` (increasing step counts ``<= N``) a dict
    ``{k: law}`` of averaged laws at each checkpoint is returned instead.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    marks = sorted(set(checkpoints)) if checkpoints is not None else [N]
    if marks[0] < 1 or marks[-1] > N:
        raise ValueError("checkpoints must lie in [1, N]")
    mat = lmc_transition(potential, mu0.lo, mu0.hi, mu0.n, h, beta)
    cur = np.array(mu0.values)
    total = np.zeros(mu0.n)
    out = {}
    for k in range(1, marks[-1] + 1):
        total += cur
        if k in marks:
            out[k] = _mix_partial(total, mu0, h, refinement, potential, beta)
        if k < marks[-1]:
            cur = _apply(mat, cur, max_loss)
    return out if checkpoints is not None else out[N]


def heat_flow(mu: GridDensity1D, t: float) -> GridDensity1D:
    """``mu Q_t``: convolution with ``N(0, t)`` on the same grid."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return mu

    def zero(x):
        return np.zeros_like(x), np.zeros_like(x)

    mat = lmc_transition(zero, mu.lo, mu.hi, mu.n, 0.5 * t, beta=0.0)
    return mu.with_values(mat @ mu.values)


# ----------------------------------------------------------------------------
# divergences
# ----------------------------------------------------------------------------


def _check_pair(mu, pi):
    if not mu.same_grid(pi):
        raise SupportMismatchError("mu and pi must share one grid")
    if np.any((pi.values <= DENSITY_FLOOR) & (mu.values > DENSITY_FLOOR)):
        raise SupportMismatchError("mu is not absolutely continuous w.r.t. pi on the grid")


def score_difference(mu: GridDensity1D, pi: GridDensity1D, window: float = 1e-12):
    """``d/dx ln(mu / pi)`` at the nodes and the mask where it is trusted."""
    _check_pair(mu, pi)
    logr = np.log(np.maximum(mu.values, DENSITY_FLOOR)) - np.log(np.maximum(pi.values, DENSITY_FLOOR))
    score = np.gradient(logr, mu.spacing, edge_order=2)
    mask = mu.values > window * mu.values.max()
    return score, mask


def fisher_information(mu: GridDensity1D, pi: GridDensity1D, window: float = 1e-12) -> float:
    """Relative Fisher information ``int mu (d/dx ln(mu/pi))^2``."""
    score, mask = score_difference(mu, pi, window)
    return trapezoid(np.where(mask, mu.values * score**2, 0.0), mu.spacing)


def richardson(coarse: float, fine: float, order: int = 2):
    """Extrapolated value and relative change between two grid resolutions."""
    ext = fine + (fine - coarse) / (2**order - 1)
    scale = max(abs(fine), 1e-300)
    return ext, abs(fine - coarse) / scale


def divergence(mu: GridDensity1D, pi: GridDensity1D, kind: str = "KL") -> float:
    """``KL(mu || pi)``, ``TV(mu, pi)`` or ``chi2(mu || pi)`` by quadrature."""
    kind_l = kind.lower()
    if kind_l not in ("kl", "tv", "chi2"):
        raise ValueError(f"unknown divergence kind '{kind}'")
    if kind_l == "tv":
        if not mu.same_grid(pi):
            raise SupportMismatchError("mu and pi must share one grid")
        return 0.5 * trapezoid(np.abs(mu.values - pi.values), mu.spacing)
    _check_pair(mu, pi)
    m = mu.values
    p = np.maximum(pi.values, DENSITY_FLOOR)
    if kind_l == "kl":
        integrand = np.where(m > 0, m * (np.log(np.maximum(m, DENSITY_FLOOR)) - np.log(p)), 0.0)
        return trapezoid(integrand, mu.spacing)
    return trapezoid(m * m / p, mu.spacing) - 1.0


# ----------------------------------------------------------------------------
# functional inequalities
# ----------------------------------------------------------------------------


def muckenhoupt_B(pi: GridDensity1D, trim: float = 1e-100) -> float:
    """Two-sided Muckenhoupt constant around the median.

    ``B = max(sup_{x<m} F(x) int_x^m 1/pi, sup_{x>m} S(x) int_m^x 1/pi)``; it
    brackets the Poincare constant as ``B <= C_PI <= 4 B``. Nodes where the
    density is below ``trim`` times its peak are dropped (with a warning)
    to keep ``1/pi`` finite.
    """
    v = pi.values
    keep = v > trim * v.max()
    if not np.all(keep):
        warnings.warn(f"muckenhoupt_B trimmed {int((~keep).sum())} near-zero node(s)")
    idx = np.flatnonzero(keep)
    lo_i, hi_i = idx[0], idx[-1]
    if np.any(~keep[lo_i:hi_i + 1]):
        raise PreconditionError("density vanishes inside the domain")
    x = pi.x[lo_i:hi_i + 1]
    p = v[lo_i:hi_i + 1]
    dx = pi.spacing
    F = pi.cdf()[lo_i:hi_i + 1]
    S = 1.0 - F
    # survival from the right keeps relative accuracy in the right tail
    S_right = np.concatenate([np.cumsum((0.5 * dx * (p[1:] + p[:-1]))[::-1])[::-1], [0.0]])
    S = np.where(F > 0.5, S_right, S)
    m = float(np.interp(0.5, F, x))
    k = int(np.searchsorted(x, m, side="right") - 1)
    inv = 1.0 / p
    inc = 0.5 * dx * (inv[1:] + inv[:-1])
    inv_m = float(np.interp(m, x, inv))
    # integrals of 1/pi anchored at the median avoid cancellation against
    # the huge values accumulated in the tails
    left_int = np.concatenate([np.cumsum(inc[:k][::-1])[::-1], [0.0]])
    left_int += (m - x[k]) * inv_m
    right_int = np.cumsum(np.concatenate([[0.0], inc[k + 1:]]))
    right_int += (x[k + 1] - m) * inv_m if k + 1 < len(x) else 0.0
    b_left = float(np.max(F[:k + 1] * left_int))
    b_right = float(np.max(S[k + 1:] * right_int)) if k + 1 < len(x) else 0.0
    return float(max(b_left, b_right))


def holley_stroock_bound(cpi_base: float, log_ratio_bound: float) -> float:
    """Poincare constant after a bounded perturbation: ``cpi_base * exp(osc)``."""
    if cpi_base < 0 or log_ratio_bound < 0:
        raise ValueError("holley_stroock_bound needs non-negative inputs")
    return cpi_base * math.exp(log_ratio_bound)


def fi_tv_bound(cpi: float, fi: float) -> float:
    """TV upper bound ``sqrt(cpi * fi / 4)``."""
    if cpi < 0 or fi < 0:
        raise ValueError("fi_tv_bound needs non-negative inputs")
    return math.sqrt(cpi * fi / 4.0)


def grad_second_moment_bound(mu: GridDensity1D, potential, beta: float, d: int = 1):
    """``(E_mu |V'|^2, FI(mu || pi) + 2 beta d, slack)`` with ``pi ~ exp(-V)``."""
    x = mu.x
    v, g = _values_and_grads(potential, x)
    pi = mu.with_values(np.exp(-(v - v.min())))
    moment = mu.expect(g**2)
    bound = fisher_information(mu, pi) + 2.0 * beta * d
    return moment, bound, bound - moment


def kl_init_bound(delta: float, beta: float, d: int, m: float, constant: float = 1.0) -> float:
    """``constant * (Delta + d * max(1, ln(beta m^2)))``."""
    if m <= 0:
        raise ValueError("m must be positive")
    if beta <= 0:
        raise ValueError("beta must be positive")
    return constant * (delta + d * max(1.0, math.log(beta * m * m)))


def score_perturbation_check(pi: GridDensity1D, t: float, beta: float, potential=None,
                             band: float = 10.0) -> float:
    """Largest excess of ``|d/dx ln(pi / pi Q_t)|`` over
    ``6 beta sqrt(t) + 2 beta t |V'|`` on the grid.

    ``V'`` comes from ``potential`` when given, otherwise from the grid.
    Nodes within ``band * sqrt(t)`` of the domain edge, where the discrete
    convolution is truncated, are excluded.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0.0
    if beta > 1.0 / (2.0 * t):
        raise PreconditionError("score perturbation bound needs beta <= 1/(2t)")
    smoothed = heat_flow(pi, t)
    x = pi.x
    logp = np.log(np.maximum(pi.values, DENSITY_FLOOR))
    if potential is None:
        vprime = -np.gradient(logp, pi.spacing, edge_order=2)
    else:
        vprime = _values_and_grads(potential, x)[1]
    diff = np.gradient(logp - np.log(np.maximum(smoothed.values, DENSITY_FLOOR)),
                       pi.spacing, edge_order=2)
    margin = band * math.sqrt(t) + 2 * pi.spacing
    inside = (x > pi.lo + margin) & (x < pi.hi - margin)
    inside &= pi.values > 1e-200
    excess = np.abs(diff) - 6.0 * beta * math.sqrt(t) - 2.0 * beta * t * np.abs(vprime)
    return float(np.max(excess[inside]))
