"""Hard-instance family: flat ball, Gaussian-type tail and one hidden bump.

The unnormalized target for a packing center ``omega`` is::

    exp(r**2 * phi(|x - omega| / r) - (|x| - R)_+**2 / 2)

and the null measure drops the bump term. ``r`` and ``R`` are tied so that
exactly half of the mass sits in the bump.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, special

from .bump import (
    DEFAULT_PROFILE,
    BumpProfile,
    SmoothPotential,
    phi_and_slope,
    phi_scalar,
)

SCHEMA_VERSION = 1
PROFILE_TAG = "corrected-footnote-v1"

# Smallest R / sqrt(d) for which the solved pair has R / r >= 2 for every
# d <= 3, rounded up. See calibrate_c_R.
DEFAULT_C_R = 7.0
DEFAULT_C_PI = 1.0


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved relative error {achieved:.3g})")
        self.achieved = achieved


class SchemaError(ValueError):
    """Malformed or incompatible instance file."""


class EpsilonTooLargeError(ValueError):
    """Requested accuracy is outside the regime where the construction is valid."""


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def unit_sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d, ``d * V_d``."""
    return d * unit_ball_volume(d)


def _quad(fn, a, b, tol, points=None):
    val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=tol, limit=200, points=points)[:2]
    scale = max(abs(val), 1e-300)
    if err > 10 * tol * scale:
        raise QuadratureError("radial quadrature did not converge", err / scale)
    return val


def radial_bump_integral(d: int, r: float, tol: float = 1e-10,
                         profile: BumpProfile = DEFAULT_PROFILE) -> float:
    """``I_r``, the integral of ``exp(r**2 phi(|x|))`` over the unit ball."""
    if r < 0 or tol <= 0:
        raise ValueError("need r >= 0 and tol > 0")
    return (unit_sphere_area(d) * math.exp(r * r * profile.phi0)
            * _scaled_bump_integral(d, r, tol, profile))


def _scaled_bump_integral(d, r, tol, profile):
    """``int_0^1 s^(d-1) exp(r^2 (phi(s) - phi(0))) ds``.

    The quadratic cap is integrated in closed form (incomplete gamma); the
    polynomial branch by adaptive quadrature.
    """
    r2 = r * r
    if r == 0.0:
        cap = profile.alpha**d / d
    else:
        a = 0.5 * d
        cap = (2.0 ** (a - 1) * special.gamma(a) * special.gammainc(a, 0.5 * r2 * profile.alpha**2)
               / r**d)

    def integrand(s):
        return s ** (d - 1) * math.exp(r2 * (phi_scalar(s, profile) - profile.phi0))

    return cap + _quad(integrand, profile.alpha, 1.0, tol)


def tail_mass(d: int, R: float, tol: float = 1e-10) -> float:
    """Mass of ``exp(-(|x| - R)_+**2 / 2)`` outside the ball of radius ``R``."""
    if R < 0:
        raise ValueError("R must be non-negative")
    # mode of (s + R)^(d-1) exp(-s^2/2); truncate 12 standard deviations past it
    mode = 0.5 * (-R + math.sqrt(R * R + 4 * (d - 1)))
    upper = mode + 12.0

    def integrand(s):
        return (s + R) ** (d - 1) * math.exp(-0.5 * s * s)

    pts = [mode] if mode > 0 else None
    return unit_sphere_area(d) * _quad(integrand, 0.0, upper, tol, points=pts)


def _phi_moment(d: int, profile: BumpProfile, tol: float = 1e-12) -> float:
    """``int_0^1 s^(d-1) phi(s) ds``."""

    def integrand(s):
        return s ** (d - 1) * phi_scalar(s, profile)

    return _quad(integrand, 0.0, profile.alpha, tol) + _quad(integrand, profile.alpha, 1.0, tol)


@dataclass(frozen=True)
class RadialIntegrals:
    I_r: float
    V_d: float
    A_d1: float
    tail: float
    Z_omega: float
    Z_init: float


def radial_integrals(d: int, r: float, R: float, tol: float = 1e-10,
                     profile: BumpProfile = DEFAULT_PROFILE) -> RadialIntegrals:
    I_r = radial_bump_integral(d, r, tol, profile)
    V_d = unit_ball_volume(d)
    tail = tail_mass(d, R, tol)
    Z_omega = tail + (R**d - r**d) * V_d + r**d * I_r
    Z_init = tail + V_d * R**d
    return RadialIntegrals(I_r, V_d, unit_sphere_area(d), tail, Z_omega, Z_init)


# ----------------------------------------------------------------------------
# solving for (r, R)
# ----------------------------------------------------------------------------


def bump_side(d: int, r: float, profile: BumpProfile = DEFAULT_PROFILE) -> float:
    """``(I_r + V_d) r^d``."""
    return (radial_bump_integral(d, r, profile=profile) + unit_ball_volume(d)) * r**d


def _log_bump_side(d, r, profile):
    if r == 0.0:
        return -math.inf
    lead = r * r * profile.phi0
    inner = unit_sphere_area(d) * _scaled_bump_integral(d, r, 1e-10, profile)
    return lead + math.log(inner + unit_ball_volume(d) * math.exp(-lead)) + d * math.log(r)


def flat_side(d: int, R: float) -> float:
    """Tail mass plus ``V_d R^d``; equals ``Z_init``."""
    return tail_mass(d, R) + unit_ball_volume(d) * R**d


@dataclass
class RSolution:
    r: float
    residual: float
    trace: list = field(repr=False, default_factory=list)


def solve_r_given_R(d: int, R: float, rtol: float = 1e-13,
                    profile: BumpProfile = DEFAULT_PROFILE, return_trace: bool = False):
    """Bump radius ``r`` giving the bump exactly half of the mass.

    Brent's method on ``log f - log g`` over a bracket starting at
    ``(0, R]`` (widened if needed), to relative tolerance ``rtol``. With
    ``return_trace`` an :class:`RSolution` carrying the visited
    ``(r, log f(r))`` pairs is returned.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    log_target = math.log(flat_side(d, R))
    lo, hi = 0.0, float(R)
    trace = [(0.0, -math.inf)]
    f_hi = _log_bump_side(d, hi, profile)
    trace.append((hi, f_hi))
    widen = 0
    while f_hi < log_target:
        lo, hi = hi, 2.0 * hi
        f_hi = _log_bump_side(d, hi, profile)
        trace.append((hi, f_hi))
        widen += 1
        if widen > 60:
            raise RuntimeError(f"could not bracket r for d={d}, R={R}")
    if lo == 0.0:
        lo = 1e-6 * hi
        while _log_bump_side(d, lo, profile) >= log_target:
            lo *= 1e-3

    def gap(r_):
        val = _log_bump_side(d, r_, profile)
        trace.append((r_, val))
        return val - log_target

    r = optimize.brentq(gap, lo, hi, xtol=rtol * lo, rtol=max(rtol, 4 * np.finfo(float).eps),
                        maxiter=200)
    residual = abs(math.expm1(_log_bump_side(d, r, profile) - log_target))
    if return_trace:
        return RSolution(r, residual, trace)
    return r


def choose_R_residual(d: int, R: float, r: float, eps: float, c_pi: float,
                      profile: BumpProfile = DEFAULT_PROFILE) -> float:
    """Relative residual of ``R^2 exp(r^2 phi(0)) = 2d / (9 c_pi eps^2)``."""
    target = 2 * d / (9 * c_pi * eps**2)
    return abs(R * R * math.exp(r * r * profile.phi0) - target) / target


def solve_R_given_eps(d: int, eps: float, c_pi: float = DEFAULT_C_PI,
                      c_R: float = DEFAULT_C_R, profile: BumpProfile = DEFAULT_PROFILE):
    """Outer radius and bump radius for accuracy ``eps``.

    In one dimension the sharpened Poincaré bound gives ``R = 1 / (3 sqrt(c_pi) eps)``.
    In higher dimension ``R^2 exp(r(R)^2 phi(0)) = 2d / (9 c_pi eps^2)`` is solved
    by a bracketing root finder over ``log R``.

    Raises
    ------
    EpsilonTooLargeError
        If the solved ``R`` is below ``c_R sqrt(d)``.
    """
    if eps <= 0 or c_pi <= 0:
        raise ValueError("eps and c_pi must be positive")
    if d == 1:
        R = 1.0 / (3.0 * math.sqrt(c_pi) * eps)
    else:
        log_target = math.log(2 * d / (9 * c_pi * eps**2))

        def gap(logR):
            R_ = math.exp(logR)
            r_ = solve_r_given_R(d, R_, profile=profile)
            return 2 * logR + r_ * r_ * profile.phi0 - log_target

        hi = 0.5 * log_target  # R^2 = target already overshoots
        lo = math.log(1e-3)
        if gap(lo) > 0:
            raise EpsilonTooLargeError(f"eps={eps} too large for d={d}")
        R = math.exp(optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200))
    if R < c_R * math.sqrt(d):
        raise EpsilonTooLargeError(
            f"eps={eps} too large for d={d}: R={R:.4g} < c_R*sqrt(d)={c_R * math.sqrt(d):.4g}"
        )
    r = solve_r_given_R(d, R, profile=profile)
    return R, r


def calibrate_c_R(dims=(1, 2, 3), profile: BumpProfile = DEFAULT_PROFILE) -> dict:
    """Per-dimension ``R / sqrt(d)`` at which the solved ``R / r`` crosses 2."""
    out = {}
    for d in dims:
        def gap(R):
            return R / solve_r_given_R(d, R, rtol=1e-10, profile=profile) - 2.0

        lo, hi = 0.5 * math.sqrt(d), 50.0 * math.sqrt(d)
        out[d] = optimize.brentq(gap, lo, hi, xtol=1e-8) / math.sqrt(d)
    return out


# ----------------------------------------------------------------------------
# packings
# ----------------------------------------------------------------------------


def build_packing(d: int, r: float, R: float, spacing: float | None = None,
                  max_candidates: int = 4_000_000) -> np.ndarray:
    """Maximal ``2r``-packing of the ball of radius ``R - r``.

    One dimension uses the arithmetic grid ``2r k`` centered at zero; higher
    dimensions run greedy insertion over a cubic lattice of spacing ``r / 4``
    (lexicographic order).
    """
    if r <= 0 or R - r < 0:
        raise ValueError(f"degenerate packing: need 0 < r <= R, got r={r}, R={R}")
    rad = R - r
    if d == 1:
        k = int(math.floor(rad / (2 * r) + 1e-12))
        return (2 * r * np.arange(-k, k + 1, dtype=float))[:, None]
    h = spacing if spacing is not None else r / 4.0
    n_side = int(math.floor(rad / h + 1e-12))
    if (2 * n_side + 1) ** d > max_candidates:
        raise ValueError("candidate lattice too large; increase spacing or reduce R/r")
    ticks = h * np.arange(-n_side, n_side + 1, dtype=float)
    accepted = []
    min_sq = (2 * r) ** 2 * (1 - 1e-12)
    limit_sq = rad * rad * (1 + 1e-12)
    acc = np.empty((0, d))
    for pt in itertools.product(ticks, repeat=d):
        p = np.array(pt)
        if p @ p > limit_sq:
            continue
        if acc.shape[0] == 0 or np.min(np.sum((acc - p) ** 2, axis=1)) >= min_sq:
            accepted.append(p)
            acc = np.array(accepted)
    return acc


def packing_is_valid(centers: np.ndarray, r: float, R: float, atol: float = 1e-9) -> bool:
    centers = np.asarray(centers, dtype=float)
    if np.any(np.linalg.norm(centers, axis=1) > R - r + atol):
        return False
    if len(centers) > 1:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        np.fill_diagonal(dist, np.inf)
        if np.min(dist) < 2 * r - atol:
            return False
    return True


# ----------------------------------------------------------------------------
# the instance
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BumpInstance:
    """A solved hard instance: radii, packing and the selected center."""

    d: int
    r: float
    R: float
    centers: np.ndarray
    omega_index: int = 0
    profile: BumpProfile = DEFAULT_PROFILE
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, self.d)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        if not 0 <= self.omega_index < len(c):
            raise ValueError(f"omega_index {self.omega_index} out of range for {len(c)} centers")

    @property
    def M(self) -> int:
        return len(self.centers)

    @property
    def omega(self) -> np.ndarray:
        return self.centers[self.omega_index]

    @property
    def log_peak(self) -> float:
        """``r^2 phi(0)``, the sup of the log density ratio to the null measure."""
        return self.r**2 * self.profile.phi0

    @cached_property
    def integrals(self) -> RadialIntegrals:
        return radial_integrals(self.d, self.r, self.R, profile=self.profile)

    def with_omega(self, index: int) -> "BumpInstance":
        return BumpInstance(self.d, self.r, self.R, self.centers, index, self.profile,
                            dict(self.constants))

    def potential(self) -> SmoothPotential:
        omega, r, R, prof = self.omega.copy(), self.r, self.R, self.profile

        def ev(X):
            return _bump_potential(X, omega, r, R, prof)

        return SmoothPotential(self.d, 1.0, ev, name=f"bump[{self.omega_index}]")

    def init_potential(self) -> SmoothPotential:
        R = self.R

        def ev(X):
            return _tail_potential(X, R)

        return SmoothPotential(self.d, 1.0, ev, name="pi_init")

    def bump_mass(self) -> float:
        """``pi_omega(omega + B_r)`` by radial decomposition."""
        ints = self.integrals
        return self.r**self.d * ints.I_r / ints.Z_omega

    def equation_residual(self) -> float:
        """Relative residual of the half-mass equation tying ``r`` and ``R``."""
        target = flat_side(self.d, self.R)
        return abs(bump_side(self.d, self.r, self.profile) - target) / target

    def init_kl(self) -> float:
        """``KL(pi_init || pi_omega)`` by radial quadrature."""
        ints = self.integrals
        mean_bump = (self.r ** (self.d + 2) * ints.A_d1 * _phi_moment(self.d, self.profile)
                     / ints.Z_init)
        return math.log(ints.Z_omega / ints.Z_init) - mean_bump


def _tail_potential(X, R):
    norm = np.linalg.norm(X, axis=1)
    excess = np.maximum(norm - R, 0.0)
    safe = np.where(norm > 0, norm, 1.0)
    return 0.5 * excess**2, (excess / safe)[:, None] * X


def _bump_potential(X, omega, r, R, profile):
    diff = X - omega
    s = np.linalg.norm(diff, axis=1) / r
    phi, slope = phi_and_slope(s, profile)
    v_tail, g_tail = _tail_potential(X, R)
    values = -r * r * phi + v_tail
    grads = -slope[:, None] * diff + g_tail
    return values, grads


def _check_point(x, d):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"dimension mismatch: expected ({d},), got {x.shape}")
    return x


def potential_eval(instance: BumpInstance, x):
    """``(V(x), grad V(x))`` for the instance's selected center."""
    x = _check_point(x, instance.d)
    v, g = _bump_potential(x[None, :], instance.omega, instance.r, instance.R, instance.profile)
    return float(v[0]), g[0]


def init_potential_eval(d: int, R: float, x):
    """``(V, grad V)`` of the null measure."""
    x = _check_point(x, d)
    v, g = _tail_potential(x[None, :], R)
    return float(v[0]), g[0]


def solve_instance(d: int, eps: float, c_pi: float = DEFAULT_C_PI, c_R: float = DEFAULT_C_R,
                   omega_index: int | None = None,
                   profile: BumpProfile = DEFAULT_PROFILE) -> BumpInstance:
    """Solve ``(r, R)`` for ``eps``, build the packing and pick a center.

    The default center is the one closest to the origin.
    """
    R, r = solve_R_given_eps(d, eps, c_pi, c_R, profile)
    centers = build_packing(d, r, R)
    if omega_index is None:
        omega_index = int(np.argmin(np.linalg.norm(centers, axis=1)))
    return BumpInstance(d, r, R, centers, omega_index, profile,
                        {"eps": eps, "c_pi": c_pi, "c_R": c_R})


def instance_from_radius(d: int, R: float, omega_index: int | None = None,
                         profile: BumpProfile = DEFAULT_PROFILE, **constants) -> BumpInstance:
    """Instance with an explicit flat radius ``R`` (no regime check on ``R``)."""
    r = solve_r_given_R(d, R, profile=profile)
    centers = build_packing(d, r, R)
    if omega_index is None:
        omega_index = int(np.argmin(np.linalg.norm(centers, axis=1)))
    return BumpInstance(d, r, R, centers, omega_index, profile, dict(constants))


def rescale(potential: SmoothPotential, beta: float) -> SmoothPotential:
    """``x -> V(x / sqrt(beta))``; a ``beta``-smooth input becomes 1-smooth."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    inner = potential.evaluator
    root = math.sqrt(beta)

    def ev(X):
        v, g = inner(X / root)
        return v, g / root

    return SmoothPotential(potential.d, potential.beta / beta, ev,
                           name=f"rescaled({potential.name})")


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

_REQUIRED = ("schema_version", "d", "r", "R", "centers", "omega_index", "phi")


def instance_to_dict(instance: BumpInstance) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "d": int(instance.d),
        "r": float(instance.r),
        "R": float(instance.R),
        "centers": [[float(v) for v in c] for c in instance.centers],
        "omega_index": int(instance.omega_index),
        "phi": instance.profile.name,
        "constants": dict(instance.constants),
    }


def instance_from_dict(data: dict, residual_tol: float = 1e-6) -> BumpInstance:
    for key in _REQUIRED:
        if key not in data:
            raise SchemaError(f"instance file is missing required key '{key}'")
    if data["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported schema_version {data['schema_version']} (expected {SCHEMA_VERSION})"
        )
    if data["phi"] != PROFILE_TAG:
        raise SchemaError(f"unknown bump profile '{data['phi']}'")
    d = int(data["d"])
    centers = np.asarray(data["centers"], dtype=float)
    if centers.ndim != 2 or centers.shape[1] != d:
        raise SchemaError(f"'centers' must be a list of {d}-vectors")
    inst = BumpInstance(d, float(data["r"]), float(data["R"]), centers,
                        int(data["omega_index"]), DEFAULT_PROFILE,
                        dict(data.get("constants", {})))
    res = inst.equation_residual()
    if res > residual_tol:
        warnings.warn(f"instance radii violate the half-mass equation (residual {res:.3g})")
    return inst


def serialize_instance(instance: BumpInstance, path) -> None:
    # json writes floats with repr, the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2) + "\n")


def load_instance(path, residual_tol: float = 1e-6) -> BumpInstance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"instance file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("instance file must hold a JSON object")
    return instance_from_dict(data, residual_tol)
