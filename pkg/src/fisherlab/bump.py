"""Bump profile and smoothness primitives shared by every hard instance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Branch point of the concrete profile; below it the profile is an exact
# downward parabola.
ALPHA = 0.25
PHI0 = 11.0 / 64.0


@dataclass(frozen=True)
class BumpProfile:
    """Piecewise-polynomial bump ``phi`` supported on ``[0, 1]``.

    On ``[0, alpha]`` the profile is ``phi0 - s**2 / 2``; on ``[alpha, 1]`` it
    is ``poly(s) / denom`` with ``poly`` given by ``coeffs`` (increasing
    powers); it vanishes beyond 1.
    """

    alpha: float = ALPHA
    phi0: float = PHI0
    coeffs: tuple = (4.0, 8.0, -48.0, 56.0, -20.0)
    denom: float = 27.0
    name: str = "corrected-footnote-v1"

    def __call__(self, s):
        return phi_eval(s, self)


DEFAULT_PROFILE = BumpProfile()


def _poly(coeffs, s):
    out = np.zeros_like(s)
    for c in reversed(coeffs):
        out = out * s + c
    return out


def _poly_derivs(coeffs):
    d1 = tuple(k * c for k, c in enumerate(coeffs))[1:]
    d2 = tuple(k * c for k, c in enumerate(d1))[1:]
    return d1, d2


def phi_eval(s, profile: BumpProfile = DEFAULT_PROFILE):
    """Evaluate the bump profile and its first two derivatives.

    Parameters
    ----------
    s : float or array_like
        Non-negative radial argument.

    Returns
    -------
    phi, dphi, ddphi
        Arrays (or floats for scalar input). Branch points use the left
        branch; at ``s = 0`` the right derivative is returned.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("phi_eval requires s >= 0")
    d1, d2 = _poly_derivs(profile.coeffs)
    cap = arr <= profile.alpha
    mid = (arr > profile.alpha) & (arr <= 1.0)

    phi = np.zeros_like(arr)
    dphi = np.zeros_like(arr)
    ddphi = np.zeros_like(arr)

    phi = np.where(cap, profile.phi0 - 0.5 * arr**2, phi)
    dphi = np.where(cap, -arr, dphi)
    ddphi = np.where(cap, -1.0, ddphi)

    phi = np.where(mid, _poly(profile.coeffs, arr) / profile.denom, phi)
    dphi = np.where(mid, _poly(d1, arr) / profile.denom, dphi)
    ddphi = np.where(mid, _poly(d2, arr) / profile.denom, ddphi)

    if arr.ndim == 0:
        return float(phi), float(dphi), float(ddphi)
    return phi, dphi, ddphi


def dphi_over_s(s, profile: BumpProfile = DEFAULT_PROFILE):
    """``phi'(s) / s``, extended continuously by ``-1`` at ``s = 0``."""
    arr = np.asarray(s, dtype=float)
    _, dphi, _ = phi_eval(arr, profile)
    safe = np.where(arr > profile.alpha, arr, 1.0)
    out = np.where(arr > profile.alpha, dphi / safe, -1.0)
    return float(out) if out.ndim == 0 else out


def phi_scalar(s: float, profile: BumpProfile = DEFAULT_PROFILE) -> float:
    """``phi(s)`` for one float, without array overhead (quadrature integrands)."""
    if s <= profile.alpha:
        return profile.phi0 - 0.5 * s * s
    if s > 1.0:
        return 0.0
    acc = 0.0
    for c in reversed(profile.coeffs):
        acc = acc * s + c
    return acc / profile.denom


def phi_and_slope(s, profile: BumpProfile = DEFAULT_PROFILE):
    """``(phi(s), phi'(s) / s)`` for an array of radii; the pair a potential
    evaluation needs."""
    arr = np.asarray(s, dtype=float)
    d1, _ = _poly_derivs(profile.coeffs)
    cap = arr <= profile.alpha
    mid = (arr > profile.alpha) & (arr <= 1.0)
    safe = np.where(mid, arr, 1.0)
    phi = np.where(cap, profile.phi0 - 0.5 * arr**2,
                   np.where(mid, _poly(profile.coeffs, safe) / profile.denom, 0.0))
    slope = np.where(cap, -1.0, np.where(mid, _poly(d1, safe) / (profile.denom * safe), 0.0))
    return phi, slope


def radial_hessian_eigs(x, center, r: float, profile: BumpProfile = DEFAULT_PROFILE):
    """Hessian eigenvalues of ``z -> r**2 * phi(|z - center| / r)`` at ``x``.

    Returns ``(tangential, radial)``; the tangential value has multiplicity
    ``d - 1``.
    """
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    dist = float(np.linalg.norm(x - center))
    if dist == 0.0:
        raise ZeroDivisionError(
            "Hessian eigenvalues are singular at the center; use the quadratic cap"
        )
    s = dist / r
    _, dphi, ddphi = phi_eval(s, profile)
    return r * dphi / dist, ddphi


@dataclass(frozen=True)
class SmoothPotential:
    """A potential ``V`` with declared dimension and gradient-Lipschitz constant.

    ``evaluator`` is batched: it maps an ``(n, d)`` array to
    ``(values (n,), grads (n, d))``. Calling the potential on a single point
    of shape ``(d,)`` returns ``(float, (d,) array)``.
    """

    d: int
    beta: float
    evaluator: Callable[[np.ndarray], tuple]
    name: str = field(default="potential", compare=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape != (self.d,):
            raise ValueError(f"expected a point of shape ({self.d},), got {x.shape}")
        v, g = self.evaluator(x[None, :])
        return float(v[0]), np.array(g[0], dtype=float)

    def batch(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.d == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected points of shape (n, {self.d}), got {X.shape}")
        v, g = self.evaluator(X)
        return np.asarray(v, dtype=float), np.asarray(g, dtype=float)

    def shifted(self, constant: float) -> "SmoothPotential":
        """Same potential plus an additive constant (identical gradients)."""
        inner = self.evaluator

        def ev(X):
            v, g = inner(X)
            return v + constant, g

        return SmoothPotential(self.d, self.beta, ev, name=f"{self.name}+{constant:g}")

    def scaled(self, factor: float) -> "SmoothPotential":
        """``factor * V``; smoothness scales by ``factor``."""
        inner = self.evaluator

        def ev(X):
            v, g = inner(X)
            return factor * v, factor * g

        return SmoothPotential(self.d, self.beta * factor, ev, name=f"{factor:g}*{self.name}")


def quadratic_potential(d: int = 1, scale: float = 1.0) -> SmoothPotential:
    """``scale * |x|**2 / 2``."""

    def ev(X):
        return 0.5 * scale * np.sum(X**2, axis=1), scale * X

    return SmoothPotential(d, scale, ev, name="quadratic")


@dataclass
class SmoothnessReport:
    max_ratio: float
    worst_pair: tuple | None
    violations: list
    skipped: int
    beta: float

    @property
    def passed(self) -> bool:
        return not self.violations


def smoothness_audit(potential: SmoothPotential, pairs, beta: float, rtol: float = 1e-9):
    """Empirical gradient-Lipschitz check over point pairs.

    Coincident pairs are skipped and counted.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("smoothness_audit needs at least one pair")
    X = np.array([np.atleast_1d(np.asarray(p[0], dtype=float)) for p in pairs])
    Y = np.array([np.atleast_1d(np.asarray(p[1], dtype=float)) for p in pairs])
    _, gx = potential.batch(X)
    _, gy = potential.batch(Y)
    dist = np.linalg.norm(X - Y, axis=1)
    skip = dist == 0.0
    n_skip = int(np.sum(skip))
    if n_skip:
        warnings.warn(f"smoothness_audit skipped {n_skip} coincident pair(s)")
    ratio = np.full(len(pairs), -np.inf)
    ok = ~skip
    ratio[ok] = np.linalg.norm(gx[ok] - gy[ok], axis=1) / dist[ok]
    if not np.any(ok):
        return SmoothnessReport(0.0, None, [], n_skip, beta)
    worst = int(np.argmax(ratio))
    limit = beta * (1.0 + rtol)
    violations = [
        (X[i].copy(), Y[i].copy(), float(ratio[i])) for i in np.flatnonzero(ratio > limit)
    ]
    return SmoothnessReport(
        float(ratio[worst]), (X[worst].copy(), Y[worst].copy()), violations, n_skip, beta
    )
