"""Reproducible experiments: identification game, equivalence demo, scaling
studies and the bound evaluators, with deterministic CSV / JSON output."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import __version__
from .bump import SmoothPotential
from .diagnostics import (
    GridDensity1D,
    averaged_lmc_law,
    divergence,
    fisher_information,
    grid_from_potential,
    heat_flow,
)
from .instance import (
    DEFAULT_C_PI,
    DEFAULT_C_R,
    BumpInstance,
    EpsilonTooLargeError,
    instance_from_radius,
    solve_instance,
)
from .oracle import CountingOracle, InitOracle, gaussian_init, pi_init_oracle
from .samplers import (
    averaged_lmc_batch,
    averaged_lmc_sample,
    rejection_sample,
    warm_start_envelope,
)

CONFIG_SCHEMA_VERSION = 1
GAME_HEADER = ("trial", "omega_index", "queries", "success", "wall_ms")
SCALING_HEADER = ("x", "value", "stderr")


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


# ----------------------------------------------------------------------------
# bound evaluators
# ----------------------------------------------------------------------------


def fano_bound(M: int, N: float) -> float:
    """Lower bound on the identification error after ``N`` queries among ``M``
    candidates: ``max(0, 1 - ((4N/M) ln(M/2) + ln 2) / ln M)``."""
    if M < 4:
        raise ValueError("fano_bound requires M >= 4")
    if N < 0:
        raise ValueError("N must be non-negative")
    return max(0.0, 1.0 - ((4.0 * N / M) * math.log(M / 2.0) + math.log(2.0)) / math.log(M))


def packing_count_bound(d: int, eps: float, c: float = 1.0, c_eps: float | None = None) -> float:
    """``(c d / ln(1/eps))^(d/2) * eps^(-2d/(d+2))``.

    With ``c_eps`` set, ``eps > exp(-c_eps d)`` is rejected as outside the
    regime where the bound is meaningful.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if c_eps is not None and eps > math.exp(-c_eps * d):
        raise EpsilonTooLargeError(
            f"eps={eps:g} exceeds the regime threshold exp(-{c_eps:g} d) for d={d}"
        )
    L = math.log(1.0 / eps)
    return (c * d / L) ** (d / 2.0) * eps ** (-2.0 * d / (d + 2.0))


def packing_nontrivial_threshold(d: int, c: float = 1.0) -> float:
    """Largest ``eps`` below which the packing bound stays at least 1.

    Returns 1.0 when the bound is at least 1 for every ``eps`` in (0, 1).
    """

    def log_bound(L):
        return 0.5 * d * math.log(c * d / L) + 2.0 * d / (d + 2.0) * L

    # log_bound is convex in L with its minimum at L0 = (d + 2) / 4
    L0 = (d + 2.0) / 4.0
    if log_bound(L0) >= 0:
        return 1.0
    hi = 2 * L0
    while log_bound(hi) < 0:
        hi *= 2
    L_star = optimize.brentq(log_bound, L0, hi, xtol=1e-14, rtol=1e-14)
    return math.exp(-L_star)


EMBED_EPS_MAX = math.exp(-math.e)


def optimal_embed_dim(eps: float) -> int:
    """Smallest integer ``d >= 2`` with ``d^2 ln d >= 8 ln(1/eps)``."""
    if not 0 < eps < EMBED_EPS_MAX:
        raise ValueError(f"optimal_embed_dim needs 0 < eps < {EMBED_EPS_MAX:.4g}")
    target = 8.0 * math.log(1.0 / eps)
    d = 2
    while d * d * math.log(d) < target:
        d += 1
    return d


def wilson_interval(successes: int, n: int, z: float = 1.96):
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, mid - half), min(1.0, mid + half)


# ----------------------------------------------------------------------------
# configuration and records
# ----------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything that determines a run (together with the code version)."""

    kind: str
    d: int = 1
    eps: float | None = None
    R: float | None = None
    strategy: str | None = None
    h: float | None = None
    N: int | None = None
    max_iter: int | None = None
    trials: int = 1000
    seed: int = 0
    c_pi: float = DEFAULT_C_PI
    c_R: float = DEFAULT_C_R
    output: str | None = None
    timing: bool = False
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["schema_version"] = CONFIG_SCHEMA_VERSION
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if "kind" not in data:
            raise ConfigError("config is missing required key 'kind'")
        cfg = cls(**data)
        if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
            raise ConfigError("seed must be a 64-bit non-negative integer")
        if cfg.trials < 1:
            raise ConfigError("trials must be positive")
        return cfg

    def digest(self) -> str:
        """sha256 of the canonical JSON form (output path and timing excluded)."""
        payload = self.to_dict()
        payload.pop("output", None)
        payload.pop("timing", None)
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must hold a JSON object")
    return ExperimentConfig.from_dict(data)


@dataclass
class TrialRecord:
    trial: int
    omega_index: int
    queries: int
    success: bool
    wall_ms: float | None = None
    extra: dict = field(default_factory=dict)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one trial (counter-based: trial index -> stream)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.10g}"


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows))


def write_game_csv(path, records) -> None:
    rows = [(r.trial, r.omega_index, r.queries, r.success, r.wall_ms)
            for r in sorted(records, key=lambda r: r.trial)]
    write_csv(path, GAME_HEADER, rows)


def write_scaling_csv(path, table) -> None:
    write_csv(path, SCALING_HEADER, table)


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def write_sidecar(path, config: ExperimentConfig, extra: dict | None = None) -> Path:
    """Run metadata next to a result file (no timestamps, so it is reproducible)."""
    meta = {
        "config_sha256": config.digest(),
        "seed": config.seed,
        "constants": {"c_pi": config.c_pi, "c_R": config.c_R},
        "code_version": __version__,
        "config": config.to_dict(),
    }
    if extra:
        meta["summary"] = extra
    out = sidecar_path(path)
    out.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


# ----------------------------------------------------------------------------
# identification game
# ----------------------------------------------------------------------------


def game_instance(config: ExperimentConfig) -> BumpInstance:
    """Instance family for a game config (``eps`` or explicit ``R``).

    ``params["max_centers"]`` restricts the family to the centers closest to
    the origin; a subset of a packing is still a packing.
    """
    if config.R is not None:
        inst = instance_from_radius(config.d, config.R)
    elif config.eps is not None:
        inst = solve_instance(config.d, config.eps, config.c_pi, config.c_R)
    else:
        raise ConfigError("game config needs 'eps' or 'R'")
    limit = config.params.get("max_centers")
    if limit is not None:
        order = np.lexsort((inst.centers[:, 0], np.linalg.norm(inst.centers, axis=1)))
        keep = np.sort(order[:int(limit)])
        inst = BumpInstance(inst.d, inst.r, inst.R, inst.centers[keep], 0, inst.profile,
                            dict(inst.constants))
    if inst.M < 4:
        raise ConfigError(f"the game needs M >= 4 centers, instance has {inst.M}")
    return inst


def detection_threshold(instance: BumpInstance) -> float:
    return -0.5 * instance.r**2 * instance.profile.phi0


def scan_probe(instance: BumpInstance, oracle: CountingOracle, budget: int):
    """Probe centers in index order; returns ``(found_index or None, probed)``."""
    thr = detection_threshold(instance)
    probed = 0
    for j in range(min(budget, instance.M)):
        v, _ = oracle.query(instance.centers[j])
        probed += 1
        if v < thr:
            return j, probed
    return None, probed


def scan_success_exact(instance: BumpInstance, N: int) -> Fraction:
    """Exact success probability of the scan strategy, enumerating every center.

    The detection step runs against a real oracle for each candidate center;
    the final uniform guess among unprobed centers is accounted exactly.
    """
    total = Fraction(0)
    M = instance.M
    for w in range(M):
        inst_w = instance.with_omega(w)
        oracle = CountingOracle(inst_w.potential(), budget=N)
        found, probed = scan_probe(inst_w, oracle, N)
        if found is not None:
            total += Fraction(int(found == w))
        else:
            total += Fraction(1, M - probed) if probed < M else Fraction(0)
    return total / M


def _nearest_center(instance: BumpInstance, x) -> int:
    return int(np.argmin(np.linalg.norm(instance.centers - np.asarray(x).reshape(1, -1), axis=1)))


def init_log_ratio_bound(instance: BumpInstance) -> float:
    """``sup |log(pi_omega / pi_init)|`` from the normalizers."""
    ints = instance.integrals
    low = math.log(ints.Z_init / ints.Z_omega)
    return max(abs(low), abs(instance.log_peak + low))


@dataclass
class GameResult:
    strategy: str
    M: int
    budget: int
    success_rate: float
    ci: tuple
    mean_queries: float
    records: list
    summary: dict


def _strategy_budget(config: ExperimentConfig) -> int:
    if config.N is None:
        raise ConfigError("game config needs a query budget 'N'")
    return int(config.N)


def run_identification_game(config: ExperimentConfig, strategy: str | None = None,
                            instance: BumpInstance | None = None) -> GameResult:
    """Identification game: hide a uniformly drawn center, run a strategy under
    a query budget, estimate the center as the one nearest to the output."""
    strategy = strategy or config.strategy or "scan"
    if strategy not in ("scan", "averaged_lmc", "rejection_warm"):
        raise ConfigError(f"unknown strategy '{strategy}'")
    inst = instance if instance is not None else game_instance(config)
    budget = _strategy_budget(config)
    M = inst.M
    init = pi_init_oracle(inst.d, inst.R)
    summary = {"M": M, "r": inst.r, "R": inst.R, "budget": budget,
               "fano_error_lower_bound": fano_bound(M, budget)}
    h = None
    if strategy == "averaged_lmc":
        h = float(config.h if config.h is not None else 0.5)
        if budget < 1:
            raise ConfigError("averaged LMC needs a budget of at least one query")
        summary["h"] = h
    if strategy == "rejection_warm":
        if budget < 2:
            raise ConfigError("rejection strategy needs a budget of at least 2 queries")
        M0 = init_log_ratio_bound(inst)
        init = InitOracle(init.d, init.sampler, init.log_density, init.K0, M0, name="pi_init")
        summary["M0"] = M0
    records = []
    for trial in range(config.trials):
        rng = trial_rng(config.seed, trial)
        w = int(rng.integers(M))
        inst_w = inst.with_omega(w)
        oracle = CountingOracle(inst_w.potential(), budget=budget)
        t0 = time.perf_counter()
        extra = {}
        if strategy == "scan":
            found, probed = scan_probe(inst_w, oracle, budget)
            if found is None:
                rest = np.arange(probed, M)
                guess = int(rng.choice(rest)) if rest.size else 0
            else:
                guess = found
        elif strategy == "averaged_lmc":
            x = averaged_lmc_sample(oracle, init, h, budget, rng)
            guess = _nearest_center(inst, x)
        else:
            env = warm_start_envelope(init, oracle)
            x, accepted, _ = rejection_sample(oracle, env, budget - 1, rng)
            guess = _nearest_center(inst, x)
            extra["accepted"] = accepted
        wall = (time.perf_counter() - t0) * 1e3 if config.timing else None
        records.append(TrialRecord(trial, w, oracle.count, guess == w, wall, extra))
    wins = sum(r.success for r in records)
    rate = wins / len(records)
    res = GameResult(strategy, M, budget, rate, wilson_interval(wins, len(records)),
                     float(np.mean([r.queries for r in records])), records, summary)
    summary["success_rate"] = rate
    summary["mean_queries"] = res.mean_queries
    if strategy == "scan":
        summary["exact_success"] = str(scan_success_exact(inst, budget))
    return res


def rejection_game_tv(instance: BumpInstance, budget: int, n: int = 8192) -> float:
    """TV between the warm-start rejection output law and ``pi_omega`` (d = 1).

    The output law is ``(1 - p) pi_omega + p pi_init`` with
    ``p = (1 - a)^(budget - 1)`` and ``a`` the per-trial acceptance
    probability.
    """
    if instance.d != 1:
        raise ValueError("rejection_game_tv is one-dimensional")
    M0 = init_log_ratio_bound(instance)
    ints = instance.integrals
    v0, _ = instance.potential()(np.zeros(1))
    accept = ints.Z_omega * math.exp(v0) / (math.exp(2 * M0) * ints.Z_init)
    p = (1.0 - accept) ** (budget - 1)
    lo, hi = -(instance.R + 12), instance.R + 12
    pi = grid_from_potential(instance.potential(), lo, hi, n)
    pinit = grid_from_potential(instance.init_potential(), lo, hi, n)
    return p * divergence(pinit, pi, "TV")


# ----------------------------------------------------------------------------
# optimization <-> sampling equivalence
# ----------------------------------------------------------------------------


def cosine_potential(d: int = 1, shift: float = 2.0) -> SmoothPotential:
    """``sum_i (x_i - a)^2 / 4 - cos(x_i - a) / 2``; 1-smooth since ``V'' in [0, 1]``."""

    def ev(X):
        u = X - shift
        return (np.sum(0.25 * u * u - 0.5 * np.cos(u), axis=1),
                0.5 * u + 0.5 * np.sin(u))

    pot = SmoothPotential(d, 1.0, ev, name=f"cosine(shift={shift:g})")
    return pot


def cosine_gap(d: int = 1, shift: float = 2.0) -> float:
    """``V(0) - inf V`` for :func:`cosine_potential` (minimum at ``x = a``)."""
    return d * (0.25 * shift * shift - 0.5 * math.cos(shift) + 0.5)


def ramp_potential(eps: float, delta: float = 1.0) -> SmoothPotential:
    """1-D Huber ramp of slope ``4 eps`` whose minimum sits at ``-delta / (4 eps)``.

    Gradient descent (or LMC at ``beta = 1/eps^2``) must travel a distance of
    order ``delta / eps`` at speed ``O(eps)`` before reaching the
    ``eps``-stationary region, so the iteration count scales like
    ``delta / eps^2``.
    """
    s = 4.0 * eps
    center = -delta / s

    def ev(X):
        u = X[:, 0] - center
        a = np.abs(u)
        quad = a <= s
        v = np.where(quad, 0.5 * u * u, s * a - 0.5 * s * s)
        g = np.where(quad, u, s * np.sign(u))
        return v, g[:, None]

    return SmoothPotential(1, 1.0, ev, name=f"ramp(eps={eps:g})")


def _gauss_hermite_product(d, n):
    z, w = special.roots_hermitenorm(n)
    w = w / w.sum()
    grids = np.meshgrid(*([z] * d), indexing="ij")
    W = np.ones_like(grids[0])
    for _ in range(d):
        pass
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    for wg in wgrids:
        W = W * wg
    return np.stack([g.ravel() for g in grids], axis=1), W.ravel()


def gaussian_fisher_information(potential: SmoothPotential, x, beta: float,
                                nodes: int | None = None) -> float:
    """``FI(N(x, I/beta) || pi_beta)`` with ``pi_beta ~ exp(-beta V)``, by
    Gauss-Hermite quadrature.

    The score difference is ``beta (grad V(X) - (X - x))``.
    """
    d = potential.d
    if d > 3:
        raise ValueError("quadrature FI is implemented for d <= 3")
    nodes = nodes or {1: 200, 2: 60, 3: 30}[d]
    z, w = _gauss_hermite_product(d, nodes)
    x = np.asarray(x, dtype=float).reshape(1, d)
    X = x + z / math.sqrt(beta)
    _, G = potential.batch(X)
    diff = beta * (G - (X - x))
    return float(np.sum(w * np.sum(diff * diff, axis=1)))


@dataclass
class EquivalenceReport:
    eps: float
    beta: float
    d: int
    delta: float
    stationary_point: np.ndarray
    stationary_grad_norm: float
    gd_queries: int
    direction1_fi: float
    direction1_bound: float
    h: float
    N: int
    trials: int
    direction2_fraction: float
    direction2_stderr: float
    mean_queries: float
    control_fraction: float | None

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _beta_potential(potential: SmoothPotential, beta: float) -> SmoothPotential:
    return potential.scaled(beta)


def run_equivalence_demo(config: ExperimentConfig, potential: SmoothPotential | None = None,
                         delta: float | None = None) -> EquivalenceReport:
    """Both directions of the optimization / sampling equivalence.

    Direction 1: gradient descent to an ``eps``-stationary point ``x``, then
    ``FI(N(x, I/beta) || pi_beta)`` by quadrature against ``10 beta d``.
    Direction 2: averaged LMC on ``pi_beta`` with ``beta = d/eps^2``,
    ``h = h_scale/beta`` and ``N = ceil(n_scale * delta / eps^2)``; reports the
    fraction of outputs with ``|grad V| <= 3 eps``.
    """
    eps = float(config.eps if config.eps is not None else 0.1)
    d = config.d
    shift = float(config.params.get("shift", 2.0))
    if potential is None:
        potential = cosine_potential(d, shift)
        delta = cosine_gap(d, shift)
    elif delta is None:
        raise ConfigError("a custom potential needs its gap V(0) - inf V")
    if delta <= 0:
        raise ConfigError("the potential gap must be positive")
    beta = d / eps**2
    if d == 1:
        # integrability of the tilt, checked on a grid (raises when exp(-beta V) is not
        # negligible at the edges of a generous window)
        span = float(config.params.get("window", 50.0))
        grid_from_potential(_beta_potential(potential, beta), -span, span, 20001)

    gd_oracle = CountingOracle(potential)
    x = np.zeros(d)
    best, best_norm, steps = x, math.inf, 0
    max_gd = int(config.params.get("gd_max_iter", 100000))
    while best_norm > eps and steps < max_gd:
        _, g = gd_oracle.query(x)
        steps += 1
        norm = float(np.linalg.norm(g))
        if norm < best_norm:
            best, best_norm = x.copy(), norm
        x = x - g
    fi1 = gaussian_fisher_information(potential, best, beta)

    h = float(config.params.get("h_scale", 0.5)) / beta
    N = int(config.N if config.N is not None
            else math.ceil(float(config.params.get("n_scale", 1.0)) * delta / eps**2))
    tilted = _beta_potential(potential, beta)
    oracle = CountingOracle(tilted)
    init = gaussian_init(d, 1.0 / beta)
    rng = trial_rng(config.seed, 0)
    X, q = averaged_lmc_batch(oracle, init, h, N, rng, config.trials)
    _, G = potential.batch(X)
    ok = np.linalg.norm(G, axis=1) <= 3.0 * eps
    frac = float(ok.mean())
    stderr = math.sqrt(max(frac * (1 - frac), 1e-12) / config.trials)

    control = None
    if d == 1:
        span = float(config.params.get("window", 50.0))
        pib = grid_from_potential(tilted, -span, span, 200001)
        _, g = potential.batch(pib.x[:, None])
        control = pib.expect((np.abs(g[:, 0]) <= math.sqrt(6.0) * eps).astype(float))

    return EquivalenceReport(eps, beta, d, float(delta), best, best_norm, gd_oracle.count,
                             fi1, 10.0 * beta * d, h, N, config.trials, frac, stderr,
                             float(q.mean()), control)


def stationary_fraction(potential: SmoothPotential, eps: float, N: int, trials: int, seed: int,
                        h_scale: float = 0.5, threshold: float = 3.0) -> float:
    """Fraction of averaged-LMC outputs on ``pi_beta`` (``beta = d/eps^2``) that are
    ``threshold * eps``-stationary."""
    beta = potential.d / eps**2
    oracle = CountingOracle(potential.scaled(beta))
    init = gaussian_init(potential.d, 1.0 / beta)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(N,)))
    X, _ = averaged_lmc_batch(oracle, init, h_scale / beta, N, rng, trials)
    _, G = potential.batch(X)
    return float(np.mean(np.linalg.norm(G, axis=1) <= threshold * eps))


def minimal_iterations(potential: SmoothPotential, eps: float, trials: int, seed: int,
                       level: float = 0.5, growth: float = 1.1, start: int = 1,
                       max_N: int = 10**6) -> int:
    """Smallest ``N`` on a geometric ladder whose success fraction reaches ``level``."""
    N = max(1, start)
    while N <= max_N:
        if stationary_fraction(potential, eps, N, trials, seed) >= level:
            return N
        N = max(N + 1, int(math.ceil(N * growth)))
    raise RuntimeError(f"no N <= {max_N} reached success level {level}")


def run_equivalence_sweep(eps_values, delta: float = 1.0, trials: int = 400, seed: int = 0):
    """Minimal averaged-LMC iteration count versus ``eps`` on ramp potentials.

    Returns ``(table, slope)`` with rows ``(eps, N_min, 0)`` and the fitted
    log-log slope of ``N_min`` against ``eps``.
    """
    table = []
    for eps in eps_values:
        pot = ramp_potential(eps, delta)
        start = max(1, int(0.5 * delta / (8 * eps * eps)))
        table.append((float(eps), minimal_iterations(pot, eps, trials, seed, start=start), 0.0))
    xs = np.log([row[0] for row in table])
    ys = np.log([row[1] for row in table])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return table, slope


# ----------------------------------------------------------------------------
# scaling studies
# ----------------------------------------------------------------------------


@dataclass
class ScalingResult:
    kind: str
    table: list
    slope: float | None = None
    intercept: float | None = None
    r_squared: float | None = None
    summary: dict = field(default_factory=dict)


def _linfit(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fi_decay_instance(config: ExperimentConfig) -> BumpInstance:
    """1-D instance for the FI decay study: ``R = 1/(3 sqrt(c_pi) eps)`` unless
    ``R`` is given; the regime check on ``R`` is not applied."""
    if config.R is not None:
        return instance_from_radius(1, config.R)
    eps = float(config.eps if config.eps is not None else 0.05)
    return instance_from_radius(1, 1.0 / (3.0 * math.sqrt(config.c_pi) * eps))


def fi_decay_study(config: ExperimentConfig) -> ScalingResult:
    """FI of the averaged-LMC law against ``N`` on a 1-D bump instance.

    The initial law is ``pi_init`` and the step size follows the balancing
    rule ``h = min(h_max, sqrt(K0 / (beta^2 d N)))`` with ``K0`` the
    initial KL divergence. ``stderr`` is the change of the FI value when
    the grid is halved.
    """
    inst = fi_decay_instance(config)
    p = config.params
    Ns = [int(v) for v in p.get("N_values", [100, 300, 1000, 3000, 10000])]
    n = int(p.get("grid", 2048))
    refinement = int(p.get("refinement", 8))
    h_max = float(p.get("h_max", 0.5))
    margin = float(p.get("margin", 12.0))
    pot = inst.potential()
    lo, hi = -(inst.R + margin), inst.R + margin

    def run(n_grid):
        pi = grid_from_potential(pot, lo, hi, n_grid)
        mu0 = grid_from_potential(inst.init_potential(), lo, hi, n_grid)
        K0 = divergence(mu0, pi, "KL")
        vals = []
        for N in Ns:
            h = min(h_max, math.sqrt(K0 / N))
            law = averaged_lmc_law(pot, mu0, h, N, refinement=refinement, beta=1.0)
            vals.append(fisher_information(law, pi))
        return K0, vals

    K0, fine = run(n)
    _, coarse = run(n // 2) if p.get("grid_check", True) else (K0, fine)
    table = [(N, f, abs(f - c)) for N, f, c in zip(Ns, fine, coarse)]
    slope, intercept, r2 = _linfit(np.log(Ns), np.log(fine))
    summary = {"r": inst.r, "R": inst.R, "K0": K0, "grid": n, "refinement": refinement,
               "step_sizes": [min(h_max, math.sqrt(K0 / N)) for N in Ns]}
    return ScalingResult("fi_decay", table, slope, intercept, r2, summary)


def warm_start_family(M0: float, width: float = 0.5, lo: float = -12.0, hi: float = 12.0,
                      n: int = 4097):
    """Standard Gaussian target ``pi`` and a warm start ``mu_0`` with
    ``sup |log(mu_0 / pi)| = M0`` attained at the origin.

    ``mu_0 = pi exp(-A b) / C`` with ``b(x) = exp(-x^2 / (2 width^2))`` and
    ``A`` chosen so that ``log(pi(0) / mu_0(0)) = M0``; then the warm-start
    envelope saturates its ratio bound ``exp(3 M0)``.
    """
    x = np.linspace(lo, hi, n)
    pi = GridDensity1D(lo, hi, np.exp(-0.5 * x * x))
    b = np.exp(-0.5 * x * x / width**2)

    def gap(A):
        C = pi.expect(np.exp(-A * b))
        return A + math.log(C) - M0

    A = optimize.brentq(gap, 0.0, 10 * M0 + 10, xtol=1e-14) if M0 > 0 else 0.0
    mu0 = GridDensity1D(lo, hi, pi.values * np.exp(-A * b))
    return pi, mu0, A


def rejection_accuracy_study(config: ExperimentConfig) -> ScalingResult:
    """Worst-case queries for warm-start rejection sampling plus heat
    post-processing to reach ``FI <= eps^2``, against ``log(1/eps)``.

    The output law after ``N`` trials is ``(1 - p) pi + p mu_0`` with
    ``p = (1 - a)^N``; it is smoothed by ``Q_t``, ``t = t_scale eps^2 / d``,
    and its FI to ``pi`` is measured on the grid. The smallest ``N`` meeting
    the target is found from the largest admissible ``p``; queries are
    ``N + 1`` (one normalization query).
    """
    p = config.params
    M0 = float(p.get("M0", 1.0))
    eps_values = [float(e) for e in p.get("eps_values", [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4])]
    t_scale = float(p.get("t_scale", 0.1))
    n = int(p.get("grid", 4097))
    pi, mu0, A = warm_start_family(M0, n=n)
    accept = math.exp(-3.0 * M0)
    log_keep = math.log1p(-accept)
    table = []
    for eps in eps_values:
        t = t_scale * eps * eps / config.d
        pi_t = heat_flow(pi, t)
        mu_t = heat_flow(mu0, t)

        def fi_at(log_p):
            q = math.exp(log_p)
            law = pi.with_values((1 - q) * pi_t.values + q * mu_t.values)
            return fisher_information(law, pi)

        target = eps * eps
        if fi_at(-1e-12) <= target:
            log_p = 0.0
        else:
            lo_lp, hi_lp = -200.0, 0.0
            if fi_at(lo_lp) > target:
                raise RuntimeError(f"FI target {target:g} unreachable on this grid")
            for _ in range(100):
                mid = 0.5 * (lo_lp + hi_lp)
                if fi_at(mid) <= target:
                    lo_lp = mid
                else:
                    hi_lp = mid
            log_p = lo_lp
        N = max(1, int(math.ceil(log_p / log_keep))) if log_p < 0 else 1
        table.append((math.log(1.0 / eps), N + 1, 0.0))
    slope, intercept, r2 = _linfit([r[0] for r in table], [r[1] for r in table])
    summary = {"M0": M0, "A": A, "acceptance": accept, "t_scale": t_scale,
               "mean_trials_bound": math.exp(3 * M0)}
    return ScalingResult("rejection_accuracy", table, slope, intercept, r2, summary)


def run_scaling_study(config: ExperimentConfig, kind: str | None = None) -> ScalingResult:
    kind = kind or config.params.get("study") or config.strategy
    if kind == "fi_decay":
        return fi_decay_study(config)
    if kind == "rejection_accuracy":
        return rejection_accuracy_study(config)
    raise ConfigError(f"unknown scaling study '{kind}'")
