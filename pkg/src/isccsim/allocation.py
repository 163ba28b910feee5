"""Joint sensing / control / communication resource allocation.

The decision vector is (alpha_sen, alpha_ctrl); alpha_comm = 1 - alpha_sen - alpha_ctrl.
The objective is the trajectory-averaged trace of the position CRLB, which
only depends on alpha_sen.  The control fraction enters through the
stability floor and the rate-cost constraint; the communication fraction
through the minimum data rate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .channel import FblParams, ctrl_delivery_probability, ctrl_drop_probability_grad, fbl_rate
from .errors import ConvergenceError, InfeasibleError
from .sensing import index_second_moment

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class ResourceFractions:
    alpha_sen: float
    alpha_ctrl: float
    alpha_comm: float

    @classmethod
    def from_pair(cls, alpha_sen: float, alpha_ctrl: float) -> "ResourceFractions":
        return cls(float(alpha_sen), float(alpha_ctrl), 1.0 - float(alpha_sen) - float(alpha_ctrl))

    def __post_init__(self):
        vals = (self.alpha_sen, self.alpha_ctrl, self.alpha_comm)
        if any(not (0.0 < v < 1.0) for v in vals):
            raise ValueError(f"fractions must lie in (0, 1): {vals}")
        if abs(sum(vals) - 1.0) > 1e-12:
            raise ValueError("fractions must sum to one")

    def as_tuple(self):
        return (self.alpha_sen, self.alpha_ctrl, self.alpha_comm)


@dataclass(frozen=True)
class SensingProfile:
    """Per-sample CRLB coefficients along the reference trajectory.

    For n = alpha_sen * K sensing subcarriers the sample bounds are
    Tr CRLB_p = range/(n(n^2-1)/12) + angle/n and CRLB_v = velocity/n.
    """

    range_coeff: np.ndarray
    angle_coeff: np.ndarray
    velocity_coeff: np.ndarray

    def trace_samples(self, n):
        """Samples along the last axis; a leading axis is added for array ``n``."""
        n = np.asarray(n, dtype=float)[..., None]
        return self.range_coeff / index_second_moment(n) + self.angle_coeff / n

    def mean_peb(self, n):
        out = np.mean(np.sqrt(self.trace_samples(n)), axis=-1)
        return float(out) if out.ndim == 0 else out

    def mean_veb(self, n):
        out = np.mean(np.sqrt(self.velocity_coeff / np.asarray(n, dtype=float)[..., None]), axis=-1)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScaConfig:
    rho: float = 10.0
    tol: float = 1e-8
    max_iter: int = 200


@dataclass(frozen=True)
class AllocationProblem:
    profile: SensingProfile
    num_subcarriers: int
    bandwidth_hz: float
    avg_gamma: float
    ctrl_fbl: FblParams
    comm_blocklength: float
    comm_bler: float
    min_comm_rate_bps: float
    alpha_ctrl_star: float
    alpha_ctrl_robust: float = 0.0
    rate_cost_bits: float = 0.0
    min_fraction: float = 1e-6
    stability_margin: float = 0.1
    ignore_loss: bool = False
    sca: ScaConfig = field(default_factory=ScaConfig)

    # ---- bounds of the (alpha_sen, alpha_ctrl) feasible polygon -------------

    @property
    def sen_lower(self) -> float:
        """Two subcarriers: the delay information vanishes for a single one."""
        return max(2.0 / self.num_subcarriers, self.min_fraction)

    @property
    def ctrl_lower(self) -> float:
        floor = self.min_fraction
        if not self.ignore_loss:
            floor = max(floor, max(self.alpha_ctrl_star, self.alpha_ctrl_robust) * (1.0 + self.stability_margin))
        return floor

    @property
    def comm_lower(self) -> float:
        """Smallest alpha_comm meeting the data-rate floor at the average SNR."""
        per_unit = fbl_rate(1.0, self.bandwidth_hz, self.avg_gamma, self.comm_blocklength, self.comm_bler)
        if self.min_comm_rate_bps <= 0:
            return self.min_fraction
        if per_unit <= 0:
            return math.inf
        return max(self.min_comm_rate_bps / per_unit, self.min_fraction)

    @property
    def pair_cap(self) -> float:
        """Upper bound on alpha_sen + alpha_ctrl."""
        return 1.0 - self.comm_lower


# ---------------------------------------------------------------------------
# Objective and control throughput
# ---------------------------------------------------------------------------


def objective_f_sen(alpha_sen, problem: AllocationProblem):
    """Trajectory average of Tr CRLB_p (m^2)."""
    n = np.asarray(alpha_sen, dtype=float) * problem.num_subcarriers
    p = problem.profile
    out = np.mean(p.range_coeff) / index_second_moment(n) + np.mean(p.angle_coeff) / n
    return float(out) if np.ndim(out) == 0 else out


def _objective_derivatives(alpha_sen, problem: AllocationProblem):
    k = problem.num_subcarriers
    n = alpha_sen * k
    a = float(np.mean(problem.profile.range_coeff))
    b = float(np.mean(problem.profile.angle_coeff))
    m2 = n * (n * n - 1.0) / 12.0
    dm2 = (3.0 * n * n - 1.0) / 12.0
    d2m2 = n / 2.0
    f1 = -a * dm2 / m2 ** 2 - b / n ** 2
    f2 = a * (2.0 * dm2 ** 2 / m2 ** 3 - d2m2 / m2 ** 2) + 2.0 * b / n ** 3
    return f1 * k, f2 * k * k


def objective_grad(alpha_sen, problem: AllocationProblem) -> float:
    return _objective_derivatives(alpha_sen, problem)[0]


def _delivery(alpha_ctrl, problem: AllocationProblem):
    if problem.ignore_loss:
        return 1.0
    return ctrl_delivery_probability(alpha_ctrl, problem.avg_gamma, problem.bandwidth_hz, problem.ctrl_fbl)


def effective_ctrl_throughput(alpha_ctrl, problem: AllocationProblem) -> float:
    """g = (1 - eps(alpha)) R_ctrl(alpha) in bit/s at the average SNR."""
    fbl = problem.ctrl_fbl
    rate = fbl_rate(alpha_ctrl, problem.bandwidth_hz, problem.avg_gamma, fbl.blocklength_symbols,
                    fbl.target_bler)
    return float(_delivery(alpha_ctrl, problem) * rate)


def effective_ctrl_throughput_grad(alpha_ctrl, problem: AllocationProblem) -> float:
    fbl = problem.ctrl_fbl
    per_unit = fbl_rate(1.0, problem.bandwidth_hz, problem.avg_gamma, fbl.blocklength_symbols,
                        fbl.target_bler)
    delivered = _delivery(alpha_ctrl, problem)
    deps = 0.0 if problem.ignore_loss else ctrl_drop_probability_grad(
        alpha_ctrl, problem.avg_gamma, problem.bandwidth_hz, fbl)
    return float(delivered * per_unit - deps * per_unit * alpha_ctrl)


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


def feasibility_report(alpha_sen: float, alpha_ctrl: float, problem: AllocationProblem) -> dict:
    """Slack of every constraint (non-negative means satisfied)."""
    alpha_comm = 1.0 - alpha_sen - alpha_ctrl
    comm_rate = fbl_rate(alpha_comm, problem.bandwidth_hz, problem.avg_gamma, problem.comm_blocklength,
                         problem.comm_bler) if alpha_comm > 0 else 0.0
    dt = problem.ctrl_fbl.slot_duration_s
    return {
        "stability": alpha_ctrl - problem.ctrl_lower,
        "rate_cost": effective_ctrl_throughput(alpha_ctrl, problem) * dt - problem.rate_cost_bits,
        "comm_rate": comm_rate - problem.min_comm_rate_bps,
        "sensing_floor": alpha_sen - problem.sen_lower,
        "simplex": alpha_comm - problem.min_fraction,
    }


def _rel_ok(report: dict, problem: AllocationProblem) -> bool:
    scale = {"comm_rate": max(problem.min_comm_rate_bps, 1.0), "rate_cost": max(problem.rate_cost_bits, 1.0)}
    return all(v >= -FEAS_TOL * scale.get(k, 1.0) for k, v in report.items())


def is_feasible(alpha_sen: float, alpha_ctrl: float, problem: AllocationProblem) -> bool:
    return _rel_ok(feasibility_report(alpha_sen, alpha_ctrl, problem), problem)


def _ctrl_rate_floor(problem: AllocationProblem) -> float:
    """Smallest alpha_ctrl (>= ctrl_lower) meeting the exact rate-cost constraint."""
    lo = problem.ctrl_lower
    need = problem.rate_cost_bits / problem.ctrl_fbl.slot_duration_s
    if need <= 0 or effective_ctrl_throughput(lo, problem) >= need:
        return lo
    hi = problem.pair_cap
    if effective_ctrl_throughput(hi, problem) < need:
        raise InfeasibleError("rate-cost constraint cannot be met")
    return brentq(lambda a: effective_ctrl_throughput(a, problem) - need, lo, hi, xtol=1e-14)


@dataclass(frozen=True)
class AllocationResult:
    fractions: ResourceFractions
    objective_value: float
    iterations: int
    converged: bool
    feasibility: dict
    avg_peb_m: float
    wall_time_s: float = 0.0
    trace: tuple = ()
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fractions": {"alpha_sen": self.fractions.alpha_sen, "alpha_ctrl": self.fractions.alpha_ctrl,
                          "alpha_comm": self.fractions.alpha_comm},
            "objective": self.objective_value,
            "avg_peb_m": self.avg_peb_m,
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time_s": self.wall_time_s,
            "feasibility": {k: float(v) for k, v in self.feasibility.items()},
        }


def _result(a_s, a_c, problem, iterations, converged, t0, trace, method):
    fr = ResourceFractions.from_pair(a_s, a_c)
    return AllocationResult(fr, objective_f_sen(a_s, problem), iterations, converged,
                            feasibility_report(a_s, a_c, problem),
                            problem.profile.mean_peb(a_s * problem.num_subcarriers),
                            time.perf_counter() - t0, tuple(trace), method)


# ---------------------------------------------------------------------------
# SCA
# ---------------------------------------------------------------------------


def _newton_1d(fprime, fsecond, lo, hi, tol=1e-14, max_iter=100):
    """Root of an increasing function on [lo, hi] (or the clamped end) by safeguarded Newton."""
    flo, fhi = fprime(lo), fprime(hi)
    if flo >= 0:
        return lo
    if fhi <= 0:
        return hi
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx = fprime(x)
        if fx > 0:
            hi = x
        else:
            lo = x
        d = fsecond(x)
        nxt = x - fx / d if d > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= tol * max(1.0, abs(x)) or hi - lo <= tol:
            return nxt
        x = nxt
    raise ConvergenceError("1-D Newton did not converge", max_iter)


def _solve_subproblem(prev, c_lo, c_hi, problem: AllocationProblem, rho: float):
    """min f(s) + rho[(s-s0)^2 + (c-c0)^2] over s >= s_lo, c in [c_lo, c_hi], s + c <= cap."""
    s0, c0 = prev
    s_lo, cap = problem.sen_lower, problem.pair_cap

    def d1(s):
        return objective_grad(s, problem) + 2 * rho * (s - s0)

    def d2(s):
        return _objective_derivatives(s, problem)[1] + 2 * rho

    # unconstrained in the coupling: each variable separately
    s_free = _newton_1d(d1, d2, s_lo, cap - c_lo)
    c_free = min(max(c0, c_lo), c_hi)
    if s_free + c_free <= cap:
        return s_free, c_free
    # coupling active: c = cap - s
    s_min = max(s_lo, cap - c_hi)
    s_max = cap - c_lo
    s = _newton_1d(lambda s: d1(s) - 2 * rho * (cap - s - c0),
                   lambda s: d2(s) + 2 * rho, s_min, s_max)
    return s, cap - s


def _linearized_ctrl_bounds(c_k: float, problem: AllocationProblem):
    """Interval of alpha_ctrl allowed by the affine model of the rate-cost constraint."""
    c_lo, c_hi = problem.ctrl_lower, problem.pair_cap - problem.sen_lower
    need = problem.rate_cost_bits / problem.ctrl_fbl.slot_duration_s
    if need <= 0:
        return c_lo, c_hi
    g0 = effective_ctrl_throughput(c_k, problem)
    g1 = effective_ctrl_throughput_grad(c_k, problem)
    if g1 > 0:
        c_lo = max(c_lo, c_k + (need - g0) / g1)
    elif g1 < 0:
        c_hi = min(c_hi, c_k + (need - g0) / g1)
    elif g0 < need:
        raise InfeasibleError("linearized rate-cost constraint is empty")
    return c_lo, c_hi


def initial_point(problem: AllocationProblem):
    """(0.15, max(2 alpha*, 0.08)) pushed into the feasible polygon."""
    s = max(0.15, problem.sen_lower)
    c = max(2.0 * problem.alpha_ctrl_star, 0.08, _ctrl_rate_floor(problem))
    cap = problem.pair_cap
    if s + c > cap:
        c = max(_ctrl_rate_floor(problem), min(c, cap - problem.sen_lower))
        s = max(problem.sen_lower, min(s, cap - c))
    return s, c


def _check_start(s, c, problem: AllocationProblem):
    rep = feasibility_report(s, c, problem)
    for name, slack in rep.items():
        scale = max(problem.min_comm_rate_bps, 1.0) if name == "comm_rate" else 1.0
        if slack < -FEAS_TOL * scale:
            raise InfeasibleError(f"initial point violates the {name} constraint (slack {slack:.3g})")


def sca_solve(problem: AllocationProblem, initial=None) -> AllocationResult:
    """Successive convex approximation with a proximal term."""
    t0 = time.perf_counter()
    if problem.pair_cap - problem.sen_lower - problem.ctrl_lower < 0:
        raise InfeasibleError("constraints leave no feasible allocation")
    s, c = initial_point(problem) if initial is None else (float(initial[0]), float(initial[1]))
    _check_start(s, c, problem)
    cfg = problem.sca
    trace = [(0, s, c, objective_f_sen(s, problem))]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        c_lo, c_hi = _linearized_ctrl_bounds(c, problem)
        if c_lo > c_hi:
            raise InfeasibleError("linearized sub-problem is empty")
        s_new, c_new = _solve_subproblem((s, c), c_lo, c_hi, problem, cfg.rho)
        step = (s_new - s) ** 2 + (c_new - c) ** 2
        s, c = s_new, c_new
        trace.append((it, s, c, objective_f_sen(s, problem)))
        if step <= cfg.tol:
            converged = True
            break
    return _result(s, c, problem, it, converged, t0, trace, "sca")


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def grid_search(problem: AllocationProblem, step: float = 0.01) -> AllocationResult:
    """Exhaustive scan of the simplex at resolution ``step``; ties go to smaller alpha_ctrl."""
    if not 0 < step <= 0.1:
        raise ValueError("step must lie in (0, 0.1]")
    t0 = time.perf_counter()
    m = int(round(1.0 / step))
    best = None
    count = 0
    for i in range(1, m):
        a_s = i * step
        for j in range(1, m - i):
            a_c = j * step
            count += 1
            if not is_feasible(a_s, a_c, problem):
                continue
            val = objective_f_sen(a_s, problem)
            if best is None or val < best[0] - 1e-15 * abs(best[0]):
                best = (val, a_s, a_c)
    if best is None:
        raise InfeasibleError("no feasible grid point")
    return _result(best[1], best[2], problem, count, True, t0, (), "grid")


def project_feasible(s: float, c: float, problem: AllocationProblem):
    """Euclidean projection onto {s >= s_lo, c >= c_lo, s + c <= cap}."""
    s_lo, c_lo, cap = problem.sen_lower, max(problem.ctrl_lower, _ctrl_rate_floor(problem)), problem.pair_cap
    s, c = max(s, s_lo), max(c, c_lo)
    if s + c > cap:
        shift = 0.5 * (s + c - cap)
        s, c = s - shift, c - shift
        if s < s_lo:
            s, c = s_lo, cap - s_lo
        elif c < c_lo:
            s, c = cap - c_lo, c_lo
    return s, c


def ga_search(problem: AllocationProblem, rng: np.random.Generator, population: int = 50,
              generations: int = 100, tournament: int = 3, mutation_sigma: float = 0.02) -> AllocationResult:
    """Real-coded GA: tournament selection, blend crossover, Gaussian mutation, elitism 1."""
    if population < 2:
        raise ValueError("population must be >= 2")
    t0 = time.perf_counter()
    if problem.pair_cap - problem.sen_lower - problem.ctrl_lower < 0:
        raise InfeasibleError("constraints leave no feasible allocation")
    cap = problem.pair_cap
    pop = np.array([project_feasible(*xy, problem)
                    for xy in rng.uniform(0.0, cap, size=(population, 2))])

    def fitness(p):
        return np.array([objective_f_sen(s, problem) for s, _ in p])

    fit = fitness(pop)
    best_idx = int(np.argmin(fit))
    best = (fit[best_idx], *pop[best_idx])
    history = [best[0]]
    for _ in range(generations):
        elite = pop[np.argmin(fit)].copy()
        children = [elite]
        while len(children) < population:
            parents = []
            for _ in range(2):
                idx = rng.integers(0, population, size=tournament)
                parents.append(pop[idx[np.argmin(fit[idx])]])
            w = rng.uniform(-0.5, 1.5, size=2)
            child = parents[0] + w * (parents[1] - parents[0])
            child = child + rng.normal(0.0, mutation_sigma, size=2)
            children.append(np.array(project_feasible(child[0], child[1], problem)))
        pop = np.array(children)
        fit = fitness(pop)
        i = int(np.argmin(fit))
        if fit[i] < best[0] or (fit[i] == best[0] and pop[i][1] < best[2]):
            best = (fit[i], *pop[i])
        history.append(best[0])
    return _result(best[1], best[2], problem, generations, True, t0, tuple(history), "ga")
