"""The outer acceleration loop.

Each outer iteration k minimizes G_k(x) = F(x) + (kappa/2)||x - y_{k-1}||^2
approximately with an inner solver, then extrapolates
y_k = x_k + beta_k (x_k - x_{k-1}) with Nesterov-type weights alpha_k.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import theory
from .problem import CompositeObjective, _check_vector, shift
from .solvers import (
    Budget,
    CertificateBelow,
    FgState,
    GradMapBelow,
    IncompatibleStopRule,
    IndexSampler,
    SagaState,
    fg_step_size,
    init_state,
    run_solver,
    sag_step_size,
    saga_step_size,
)
from .trace import RunTrace

__all__ = [
    "CatalystConfig",
    "CatalystState",
    "EpsilonSchedule",
    "ResolvedConfig",
    "alpha_next",
    "alpha0_value",
    "beta",
    "epsilon_k",
    "default_kappa",
    "resolve",
    "warm_start",
    "outer_step",
    "run",
]

WARM_STARTS = ("prev_iterate", "extrapolated_shift", "miso_shift")


def alpha_next(alpha_prev, q):
    """Root in (0, 1] of a^2 + (alpha_prev^2 - q) a - alpha_prev^2 = 0."""
    a2 = alpha_prev * alpha_prev
    d = q - a2
    disc = math.sqrt(d * d + 4.0 * a2)
    if d >= 0:
        return 0.5 * (d + disc)
    # same root, written without cancellation
    return 2.0 * a2 / (disc - d)


def beta(alpha_prev, alpha_curr):
    return alpha_prev * (1.0 - alpha_prev) / (alpha_prev * alpha_prev + alpha_curr)


def alpha0_value(mode, q):
    """Initial alpha for ``mode`` in {"sqrtq", "root", "golden"} or a float."""
    if mode == "sqrtq":
        if not q > 0:
            raise ValueError("alpha0='sqrtq' requires q > 0 (mu > 0)")
        return math.sqrt(q)
    if mode == "root":
        # positive root of a^2 + (1 - q) a - 1 = 0
        b = 1.0 - q
        return 0.5 * (-b + math.sqrt(b * b + 4.0))
    if mode == "golden":
        return theory.GOLDEN_ALPHA0
    a = float(mode)
    if not 0 < a <= 1:
        raise ValueError("alpha0 must lie in (0, 1]")
    return a


@dataclass(frozen=True)
class EpsilonSchedule:
    """Inner accuracies eps_k for the strongly convex ("sc") or convex mode."""

    mode: str
    f0_upper: float
    rho: float | None = None
    eta: float | None = None

    def __post_init__(self):
        if self.mode not in ("sc", "convex"):
            raise ValueError(f"unknown epsilon mode {self.mode!r}")
        if not self.f0_upper > 0:
            raise ValueError("f0_upper must be positive")
        if self.mode == "sc" and not (self.rho is not None and 0 <= self.rho < 1):
            raise ValueError("sc mode needs rho in [0, 1)")
        if self.mode == "convex" and not (self.eta is not None and self.eta >= 0):
            raise ValueError("convex mode needs eta >= 0")

    def __call__(self, k):
        return epsilon_k(self, k)


def epsilon_k(schedule: EpsilonSchedule, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    if schedule.mode == "sc":
        return 2.0 / 9.0 * schedule.f0_upper * (1.0 - schedule.rho) ** k
    return 2.0 * schedule.f0_upper / (9.0 * (k + 2) ** (4.0 + schedule.eta))


def default_kappa(method, n, L, mu):
    """Smoothing parameter per method, clamped at 0 (no acceleration).

    Incremental methods use a (L - mu)/(n + b) - mu; FG uses L - 2 mu, or 2L
    when mu = 0 (maximizer of tau/sqrt(L + kappa)). When n + b <= 0 the
    closed form is undefined and the maximizer is searched numerically.
    """
    if not (L > mu >= 0 and n >= 1):
        raise ValueError("need L > mu >= 0 and n >= 1")
    if method == "fg":
        k = L - 2.0 * mu if mu > 0 else 2.0 * L
    else:
        a, b = theory.KAPPA_AB[method]
        if n + b <= 0:
            k = theory.optimal_kappa_generic(theory.tau_function(method, n, L, mu), mu, L)
        else:
            k = a * (L - mu) / (n + b) - mu
    return max(0.0, k)


@dataclass(frozen=True)
class CatalystConfig:
    """User-facing knobs; ``None`` / "auto" fields are resolved per problem.

    ``inner_stop`` is "certificate" (FG, MISO-Prox) or "budget".
    ``inner_budget`` is "theory" (the theoretical T_M, rounded up to whole
    epochs for incremental methods) or a fixed count: epochs for incremental
    methods, steps for FG.
    """

    kappa: float | None = None
    alpha0: str | float = "auto"
    rho: float | None = None
    eta: float = 0.1
    epsilon_mode: str = "auto"
    warm_start: str = "auto"
    inner_stop: str = "auto"
    inner_budget: str | int = "theory"
    f0_upper: float | None = None
    budget_A: float = 1.0
    max_inner_epochs: int = 10_000


@dataclass(frozen=True)
class ResolvedConfig:
    method: str
    mu: float
    kappa: float
    q: float
    alpha0: float
    rho: float | None
    eta: float
    schedule: EpsilonSchedule
    warm_start: str
    inner_stop: str
    inner_budget: str | int
    tau: float
    budget_A: float
    max_inner_epochs: int

    def meta(self):
        return {
            "method": self.method, "kappa": self.kappa, "q": self.q, "alpha0": self.alpha0,
            "rho": self.rho, "eta": self.eta, "epsilon_mode": self.schedule.mode,
            "f0_upper": self.schedule.f0_upper, "warm_start": self.warm_start,
            "inner_stop": self.inner_stop, "inner_budget": self.inner_budget, "tau": self.tau,
        }


def resolve(config: CatalystConfig, obj: CompositeObjective, method, x0) -> ResolvedConfig:
    """Fill in defaults and check that the combination is valid."""
    mu, L, n = obj.mu, obj.L, obj.n
    kappa = default_kappa(method, n, L, mu) if config.kappa is None else float(config.kappa)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if mu + kappa <= 0:
        raise ValueError("mu + kappa must be positive: subproblems must be strongly convex")
    q = mu / (mu + kappa)
    mode = config.epsilon_mode
    if mode == "auto":
        mode = "sc" if mu > 0 else "convex"
    if mode == "sc" and not mu > 0:
        raise ValueError("epsilon mode 'sc' requires mu > 0")
    rho = None
    if mode == "sc":
        rho = 0.9 * math.sqrt(q) if config.rho is None else float(config.rho)
        if not 0 <= rho < math.sqrt(q):
            raise ValueError(f"rho must lie in [0, sqrt(q)) = [0, {math.sqrt(q)})")
    a0 = config.alpha0
    if a0 == "auto":
        a0 = "sqrtq" if mu > 0 else "golden"
    alpha0 = alpha0_value(a0, q)
    f0 = config.f0_upper
    if f0 is None:
        f0 = obj.value(x0)
        if not f0 > 0:
            raise ValueError("F(x0) is not positive; supply f0_upper explicitly")
    schedule = EpsilonSchedule(mode, f0, rho=rho, eta=config.eta)
    ws = config.warm_start
    if ws == "auto":
        ws = {"fg": "prev_iterate", "sag": "prev_iterate", "saga": "extrapolated_shift",
              "miso": "miso_shift"}[method]
    if ws not in WARM_STARTS:
        raise ValueError(f"unknown warm start {ws!r}")
    if ws == "miso_shift" and method != "miso":
        raise ValueError("miso_shift warm start only applies to MISO-Prox")
    stop = config.inner_stop
    if stop == "auto":
        stop = "certificate" if method in ("fg", "miso") else "budget"
    if stop not in ("certificate", "budget"):
        raise ValueError(f"unknown inner stop {stop!r}")
    if stop == "certificate" and method not in ("fg", "miso"):
        raise IncompatibleStopRule(f"{method} has no computable certificate; use inner_stop='budget'")
    t = theory.tau(method, n, obj.smooth.L, obj.smooth.mu, kappa)
    return ResolvedConfig(method, mu, kappa, q, alpha0, rho, config.eta, schedule, ws, stop,
                          config.inner_budget, t, config.budget_A, config.max_inner_epochs)


@dataclass
class CatalystState:
    k: int
    x: np.ndarray
    x_prev: np.ndarray
    y: np.ndarray
    y_prev: np.ndarray
    alpha: float
    cost: int = 0
    inner_state: object = None
    history: list = field(default_factory=list)


def _subproblem(obj, y, kappa):
    return shift(obj, y, kappa) if kappa > 0 else obj


def warm_start(method, state: CatalystState, rc: ResolvedConfig, obj: CompositeObjective):
    """Inner starting point for G_{k+1}; updates carried-over solver memory in place.

    Returns ``(x_start, inner_state_or_None)``. Gradient tables and MISO
    lower bounds built for the previous subproblem are corrected exactly for
    the move of the quadratic center from y_{k-2} to y_{k-1}.
    """
    kappa = rc.kappa
    dy = state.y - state.y_prev
    inner = state.inner_state
    if rc.warm_start == "miso_shift":
        if inner is None:
            return state.x.copy(), None
        mu_p = inner.mu
        inner.z += (kappa / mu_p) * dy[None, :]
        inner.zbar += (kappa / mu_p) * dy
        inner.cprime += 0.5 * kappa * (float(state.y @ state.y) - float(state.y_prev @ state.y_prev))
        inner.x = obj.prox(inner.zbar, 1.0 / mu_p)
        return inner.x.copy(), inner
    if not isinstance(inner, SagaState):
        # lower bounds are only carried over by the anchor shift
        inner = None
    if rc.warm_start == "extrapolated_shift":
        start = state.x + kappa / (obj.mu + kappa) * dy
    else:
        start = state.x.copy()
    if isinstance(inner, SagaState):
        # grad of the new component = old + kappa (y_{k-2} - y_{k-1})
        corr = -kappa * dy
        inner.grad_table += corr[None, :]
        inner.table_mean += corr
        inner.x = start.copy()
    return start, inner


def _inner_stop_rule(rc: ResolvedConfig, k, n, mu_sub):
    eps = rc.schedule(k)
    if rc.inner_stop == "certificate":
        if rc.method == "fg":
            # ||G||^2 / (2 mu') <= eps
            return GradMapBelow(math.sqrt(2.0 * mu_sub * eps)), eps
        return CertificateBelow(eps), eps
    if rc.inner_budget == "theory":
        if rc.schedule.mode == "sc":
            T = theory.inner_budget_sc(rc.tau, rc.q, rc.rho, rc.kappa, rc.mu, A=rc.budget_A)
        else:
            T = theory.inner_budget_nonsc(rc.tau, k, rc.eta)
        if rc.method != "fg":
            T = n * math.ceil(T / n)
    else:
        T = int(rc.inner_budget) * (1 if rc.method == "fg" else n)
    return Budget(T), eps


def outer_step(state: CatalystState, rc: ResolvedConfig, obj: CompositeObjective,
               sampler: IndexSampler, *, fast=True, stop=None) -> CatalystState:
    """One outer iteration: solve G_k approximately from a warm start, extrapolate.

    ``stop`` overrides the inner stop rule (e.g. ``Budget(0)``).
    """
    k = state.k + 1
    n = obj.n
    G = _subproblem(obj, state.y, rc.kappa)
    start, inner = warm_start(rc.method, state, rc, obj)
    cost = 0
    if inner is None or rc.method == "fg":
        if rc.method == "fg":
            inner = FgState(x=start, step=fg_step_size(G))
        else:
            inner, cost = init_state(rc.method, G, start, sampler)
    elif isinstance(inner, SagaState):
        inner.step = saga_step_size(G) if rc.method == "saga" else sag_step_size(G)
    rule, eps = _inner_stop_rule(rc, k, n, G.smooth.mu)
    if stop is not None:
        rule = stop
    max_steps = rc.max_inner_epochs * (1 if rc.method == "fg" else n)
    inner, _, info = run_solver(rc.method, inner, G, rule, record=False, max_steps=max_steps, fast=fast)
    x_new = np.array(inner.x, dtype=float)
    if not np.isfinite(x_new).all():
        raise FloatingPointError(f"inner solver produced a non-finite iterate at outer step {k}")
    a_new = alpha_next(state.alpha, rc.q)
    b = beta(state.alpha, a_new)
    y_new = x_new + b * (x_new - state.x)
    state.history.append({
        "k": k, "eps": eps, "inner_steps": info.steps, "inner_cost": info.cost + cost,
        "inner_converged": info.converged, "inner_certificate": info.certificate, "beta": b,
    })
    state.k = k
    state.x_prev, state.x = state.x, x_new
    state.y_prev, state.y = state.y, y_new
    state.alpha = a_new
    state.cost += cost + info.cost
    state.inner_state = inner if rc.method != "fg" else None
    return state


def run(obj: CompositeObjective, config: CatalystConfig, method, *, x0=None, outer_budget=100,
        max_epochs=None, target=None, seed=0, fast=True, f_star=None, x_star=None, timing=False):
    """Run the accelerated method; return ``(x, trace)``.

    Trace rows sit at outer iterates. Stops after ``outer_budget`` outer
    iterations, after ``max_epochs`` epochs of cost, or once
    F(x_k) - target[0] <= target[1]. The envelope column holds the
    theoretical bound, computed with F* when ``f_star`` is given and with
    f0_upper otherwise (mu = 0 additionally needs ``x_star``).
    """
    x0 = np.zeros(obj.p) if x0 is None else _check_vector(x0, obj.p).copy()
    rc = resolve(config, obj, method, x0)
    sampler = IndexSampler(obj.n, seed)
    state = CatalystState(k=0, x=x0.copy(), x_prev=x0.copy(), y=x0.copy(), y_prev=x0.copy(),
                          alpha=rc.alpha0)
    F0 = obj.value(x0)
    gap0 = F0 - f_star if f_star is not None else rc.schedule.f0_upper
    dist0 = None if x_star is None else float(np.sum((x0 - x_star) ** 2))

    def envelope(k):
        if rc.schedule.mode == "sc":
            return theory.sc_envelope(k, rc.q, rc.rho, gap0)
        if dist0 is None:
            return None
        return theory.nonsc_envelope(k, rc.eta, rc.kappa, gap0, dist0)

    trace = RunTrace(n=obj.n, meta={"catalyst": True, "seed": seed, **rc.meta()})
    t0 = time.perf_counter_ns()
    trace.record(0, F0, None, envelope(0), 0 if timing else None)
    fx = F0
    converged = target is None
    while state.k < outer_budget:
        if target is not None and fx - target[0] <= target[1]:
            converged = True
            break
        if max_epochs is not None and state.cost >= max_epochs * obj.n:
            break
        if not rc.schedule(state.k + 1) > 0:
            # accuracy target underflowed: nothing left to solve for
            trace.meta["stopped"] = "epsilon_underflow"
            break
        outer_step(state, rc, obj, sampler, fast=fast)
        fx = obj.value(state.x)
        state.history[-1]["objective"] = fx
        trace.record(state.cost, fx, None, envelope(state.k),
                     time.perf_counter_ns() - t0 if timing else None)
    if target is not None and fx - target[0] <= target[1]:
        converged = True
    trace.meta.update(outer_iterations=state.k, converged=converged, cost=state.cost,
                      history=state.history)
    return state.x.copy(), trace
