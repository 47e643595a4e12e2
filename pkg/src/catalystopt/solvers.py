"""Inner first-order solvers: proximal gradient, SAG, SAGA and MISO-Prox.

Every method is a state dataclass plus a ``*_step`` function that mutates the
state in place (and returns it). :func:`run_solver` drives any of them under a
:class:`StopRule`, accounting cost in component-gradient evaluations (a full
gradient step costs ``n``). For logistic components the incremental methods
switch to compiled kernels that consume the same index stream as the
reference step functions.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .problem import (
    CompositeObjective,
    LogisticSum,
    OracleError,
    QuadraticSum,
    ShiftedSum,
    _check_vector,
)
from .trace import RunTrace

__all__ = [
    "SOLVERS",
    "IndexSampler",
    "FgState",
    "SagaState",
    "SagState",
    "MisoProxState",
    "Budget",
    "CertificateBelow",
    "GradMapBelow",
    "TargetValue",
    "IncompatibleStopRule",
    "SolveInfo",
    "fg_step",
    "saga_step",
    "sag_step",
    "miso_prox_step",
    "miso_certificate",
    "miso_lower_bound",
    "miso_init",
    "miso_delta",
    "init_state",
    "run_solver",
    "solve",
    "fg_step_size",
    "saga_step_size",
    "sag_step_size",
]

SOLVERS = ("fg", "sag", "saga", "miso")


class IncompatibleStopRule(ValueError):
    pass


class IndexSampler:
    """Uniform index draws with replacement from a Philox counter-based stream.

    Indices are generated in blocks, so interleaving :meth:`next` and
    :meth:`take` yields the same sequence as any other split of the stream.
    """

    def __init__(self, n: int, seed=0):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = int(n)
        self.seed = seed
        self._rng = np.random.Generator(np.random.Philox(seed))
        self._block = max(self.n, 256)
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def _refill(self):
        self._buf = self._rng.integers(0, self.n, size=self._block, dtype=np.int64)
        self._pos = 0

    def next(self) -> int:
        if self._pos >= self._buf.shape[0]:
            self._refill()
        i = int(self._buf[self._pos])
        self._pos += 1
        return i

    def take(self, m: int) -> np.ndarray:
        out = np.empty(m, dtype=np.int64)
        filled = 0
        while filled < m:
            if self._pos >= self._buf.shape[0]:
                self._refill()
            k = min(m - filled, self._buf.shape[0] - self._pos)
            out[filled:filled + k] = self._buf[self._pos:self._pos + k]
            self._pos += k
            filled += k
        return out


# ---------------------------------------------------------------------------
# stop rules


@dataclass(frozen=True)
class Budget:
    """Run exactly ``iterations`` steps."""

    iterations: int

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("budget must be nonnegative")


@dataclass(frozen=True)
class CertificateBelow:
    """Stop once the MISO-Prox optimality gap F(x) - D(x) is <= eps."""

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class GradMapBelow:
    """Stop once ||G(x)|| <= eps, G the gradient mapping at step 1/L'.

    The bound F(x+) - F* <= ||G||^2 / (2 mu') turns this into a suboptimality
    certificate; a target accuracy eps' corresponds to eps = sqrt(2 mu' eps').
    """

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class TargetValue:
    """Stop once F(x) - f_target <= eps (for problems with a known F*)."""

    f_target: float
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


# ---------------------------------------------------------------------------
# states


@dataclass
class FgState:
    x: np.ndarray
    step: float
    gmap_sq: float = math.inf
    # bound on F(x) - F* for the current x, from the last step's gradient mapping
    certificate: float = math.inf


@dataclass
class SagaState:
    x: np.ndarray
    step: float
    grad_table: np.ndarray
    table_mean: np.ndarray
    sampler: IndexSampler


@dataclass
class SagState(SagaState):
    pass


@dataclass
class MisoProxState:
    x: np.ndarray
    z: np.ndarray
    zbar: np.ndarray
    cprime: np.ndarray
    delta: float
    mu: float
    sampler: IndexSampler


@dataclass
class SolveInfo:
    steps: int = 0
    cost: int = 0
    converged: bool = True
    certificate: float | None = None
    wallclock_ns: int = 0
    # lowest-objective iterate seen (only tracked when objective values are)
    best_value: float | None = None
    best_x: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# step sizes


def fg_step_size(obj: CompositeObjective) -> float:
    return 1.0 / obj.smooth.L


def saga_step_size(obj: CompositeObjective) -> float:
    mu, L, n = obj.smooth.mu, obj.smooth.L, obj.n
    if mu > 0:
        return 1.0 / (2.0 * (mu * n + L))
    return 1.0 / (3.0 * L)


def sag_step_size(obj: CompositeObjective) -> float:
    return 1.0 / (16.0 * obj.smooth.L)


def miso_delta(n: int, L: float, mu: float) -> float:
    if L <= mu:
        return 1.0
    return min(1.0, mu * n / (2.0 * (L - mu)))


# ---------------------------------------------------------------------------
# vectorized helpers


def _logistic_parts(smooth):
    """(logistic base, ridge, kappa, center) for (shifted) logistic sums, else None."""
    if isinstance(smooth, LogisticSum):
        return smooth, smooth.mu_reg, 0.0, np.zeros(smooth.p)
    if isinstance(smooth, ShiftedSum) and isinstance(smooth.base, LogisticSum):
        b = smooth.base
        return b, b.mu_reg, smooth.kappa, np.asarray(smooth.center)
    return None


def all_component_grads(smooth, x) -> np.ndarray:
    """n x p matrix whose rows are grad f_i(x)."""
    x = _check_vector(x, smooth.p)
    parts = _logistic_parts(smooth)
    if parts is not None:
        base, lam, kappa, y = parts
        b = base.dataset.labels
        s = -b / (1.0 + np.exp(np.clip(base.margins(x), -700, 700)))
        A = base.dataset.features
        rows = A.multiply(s[:, None]).toarray() if base.dataset.is_sparse else A * s[:, None]
        return rows + (lam * x + kappa * (x - y))[None, :]
    if isinstance(smooth, QuadraticSum):
        return smooth.curvatures * (x[None, :] - smooth.centers)
    if isinstance(smooth, ShiftedSum) and isinstance(smooth.base, QuadraticSum):
        return all_component_grads(smooth.base, x) + smooth.kappa * (x - smooth.center)[None, :]
    return np.stack([smooth.component_grad(i, x) for i in range(smooth.n)])


# ---------------------------------------------------------------------------
# proximal full gradient


def fg_init(obj: CompositeObjective, x0) -> FgState:
    return FgState(x=_check_vector(x0, obj.p).copy(), step=fg_step_size(obj))


def fg_step(state: FgState, obj: CompositeObjective) -> FgState:
    """x+ = prox_{step psi}(x - step grad f(x)).

    Also stores the gradient mapping (x - x+)/step and the resulting bound
    F(x+) - F* <= ||G||^2 / (2 mu) valid when the smooth part is mu-strongly
    convex and step <= 1/L.
    """
    x = state.x
    g = obj.smooth.grad(x)
    x_new = obj.prox(x - state.step * g, state.step)
    gm = (x - x_new) / state.step
    state.gmap_sq = float(gm @ gm)
    mu = obj.smooth.mu
    state.certificate = state.gmap_sq / (2.0 * mu) if mu > 0 else math.inf
    state.x = x_new
    return state


# ---------------------------------------------------------------------------
# SAGA / SAG


def saga_init(obj: CompositeObjective, x0, sampler: IndexSampler, step=None, cls=SagaState):
    x0 = _check_vector(x0, obj.p).copy()
    table = all_component_grads(obj.smooth, x0)
    if step is None:
        step = saga_step_size(obj) if cls is SagaState else sag_step_size(obj)
    return cls(x=x0, step=step, grad_table=table, table_mean=table.mean(axis=0), sampler=sampler)


def sag_init(obj: CompositeObjective, x0, sampler: IndexSampler, step=None):
    return saga_init(obj, x0, sampler, step=step, cls=SagState)


def saga_step(state: SagaState, obj: CompositeObjective, i=None) -> SagaState:
    n = obj.n
    if i is None:
        i = state.sampler.next()
    gi = obj.smooth.component_grad(i, state.x)
    d = gi - state.grad_table[i]
    g = d + state.table_mean
    state.table_mean += d / n
    state.grad_table[i] = gi
    state.x = obj.prox(state.x - state.step * g, state.step)
    return state


def sag_step(state: SagState, obj: CompositeObjective, i=None) -> SagState:
    n = obj.n
    if i is None:
        i = state.sampler.next()
    gi = obj.smooth.component_grad(i, state.x)
    state.table_mean += (gi - state.grad_table[i]) / n
    state.grad_table[i] = gi
    state.x = obj.prox(state.x - state.step * state.table_mean, state.step)
    return state


# ---------------------------------------------------------------------------
# MISO-Prox


def _a1_zero_bounds(smooth):
    """(w, c', mu) with d_i(x) = c'_i - <x, w_i> + (mu/2)||x||^2 <= f_i(x).

    Valid for sums flagged ``a1_zero`` (f_i >= (mu/2)||x||^2) and for shifted
    versions of them, where the quadratic shift is added exactly.
    """
    if getattr(smooth, "a1_zero", False):
        return np.zeros((smooth.n, smooth.p)), np.zeros(smooth.n), smooth.mu
    if isinstance(smooth, ShiftedSum):
        w, c, mu = _a1_zero_bounds(smooth.base)
        y, k = np.asarray(smooth.center), smooth.kappa
        return w + k * y[None, :], c + 0.5 * k * float(y @ y), mu + k
    raise OracleError("zero initialization requires f_i(x) >= (mu/2)||x||^2 for every component")


def miso_init(obj: CompositeObjective, mode="zeros", zbar0=None, sampler=None, seed=0) -> MisoProxState:
    """Initial lower bounds d_i^0(x) = c_i + (mu/2)||x - z_i||^2 <= f_i(x).

    ``mode="zeros"`` uses the free bounds of objectives with f_i >= (mu/2)||x||^2
    (e.g. l2-regularized logistic loss); ``mode="one_pass"`` linearizes every
    component at ``zbar0`` (n gradient evaluations).
    """
    smooth = obj.smooth
    mu, L, n = smooth.mu, smooth.L, smooth.n
    if not mu > 0:
        raise OracleError("MISO-Prox requires a strongly convex smooth part (mu > 0)")
    if sampler is None:
        sampler = IndexSampler(n, seed)
    if mode == "zeros":
        w, cprime, _ = _a1_zero_bounds(smooth)
        z = w / mu
    elif mode == "one_pass":
        if zbar0 is None:
            raise ValueError("one_pass initialization needs zbar0")
        zbar0 = _check_vector(zbar0, obj.p)
        grads = all_component_grads(smooth, zbar0)
        vals = smooth.component_values(zbar0)
        z = zbar0[None, :] - grads / mu
        cprime = vals - grads @ zbar0 + 0.5 * mu * float(zbar0 @ zbar0)
    else:
        raise ValueError(f"unknown MISO init mode {mode!r}")
    zbar = z.mean(axis=0)
    x = obj.prox(zbar, 1.0 / mu)
    return MisoProxState(x=x, z=z, zbar=zbar, cprime=np.array(cprime, dtype=float),
                         delta=miso_delta(n, L, mu), mu=mu, sampler=sampler)


def miso_prox_step(state: MisoProxState, obj: CompositeObjective, i=None) -> MisoProxState:
    mu, delta, n = state.mu, state.delta, obj.n
    if not mu > 0:
        raise OracleError("MISO-Prox requires mu > 0")
    if i is None:
        i = state.sampler.next()
    x = state.x
    fi = obj.smooth.component_value(i, x)
    gi = obj.smooth.component_grad(i, x)
    state.cprime[i] = (1.0 - delta) * state.cprime[i] + delta * (fi - gi @ x + 0.5 * mu * (x @ x))
    znew = (1.0 - delta) * state.z[i] + delta * (x - gi / mu)
    state.zbar += (znew - state.z[i]) / n
    state.z[i] = znew
    state.x = obj.prox(state.zbar, 1.0 / mu)
    return state


def miso_lower_bound(state: MisoProxState, obj: CompositeObjective, x=None) -> float:
    """D(x) = (1/n) sum_i d_i(x) + psi(x), a global minorant of F."""
    x = state.x if x is None else _check_vector(x, obj.p)
    mu = state.mu
    return float(state.cprime.mean() - mu * (x @ state.zbar) + 0.5 * mu * (x @ x) + obj.psi.value(x))


def miso_certificate(state: MisoProxState, obj: CompositeObjective) -> float:
    """F(x) - D(x) at the current iterate; an upper bound on F(x) - F*."""
    x, mu = state.x, state.mu
    fx = obj.smooth.component_values(x).mean()
    return float(fx - state.cprime.mean() + mu * (state.zbar @ x) - 0.5 * mu * (x @ x))


# ---------------------------------------------------------------------------
# drivers


def init_state(kind, obj: CompositeObjective, x0, sampler: IndexSampler, miso_mode="auto"):
    """Build the initial state of ``kind`` and return ``(state, init_cost)``."""
    if kind == "fg":
        return fg_init(obj, x0), 0
    if kind == "saga":
        return saga_init(obj, x0, sampler), obj.n
    if kind == "sag":
        return sag_init(obj, x0, sampler), obj.n
    if kind == "miso":
        x0 = _check_vector(x0, obj.p)
        if miso_mode == "auto":
            zero_ok = _zero_init_ok(obj.smooth)
            miso_mode = "zeros" if zero_ok and not np.any(x0) else "one_pass"
        st = miso_init(obj, miso_mode, zbar0=x0, sampler=sampler)
        return st, (obj.n if miso_mode == "one_pass" else 0)
    raise ValueError(f"unknown solver {kind!r}; expected one of {SOLVERS}")


def _zero_init_ok(smooth):
    try:
        _a1_zero_bounds(smooth)
        return True
    except OracleError:
        return False


_STEP = {"saga": saga_step, "sag": sag_step, "miso": miso_prox_step}


def _run_steps(kind, state, obj, m, fast):
    """Advance an incremental method by ``m`` sampled steps."""
    if m <= 0:
        return
    parts = _logistic_parts(obj.smooth) if fast else None
    if parts is None:
        step = _STEP[kind]
        for _ in range(m):
            step(state, obj)
        return
    base, lam, kappa, y = parts
    indptr, indices, data = base._indptr, base._indices, base._data
    labels = base.dataset.labels
    idx = state.sampler.take(m)
    y = np.ascontiguousarray(y, dtype=float)
    l1, l2 = obj.psi.l1, obj.psi.l2
    x = np.array(state.x, dtype=float)
    if kind == "miso":
        _kernels.miso_steps(indptr, indices, data, labels, lam, kappa, y, l1, l2,
                            state.mu, state.delta, state.z, state.zbar, state.cprime, x, idx)
    elif kind == "saga":
        _kernels.saga_steps(indptr, indices, data, labels, lam, kappa, y, l1, l2,
                            state.step, state.grad_table, state.table_mean, x, idx)
    else:
        _kernels.sag_steps(indptr, indices, data, labels, lam, kappa, y, l1, l2,
                           state.step, state.grad_table, state.table_mean, x, idx)
    state.x = x


def _check_compat(kind, stop):
    if isinstance(stop, CertificateBelow) and kind != "miso":
        raise IncompatibleStopRule("CertificateBelow is only available for MISO-Prox")
    if isinstance(stop, GradMapBelow) and kind != "fg":
        raise IncompatibleStopRule("GradMapBelow is only available for the full gradient method")


def run_solver(kind, state, obj: CompositeObjective, stop, *, cost=0, trace=None,
               max_steps=None, fast=True, record=True, record_every=1, timing=False):
    """Advance ``state`` under ``stop`` and return ``(state, trace, info)``.

    Stop rules are checked before every full-gradient step and at every epoch
    boundary (n steps) of the incremental methods. When ``max_steps`` runs out
    first, ``info.converged`` is False and the last iterate is kept.
    """
    _check_compat(kind, stop)
    n = obj.n
    if trace is None:
        trace = RunTrace(n=n)
    if max_steps is None:
        max_steps = 100_000 if kind == "fg" else 1000 * n
    info = SolveInfo(cost=cost)
    t0 = time.perf_counter_ns()
    need_value = record or isinstance(stop, TargetValue)
    need_cert = kind == "miso" and (record or isinstance(stop, CertificateBelow))

    def observe():
        fx = obj.value(state.x) if need_value else None
        if kind == "fg":
            cert = state.certificate if math.isfinite(state.certificate) else None
        elif need_cert:
            cert = miso_certificate(state, obj)
        else:
            cert = None
        if not np.isfinite(state.x).all():
            raise FloatingPointError(f"{kind} iterate became non-finite at cost {info.cost}")
        if fx is not None and (info.best_value is None or fx < info.best_value):
            info.best_value, info.best_x = fx, np.array(state.x, dtype=float)
        return fx, cert

    def done(fx, cert):
        if isinstance(stop, Budget):
            return info.steps >= stop.iterations
        if isinstance(stop, TargetValue):
            return fx - stop.f_target <= stop.eps
        if isinstance(stop, GradMapBelow):
            return state.gmap_sq <= stop.eps * stop.eps
        return cert is not None and cert <= stop.eps

    fx, cert = observe()
    if record:
        trace.record(info.cost, fx, cert, None, _wall(t0) if timing else None)
    epochs_seen = 0
    while not done(fx, cert):
        if info.steps >= max_steps:
            info.converged = False
            break
        if kind == "fg":
            fg_step(state, obj)
            m = 1
            info.cost += n
        else:
            m = n
            if isinstance(stop, Budget):
                m = min(m, stop.iterations - info.steps)
            m = min(m, max_steps - info.steps)
            _run_steps(kind, state, obj, m, fast)
            info.cost += m
        info.steps += m
        epochs_seen += 1
        fx, cert = observe()
        if record and (epochs_seen % record_every == 0):
            trace.record(info.cost, fx, cert, None, _wall(t0) if timing else None)
    if record and trace.rows and trace.rows[-1].cost != info.cost:
        trace.record(info.cost, fx, cert, None, _wall(t0) if timing else None)
    info.certificate = cert
    info.wallclock_ns = _wall(t0)
    return state, trace, info


def _wall(t0):
    return time.perf_counter_ns() - t0


def solve(solver_kind, obj: CompositeObjective, start, stop, rng_seed=0, *,
          max_iter=None, fast=True, miso_mode="auto", timing=False):
    """Minimize ``obj`` from ``start`` with one solver; return ``(x, trace)``.

    Deterministic given ``rng_seed``. When the iteration cap is hit before the
    stop rule is met, ``trace.meta["converged"]`` is False and the returned
    point is the best iterate observed.
    """
    _check_compat(solver_kind, stop)
    start = _check_vector(start, obj.p)
    if isinstance(stop, Budget) and stop.iterations == 0:
        trace = RunTrace(n=obj.n, meta={"method": solver_kind, "seed": rng_seed, "converged": True})
        trace.record(0, obj.value(start))
        return start.copy(), trace
    sampler = IndexSampler(obj.n, rng_seed)
    state, cost0 = init_state(solver_kind, obj, start, sampler, miso_mode=miso_mode)
    trace = RunTrace(n=obj.n, meta={"method": solver_kind, "seed": rng_seed})
    if cost0:
        # the initial iterate costs nothing; the pass that builds tables/bounds does
        trace.record(0, obj.value(start))
    state, trace, info = run_solver(solver_kind, state, obj, stop, cost=cost0, trace=trace,
                                    max_steps=max_iter, fast=fast, timing=timing)
    trace.meta.update(converged=info.converged, steps=info.steps, cost=info.cost)
    if not info.converged and info.best_x is not None:
        return info.best_x.copy(), trace
    return state.x.copy(), trace
