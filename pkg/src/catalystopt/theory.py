"""Closed-form rate, bound and complexity calculators.

Everything here is a pure function of problem constants (n, L, mu), the
smoothing parameter kappa and the outer-loop parameters (q, rho, eta, alpha0).
Inner linear rates tau are expressed per component-gradient evaluation for
incremental methods and per full-gradient step for FG.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GOLDEN_ALPHA0",
    "sc_envelope",
    "nonsc_envelope",
    "inner_budget_sc",
    "inner_budget_nonsc",
    "expected_stop_bound",
    "lambda_sequence",
    "log_lambda_sequence",
    "lambda_k",
    "gamma0",
    "LambdaBounds",
    "lambda_bounds",
    "tau",
    "tau_function",
    "TAU_METHODS",
    "optimal_kappa_generic",
    "BoundReport",
    "table_complexity",
]

GOLDEN_ALPHA0 = (math.sqrt(5.0) - 1.0) / 2.0


def sc_envelope(k, q, rho, f0_gap):
    """(8 / (sqrt(q) - rho)^2) (1 - rho)^(k+1) f0_gap."""
    sq = math.sqrt(q)
    if not (0.0 <= rho < sq):
        raise ValueError(f"need 0 <= rho < sqrt(q); got rho={rho}, sqrt(q)={sq}")
    return 8.0 / (sq - rho) ** 2 * (1.0 - rho) ** (k + 1) * f0_gap


def nonsc_envelope(k, eta, kappa, f0_gap, dist0_sq):
    """8/(k+2)^2 [(1 + 2/eta)^2 f0_gap + (kappa/2) ||x0 - x*||^2]."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if k < 0:
        raise ValueError("k must be nonnegative")
    return 8.0 / (k + 2) ** 2 * ((1.0 + 2.0 / eta) ** 2 * f0_gap + 0.5 * kappa * dist0_sq)


def _budget_R(q, rho, kappa, mu):
    if kappa == 0:
        return 2.0 / (1.0 - rho)
    if not mu > 0:
        raise ValueError("the strongly convex inner budget needs mu > 0")
    sq = math.sqrt(q)
    return 2.0 / (1.0 - rho) + 2592.0 * kappa / (mu * (1.0 - rho) ** 2 * (sq - rho) ** 2)


def inner_budget_sc(tau, q, rho, kappa, mu, A=1.0):
    """ceil(ln(A R) / tau) inner iterations per outer step, at least one.

    R = 2/(1-rho) + 2592 kappa / (mu (1-rho)^2 (sqrt(q)-rho)^2); the rate
    prefactor A of the inner method is not instantiated by theory and
    defaults to 1.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    R = _budget_R(q, rho, kappa, mu)
    return max(1, math.ceil(math.log(A * R) / tau))


def inner_budget_nonsc(tau, k, eta=0.1, T0=None):
    """ceil((T0 / tau) ln(k + 2)), with T0 = 4 + eta by default.

    The accuracy ratio of the k-th subproblem grows like (k+2)^(4+eta), whose
    logarithm gives the default constant.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if k < 1:
        raise ValueError("k must be >= 1")
    if T0 is None:
        T0 = 4.0 + eta
    return max(1, math.ceil(T0 / tau * math.log(k + 2)))


def expected_stop_bound(tau, C, epsilon):
    """(1/tau) ln(2C / (tau eps)) + 1: bound on the expected first time the
    expected-rate inequality C (1 - tau)^t reaches eps."""
    if not (0 < tau < 1 or tau == 1):
        raise ValueError("tau must lie in (0, 1]")
    if not (C > 0 and epsilon > 0):
        raise ValueError("C and epsilon must be positive")
    return math.log(2.0 * C / (tau * epsilon)) / tau + 1.0


# ---------------------------------------------------------------------------
# estimate-sequence diagnostics


def log_lambda_sequence(K, q, alpha0):
    """log lambda_0..log lambda_K; stays accurate after lambda_k underflows."""
    from .catalyst import alpha_next

    out = np.empty(K + 1)
    out[0] = 0.0
    a = alpha0
    for k in range(1, K + 1):
        out[k] = out[k - 1] + math.log1p(-a)
        a = alpha_next(a, q)
    return out


def lambda_sequence(K, q, alpha0):
    """lambda_0..lambda_K with lambda_k = prod_{i<k} (1 - alpha_i)."""
    return np.exp(log_lambda_sequence(K, q, alpha0))


def lambda_k(k, q, alpha0):
    return float(lambda_sequence(k, q, alpha0)[k])


def gamma0(alpha0, kappa, mu):
    """alpha0 ((kappa + mu) alpha0 - mu) / (1 - alpha0)."""
    if not 0 < alpha0 < 1:
        raise ValueError("alpha0 must lie in (0, 1)")
    return alpha0 * ((kappa + mu) * alpha0 - mu) / (1.0 - alpha0)


@dataclass(frozen=True)
class LambdaBounds:
    """Known bounds on lambda_k; ``None`` where the regime does not apply.

    ``upper`` holds whenever gamma0 >= mu; ``lower_mu0`` / ``upper_mu0`` are
    the 2/(k+2)^2 and 4/(k+2)^2 bounds for mu = 0 and the golden-ratio start.
    """

    upper: float | None
    lower_mu0: float | None = None
    upper_mu0: float | None = None


def lambda_bounds(k, q, alpha0, kappa, mu) -> LambdaBounds:
    g0 = gamma0(alpha0, kappa, mu)
    upper = None
    if g0 >= mu:
        upper = min((1.0 - math.sqrt(q)) ** k, 4.0 / (2.0 + k * math.sqrt(g0 / (kappa + mu))) ** 2)
    lo = hi = None
    if mu == 0 and abs(alpha0 - GOLDEN_ALPHA0) < 1e-15:
        lo, hi = 2.0 / (k + 2) ** 2, 4.0 / (k + 2) ** 2
    return LambdaBounds(upper, lo, hi)


# ---------------------------------------------------------------------------
# inner rates


def _tau_fg(n, L, mu, kappa):
    return (mu + kappa) / (L + kappa)


def _tau_sag(n, L, mu, kappa):
    return min((mu + kappa) / (16.0 * (L + kappa)), 1.0 / (8.0 * n))


def _tau_saga(n, L, mu, kappa):
    return min(1.0 / (4.0 * n), (mu + kappa) / (3.0 * (L + kappa)))


def _tau_miso(n, L, mu, kappa):
    return min((mu + kappa) / (4.0 * (L + kappa)), 1.0 / (2.0 * n))


def _tau_dual_free(n, L, mu, kappa):
    # SDCA / SVRG: 1 / (n + condition number), constants folded
    return 1.0 / (n + (L + kappa) / (mu + kappa))


TAU_METHODS = {
    "fg": _tau_fg,
    "sag": _tau_sag,
    "saga": _tau_saga,
    "miso": _tau_miso,
    "sdca": _tau_dual_free,
    "svrg": _tau_dual_free,
}

# kappa = a (L - mu) / (n + b) - mu
KAPPA_AB = {"sag": (2.0, -2.0), "saga": (0.5, 0.5), "miso": (1.0, 1.0), "sdca": (1.0, 1.0), "svrg": (1.0, 1.0)}


def tau(method, n, L, mu, kappa=0.0):
    """Linear rate of ``method`` on a (mu + kappa)-strongly convex, (L + kappa)-smooth problem."""
    try:
        fn = TAU_METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None
    return fn(n, L, mu, kappa)


def tau_function(method, n, L, mu):
    """kappa -> tau(method, n, L, mu, kappa)."""
    fn = TAU_METHODS[method]
    return lambda kappa: fn(n, L, mu, kappa)


def optimal_kappa_generic(tau_fn, mu, L, *, lo=1e-12, hi=1e6, rtol=1e-6):
    """Maximizer of tau(kappa)/sqrt(mu + kappa) (or tau/sqrt(L + kappa) when mu = 0).

    Golden-section search on log kappa over [lo L, hi L], after a coarse grid
    scan to bracket the global maximum. Returns 0 when the best kappa sits at
    the lower end of the range, i.e. when acceleration does not pay off.
    """
    base = mu if mu > 0 else L

    def ratio(t):
        k = math.exp(t)
        return tau_fn(k) / math.sqrt(base + k)

    a, b = math.log(lo * L), math.log(hi * L)
    grid = np.linspace(a, b, 401)
    vals = [ratio(t) for t in grid]
    j = int(np.argmax(vals))
    if j == 0 and tau_fn(0.0) / math.sqrt(base) >= vals[0]:
        return 0.0
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = ratio(c), ratio(d)
    # tolerance on log kappa equals the relative tolerance on kappa
    while b - a > rtol * 1e-2:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = ratio(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = ratio(d)
    return math.exp(0.5 * (a + b))


# ---------------------------------------------------------------------------
# complexity table


@dataclass
class BoundReport:
    """Raw vs accelerated iteration complexity of one method.

    ``raw`` and ``accelerated`` are big-O values with constants folded and
    logarithms written out; ``soft_o`` marks entries that hide further log
    factors. ``None`` means no rate is available for that setting.
    """

    method: str
    n: int
    L: float
    mu: float
    epsilon: float
    kappa: float
    raw: float | None
    accelerated: float | None
    soft_o: bool
    accelerates: bool
    k_in: float
    k_out: float
    envelope: list = field(default_factory=list)

    @property
    def comp_bound(self):
        return self.k_in * self.k_out


_INCREMENTAL = ("sag", "saga", "miso", "sdca", "svrg")


def table_complexity(method, n, L, mu, epsilon, eta=0.1, max_envelope=1000) -> BoundReport:
    from .catalyst import default_kappa

    if method not in TAU_METHODS:
        raise ValueError(f"unknown method {method!r}")
    if not (L > mu >= 0 and n >= 1 and epsilon > 0):
        raise ValueError("need L > mu >= 0, n >= 1, epsilon > 0")
    log_eps = math.log(1.0 / epsilon)
    kappa = default_kappa(method, n, L, mu)
    if mu > 0:
        cond = L / mu
        if method == "fg":
            raw = n * cond * log_eps
            acc = n * math.sqrt(cond) * log_eps * math.log(cond)
            accelerates = True
        else:
            raw = max(n, cond) * log_eps
            accelerates = n < cond and kappa > 0
            if accelerates:
                acc = math.sqrt(n * cond) * log_eps * math.log(cond)
                if method == "miso":
                    acc = min(cond, math.sqrt(n * cond)) * log_eps * math.log(cond)
            else:
                acc = raw
        q = mu / (mu + kappa)
        rho = 0.9 * math.sqrt(q)
        t = tau(method, n, L, mu, kappa)
        C = 8.0 / (math.sqrt(q) - rho) ** 2
        k_out = max(1.0, math.ceil(math.log(C / epsilon) / rho))
        k_in = float(inner_budget_sc(t, q, rho, kappa, mu))
        env = [sc_envelope(k, q, rho, 1.0) for k in range(int(min(k_out, max_envelope)) + 1)]
    else:
        raw = n * L / epsilon if method in ("fg", "sag", "saga") else None
        acc = n * L / math.sqrt(epsilon) * log_eps
        accelerates = True
        t = tau(method, n, L, 0.0, kappa)
        X = (1.0 + 2.0 / eta) ** 2 + 0.5 * kappa
        k_out = max(1.0, math.ceil(math.sqrt(8.0 * X / epsilon) - 2.0))
        k_in = float(inner_budget_nonsc(t, int(k_out), eta))
        env = [nonsc_envelope(k, eta, kappa, 1.0, 1.0) for k in range(int(min(k_out, max_envelope)) + 1)]
    return BoundReport(
        method=method, n=n, L=L, mu=mu, epsilon=epsilon, kappa=kappa,
        raw=raw, accelerated=acc, soft_o=True, accelerates=accelerates,
        k_in=k_in, k_out=float(k_out), envelope=env,
    )
