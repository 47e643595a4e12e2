"""Benchmark harness: problem setup, F* oracle, traced runs and comparisons."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import catalyst as cat
from .data import load_libsvm, normalize_rows, parse_synthetic_spec, synth_logistic
from .problem import (
    CompositeObjective,
    LogisticSum,
    OracleError,
    QuadraticSum,
    ShiftedSum,
    logistic_objective,
)
from .solvers import Budget, IncompatibleStopRule, solve
from .trace import RunTrace

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "FStar",
    "build_objective",
    "config_hash",
    "problem_hash",
    "fstar_oracle",
    "run_experiment",
    "run_all",
    "epochs_to_threshold",
    "compare",
    "add_suboptimality",
    "write_trace",
    "THRESHOLDS",
]

THRESHOLDS = (1e-2, 1e-4, 1e-6)
INF = "inf"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None
    synthetic: str | None = None
    normalize: bool = True
    mu: float = 0.0
    l1: float = 0.0
    method: str = "miso"
    catalyst: bool = False
    kappa: float | None = None
    rho: float | None = None
    eta: float = 0.1
    alpha0: str = "auto"
    epsilon_mode: str = "auto"
    inner_stop: str = "auto"
    inner_budget: str | int = "theory"
    epochs: int = 50
    seeds: tuple = (0,)
    timing: bool = False

    def validate(self):
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError("exactly one of --data and --synthetic is required")
        if self.method not in ("fg", "sag", "saga", "miso"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.mu < 0 or self.l1 < 0:
            raise ConfigError("mu and l1 must be nonnegative")
        if self.catalyst:
            if self.epsilon_mode == "sc" and self.mu == 0:
                raise ConfigError("--epsilon-mode sc needs --mu > 0")
            if self.inner_stop == "certificate" and self.method in ("sag", "saga"):
                raise ConfigError(f"{self.method} has no certificate; use --inner-stop budget")
            if self.alpha0 == "sqrtq" and self.mu == 0:
                raise ConfigError("--alpha0 sqrtq needs --mu > 0")
        elif self.method == "miso" and self.mu == 0:
            raise ConfigError("plain MISO-Prox needs --mu > 0 (or --catalyst on)")
        return self

    def catalyst_config(self) -> cat.CatalystConfig:
        return cat.CatalystConfig(
            kappa=self.kappa, alpha0=self.alpha0, rho=self.rho, eta=self.eta,
            epsilon_mode=self.epsilon_mode, inner_stop=self.inner_stop,
            inner_budget=self.inner_budget,
        )

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def problem_hash(cfg: ExperimentConfig) -> str:
    """Hash of everything that defines F (data, normalization, mu, l1)."""
    src = {"synthetic": cfg.synthetic} if cfg.synthetic else {"data": _file_digest(cfg.data)}
    return _digest({**src, "normalize": cfg.normalize, "mu": cfg.mu, "l1": cfg.l1})


def config_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("seeds")
    d.pop("timing")
    if cfg.data:
        d["data"] = _file_digest(cfg.data)
    return _digest(d)


def build_objective(cfg: ExperimentConfig) -> CompositeObjective:
    if cfg.synthetic:
        ds = synth_logistic(parse_synthetic_spec(cfg.synthetic))
    else:
        try:
            ds = load_libsvm(cfg.data)
        except OSError as exc:
            raise ConfigError(f"cannot read data file {cfg.data!r}: {exc}") from exc
    if cfg.normalize:
        ds = normalize_rows(ds)
    return logistic_objective(ds, cfg.mu, cfg.l1)


# ---------------------------------------------------------------------------
# F* oracle


@dataclass(frozen=True)
class FStar:
    f_star: float
    x_star: np.ndarray
    certificate: float
    solver: str

    def to_json(self, **extra):
        return json.dumps({"f_star": self.f_star, "x_star": [float(v) for v in self.x_star],
                           "certificate": self.certificate, "solver": self.solver, **extra},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(float(d["f_star"]), np.array(d["x_star"], dtype=float),
                   float(d.get("certificate", math.nan)), d.get("solver", ""))


def _hessian(smooth, x):
    if isinstance(smooth, LogisticSum):
        return smooth.hessian(x)
    if isinstance(smooth, QuadraticSum):
        return np.diag(smooth.curvatures.mean(axis=0))
    if isinstance(smooth, ShiftedSum):
        return _hessian(smooth.base, x) + smooth.kappa * np.eye(smooth.p)
    return None


def _gradmap_certificate(obj, x, mu_eff):
    """One prox-gradient step from x; returns (x+, bound on F(x+) - F*)."""
    step = 1.0 / obj.smooth.L
    xp = obj.prox(x - step * obj.smooth.grad(x), step)
    gm = (x - xp) / step
    return xp, float(gm @ gm) / (2.0 * mu_eff)


def _local_mu(obj, x):
    H = _hessian(obj.smooth, x)
    mu = obj.smooth.mu
    if H is not None:
        mu = max(mu, float(np.linalg.eigvalsh(H)[0]))
    return mu


_FSTAR_CACHE: dict = {}


def fstar_oracle(obj: CompositeObjective, x0=None, *, rtol=1e-13, max_iter=200_000,
                 cache_key=None, cache_dir=None) -> FStar:
    """High-accuracy minimizer of ``obj``.

    Smooth problems (psi without L1 part) use damped Newton and are
    certified by F(x) - F* <= ||grad F(x)||^2 / (2 mu). Otherwise
    accelerated proximal gradient with adaptive restart runs, certified by a
    final proximal-gradient step whose gradient mapping G gives
    F(x+) - F* <= ||G||^2 / (2 mu). Here mu is the strong convexity of the
    smooth part, raised to the smallest Hessian eigenvalue at x when larger
    (a local estimate used when mu is zero or tiny).
    The loop stops once the bound is <= rtol * max(1, F(x0)).
    """
    if cache_key is not None:
        if cache_key in _FSTAR_CACHE:
            return _FSTAR_CACHE[cache_key]
        if cache_dir is not None:
            path = os.path.join(cache_dir, f"fstar-{cache_key}.json")
            if os.path.exists(path):
                with open(path) as fh:
                    res = FStar.from_json(fh.read())
                _FSTAR_CACHE[cache_key] = res
                return res
    p = obj.p
    x = np.zeros(p) if x0 is None else np.asarray(x0, dtype=float).copy()
    tol = rtol * max(1.0, obj.value(x))
    cert = math.inf
    solver = "newton"
    H0 = _hessian(obj.smooth, x)
    if obj.psi.l1 == 0 and H0 is not None:
        for _ in range(200):
            g = obj.smooth.grad(x) + obj.psi.l2 * x
            H = _hessian(obj.smooth, x) + obj.psi.l2 * np.eye(p)
            dx = np.linalg.solve(H, g)
            # damped step keeps the iteration monotone far from the optimum
            t, fx = 1.0, obj.value(x)
            while obj.value(x - t * dx) > fx - 0.25 * t * float(g @ dx) and t > 1e-10:
                t *= 0.5
            x = x - t * dx
            g = obj.smooth.grad(x) + obj.psi.l2 * x
            # smooth case: F(x) - F* <= ||grad F(x)||^2 / (2 mu)
            cert = float(g @ g) / (2.0 * _local_mu(obj, x))
            if cert <= tol:
                # one more full step costs nothing and sharpens x* quadratically
                H = _hessian(obj.smooth, x) + obj.psi.l2 * np.eye(p)
                xn = x - np.linalg.solve(H, g)
                gn = obj.smooth.grad(xn) + obj.psi.l2 * xn
                if float(gn @ gn) < float(g @ g):
                    x, cert = xn, float(gn @ gn) / (2.0 * _local_mu(obj, xn))
                break
    if not cert <= tol:
        solver = "apg-restart"
        step = 1.0 / obj.smooth.L
        y, xk, tk = x.copy(), x.copy(), 1.0
        fx = obj.value(xk)
        for it in range(max_iter):
            xn = obj.prox(y - step * obj.smooth.grad(y), step)
            fn = obj.value(xn)
            if fn > fx:
                # restart momentum
                y, tk = xk.copy(), 1.0
                continue
            tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            y = xn + (tk - 1.0) / tn * (xn - xk)
            xk, fx, tk = xn, fn, tn
            if it % 50 == 0:
                xp, cert = _gradmap_certificate(obj, xk, _local_mu(obj, xk))
                if cert <= tol:
                    break
        x = xk
        xp, cert = _gradmap_certificate(obj, x, _local_mu(obj, x))
        if obj.value(xp) <= obj.value(x):
            x = xp
    res = FStar(obj.value(x), x, cert, solver)
    if cache_key is not None:
        _FSTAR_CACHE[cache_key] = res
        if cache_dir is not None:
            os.makedirs(cache_dir, exist_ok=True)
            _atomic_write(os.path.join(cache_dir, f"fstar-{cache_key}.json"), res.to_json())
    return res


# ---------------------------------------------------------------------------
# runs


def run_experiment(cfg: ExperimentConfig, seed: int, obj: CompositeObjective | None = None) -> RunTrace:
    """One traced run of ``cfg`` with ``seed``; cost budget is ``cfg.epochs`` epochs."""
    if obj is None:
        obj = build_objective(cfg)
    x0 = np.zeros(obj.p)
    n = obj.n
    try:
        if cfg.catalyst:
            _, trace = cat.run(obj, cfg.catalyst_config(), cfg.method, x0=x0,
                               outer_budget=10**9, max_epochs=cfg.epochs, seed=seed,
                               timing=cfg.timing)
        else:
            steps = cfg.epochs if cfg.method == "fg" else cfg.epochs * n
            if cfg.method in ("sag", "saga"):
                steps -= n  # the table-building pass counts toward the budget
            _, trace = solve(cfg.method, obj, x0, Budget(max(steps, 0)), seed, timing=cfg.timing)
    except OracleError as exc:
        raise FloatingPointError(str(exc)) from exc
    except (IncompatibleStopRule, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    trace.meta.update(
        config_hash=config_hash(cfg), problem_hash=problem_hash(cfg), seed=seed,
        method=cfg.method, catalyst=cfg.catalyst, n=n, config=cfg.to_dict(),
    )
    if not cfg.timing:
        for r in trace.rows:
            r.wallclock_ns = None
    return trace


def run_all(cfg: ExperimentConfig, threads=None):
    """Run every seed of ``cfg`` (in parallel threads); returns ``{seed: trace}``."""
    obj = build_objective(cfg)
    if threads is None:
        threads = int(os.environ.get("CATALYST_BENCH_THREADS", os.cpu_count() or 1))
    threads = max(1, min(threads, len(cfg.seeds)))
    if threads == 1:
        return {s: run_experiment(cfg, s, obj) for s in cfg.seeds}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = {s: pool.submit(run_experiment, cfg, s, obj) for s in cfg.seeds}
        return {s: f.result() for s, f in futs.items()}


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(trace: RunTrace, path, fmt="csv"):
    """Write ``trace`` atomically; CSV gets a ``<path>.meta.json`` sidecar."""
    if fmt == "json":
        _atomic_write(path, trace.to_json())
    else:
        _atomic_write(path, trace.to_csv())
        _atomic_write(path + ".meta.json", json.dumps(trace.meta, indent=1, sort_keys=True))


def seed_path(out, seed, multi):
    if not multi:
        return out
    root, ext = os.path.splitext(out)
    return f"{root}.seed{seed}{ext}"


# ---------------------------------------------------------------------------
# post-processing


def add_suboptimality(trace: RunTrace, f_star: float) -> str:
    """CSV of ``trace`` with an extra ``suboptimality`` column F - F*."""
    return trace.to_csv({"suboptimality": [r.objective - f_star for r in trace.rows]})


def epochs_to_threshold(trace: RunTrace, f_star: float, threshold: float):
    """First epoch where (F - F*)/(F(x0) - F*) <= threshold, or ``inf``."""
    f0 = trace.rows[0].objective
    gap0 = f0 - f_star
    for r in trace.rows:
        if gap0 <= 0 or (r.objective - f_star) <= threshold * gap0:
            return r.epoch
    return math.inf


def compare(cfg: ExperimentConfig, methods=("sag", "saga", "miso"), thresholds=THRESHOLDS,
            f_star: float | None = None):
    """Epochs to each relative threshold, raw vs accelerated, per method.

    Returns rows of dicts (median over seeds); the ratio column is
    accelerated / raw epochs (below 1 means Catalyst helped).
    """
    obj = build_objective(cfg)
    if f_star is None:
        f_star = fstar_oracle(obj, cache_key=problem_hash(cfg)).f_star
    rows = []
    for m in methods:
        res = {}
        for acc in (False, True):
            c = dataclasses.replace(cfg, method=m, catalyst=acc)
            if not acc and m == "miso" and cfg.mu == 0:
                res[acc] = [[math.inf] * len(thresholds)]
                continue
            c.validate()
            res[acc] = [[epochs_to_threshold(run_experiment(c, s, obj), f_star, t) for t in thresholds]
                        for s in cfg.seeds]
        for j, t in enumerate(thresholds):
            raw = float(np.median([r[j] for r in res[False]]))
            accd = float(np.median([r[j] for r in res[True]]))
            if math.isinf(accd):
                ratio = math.inf
            elif math.isinf(raw):
                ratio = None
            else:
                ratio = accd / raw
            rows.append({"method": m, "threshold": t, "raw_epochs": raw, "catalyst_epochs": accd,
                         "ratio": ratio})
    return rows


def format_compare(rows) -> str:
    def f(v):
        if v is None:
            return "n/a"
        if isinstance(v, float) and math.isinf(v):
            return INF
        return repr(v) if isinstance(v, float) else str(v)

    cols = ["method", "threshold", "raw_epochs", "catalyst_epochs", "ratio"]
    lines = [",".join(cols)]
    lines += [",".join(f(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"
