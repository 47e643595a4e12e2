"""Command-line entry point: ``catalyst-bench {run,report,compare,fstar}``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import bench
from .bench import ConfigError, ExperimentConfig
from .problem import OracleError
from .trace import RunTrace

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _on_off(v):
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _seeds(v):
    try:
        return tuple(int(s) for s in str(v).split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {v!r}") from None


def _budget(v):
    if v == "theory":
        return v
    try:
        k = int(v)
    except ValueError:
        raise argparse.ArgumentTypeError("--inner-budget is 'theory' or a positive integer") from None
    if k < 0:
        raise argparse.ArgumentTypeError("--inner-budget must be nonnegative")
    return k


def _problem_flags(p):
    src = p.add_argument_group("problem")
    src.add_argument("--data", metavar="PATH", help="libsvm file")
    src.add_argument("--synthetic", metavar="SPEC", help="e.g. n=100,p=10,seed=1[,label_noise=0.1,feature_decay=0.8]")
    src.add_argument("--normalize", type=_on_off, default=True, metavar="{on,off}")
    src.add_argument("--mu", type=float, default=0.0, help="l2 regularization (strong convexity)")
    src.add_argument("--l1", type=float, default=0.0, help="l1 penalty weight")


def _method_flags(p, multi=False):
    g = p.add_argument_group("method")
    if multi:
        g.add_argument("--method", default="sag,saga,miso", help="comma-separated methods")
    else:
        g.add_argument("--method", choices=["fg", "sag", "saga", "miso"], default="miso")
        g.add_argument("--catalyst", type=_on_off, default=False, metavar="{on,off}")
    g.add_argument("--kappa", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--eta", type=float, default=0.1)
    g.add_argument("--alpha0", choices=["auto", "sqrtq", "root", "golden"], default="auto")
    g.add_argument("--epsilon-mode", choices=["auto", "sc", "convex"], default="auto")
    g.add_argument("--inner-stop", choices=["auto", "budget", "certificate"], default="auto")
    g.add_argument("--inner-budget", type=_budget, default="theory",
                   help="'theory' or a fixed number of epochs (steps for fg) per outer iteration")
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--seed", type=_seeds, default=(0,))
    g.add_argument("--timing", type=_on_off, default=False, metavar="{on,off}")


def build_parser():
    parser = _Parser(prog="catalyst-bench", description=__doc__.splitlines()[0])
    parser.add_argument("--config", metavar="FILE", help="key=value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one method and write traces")
    _problem_flags(p)
    _method_flags(p)
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("report", help="add an F - F* column to a trace")
    p.add_argument("--in", dest="inp", required=True, metavar="PATH")
    p.add_argument("--fstar", required=True, metavar="PATH")
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("compare", help="epochs to relative accuracy, raw vs Catalyst")
    _problem_flags(p)
    _method_flags(p, multi=True)
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("fstar", help="compute F* and x* to high accuracy")
    _problem_flags(p)
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--cache-dir", metavar="DIR")
    return parser


def read_config_file(path):
    """Parse ``key=value`` lines (``#`` comments allowed) into flag-style args."""
    args = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        args += ["--" + key.strip().replace("_", "-"), val.strip()]
    return args


def _split_config(argv):
    """Pull ``--config FILE`` out of argv and splice the file's flags before the command's own."""
    argv = list(argv)
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            del argv[i:i + 2]
            break
        if a.startswith("--config="):
            path = a.split("=", 1)[1]
            del argv[i]
            break
    if path is None:
        return argv
    extra = read_config_file(path)
    cmds = {"run", "report", "compare", "fstar"}
    for i, a in enumerate(argv):
        if a in cmds:
            # file values first, so explicit flags (parsed later) win
            return argv[:i + 1] + extra + argv[i + 1:]
    raise ConfigError("no subcommand given")


def _config(ns, **over) -> ExperimentConfig:
    fields = dict(
        data=ns.data, synthetic=ns.synthetic, normalize=ns.normalize, mu=ns.mu, l1=ns.l1,
    )
    if hasattr(ns, "epochs"):
        fields.update(
            kappa=ns.kappa, rho=ns.rho, eta=ns.eta, alpha0=ns.alpha0,
            epsilon_mode=ns.epsilon_mode, inner_stop=ns.inner_stop,
            inner_budget=ns.inner_budget, epochs=ns.epochs, seeds=ns.seed, timing=ns.timing,
        )
    fields.update(over)
    return ExperimentConfig(**fields)


def _emit(text, out):
    if out:
        bench._atomic_write(out, text)
    else:
        sys.stdout.write(text)


def cmd_run(ns):
    cfg = _config(ns, method=ns.method, catalyst=ns.catalyst).validate()
    traces = bench.run_all(cfg)
    multi = len(cfg.seeds) > 1
    if not ns.out:
        if multi:
            raise ConfigError("--out is required with several seeds")
        tr = traces[cfg.seeds[0]]
        sys.stdout.write(tr.to_json() if ns.format == "json" else tr.to_csv())
        return
    for s, tr in traces.items():
        bench.write_trace(tr, bench.seed_path(ns.out, s, multi), ns.format)


def _load_trace(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path!r}: {exc}") from exc
    if text.lstrip().startswith("{"):
        return RunTrace.from_json(text)
    n = None
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            n = json.load(fh).get("n")
    return RunTrace.from_csv(text, n)


def cmd_report(ns):
    tr = _load_trace(ns.inp)
    try:
        with open(ns.fstar, encoding="utf-8") as fh:
            fs = bench.FStar.from_json(fh.read())
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read F* file {ns.fstar!r}: {exc}") from exc
    _emit(bench.add_suboptimality(tr, fs.f_star), ns.out)


def cmd_compare(ns):
    methods = tuple(m.strip() for m in ns.method.split(",") if m.strip())
    for m in methods:
        if m not in ("fg", "sag", "saga", "miso"):
            raise ConfigError(f"unknown method {m!r}")
    cfg = _config(ns, method=methods[0], catalyst=False)
    if (cfg.data is None) == (cfg.synthetic is None):
        raise ConfigError("exactly one of --data and --synthetic is required")
    rows = bench.compare(cfg, methods)
    _emit(bench.format_compare(rows), ns.out)


def cmd_fstar(ns):
    cfg = _config(ns)
    if (cfg.data is None) == (cfg.synthetic is None):
        raise ConfigError("exactly one of --data and --synthetic is required")
    obj = bench.build_objective(cfg)
    key = bench.problem_hash(cfg)
    res = bench.fstar_oracle(obj, cache_key=key, cache_dir=ns.cache_dir)
    _emit(res.to_json(problem_hash=key) + "\n", ns.out)


COMMANDS = {"run": cmd_run, "report": cmd_report, "compare": cmd_compare, "fstar": cmd_fstar}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        ns = build_parser().parse_args(_split_config(argv))
        COMMANDS[ns.command](ns)
    except ConfigError as exc:
        print(f"catalyst-bench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, OracleError) as exc:
        print(f"catalyst-bench: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"catalyst-bench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
