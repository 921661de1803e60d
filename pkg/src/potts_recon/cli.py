"""Command-line entry point.

Exit codes: 0 when every assertion passes, 1 when a check or verdict fails,
2 for bad or infeasible configurations. Every JSON artifact carries
``schema: 1`` and the configuration that produced it.
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys

import numpy as np

from . import appendix, exact_oracle, gaussian_limit, population
from .channel import ChannelParams
from .errors import (AtomBudgetExceeded, BracketNotFound, InvalidParameters,
                     PrecisionExhausted)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

_CHANNEL_KEYS = ("lambda", "p", "beta", "lambda_hat")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


def _read_config(path):
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_string("[run]\n" + fh.read())
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def _apply_config(args, parser):
    """Fill flags that were not given on the command line from --config."""
    if not getattr(args, "config", None):
        return args
    cfg = _read_config(args.config)
    defaults = {a.dest: a.default for a in parser._actions}
    for key, raw in cfg.items():
        if key not in defaults:
            raise InvalidParameters(f"unknown config key {key!r}")
        if getattr(args, key) == defaults[key]:
            action = next(a for a in parser._actions if a.dest == key)
            if action.type is not None:
                val = action.type(raw)
            elif isinstance(action.const, bool):
                val = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                val = raw
            setattr(args, key, val)
    return args


def _channel(args) -> ChannelParams:
    return ChannelParams.from_config({"q": args.q, "d": args.d,
                                      **{k: getattr(args, k) for k in _CHANNEL_KEYS}})


def _add_channel(p, need_d=True):
    p.add_argument("--q", type=int, required=False)
    if need_d:
        p.add_argument("--d", type=int, required=False)
    g = p.add_argument_group("channel strength (exactly one)")
    g.add_argument("--lambda", dest="lambda", type=float)
    g.add_argument("--p", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--lambda-hat", dest="lambda_hat", type=float)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise InvalidParameters("missing required option(s): "
                                + ", ".join("--" + m.replace("_", "-") for m in missing))


# --------------------------------------------------------------------------


def cmd_oracle(args) -> int:
    _require(args, "q", "d", "n")
    params = _channel(args)
    records = exact_oracle.exact_moments(params, args.n, args.budget)
    _emit(exact_oracle.moments_csv(records), args.out)
    reports = []
    stats = exact_oracle.level_stats(params, args.n, args.budget)
    for st in stats[1:]:
        reports.append(exact_oracle.verify_change_of_measure(params, st.n, stats=st).to_json())
        reports.append(exact_oracle.verify_y_identities(params, st.n, stats=st).to_json())
    ok = all(r["passed"] for r in reports)
    payload = {"schema": 1, "config": {**params.to_config(), "n": args.n,
                                       "budget": args.budget},
               "passed": ok, "reports": reports}
    if args.json:
        _emit(_dump(payload), args.json)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_trajectory(args) -> int:
    _require(args, "q", "d", "seed")
    params = _channel(args)
    tr = population.run_trajectory(params, args.pool_size, args.max_levels, args.seed,
                                   n_batches=args.batches, threads=args.threads,
                                   early_stop=not args.no_early_stop)
    _emit(tr.to_csv(), args.out)
    if args.expect and tr.verdict.value != args.expect:
        return EXIT_FAIL
    return EXIT_OK


def cmd_threshold(args) -> int:
    _require(args, "q", "d", "seed")
    try:
        est = population.estimate_threshold(args.q, args.d, args.side, args.tol,
                                            args.pool_size, args.seed,
                                            max_levels=args.max_levels,
                                            n_batches=args.batches, threads=args.threads)
    except BracketNotFound as exc:
        _emit(_dump({"schema": 1, "q": args.q, "d": args.d, "side": args.side,
                     "error": str(exc)}), args.out)
        return EXIT_FAIL
    _emit(_dump(est.to_json()), args.out)
    return EXIT_OK


def _s_values(args, q):
    if args.s is not None:
        return [args.s]
    if args.s_grid:
        if ":" in args.s_grid:
            a, b, n = args.s_grid.split(":")
            return list(np.linspace(float(a), float(b), int(n)))
        return [float(v) for v in args.s_grid.split(",")]
    return []


def cmd_gaussian(args) -> int:
    _require(args, "q")
    q = args.q
    kw = {"method": args.method, "gh_points": args.gh_points, "samples": args.samples,
          "seed": args.seed or 0}
    if args.method == "monte_carlo":
        _require(args, "seed")
    lines, ok = [], True
    for s in _s_values(args, q):
        g, err = gaussian_limit.eval_g(q, s, **kw)
        lines.append({"schema": 1, "q": q, "s": s, "g": g, "err_bound": err,
                      "method": args.method})
    if args.taylor:
        rep = gaussian_limit.taylor_check(q, **kw)
        ok &= rep.passed
        lines.append(rep.to_json())
    if args.monotonicity:
        rep = gaussian_limit.monotonicity_check(q, **kw)
        ok &= rep.passed
        lines.append(rep.to_json())
    if args.fixed_point:
        fp = gaussian_limit.find_fixed_point(q, args.tol, **kw)
        lines.append(fp.to_json())
        if q >= 5:
            ok &= fp.c_q is not None and fp.c_q < 1
    if not lines:
        raise InvalidParameters("nothing to do: give --s, --s-grid, --taylor, "
                                "--monotonicity or --fixed-point")
    _emit("\n".join(_dump(x) for x in lines), args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify_appendix(args) -> int:
    tail = appendix.tail_check()
    small = appendix.small_s_check()
    grid, res = appendix.verify_grid(full=args.full)
    if args.emit_margins:
        _emit(res.to_csv(), args.emit_margins)
    ok = tail.passed and small.passed and grid.passed
    payload = {"schema": 1, "mode": "full" if args.full else "fast", "passed": ok,
               "reports": [tail.to_json(), small.to_json(), grid.to_json()]}
    _emit(_dump(payload), args.out)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="potts-recon",
                                 description="Potts channel reconstruction on regular trees")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file supplying defaults for flags")
        p.add_argument("--out", help="output path (stdout if omitted)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads; results do not depend on it")

    p = sub.add_parser("oracle", help="exact moments and identity checks")
    _add_channel(p)
    p.add_argument("--n", type=int)
    p.add_argument("--budget", type=int, default=exact_oracle.ATOM_BUDGET)
    p.add_argument("--json", help="path for the identity report JSON")
    common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("trajectory", help="population-dynamics trajectory")
    _add_channel(p)
    p.add_argument("--pool-size", type=int, default=100_000)
    p.add_argument("--max-levels", type=int, default=500)
    p.add_argument("--batches", type=int, help="independent sub-pools (default: automatic)")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--expect", choices=[v.value for v in population.Verdict])
    common(p)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("threshold", help="bisect the reconstruction threshold")
    p.add_argument("--q", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--side", choices=["ferro", "antiferro"], default="ferro")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--pool-size", type=int, default=20_000)
    p.add_argument("--max-levels", type=int, default=500)
    p.add_argument("--batches", type=int, help="independent sub-pools (default: automatic)")
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("gaussian", help="large-degree limit g_q")
    p.add_argument("--q", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--s-grid", help="a:b:n or comma-separated values")
    p.add_argument("--method", choices=["quadrature", "monte_carlo"], default="quadrature")
    p.add_argument("--samples", type=int, default=gaussian_limit.MC_SAMPLES)
    p.add_argument("--gh-points", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--taylor", action="store_true")
    p.add_argument("--monotonicity", action="store_true")
    p.add_argument("--fixed-point", action="store_true")
    common(p)
    p.set_defaults(func=cmd_gaussian)

    p = sub.add_parser("verify-appendix", help="grid proof that g_3(s) < s")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--full", action="store_true")
    mode.add_argument("--fast", action="store_true")
    p.add_argument("--emit-margins", help="CSV path for s,upper_bound,margin")
    common(p)
    p.set_defaults(func=cmd_verify_appendix)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _apply_config(args, sub)
        return args.func(args)
    except (InvalidParameters, AtomBudgetExceeded, PrecisionExhausted, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
