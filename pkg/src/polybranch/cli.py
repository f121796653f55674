"""Command-line front end.

Every artifact starts with a reproducibility header holding the full run
configuration and its hash; re-running the same configuration reproduces
the output byte for byte.  Exit codes: 0 success, 2 invalid input,
3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, analytics, discrete, montecarlo, simulate
from .mechanism import load_mechanism, mechanism_to_dict

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3


@dataclass
class RunConfig:
    command: str
    spec: str | None
    mechanism: dict | None
    options: dict = field(default_factory=dict)
    version: str = __version__

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"), default=_json_default)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def header_lines(self) -> list[str]:
        return [f"polybranch {self.version} config_hash={self.hash}", f"config={self.canonical()}"]


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _csv_text(cfg: RunConfig, header: list[str], rows) -> str:
    buf = io.StringIO()
    for line in cfg.header_lines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) and math.isfinite(v) else _num(v) for v in r])
    return buf.getvalue()


def _json_text(cfg: RunConfig, body: dict) -> str:
    doc = {"config_hash": cfg.hash, "config": json.loads(cfg.canonical()), **body}
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _emit(text: str, out: str | None):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _config(args, mech, **options) -> RunConfig:
    opts = {k: v for k, v in vars(args).items() if k not in ("func", "spec", "out", "threads")}
    opts.update(options)
    return RunConfig(args.command, args.spec, None if mech is None else mechanism_to_dict(mech), opts)


# ---------------------------------------------------------------------------
# subcommands


def cmd_classify(args) -> int:
    mech = load_mechanism(args.spec)
    rep = analytics.classify(mech, args.x)
    cfg = _config(args, mech)
    if args.json:
        _emit(_json_text(cfg, {"report": json.loads(rep.to_json())}), args.out)
    else:
        _emit("".join(f"# {line}\n" for line in cfg.header_lines()) + rep.pretty() + "\n", args.out)
    return EXIT_OK


def _times_rows(mech, x, ys, tol, rel_tol):
    rows = []

    def add(quantity, y, res):
        rows.append([quantity, y, res.value, res.abs_error, res.converged, res.note or ""])

    add("extinction", "", analytics.mean_extinction_time(mech, x, tol=tol, rel_tol=rel_tol, full=True))
    add("explosion", "", analytics.mean_explosion_time(mech, x, tol=tol, rel_tol=rel_tol, full=True))
    add("absorption", "", analytics.mean_absorption_time(mech, x, tol=tol, rel_tol=rel_tol, full=True))
    no_explosion = mech.a == 0.0 and mech.beta >= 0.0
    for y in ys:
        if y <= x:
            add("two_sided", y, analytics.mean_two_sided(mech, x, y, tol=tol, rel_tol=rel_tol, full=True))
            if no_explosion:
                add("hit_time", y, analytics.mean_hit_time(mech, x, y, tol=tol, rel_tol=rel_tol, full=True))
        if no_explosion:
            add("from_infinity", y, analytics.mean_hit_from_infinity(mech, y, tol=tol, rel_tol=rel_tol, full=True))
    return rows


def cmd_times(args) -> int:
    mech = load_mechanism(args.spec)
    if args.theta is not None:
        mech = mech.with_theta(args.theta)
    rows = _times_rows(mech, args.x, args.y, args.tol, args.rel_tol)
    cfg = _config(args, mech)
    _emit(_csv_text(cfg, ["quantity", "y", "value", "abs_error", "converged", "note"], rows), args.out)
    if not all(r[4] for r in rows):
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    mech = load_mechanism(args.spec)
    samples = []
    for p in range(args.paths):
        if args.scheme == "euler":
            samples.append(simulate.euler_sde(mech, args.x0, args.horizon, args.dt, n=args.n, seed=args.seed,
                                              path=p))
        else:
            levy = simulate.sample_levy_path(mech, args.x0, args.horizon, args.dt, args.seed, path=p,
                                             n_max=args.n, exact=None if args.scheme == "lamperti" else False)
            samples.append(simulate.inverse_lamperti(levy, mech.theta))
    cfg = _config(args, mech)
    text = simulate.paths_to_csv(samples)
    head = "".join(f"# {line}\n" for line in cfg.header_lines())
    _emit(head + text, args.out)
    return EXIT_OK


def _mc_estimate(mech, args):
    sim = {"dt": args.dt, "n": args.n}
    q = args.quantity
    if q == "extinction_prob":
        est = montecarlo.estimate_extinction_prob(mech, args.x, args.horizon, args.paths, args.seed, **sim)
        return est, analytics.hit_prob(mech, args.x), True
    if q in ("extinct", "exploded", "either"):
        fn = {"extinct": analytics.mean_extinction_time, "exploded": analytics.mean_explosion_time,
              "either": analytics.mean_absorption_time}[q]
        res = fn(mech, args.x, full=True)
        est = montecarlo.estimate_restricted_mean(mech, args.x, q, args.horizon, args.paths, args.seed, **sim)
        return est, res.value, res.converged
    if args.y is None:
        raise ValueError("--y is required for quantity 'hit'")
    res = analytics.mean_two_sided(mech, args.x, args.y, full=True)
    est = montecarlo.estimate_hit_time(mech, args.x, args.y, args.horizon, args.paths, args.seed, **sim)
    return est, res.value, res.converged


def cmd_mc(args) -> int:
    mech = load_mechanism(args.spec)
    est, analytic, converged = _mc_estimate(mech, args)
    row = montecarlo.compare(args.quantity, est, analytic, k=args.k)
    cfg = _config(args, mech)
    if args.json:
        _emit(_json_text(cfg, {"rows": json.loads(montecarlo.rows_to_json([row]))["rows"],
                               "estimate": {k: _num(v) for k, v in est.as_dict().items()}}), args.out)
    else:
        _emit(montecarlo.rows_to_csv([row], header="\n".join(cfg.header_lines())), args.out)
    return EXIT_OK if converged else EXIT_NONCONVERGED


def cmd_converge(args) -> int:
    mech = load_mechanism(args.spec)
    rows = discrete.ks_convergence(mech, args.x0, args.t, args.ns, args.paths, args.seed, dt=args.dt)
    cfg = _config(args, mech)
    table = [[r["n"], r["gamma_n"], r["ks"], r["ks_noise"]] for r in rows]
    _emit(_csv_text(cfg, ["n", "gamma_n", "ks", "ks_noise"], table), args.out)
    return EXIT_OK if discrete.ks_decreasing(rows) else EXIT_NONCONVERGED


def cmd_roundtrip(args) -> int:
    mech = load_mechanism(args.spec)
    res = simulate.roundtrip_check(mech, args.x0, args.horizon, args.seeds, args.seed)
    cfg = _config(args, mech)
    ok = res["max_time_error"] <= args.tol and res["values_equal"]
    rows = [[k, v] for k, v in res.items()] + [["verdict", "pass" if ok else "fail"]]
    _emit(_csv_text(cfg, ["check", "value"], rows), args.out)
    return EXIT_OK if ok else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# parser


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polybranch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"polybranch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeded=True):
        sp.add_argument("spec", help="mechanism spec file (JSON)")
        sp.add_argument("-o", "--out", help="output path (default: stdout)")
        sp.add_argument("--threads", type=int, help="worker threads (default: $POLYBRANCH_THREADS or 1)")
        if seeded:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("classify", help="boundary classification report")
    common(sp, seeded=False)
    sp.add_argument("--x", type=float, default=1.0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("times", help="table of every mean-time formula")
    common(sp, seeded=False)
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--y", type=_floats, default=[], help="comma-separated levels")
    sp.add_argument("--theta", type=float, help="override the rate power of the spec")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--rel-tol", type=float, default=analytics.TIME_REL_TOL)
    sp.set_defaults(func=cmd_times)

    sp = sub.add_parser("simulate", help="sample paths as CSV")
    common(sp)
    sp.add_argument("--x0", type=float, required=True)
    sp.add_argument("--horizon", type=float, required=True)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--paths", type=int, default=1)
    sp.add_argument("--n", type=float, default=simulate.DEFAULT_NMAX, help="truncation level (1/n, n)")
    sp.add_argument("--scheme", choices=("euler", "lamperti", "lamperti-euler"), default="euler")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("mc", help="Monte Carlo estimate against the analytic value")
    common(sp)
    sp.add_argument("--quantity", choices=("extinction_prob", "extinct", "exploded", "either", "hit"),
                    required=True)
    sp.add_argument("--x", type=float, required=True)
    sp.add_argument("--y", type=float)
    sp.add_argument("--horizon", type=float, default=20.0)
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--n", type=float, default=1e3, help="truncation level (1/n, n)")
    sp.add_argument("--k", type=float, default=3.0, help="verdict band in standard errors")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("converge", help="KS distance of the rescaled chain to the Euler marginal")
    common(sp)
    sp.add_argument("--x0", type=float, default=1.0)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--ns", type=_ints, default=[50, 200, 800])
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("roundtrip", help="forward/inverse time change check on event-driven paths")
    common(sp)
    sp.add_argument("--x0", type=float, default=1.0)
    sp.add_argument("--horizon", type=float, default=10.0)
    sp.add_argument("--seeds", type=int, default=1000)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.set_defaults(func=cmd_roundtrip)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        os.environ["POLYBRANCH_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"polybranch: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
