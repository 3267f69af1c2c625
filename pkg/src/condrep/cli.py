"""``condrep`` command line.

Exit status is 0 on success, 1 when the inputs are well formed but the
computation is refused (invalid law, arbitrage, non-finite state, ...), and
2 for usage errors (bad flags, unreadable files).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from ._exact import format_fraction, to_fraction

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- output ----------------------------------------------------------------------


def _plain(v):
    """JSON-safe copy: Fractions as strings, arrays as lists, NaN/inf as null."""
    if isinstance(v, Fraction):
        return format_fraction(v)
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        cols = list(rows[0])
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in _plain(r).items()})
    return buf.getvalue()


def _emit(args, payload: dict, rows: list[dict]) -> None:
    if args.format == "csv":
        sys.stdout.write(_csv_text(rows))
    else:
        sys.stdout.write(json.dumps(_plain(payload), indent=2) + "\n")


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


# -- input -----------------------------------------------------------------------


def _read_text(path: str) -> str:
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        try:
            return resources.files("condrep").joinpath("data", name).read_text()
        except FileNotFoundError:
            raise UsageError(f"no builtin fixture {name!r}") from None
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_joint(path: str, mode: str | None):
    from .measures import DiscreteJoint

    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc.msg})") from None
    if mode == "float":
        return DiscreteJoint.from_dict(data).to_float()
    return DiscreteJoint.from_dict(data, mode=mode)


def _fraction_list(text: str) -> list[Fraction]:
    try:
        return [to_fraction(v.strip()) for v in text.split(",") if v.strip()]
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"cannot parse number list {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse integer list {text!r}") from None


# -- subcommands -----------------------------------------------------------------


def cmd_check(args) -> int:
    from .representation import decide_rplus

    dj = _load_joint(args.joint, args.mode)
    rep = decide_rplus(dj, tol=args.tol)
    rows = [
        {"i": i, "lp_feasible": ok, "tau": rep.tau[i] if rep.tau else None}
        for i, ok in rep.lp_feasible.items()
    ]
    _emit(args, rep.to_dict(), rows)
    return EXIT_OK


def cmd_solve(args) -> int:
    from .representation import mass_gap, solve_nonneg

    dj = _load_joint(args.joint, args.mode)
    f = _fraction_list(args.f)
    if not dj.exact:
        f = [float(v) for v in f]
    res = solve_nonneg(dj, f, tol=args.tol)
    payload = {"feasible": res.feasible}
    if res.feasible:
        payload["g"] = list(res.g)
        payload["mass_gap"] = mass_gap(dj, f, res.g)
        rows = [{"j": j, "y": y, "g": v} for j, (y, v) in enumerate(zip(dj.ys, res.g))]
    else:
        payload["certificate"] = list(res.certificate)
        rows = [{"i": i, "certificate": v} for i, v in enumerate(res.certificate)]
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_operators(args) -> int:
    from .operators import operator_norm_bounds, xi_criterion

    dj = _load_joint(args.joint, args.mode)
    payload = {"norms": operator_norm_bounds(dj, trials=args.trials, seed=args.seed).to_dict()}
    if args.xi:
        payload["xi"] = xi_criterion(dj, max_I=args.max_i).to_dict()
    rows = [{"quantity": k, "value": v} for k, v in payload["norms"].items()]
    rows += [{"quantity": f"xi.{k}", "value": v} for k, v in payload.get("xi", {}).items()]
    _emit(args, payload, rows)
    return EXIT_OK


def _parse_mu(text: str) -> list[Fraction]:
    kind, _, arg = text.partition(":")
    if kind == "uniform":
        try:
            K = int(arg)
        except ValueError:
            raise UsageError("--mu uniform:K needs an integer K") from None
        if K < 1:
            raise UsageError("K must be >= 1")
        return [Fraction(1, K)] * K
    if kind == "weights":
        return _fraction_list(arg)
    raise UsageError("--mu must be uniform:K or weights:w1,w2,...")


def _parse_f(text: str, K: int) -> list[Fraction]:
    kind, _, arg = text.partition(":")
    if kind == "indicator":
        A = set(_int_list(arg))
        if any(a < 0 or a >= K for a in A):
            raise UsageError(f"indicator indices must lie in 0..{K - 1}")
        return [Fraction(int(i in A)) for i in range(K)]
    if kind == "values":
        f = _fraction_list(arg)
        if len(f) != K:
            raise UsageError(f"--f values needs {K} entries")
        return f
    raise UsageError("--f must be indicator:i,j,... or values:v1,v2,...")


def cmd_example3(args) -> int:
    from .operators import BernoulliMixture, bernoulli_mixture_g
    from .representation import solve_nonneg

    mu = _parse_mu(args.mu)
    f = _parse_f(args.f, len(mu))
    bm = BernoulliMixture(to_fraction(args.p), mu)
    sol = bernoulli_mixture_g(bm, f)
    dj = bm.to_joint()
    Tg = dj.P.dot(sol.g) / np.array(dj.P.sum(axis=1))
    lp = solve_nonneg(dj, f)
    payload = {
        "p": bm.p,
        "mean_f": sol.mean_f,
        "g": list(sol.g),
        "negative_set": [j for j, v in enumerate(sol.g) if v < 0],
        "has_negative": sol.has_negative,
        "Tg_equals_f": all(a == b for a, b in zip(Tg, f)),
        "nonnegative_solution_exists": lp.feasible,
    }
    rows = [{"y": j, "f": f[j], "g": sol.g[j], "Tg": Tg[j]} for j in range(len(f))]
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_counterexample(args) -> int:
    from .counterexample import mc_check, represent_indicator
    from .intervals import IntervalSet

    try:
        A = IntervalSet.parse(args.A)
    except ValueError as exc:
        raise UsageError(f"--A: {exc}") from None
    if not A:
        raise UsageError("--A must have positive length")
    resid = to_fraction(args.resid)
    target = resid if args.absolute else resid * A.length
    rep = represent_indicator(A, target, max_iter=args.max_iter)
    bins = mc_check(rep.g, rep.covered, A, n=args.mc, bins=args.bins, seed=args.seed) if args.mc else []
    rows = [
        {"lo": b.lo, "hi": b.hi, "count": b.count, "estimate": b.mean, "se": b.se,
         "expected": b.expected, "indicator": b.indicator, "error": b.mean - b.expected, "z": b.z}
        for b in bins
    ]
    payload = {
        "A": A.to_json(),
        "iterations": rep.iterations,
        "remainder": rep.remainder.to_json(),
        "remainder_length": rep.remainder.length,
        "target_length": target,
        "history": rep.history,
        "g": rep.g.to_dict(),
        "mc": rows,
    }
    if args.out:
        out = Path(args.out)
        _write(out, "atlas.json", json.dumps(_plain(rep.g.to_dict()), indent=2) + "\n")
        _write(out, "verification.csv", _csv_text(rows))
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_mixing(args) -> int:
    from .intervals import IntervalSet
    from .mixing import DigitScheme, mixing_check

    scheme = DigitScheme.named(to_fraction(args.a), args.eta, P=args.P)
    if args.eta == "uniform":
        try:
            hat = IntervalSet.parse(args.hat)
        except ValueError as exc:
            raise UsageError(f"--hat: {exc}") from None
    else:
        hat = []
        for part in args.hat.split(","):
            lo, _, hi = part.partition(":")
            try:
                hat.append((float(lo), float(hi)))
            except ValueError:
                raise UsageError(f"--hat: cannot parse {part!r}") from None
    rep = mixing_check(scheme, hat, m_list=_int_list(args.m), N=int(float(args.N)), seed=args.seed)
    payload = {
        "a": rep.a, "N": rep.n, "eta": args.eta, "eta_hat_mass": rep.eta_hat_mass,
        "target_hat": rep.target, "rows": rep.rows, "pairs": rep.pairs, "within_3se": rep.within(3.0),
    }
    _emit(args, payload, rep.to_rows())
    return EXIT_OK


def _load_features(path: str | None):
    from .pdvcalib import FeatureSpec

    if path is None:
        return FeatureSpec(), {}
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc.msg})") from None
    extra = {k: data.pop(k) for k in ("mode", "slv") if k in data}
    unknown = set(data) - {"lambdas", "thetas", "betas"}
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    return FeatureSpec(**data), extra


def cmd_calibrate(args) -> int:
    from .pdvcalib import CalibrationConfig, CallSurface, parse_vol_model, synth_call_surface

    if (args.surface is None) == (args.synth is None):
        raise UsageError("give exactly one of --surface and --synth")
    try:
        ny = tuple(int(v) for v in args.ybins.lower().split("x"))
    except ValueError:
        raise UsageError("--ybins must look like 20x20") from None
    if len(ny) != 2:
        raise UsageError("--ybins must look like 20x20")
    if args.surface:
        _read_text(args.surface)
        surface = CallSurface.from_csv(args.surface, S0=args.s0)
    else:
        times = np.round(np.arange(args.steps + 1) * args.h, 12)
        strikes = np.round(np.arange(0.4, 2.5 + 1e-9, 0.01), 12)
        surface = synth_call_surface(parse_vol_model(args.synth), times if times.size > 1 else [0, args.h], strikes, args.s0)
    spec, extra = _load_features(args.features)
    mode = args.mode or extra.get("mode", "pdv")
    kw = {"slv": extra["slv"]} if "slv" in extra else {}
    cfg = CalibrationConfig(
        surface, spec, particles=args.particles, steps=args.steps, h=args.h, xbins=args.xbins,
        ybins=ny, seed=args.seed, additive=args.literal_additive, mode=mode, **kw,
    )
    from .pdvcalib import run_calibration

    rep = run_calibration(cfg)
    steps = [{k: r.row()[k] for k in ("k", "residual", "feasibility")} for r in rep.steps]
    out = Path(args.out)
    _write(out, "steps.csv", _csv_text(steps))
    _write(out, "reprice.csv", _csv_text(rep.reprice))
    if args.synth and args.write_surface:
        surface.to_csv(out / "surface.csv")
    payload = {
        "config": {"particles": cfg.particles, "steps": cfg.steps, "h": cfg.h, "xbins": cfg.xbins,
                   "ybins": list(cfg.ybins), "seed": cfg.seed, "mode": cfg.mode, "additive": cfg.additive,
                   "features": spec.to_dict()},
        "steps": [r.row() for r in rep.steps],
        "reprice": rep.reprice,
        "localvol": None if rep.localvol is None else {"floored": rep.localvol.floored, "filled": rep.localvol.filled},
    }
    _emit(args, payload, [r.row() for r in rep.steps])
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="condrep", description="Nonnegative representations f(X) = E[g(Y) | X].")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt="json"):
        sp.add_argument("--format", choices=("json", "csv"), default=fmt)
        return sp

    def joint_args(sp):
        sp.add_argument("joint", help="DiscreteJoint JSON file (or builtin:NAME)")
        sp.add_argument("--mode", choices=("rational", "float"), default=None,
                        help="arithmetic; default from the file (strings mean rational)")
        sp.add_argument("--tol", type=float, default=1e-9)

    sp = common(sub.add_parser("check", help="decide the representation property on a finite law"))
    joint_args(sp)
    sp.set_defaults(fn=cmd_check)

    sp = common(sub.add_parser("solve", help="find g >= 0 with E[g(Y)|X] = f, or a Farkas certificate"))
    joint_args(sp)
    sp.add_argument("--f", required=True, help="comma-separated values of f on the x-support")
    sp.set_defaults(fn=cmd_solve)

    sp = common(sub.add_parser("operators", help="norm checks and the xi surjectivity criterion"))
    joint_args(sp)
    sp.add_argument("--xi", action="store_true")
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--max-i", type=int, default=12)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_operators)

    sp = common(sub.add_parser("example3", help="Bernoulli mixture closed form"))
    sp.add_argument("--p", required=True)
    sp.add_argument("--mu", default="uniform:4")
    sp.add_argument("--f", required=True)
    sp.set_defaults(fn=cmd_example3)

    sp = common(sub.add_parser("counterexample", help="represent 1_A under the density counterexample"))
    sp.add_argument("--A", required=True, help="e.g. 0.3:0.4 or 0.1:0.2,0.5:0.6")
    sp.add_argument("--resid", default="1e-3", help="target remainder, relative to the length of A")
    sp.add_argument("--absolute", action="store_true", help="read --resid as an absolute length")
    sp.add_argument("--max-iter", type=int, default=600)
    sp.add_argument("--mc", type=int, default=0, help="Monte Carlo sample size (0 to skip)")
    sp.add_argument("--bins", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="directory for atlas.json and verification.csv")
    sp.set_defaults(fn=cmd_counterexample)

    sp = common(sub.add_parser("mixing", help="Monte Carlo check of the mixing sets"), fmt="csv")
    sp.add_argument("--a", default="0.3")
    sp.add_argument("--m", default="0,1,2,5,10")
    sp.add_argument("--N", default="1000000")
    sp.add_argument("--eta", choices=("uniform", "normal", "exponential"), default="uniform")
    sp.add_argument("--hat", default="0:0.5")
    sp.add_argument("--P", type=int, default=12)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_mixing)

    sp = common(sub.add_parser("calibrate", help="particle calibration of the PDV model"))
    sp.add_argument("--surface", default=None, help="CSV with columns t,x,C")
    sp.add_argument("--synth", default=None, help="flat:SIGMA, term:V0,V1 or dd:SIGMA,D")
    sp.add_argument("--write-surface", action="store_true")
    sp.add_argument("--s0", type=float, default=1.0)
    sp.add_argument("--features", default=None, help="JSON with lambdas, thetas, betas (and optional mode, slv)")
    sp.add_argument("--mode", choices=("pdv", "independent", "slv"), default=None)
    sp.add_argument("--particles", type=int, default=100_000)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--h", type=float, default=0.02)
    sp.add_argument("--xbins", type=int, default=40)
    sp.add_argument("--ybins", default="20x20")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--literal-additive", action="store_true")
    sp.add_argument("--out", default=".")
    sp.set_defaults(fn=cmd_calibrate)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ArithmeticError, KeyError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
