"""Command-line front end: ``fracfb {simulate,sweep,dderiv,value,selftest}``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import acceptance
from .config import ConfigError, RunConfig, load_config, parse_config
from .core import Position, extension_a
from .envelope import CandidateFamily, envelope_derivatives, example_ci_derivatives, family_values
from .envelope import value_bruteforce, value_closed_form_example
from .feedback import (
    Partition,
    run_feedback,
    strategy_envelope,
    strategy_example,
    strategy_smooth,
    sweep_csv,
    sweep_partitions,
)
from .sensitivity import shifted_position
from .special import perturbed_gamma

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCEPTANCE, EXIT_USAGE = 0, 1, 2, 3, 64


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str) -> None:
        if not self.quiet:
            print(msg)


def _threads() -> int:
    raw = os.environ.get("FRACFB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FRACFB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FRACFB_THREADS must be a positive integer, got {raw!r}")
    return n


def _fan_out(fn, items):
    items = list(items)
    n = min(_threads(), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    updates = {}
    if args.out is not None:
        updates["out"] = args.out
    if args.delta is not None:
        updates["delta"] = args.delta
    if args.steps is not None:
        updates["steps_per_piece" if args.command in ("simulate", "sweep") else "sensitivity_m"] = args.steps
    if updates:
        cfg = parse_config(json.dumps(cfg.model_dump() | updates), "<command line>")
    return cfg


def _label(w0) -> str:
    return " ".join(f"{v:.12g}" for v in np.atleast_1d(w0))


def _rho(cfg: RunConfig, p: Position) -> float | None:
    return value_closed_form_example(p, cfg.g) if cfg.problem == "example-g" else None


def _strategy(cfg: RunConfig, name: str, pr):
    if name == "example":
        return strategy_example(cfg.g, pr.ctrl)
    if name == "envelope":
        return strategy_envelope(CandidateFamily.constants(pr.ctrl), pr.dyn, pr.cost, pr.ctrl, cfg.tol, cfg.strategy_m)
    if cfg.problem != "example-g":
        raise ConfigError("the 'smooth' strategy needs a closed-form gradient; only example-g provides one")
    return strategy_smooth(lambda p: np.atleast_1d(example_ci_derivatives(p, cfg.g)[1]), pr.dyn, pr.ctrl)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _runnable(positions: list[Position]) -> None:
    for i, p in enumerate(positions):
        if p.t >= p.T:
            raise ConfigError(f"start {i}: t={p.t} must be below T={p.T}")


def cmd_simulate(cfg: RunConfig, say) -> int:
    pr = cfg.problem_instance()
    positions = cfg.positions()
    _runnable(positions)
    jobs = [(i, name, d) for i in range(len(positions)) for name in cfg.strategies for d in cfg.diameters]
    strategies = {name: _strategy(cfg, name, pr) for name in cfg.strategies}

    def job(item):
        i, name, d = item
        p = positions[i]
        rep = run_feedback(p, strategies[name], Partition.uniform(p.t, p.T, d), pr.dyn, pr.cost, pr.ctrl,
                           cfg.steps_per_piece, rho=_rho(cfg, p))
        return i, name, d, rep

    results = _fan_out(job, jobs)
    out = _outdir(cfg)
    rows = [(i, positions[i].t, _label(positions[i].w0), name, d, rep) for i, name, d, rep in results]
    (out / "runs.csv").write_text(sweep_csv(rows, ("start", "t", "w0", "strategy")))
    reports = [rep.to_json() | {"start_index": i, "diam": d} for i, name, d, rep in results]
    (out / "runs.json").write_text(json.dumps(reports))
    for i, name, d, rep in results:
        eps = "" if rep.epsilon is None else f" eps={rep.epsilon:.3e}"
        say(f"start {i} {name} diam={d:.6g}: cost={rep.cost:.6f}{eps}")
    say(f"wrote {out / 'runs.csv'} and {out / 'runs.json'}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, say) -> int:
    pr = cfg.problem_instance()
    positions = cfg.positions()
    _runnable(positions)
    jobs = [(i, name) for i in range(len(positions)) for name in cfg.strategies]

    def job(item):
        i, name = item
        p = positions[i]
        reps = sweep_partitions(p, _strategy(cfg, name, pr), pr.dyn, pr.cost, pr.ctrl, cfg.diameters,
                                rho=_rho(cfg, p), steps_per_piece=cfg.steps_per_piece)
        return i, name, reps

    rows = []
    for i, name, reps in _fan_out(job, jobs):
        for d, rep in zip(cfg.diameters, reps):
            rows.append((i, positions[i].t, _label(positions[i].w0), name, d, rep))
        if reps[0].epsilon is not None:
            say(f"start {i} {name}: eps " + ", ".join(f"{r.epsilon:.3e}" for r in reps))
    out = _outdir(cfg)
    (out / "sweep.csv").write_text(sweep_csv(rows, ("start", "t", "w0", "strategy")))
    say(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_dderiv(cfg: RunConfig, say) -> int:
    pr = cfg.problem_instance()
    p = cfg.positions()[0]
    if p.t >= p.T:
        raise ConfigError(f"directional derivatives need t < T (t={p.t}, T={p.T})")
    f = np.asarray(cfg.direction, dtype=float)
    if f.size != pr.cfg.n:
        raise ConfigError(f"direction has {f.size} components, problem has {pr.cfg.n}")
    fam = CandidateFamily.constants(pr.ctrl)
    env = envelope_derivatives(p, fam, pr.ctrl, pr.dyn, pr.cost, cfg.tol, cfg.sensitivity_m)
    formula = env.dderiv(f)
    delta = cfg.delta * (p.T - p.t)
    moved = shifted_position(p, f, delta)
    base = min(family_values(p, fam, pr.ctrl, pr.dyn, pr.cost, cfg.sensitivity_m))
    shifted = min(family_values(moved, fam, pr.ctrl, pr.dyn, pr.cost, cfg.sensitivity_m))
    fd = (shifted - base) / delta
    gap = abs(formula - fd)
    rel = gap / max(1.0, abs(formula))
    say(f"formula {formula:.12g}")
    say(f"fd {fd:.12g} (delta={delta:.3g})")
    say(f"gap {gap:.3e} relative {rel:.3e}")
    say(f"active {list(env.active.indices)}")
    return EXIT_OK


def cmd_value(cfg: RunConfig, say) -> int:
    pr = cfg.problem_instance()
    fam = CandidateFamily.constants(pr.ctrl)
    for i, p in enumerate(cfg.positions()):
        parts = [f"start {i} (t={p.t:.6g})"]
        if cfg.problem == "example-g":
            parts.append(f"closed-form {value_closed_form_example(p, cfg.g):.12g}")
        parts.append(f"bruteforce {value_bruteforce(p, pr.dyn, pr.cost, pr.ctrl, cfg.bruteforce_pieces):.12g}")
        if p.t < p.T:
            parts.append(f"envelope {min(family_values(p, fam, pr.ctrl, pr.dyn, pr.cost, cfg.sensitivity_m)):.12g}")
            parts.append(f"a(T) {float(extension_a(p, p.T)[0]):.12g}")
        say(" ".join(parts))
    return EXIT_OK


def cmd_selftest(criteria, say) -> int:
    results = acceptance.run_all(criteria, report=say)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"acceptance criterion {r.number} failed: {r.title}", file=sys.stderr)
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="DIR", help="output directory (created if missing)")
    common.add_argument("--steps", type=int, metavar="N",
                        help="solver steps per partition piece (simulate, sweep) or sensitivity mesh size")
    common.add_argument("--delta", type=float, metavar="X", help="finite-difference step as a fraction of T - t")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(prog="fracfb", description="Fractional-order optimal feedback experiments.")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("simulate", parents=[common], help="run the feedback procedure per start, strategy and diameter")
    sub.add_parser("sweep", parents=[common], help="partition-diameter sweeps, CSV output")
    sub.add_parser("dderiv", parents=[common], help="envelope directional derivative vs finite differences")
    sub.add_parser("value", parents=[common], help="value by closed form, enumeration and envelope")
    st = sub.add_parser("selftest", parents=[common], help="run the acceptance suite")
    st.add_argument("--criteria", type=int, nargs="+", choices=sorted(acceptance.CRITERIA), metavar="K",
                    help="run only these criteria (1-10)")
    st.add_argument("--perturb-gamma", type=float, default=None, help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    say = _Out(args.quiet)

    if args.command == "selftest":
        if args.perturb_gamma is not None:
            with perturbed_gamma(args.perturb_gamma):
                return cmd_selftest(args.criteria, say)
        return cmd_selftest(args.criteria, say)

    commands = {"simulate": cmd_simulate, "sweep": cmd_sweep, "dderiv": cmd_dderiv, "value": cmd_value}
    try:
        cfg = _resolve(args)
        _threads()
        return commands[args.command](cfg, say)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
