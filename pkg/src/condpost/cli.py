"""Command-line front end: run, check, complexity, gen.

Exit codes: 0 success, 1 validation error, 2 internal error. Diagnostics go to
stderr; machine-readable output goes to stdout or files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .complexity import complexity_report
from .errors import CapExceeded, EmptyCoverSet, NegativeValue, ValidationError
from .experiment import run_experiment
from .harness import value_decomposition_check
from .instances import INSTANCE_DEFAULTS, instance_document
from .mdp import bellman_apply, occupancy_measures, optimal_policy, optimal_values
from .posterior import PosteriorState, build_chain, chain_joint, exact_posterior
from .serialization import dumps, load_config
from .value_class import boundedness_b, check_assumptions, kappa_per_step

log = logging.getLogger("condpost")

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2


class _UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help=out_help)
    p.add_argument("--seed-override", type=int, action="append",
                   help="replace the config seeds (repeatable)")
    p.add_argument("--quiet", action="store_true", help="only warnings and errors on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condpost", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_common(sub.add_parser("run", help="run an experiment"), "output directory (required)")
    _add_common(sub.add_parser("check", help="assumption and invariant diagnostics"),
                "write the report here instead of stdout")
    _add_common(sub.add_parser("complexity", help="emit the complexity report"),
                "write the report here instead of stdout")
    gen = sub.add_parser("gen", help="emit a benchmark instance as JSON")
    gen.add_argument("--name", required=True, choices=sorted(INSTANCE_DEFAULTS))
    for flag in ("states", "actions", "horizon", "seed", "d", "grid", "candidates"):
        gen.add_argument(f"--{flag}", type=int)
    gen.add_argument("--out", help="write the instance here instead of stdout")
    gen.add_argument("--quiet", action="store_true")
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args):
    config = load_config(args.config)
    if args.seed_override:
        config = config.with_seeds(tuple(args.seed_override))
    return config


def cmd_run(args) -> int:
    if not args.out:
        raise _UsageError("run: --out is required")
    manifest = run_experiment(_config(args), args.out)
    log.info("median cumulative regret %.4f; files in %s",
             manifest["cumulative_regret"]["median"], args.out)
    return EXIT_OK


def check_report(mdp, fclass, num_tuples: int = 100, seed: int = 0) -> dict:
    """Assumptions plus the exact invariants that are cheap to evaluate."""
    rep = check_assumptions(mdp, fclass, 1e-9)
    Q, V = optimal_values(mdp)
    consistency = max(
        float(np.max(np.abs(bellman_apply(mdp, h, Q[h + 1] if h + 1 < mdp.horizon else None) - Q[h])))
        for h in range(mdp.horizon)
    )
    occ = occupancy_measures(mdp, optimal_policy(mdp))
    rng = np.random.default_rng(seed)
    gaps = [
        value_decomposition_check(mdp, fclass, tuple(int(rng.integers(n)) for n in fclass.sizes)).gap
        for _ in range(num_tuples)
    ]
    doc = {
        "assumptions": {"realizable": rep.realizable, "bounded": rep.bounded,
                        "complete": rep.complete, "witnesses": _jsonable(rep.witnesses)},
        "sizes": list(fclass.sizes),
        "bellman_self_consistency": consistency,
        "occupancy_sum_error": float(np.max(np.abs(occ.sum(axis=(1, 2)) - 1.0))),
        "value_decomposition_max_gap": max(gaps),
    }
    try:
        doc["b"] = boundedness_b(fclass)
    except NegativeValue as exc:
        doc["b"] = {"error": str(exc)}
    try:
        doc["kappa_per_step_eps0"] = kappa_per_step(fclass, 0.0, mdp).tolist()
    except EmptyCoverSet as exc:
        doc["kappa_per_step_eps0"] = {"error": str(exc)}
    try:
        chain = build_chain(PosteriorState.initial(fclass, 0.1, 1.0, 1.0, mdp.initial_state), fclass)
        tv = 0.5 * float(np.abs(chain_joint(chain, 10**5) - exact_posterior(chain, 10**5)).sum())
        doc["chain_vs_enumeration_tv"] = tv
    except CapExceeded:
        doc["chain_vs_enumeration_tv"] = None
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def cmd_check(args) -> int:
    config = _config(args)
    _emit(dumps(check_report(config.mdp, config.fclass)), args.out)
    return EXIT_OK


def cmd_complexity(args) -> int:
    config = _config(args)
    report = complexity_report(
        config.mdp, config.fclass, config.epsilon(), config.complexity.mu_list, config.T,
        config.complexity.be_mode, seed=config.seeds[0],
    )
    _emit(dumps(report), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    params = {k: getattr(args, k) for k in ("states", "actions", "horizon", "seed", "d", "grid",
                                            "candidates") if getattr(args, k) is not None}
    unknown = set(params) - set(INSTANCE_DEFAULTS[args.name])
    if unknown:
        raise _UsageError(f"gen --name {args.name}: unsupported flag --{sorted(unknown)[0]}")
    _emit(dumps(instance_document(args.name, params)), args.out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "check": cmd_check, "complexity": cmd_complexity, "gen": cmd_gen}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
