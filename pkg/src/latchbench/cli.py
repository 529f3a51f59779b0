"""Command-line entry point.

Exit codes: 0 success, 1 partial failure (some records errored), 2 config or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from . import orchestrator as orch
from .config import ConfigError, RunConfig, load_config
from .forge.corpus import CorpusError, import_multiwoz
from .metrics import ZERO_BASELINE, MissingStrategyError
from .store import LedgerCorruption

log = logging.getLogger("latchbench")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _common(default: object) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    suppress = default is argparse.SUPPRESS
    common.add_argument("--config", default=default, help="experiment YAML file")
    common.add_argument("--seed", type=int, default=default, help="override global_seed")
    common.add_argument("--resume", action="store_true", default=default if suppress else False,
                        help="skip pairs already recorded in the ledger")
    common.add_argument("--dry-run", action="store_true", default=default if suppress else False,
                        help="validate and print the plan; write nothing")
    common.add_argument("-v", "--verbose", action="store_true", default=default if suppress else False)
    return common


def _parser() -> argparse.ArgumentParser:
    # Flags are accepted before or after the subcommand; the sub-level copies use
    # SUPPRESS so they never overwrite a value given at the top level.
    top = _common(None)
    common = _common(argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="latchbench", description="Goal-pivot stress benchmark harness.", parents=[top])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    forge = sub.add_parser("forge", help="corpus import and trajectory forging", parents=[common])
    fsub = forge.add_subparsers(dest="forge_command", required=True, metavar="action")
    imp = fsub.add_parser("import", help="convert MultiWOZ 2.2 dialogues to the corpus format", parents=[common])
    imp.add_argument("source", help="MultiWOZ file or directory")
    imp.add_argument("dest", help="output corpus .jsonl")
    imp.add_argument("--limit", type=int)
    fsub.add_parser("build", help="forge trajectories for every configured tier", parents=[common])

    sub.add_parser("run", help="run strategies over the forged trajectories", parents=[common])
    sub.add_parser("judge", help="score run records into verdicts", parents=[common])
    sub.add_parser("score", help="aggregate verdicts into reports", parents=[common])
    sim = sub.add_parser("simulate", help="latch-simulator sweep: empirical vs closed-form success", parents=[common])
    sim.add_argument("-n", type=int, help="draws per curve")
    abl = sub.add_parser("ablate", help="granularity or equidistant ablation", parents=[common])
    abl.add_argument("which", choices=["granularity", "equidistant"])
    abl.add_argument("-n", type=int, help="trajectories (default from config, 50)")
    sub.add_parser("report", help="print the stored report", parents=[common])
    return p


def _config(args: argparse.Namespace) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.global_seed = args.seed
    return cfg


def _print_rows(rows: list[dict]) -> None:
    print(f"{'model_pair':<16} {'tier':<13} {'strategy':<22} {'apa':>7} {'n':>6} {'lift':>20} {'t_p':>12} {'mcnemar_p':>12}")
    for r in rows:
        lift = r.get("lift")
        if isinstance(lift, float):
            lift = f"{lift * 100:+.2f}%"
        t_p, mc = r.get("t_p"), r.get("mcnemar_p")
        print(
            f"{r['model_pair']:<16} {r['tier']:<13} {r['strategy']:<22} {r['apa'] * 100:6.2f}% {r['n']:>6} "
            f"{lift or '':>20} {t_p if isinstance(t_p, str) else ('' if t_p is None else f'{t_p:.3g}'):>12} "
            f"{'' if mc is None else f'{mc:.3g}':>12}"
        )


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "forge" and args.forge_command == "import":
        if args.dry_run:
            print(f"would convert {args.source} -> {args.dest} (limit {args.limit})")
            return EXIT_OK
        n = import_multiwoz(args.source, args.dest, args.limit)
        print(f"wrote {n} dialogues to {args.dest}")
        return EXIT_OK

    cfg = _config(args)
    if args.dry_run:
        for line in cfg.plan():
            print(line)
        print(f"command: {args.command}{' ' + args.forge_command if args.command == 'forge' else ''}"
              f"{' ' + args.which if args.command == 'ablate' else ''}; dry run, nothing written")
        return EXIT_OK

    if args.command == "forge":
        trajectories = orch.forge_experiment(cfg)
        print(f"forged {len(trajectories)} trajectories into {orch.layout(cfg).trajectories}")
        return EXIT_OK
    if args.command == "run":
        ledger = orch.run_experiment(cfg, resume=args.resume)
        counts = ledger.counts()
        print(f"done {counts['done']}, error {counts['error']}")
        return EXIT_PARTIAL if counts["error"] else EXIT_OK
    if args.command == "judge":
        verdicts = orch.judge_experiment(cfg)
        errors = sum(1 for v in verdicts if v.judge_error)
        print(f"wrote {len(verdicts)} verdicts ({errors} judge errors)")
        return EXIT_PARTIAL if errors else EXIT_OK
    if args.command == "score":
        report = orch.score_experiment(cfg)
        _print_rows(report.rows)
        return EXIT_OK
    if args.command == "simulate":
        for r in orch.simulate_sweep(cfg, n=args.n):
            print(f"alpha={r['alpha']:g} gamma={r['gamma']:g} n={r['n']} empirical={r['empirical']:.4f} "
                  f"predicted={r['predicted']:.4f}")
        return EXIT_OK
    if args.command == "ablate":
        fn = orch.ablate_granularity if args.which == "granularity" else orch.ablate_equidistant
        report = fn(cfg, n=args.n)
        _print_rows(report.rows)
        return EXIT_OK
    if args.command == "report":
        path = orch.layout(cfg).root / "report.json"
        if not path.exists():
            raise ConfigError(f"{path} not found; run `score` first")
        report = json.loads(path.read_text(encoding="utf-8"))
        _print_rows(report["rows"])
        if report.get("pi_rate") is not None:
            print(f"PI rate {report['pi_rate']:.4f}; grounding gap {report['grounding_gap']:.4f}")
        for name, rate in report.get("refusal_rate", {}).items():
            print(f"refusal rate {name}: {rate:.4f}")
        print(f"judge errors {report['judge_errors']}; backend errors {report['backend_errors']}")
        if any(r.get("lift") == ZERO_BASELINE for r in report["rows"]):
            print(f"lift against a zero baseline is reported as '{ZERO_BASELINE}'")
        return EXIT_OK
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (ConfigError, CorpusError, MissingStrategyError, LedgerCorruption) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
