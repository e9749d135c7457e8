"""Command-line entry point.

    shufldp run --config exp.yaml --out metrics.csv [--set key=value ...]
    shufldp amplify --epsilon-central 0.1 --delta 1e-9 --n 10000
    shufldp table1

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

from . import accounting
from .config import build_config, load_config
from .errors import ConfigError, DomainError
from .federation import Federation

METRICS_HEADER = [
    "round",
    "mode",
    "test_accuracy",
    "train_loss",
    "delta",
    "epsilon_spent_nominal",
    "participating",
    "elapsed_ms",
]

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SEED_ENV = "SHUFLDP_SEED"


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_run(args) -> int:
    try:
        values = load_config(args.config, args.set or [], os.environ.get(SEED_ENV))
        out = args.out or values.get("out")
        if out is None:
            raise ConfigError("out", "no output path (use --out or the 'out' key)")
        cfg = build_config(values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        fed = Federation.from_config(cfg)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            tick = time.perf_counter()

            def on_round(r):
                nonlocal tick
                now = time.perf_counter()
                writer.writerow(
                    [
                        r.round,
                        cfg.mode,
                        _fmt(r.test_accuracy),
                        _fmt(r.train_loss),
                        _fmt(r.delta),
                        _fmt(r.epsilon_spent_nominal),
                        r.participating,
                        int(round((now - tick) * 1000)),
                    ]
                )
                fh.flush()
                tick = now

            reports = fed.run(on_round)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any failure mid-run maps to exit 1
        logging.getLogger(__name__).debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    final = f"{reports[-1].test_accuracy:.4f}" if reports else "n/a"
    print(f"final_accuracy={final} rounds={len(reports)} stop_reason={fed.stop_reason}")
    return EXIT_OK


def cmd_amplify(args) -> int:
    try:
        if args.epsilon_central is not None:
            value = accounting.amplify_inverse(args.epsilon_central, args.delta, args.n)
        else:
            value = accounting.amplify_forward(args.epsilon_local, args.delta, args.n)
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        try:
            bound = accounting.local_epsilon_bound(args.delta, args.n)
            print(f"epsilon_local must lie in (0, {bound:.4f}) = (0, 0.5*ln(n/ln(1/delta)))", file=sys.stderr)
        except DomainError:
            pass
        return EXIT_USAGE
    print(f"{value:.4f}")
    return EXIT_OK


def format_table1() -> str:
    grid = accounting.table1()
    lines = ["n \\ eps_c " + " ".join(f"{c:>5.1f}" for c in accounting.TABLE1_EPS_CENTRAL)]
    for n, row in zip(accounting.TABLE1_N, grid):
        lines.append(f"{n:>10.0e} " + " ".join(f"{v:5.2f}" for v in row))
    return "\n".join(lines)


def cmd_table1(args) -> int:
    print(format_table1())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shufldp", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federated experiment")
    run.add_argument("--config", required=True, help="flat YAML config file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.add_argument("--out", help="metrics CSV path (overrides the 'out' key)")
    run.set_defaults(func=cmd_run)

    amp = sub.add_parser("amplify", help="convert between local and shuffled-central epsilon")
    which = amp.add_mutually_exclusive_group(required=True)
    which.add_argument("--epsilon-central", type=float)
    which.add_argument("--epsilon-local", type=float)
    amp.add_argument("--delta", type=float, required=True)
    amp.add_argument("--n", type=int, required=True)
    amp.set_defaults(func=cmd_amplify)

    tab = sub.add_parser("table1", help="print the amplification converse grid at delta=1e-9")
    tab.set_defaults(func=cmd_table1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
