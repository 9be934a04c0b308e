"""Command line entry point: ``mmoaa run | validate-config | summarize``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import experiment as ex
from .config import SCHEMES, SimConfig, config_from_dict, dump_config, load_config
from .errors import ConfigurationError, DegenerateError, IDXFormatError, MMOAAError

OUTPUT_DIR_ENV = "MMOAA_OUTPUT_DIR"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _resolve_out(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_DIR_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _load(args) -> SimConfig:
    overrides = {"seed": args.seed, "out": args.out, "realizations": args.realizations,
                 "workers": args.workers}
    if getattr(args, "scheme", None) and args.scheme != "all":
        overrides["scheme"] = args.scheme
    if args.config:
        return load_config(args.config, **overrides)
    return config_from_dict({}, **overrides)


def cmd_run(args) -> int:
    cfg = _load(args)
    schemes = SCHEMES if args.scheme == "all" else (cfg.scheme,)
    work = ex.build_workload(cfg)
    total = ex.RunOutput()
    for scheme in schemes:
        part = ex.run(cfg, scheme, work)
        total.extend(part)
        print(f"{scheme}: final mean best accuracy {ex.final_mean_accuracy(part.records):.4f}",
              file=sys.stderr)
    _resolve_out(cfg.out).write_text(ex.records_to_csv(total.records))
    if args.trace_out:
        _resolve_out(args.trace_out).write_text(ex.rows_to_csv(ex.TRACE_HEADER, total.traces))
    if args.power_out:
        _resolve_out(args.power_out).write_text(ex.rows_to_csv(ex.POWER_HEADER, total.powers))
    if args.bound_out:
        _resolve_out(args.bound_out).write_text(ex.rows_to_csv(ex.BOUND_HEADER, total.bounds))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    if cfg.scheme == "seqnmodel":
        cfg.seqn_rounds()
    print(dump_config(cfg), end="")
    return EXIT_OK


def cmd_summarize(args) -> int:
    records = ex.read_records(args.csv)
    rows = ex.aggregate_metrics(records, key=args.metric)
    lines = ["scheme,round,model,n,mean,ci90_half_width,single_realization"]
    for r in rows:
        lines.append(f"{r.scheme},{r.round},{r.model},{r.n},{r.mean!r},{r.ci_half_width!r},"
                     f"{int(r.single_realization)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _resolve_out(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmoaa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one or all schemes and write metrics CSV")
    run.add_argument("--config", help="flat YAML config; defaults are used when omitted")
    run.add_argument("--scheme", choices=SCHEMES + ("all",))
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--realizations", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--trace-out", help="per-frame BCD objective trace CSV")
    run.add_argument("--power-out", help="per-round signal/interference/noise power CSV")
    run.add_argument("--bound-out", help="per-frame H, G, C and gap bound CSV")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate-config", help="check a config file and print it resolved")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)

    summ = sub.add_parser("summarize", help="mean and 90%% CI per scheme, round and model")
    summ.add_argument("csv")
    summ.add_argument("--metric", default="best_accuracy", choices=("best_accuracy", "accuracy"))
    summ.add_argument("--out")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IDXFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegenerateError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ex.RunError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, DegenerateError) else EXIT_ERROR
        print(f"run error: {exc}", file=sys.stderr)
        return code
    except (MMOAAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
