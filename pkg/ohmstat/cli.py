"""
Command line interface.

Exit codes: 0 on success, 2 for invalid input, 3 for numerical failures or
failed identity checks.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from .checks import green_checks, martingale_checks, selftest
from .config import ExperimentConfig, Settings, get_settings
from .exceptions import DomainError, NumericalError, PreconditionError, RangeError
from .harness import clt_test, records_frame, run_ceff, sigma_consistency, variance_scaling
from .martingale import estimate_sigma_sq
from .meyers import norm_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _vector(text: str) -> List[float]:
    try:
        return [float(c) for c in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dim", type=int, help="lattice dimension d (1, 2 or 3)")
    common.add_argument("--side", type=int, action="append", help="box side L (repeatable)")
    common.add_argument("--lambda", dest="lam", type=float, help="ellipticity contrast")
    common.add_argument("--law", choices=["constant", "uniform", "two_point"])
    common.add_argument("--p", type=float, help="probability of the upper atom (two_point)")
    common.add_argument("--a", type=float, help="value of the constant law")
    common.add_argument("--t", type=_vector, help="direction, comma-separated")
    common.add_argument("--replicas", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--config", help="experiment config as a JSON file")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="ohmstat",
        description="Effective conductance fluctuations of random resistor networks",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    subparsers.add_parser("ceff", parents=[common], help="effective conductance per replica")

    clt = subparsers.add_parser("clt", parents=[common], help="normality test at one side")
    clt.add_argument("--resamples", type=int, default=1000)

    scaling = subparsers.add_parser("var-scaling", parents=[common],
                                    help="log-log fit of the variance against L")
    scaling.add_argument("--bootstrap", type=int, default=1000)

    sigma = subparsers.add_parser("sigma", parents=[common], help="limiting variance estimate")
    sigma.add_argument("--proxy-side", type=int, default=8)
    sigma.add_argument("--outer", type=int, default=100)
    sigma.add_argument("--inner", type=int, default=100)
    sigma.add_argument("--cross-check", action="store_true",
                       help="compare with Var/L^d from --replicas runs at the proxy side")

    meyers = subparsers.add_parser("meyers", parents=[common],
                                   help="l^p norm of the singular operator")
    meyers.add_argument("--exponent", type=float, default=2.5)
    meyers.add_argument("--trials", type=int, default=8)

    subparsers.add_parser("green-checks", parents=[common], help="Green-function identities")
    subparsers.add_parser("martingale-checks", parents=[common],
                          help="exhaustive martingale identities on a small box")
    subparsers.add_parser("selftest", parents=[common], help="catalogue of exact small cases")
    return parser


def setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.WARNING),
                        format=LOG_FORMAT, stream=sys.stderr)


def build_config(args: argparse.Namespace, settings: Settings) -> ExperimentConfig:
    """Defaults from settings, then the config file, then explicit flags"""
    flags = {
        "d": args.dim,
        "sides": args.side,
        "lam": args.lam,
        "law": args.law,
        "p": args.p,
        "a": args.a,
        "t": args.t,
        "replicas": args.replicas,
        "seed": args.seed,
        "tol": args.tol,
        "threads": args.threads,
        "out": args.out,
        "format": args.format,
    }
    data: Dict[str, Any] = {
        "threads": settings.threads,
        "tol": settings.tol,
        "quadrature_nodes": settings.quadrature_nodes,
    }
    if args.a is not None and args.lam is None and args.a > 0:
        # keep a constant value inside its own ellipticity window
        data["lam"] = min(0.5, 0.5 * min(args.a, 1.0 / args.a))
    if args.config:
        return ExperimentConfig.from_file(args.config, defaults=data, **flags)
    data.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentConfig(**data)


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        out.write_text(text, encoding="utf-8")
        logger.info(f"💾 wrote {out}")


def _json(payload: Any) -> str:
    return json.dumps(payload, indent=2)


def cmd_ceff(args: argparse.Namespace, config: ExperimentConfig) -> int:
    records, summaries = run_ceff(config)
    if config.format == "csv":
        _emit(records_frame(records).to_csv(index=False), config.out)
    else:
        _emit(_json({
            "records": records_frame(records).to_dict(orient="records"),
            "summaries": {str(L): s.to_dict() for L, s in summaries.items()},
        }), config.out)
    return EXIT_OK


def cmd_clt(args: argparse.Namespace, config: ExperimentConfig) -> int:
    config = config.model_copy(update={"sides": config.sides[:1]})
    records, _ = run_ceff(config)
    values = records_frame(records)["ceff"].to_numpy()
    result = clt_test(values, config.sides[0], config.d, args.resamples, config.seed)
    _emit(_json(result.to_dict()), config.out)
    return EXIT_OK


def cmd_var_scaling(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if len(set(config.sides)) < 3:
        raise PreconditionError(f"variance scaling needs at least 3 sides, got {config.sides}")
    records, _ = run_ceff(config)
    report = variance_scaling(records_frame(records), config.d, args.bootstrap, config.seed)
    _emit(_json(report.to_dict()), config.out)
    return EXIT_OK


def cmd_sigma(args: argparse.Namespace, config: ExperimentConfig) -> int:
    estimate = estimate_sigma_sq(
        config.conductance_law(), config.d, config.t, args.proxy_side,
        args.outer, args.inner, config.seed, config.tol, config.threads,
    )
    if not args.cross_check:
        _emit(estimate.to_json(), config.out)
        return EXIT_OK
    report = sigma_consistency(estimate, config.replicas, config.seed, config.tol, config.threads)
    _emit(_json({**estimate.to_dict(), "consistency": report.to_dict()}), config.out)
    return EXIT_OK if report.ok else EXIT_NUMERICAL


def cmd_meyers(args: argparse.Namespace, config: ExperimentConfig) -> int:
    frame = norm_sweep(config.sides, args.exponent, config.d, args.trials, config.seed,
                       config.threads)
    _emit(frame.to_csv(index=False), config.out)
    return EXIT_OK


def cmd_green_checks(args: argparse.Namespace, config: ExperimentConfig) -> int:
    report = green_checks(config.d, config.sides[0], config.lam, config.seed)
    _emit(_json(report), config.out)
    return EXIT_OK if report["ok"] else EXIT_NUMERICAL


def cmd_martingale_checks(args: argparse.Namespace, config: ExperimentConfig) -> int:
    report = martingale_checks(config.d, config.sides[0], config.lam, config.p, config.t)
    _emit(_json(report), config.out)
    return EXIT_OK if report["ok"] else EXIT_NUMERICAL


def cmd_selftest(args: argparse.Namespace, config: ExperimentConfig) -> int:
    summary = selftest(sys.stdout)
    return EXIT_OK if summary["passed"] == summary["total"] else EXIT_NUMERICAL


COMMANDS = {
    "ceff": cmd_ceff,
    "clt": cmd_clt,
    "var-scaling": cmd_var_scaling,
    "sigma": cmd_sigma,
    "meyers": cmd_meyers,
    "green-checks": cmd_green_checks,
    "martingale-checks": cmd_martingale_checks,
    "selftest": cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        settings = get_settings()
    except ValidationError as exc:
        print(f"invalid OHMSTAT_* setting: {exc}", file=sys.stderr)
        return EXIT_INVALID
    setup_logging(args.log_level or settings.log_level)

    try:
        config = build_config(args, settings)
        return COMMANDS[args.command](args, config)
    except ValidationError as exc:
        logger.error(f"invalid configuration: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DomainError, RangeError, PreconditionError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        logger.error(f"numerical failure: {exc}")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
