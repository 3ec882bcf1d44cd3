"""Command-line entry point: ``sfda fit | test | simulate``.

Exit status is 0 on success, 2 for invalid input or parameters and 3 when
a computation fails numerically.
"""

import argparse
import json
import logging
import sys
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sfda.errors import NumericalError, ValidationError
from sfda.inference import TestConfig, eval_grid, two_sample_test
from sfda.io import SCHEMA_VERSION, _round, emit_report, parse_csv, report_document, sparsify
from sfda.kernel import check_order
from sfda.rng import substream
from sfda.simulation import SETTINGS, SimConfig, run_mc, write_coverage_csv, write_summary_csv
from sfda.spline import DEFAULT_LAMBDA_GRID, gcv_score, lambda_grid, make_smoother, select_lambda

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("sfda")

# keeps subsampling draws apart from the bootstrap streams (seed, b, group)
SPARSIFY_KEY = zlib.crc32(b"sparsify")


@dataclass(frozen=True)
class RunConfig:
    command: str
    input_path: str = None
    m: int = 2
    alpha: float = 0.05
    B: int = 300
    grid_size: int = 101
    lambda_grid_spec: tuple = DEFAULT_LAMBDA_GRID
    seed: int = 0
    rescale_time: bool = False
    sparsify: tuple = None
    output_path: str = None
    paper_literal_weights: bool = False

    def validate(self):
        if self.command not in ("fit", "test", "simulate"):
            raise ValidationError(f"unknown command {self.command!r}")
        if self.command != "simulate" and not self.input_path:
            raise ValidationError(f"{self.command} needs --input")
        check_order(self.m)
        if self.sparsify is not None:
            lo, hi = self.sparsify
            if not 1 <= lo <= hi:
                raise ValidationError(f"--sparsify needs 1 <= MIN <= MAX, got {lo} {hi}")
        self.test_config().validate()
        return self

    def test_config(self):
        return TestConfig(
            m=self.m, alpha=self.alpha, B=self.B, grid_size=self.grid_size,
            lambda_grid=tuple(self.lambda_grid_spec), seed=self.seed,
            paper_literal_weights=self.paper_literal_weights,
        )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sfda",
        description="Smoothing-spline mean curves and bootstrap two-sample tests for sparse functional data.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--m", type=int, default=2, help="spline order (default 2, cubic)")
    common.add_argument("--grid-size", type=int, default=101)
    common.add_argument(
        "--lambda-grid", nargs=3, type=float, metavar=("MIN", "MAX", "COUNT"),
        default=DEFAULT_LAMBDA_GRID, help="log-spaced GCV candidates",
    )
    common.add_argument("--output", help="output path (JSON for fit/test, CSV for simulate)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, help="CSV with columns group,subject,t,y")
    data.add_argument("--rescale-time", action="store_true",
                      help="map observed times affinely onto [0, 1]")

    fit = sub.add_parser("fit", parents=[common, data], help="fit one group's mean curve")
    fit.add_argument("--group", type=int, choices=(1, 2), required=True)
    how = fit.add_mutually_exclusive_group()
    how.add_argument("--lambda", dest="lam", type=float, help="fixed smoothing parameter")
    how.add_argument("--gcv", action="store_true", help="select lambda by GCV (default)")

    boot = argparse.ArgumentParser(add_help=False)
    boot.add_argument("--alpha", type=float, default=0.05)
    boot.add_argument("--B", type=int, default=300, help="bootstrap replicates")
    boot.add_argument("--seed", type=int, default=0)
    boot.add_argument("--paper-literal-weights", action="store_true",
                      help="use the alternative multiplier support (not mean one)")

    test = sub.add_parser("test", parents=[common, data, boot], help="two-sample test with bands")
    test.add_argument("--sparsify", nargs=2, type=int, metavar=("MIN", "MAX"),
                      help="randomly keep MIN..MAX observations per subject first")

    sim = sub.add_parser("simulate", parents=[common, boot], help="Monte Carlo study of one design cell")
    sim.add_argument("--setting", choices=SETTINGS, default="c1")
    sim.add_argument("--n1", type=int, default=200)
    sim.add_argument("--n2", type=int, default=100)
    sim.add_argument("--nmax", type=int, default=10)
    sim.add_argument("--delta", type=float, default=0.0)
    sim.add_argument("--runs", type=int, default=300)
    return parser


def _lambda_tuple(values):
    lo, hi, count = values
    if count != int(count):
        raise ValidationError(f"lambda grid count must be an integer, got {count}")
    return (float(lo), float(hi), int(count))


def _write_json(doc, output):
    text = json.dumps(doc, indent=2) + "\n"
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_fit(args):
    sample1, sample2 = parse_csv(args.input, args.rescale_time)
    sample = sample1 if args.group == 1 else sample2
    engine = make_smoother(sample, args.m)
    if args.lam is None:
        lam = select_lambda(sample, args.m, lambda_grid(*_lambda_tuple(args.lambda_grid)), engine=engine)
    else:
        lam = args.lam
    grid = eval_grid(args.grid_size)
    doc = {
        "schema": SCHEMA_VERSION,
        "group": args.group,
        "m": args.m,
        "n": sample.n,
        "M": sample.M,
        "lambda": lam,
        "gcv": gcv_score(sample, lam, args.m),
        "grid": grid,
        "fit": engine.curve(lam, grid),
    }
    _write_json({k: _round(v) for k, v in doc.items()}, args.output)


def cmd_test(args):
    config = RunConfig(
        command="test", input_path=args.input, m=args.m, alpha=args.alpha, B=args.B,
        grid_size=args.grid_size, lambda_grid_spec=_lambda_tuple(args.lambda_grid),
        seed=args.seed, rescale_time=args.rescale_time,
        sparsify=tuple(args.sparsify) if args.sparsify else None,
        output_path=args.output, paper_literal_weights=args.paper_literal_weights,
    ).validate()
    sample1, sample2 = parse_csv(config.input_path, config.rescale_time)
    if config.sparsify:
        lo, hi = config.sparsify
        sample1 = sparsify(sample1, lo, hi, substream(config.seed, SPARSIFY_KEY, 1))
        sample2 = sparsify(sample2, lo, hi, substream(config.seed, SPARSIFY_KEY, 2))
    report = two_sample_test(sample1, sample2, config.test_config())
    if config.output_path:
        json_path, csv_path = emit_report(report, config.output_path)
        log.info("wrote %s and %s", json_path, csv_path)
    else:
        _write_json(report_document(report), None)
    print(
        f"kappa^2={report.kappa_sq:.6g} critical={report.critical_value:.6g} "
        f"p={report.p_value:.4g} reject={str(report.reject).lower()}",
        file=sys.stderr,
    )


def cmd_simulate(args):
    config = SimConfig(
        setting=args.setting, n1=args.n1, n2=args.n2, N_max=args.nmax, delta=args.delta,
        m=args.m, B=args.B, alpha=args.alpha, mc_runs=args.runs, seed=args.seed,
        grid_size=args.grid_size, lambda_grid=_lambda_tuple(args.lambda_grid),
        paper_literal_weights=args.paper_literal_weights,
    ).validate()
    summary = run_mc(config)
    if args.output:
        out = Path(args.output)
        write_summary_csv(summary, out)
        write_coverage_csv(summary, out.with_name(out.stem + "_coverage.csv"))
    else:
        write_summary_csv(summary, sys.stdout)
    log.info("coverage at t=0.5: %.3f", summary.coverage_at(0.5))


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "simulate": cmd_simulate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
