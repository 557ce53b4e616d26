"""Command-line front end.

Subcommands mirror the pipeline stages so each can be re-run from the
persisted artifacts of the previous one:

- sample: dataset -> per-question 01_traces.json
- build:  01_traces.json -> 02_pool.json + 03_hubo.json
- solve:  03_hubo.json -> 04_samples.json
- rank:   04_samples.json -> 05_stability.json
- run:    all stages end to end, including the answer call
- bench:  run plus scoring; writes summary.json
- report: summary + run dirs -> report JSON, CSV, and SVG plots

Exit codes: 0 success, 1 validation, 2 fixture/replay, 3 provider or
transport, 4 internal.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from . import bench as bench_mod
from . import pipeline as pipe
from .errors import (
    CotAnnealError,
    FixtureError,
    InputError,
    ProviderError,
    TransportError,
    AdapterError,
)
from .llm_client import LlmClient
from .solvers import SOLVE_METHODS

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_FIXTURE = 2
EXIT_PROVIDER = 3
EXIT_INTERNAL = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the CLI contract reserves 2 for
    # fixture errors, so remap usage problems to the validation code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config JSON")
    common.add_argument("--out", required=True, help="run output directory")
    common.add_argument("--replay", metavar="CASSETTE_DIR",
                        help="serve recorded exchanges (replay-strict)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--solver", choices=SOLVE_METHODS,
                        help="override the config solver")
    common.add_argument("--tau", type=float, help="override the stability threshold")
    common.add_argument("--quantile", type=float,
                        help="override the low-energy quantile")
    common.add_argument("--workers", type=int, default=1,
                        help="concurrent questions (bench/run)")

    parser = _Parser(prog="cotanneal",
                     description="Aggregate sampled reasoning chains via annealing.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, needs_dataset in (
        ("sample", True), ("run", True), ("bench", True),
        ("build", False), ("solve", False), ("rank", False),
    ):
        p = sub.add_parser(name, parents=[common])
        if needs_dataset:
            p.add_argument("--dataset", required=True, help="JSON-lines dataset")

    report = sub.add_parser("report")
    report.add_argument("--out", required=True)
    report.add_argument("--tau", type=float, default=None)
    report.add_argument("--config", default=None)
    return parser


def _load_config(args) -> pipe.PipelineConfig:
    config = pipe.load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "solver", None) is not None:
        overrides["solver_choice"] = args.solver
    stability = config.stability
    if getattr(args, "tau", None) is not None:
        stability = replace(stability, tau=args.tau)
    if getattr(args, "quantile", None) is not None:
        stability = replace(stability, low_energy_quantile=args.quantile)
    if stability is not config.stability:
        overrides["stability"] = stability
    return replace(config, **overrides) if overrides else config


def _make_client(args, config: pipe.PipelineConfig) -> LlmClient:
    if getattr(args, "replay", None):
        return LlmClient(cassette_dir=args.replay, mode="replay-strict",
                         seed=config.seed)
    return LlmClient(seed=config.seed)


def _run_dirs(out_dir: Path, stage_file: str) -> list:
    # the directory name carries the hash of the config that created it;
    # stage re-runs (possibly with overrides) match on artifacts instead
    if not out_dir.is_dir():
        raise InputError(f"output directory not found: {out_dir}")
    return sorted(p for p in out_dir.iterdir()
                  if p.is_dir() and (p / stage_file).exists())


def _cmd_sample(args) -> int:
    config = _load_config(args)
    client = _make_client(args, config)
    records = bench_mod.load_dataset(args.dataset)
    for rec in records:
        run_dir = pipe.question_run_dir(args.out, rec.id, config)
        pipe.stage_sample(rec.id, rec.question, rec.options, config, client, run_dir)
    print(f"sampled {len(records)} questions into {args.out}")
    return EXIT_OK


def _cmd_build(args) -> int:
    config = _load_config(args)
    client = _make_client(args, config)
    count = 0
    for run_dir in _run_dirs(Path(args.out), pipe.STAGE_TRACES):
        _, _, _, traces = pipe.load_traces(run_dir)
        pool = pipe.stage_pool(traces, config, client, run_dir)
        if pool.num_reasons > 0:
            pipe.stage_hubo(pool, config, client, run_dir)
        count += 1
    print(f"built pools and models for {count} questions")
    return EXIT_OK


def _cmd_solve(args) -> int:
    config = _load_config(args)
    count = 0
    for run_dir in _run_dirs(Path(args.out), pipe.STAGE_HUBO):
        model = pipe.load_hubo(run_dir)
        question_id, _, _, _ = pipe.load_traces(run_dir)
        pipe.stage_solve(model, config, question_id, run_dir)
        count += 1
    print(f"solved {count} questions with {config.solver_choice}")
    return EXIT_OK


def _cmd_rank(args) -> int:
    config = _load_config(args)
    count = 0
    for run_dir in _run_dirs(Path(args.out), pipe.STAGE_SAMPLES):
        sample_set = pipe.load_samples(run_dir)
        pipe.stage_rank(sample_set, config, run_dir)
        count += 1
    print(f"ranked {count} questions")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = _load_config(args)
    client = _make_client(args, config)
    records = bench_mod.load_dataset(args.dataset)
    summary, _ = bench_mod.run_bench(records, config, client, args.out,
                                     workers=args.workers)
    print(f"ran {summary.n_total} questions; "
          f"accuracy {summary.accuracy:.3f} ({summary.n_correct}/{summary.n_total}), "
          f"unparsed {summary.n_unparsed}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    config = _load_config(args)
    client = _make_client(args, config)
    records = bench_mod.load_dataset(args.dataset)
    summary, results = bench_mod.run_bench(records, config, client, args.out,
                                           workers=args.workers)
    bench_mod.emit_report(summary, results, args.out, config.stability.tau)
    print(f"accuracy {summary.accuracy:.3f} ({summary.n_correct}/{summary.n_total}), "
          f"unparsed {summary.n_unparsed}, reasons mean {summary.reasons_mean:.1f}, "
          f"estimated {summary.estimated_wh:.4f} Wh")
    return EXIT_OK


def _cmd_report(args) -> int:
    out_dir = Path(args.out)
    summary = bench_mod.load_summary(out_dir)
    tau = args.tau
    if tau is None and args.config:
        tau = pipe.load_config(args.config).stability.tau
    if tau is None:
        tau = 0.5
    results = []
    for run_dir in sorted(out_dir.iterdir()):
        if run_dir.is_dir() and (run_dir / pipe.STAGE_RESULT).exists():
            results.append(pipe.load_result(run_dir))
    written = bench_mod.emit_report(summary, results, out_dir, tau)
    print(f"wrote {len(written)} report files to {out_dir / 'report'}")
    return EXIT_OK


_COMMANDS = {
    "sample": _cmd_sample,
    "build": _cmd_build,
    "solve": _cmd_solve,
    "rank": _cmd_rank,
    "run": _cmd_run,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def _exit_code_for(exc: BaseException) -> int:
    seen = set()
    node: BaseException | None = exc
    while node is not None and id(node) not in seen:
        seen.add(id(node))
        if isinstance(node, FixtureError):
            return EXIT_FIXTURE
        if isinstance(node, (TransportError, ProviderError, AdapterError)):
            return EXIT_PROVIDER
        if isinstance(node, InputError):  # covers validation and configuration
            return EXIT_VALIDATION
        node = node.__cause__
    return EXIT_INTERNAL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except CotAnnealError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except Exception as exc:  # internal failure, keep the trace for debugging
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
