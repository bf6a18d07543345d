"""Command-line front end.

Subcommands:

* ``analytic``  closed-form security quantities over (l0, eta) sweeps
* ``simulate``  Monte Carlo sessions; JSON-lines transcripts plus a summary
* ``bell``      empirical CHSH and visibility from the physical model
* ``compare``   Monte Carlo versus closed forms with 5-standard-error flags
* ``figures``   CSV data behind the error-rate and information-rate figures

Exit codes: 0 success, 1 usage error, 2 runtime or statistical-validation
failure (a strict compare with any unexpected flag). Identical invocations
produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from hyperqkd import reports
from hyperqkd.protocol import (
    SOURCE_PAPER_IDEAL,
    SOURCE_PHYSICAL,
    ProtocolConfig,
    run_session,
)


class UsageError(Exception):
    """Invalid command line; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D401 - argparse hook
        raise UsageError(message)


@dataclass(frozen=True)
class RunSpec:
    """Fully resolved invocation; the sole input of every command."""

    command: str
    l0_list: tuple[int, ...]
    eta_values: tuple[float, ...]
    trials: int
    seed: int
    source_model: str
    bell_fraction: float
    disclose_fraction: float
    fmt: str
    out: str | None
    strict: bool

    def echo(self) -> dict:
        return asdict(self) | {
            "l0_list": list(self.l0_list),
            "eta_values": [float(reports.fmt(v)) for v in self.eta_values],
        }


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _l0_value(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"alphabet half-width must be >= 1, got {text}")
    return value


def _eta_value(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _fraction_value(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


_COMMANDS = ("analytic", "simulate", "bell", "compare", "figures")


def build_parser() -> _Parser:
    parser = _Parser(prog="hyperqkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--l0", action="append", type=_l0_value, default=None,
                       help="alphabet half-width; repeatable")
        p.add_argument("--eta", action="append", type=_eta_value, default=None,
                       help="interception fraction; repeatable")
        p.add_argument("--eta-grid", type=_positive_int, default=None,
                       help="uniform eta grid size on [0, 1]")
        p.add_argument("--trials", type=_positive_int, default=100_000)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--source-model", choices=[SOURCE_PHYSICAL, SOURCE_PAPER_IDEAL],
                       default=None, help="default: paper-ideal (bell: physical)")
        p.add_argument("--bell-fraction", type=_fraction_value, default=0.1)
        p.add_argument("--disclose-fraction", type=_fraction_value, default=0.1)
        p.add_argument("--format", dest="fmt", choices=["csv", "json"], default="csv")
        p.add_argument("--out", default=None, help="output file (directory for "
                       "simulate/figures); stdout when omitted")
        p.add_argument("--strict", action="store_true",
                       help="compare: exit 2 on any unexpected 5-sigma flag")
    return parser


_DEFAULT_L0 = {
    "analytic": (1, 3, 5),
    "figures": (1, 3, 5),
    "simulate": (1,),
    "bell": (1,),
    "compare": (1, 3),
}


def parse_run_spec(argv: Sequence[str]) -> RunSpec:
    ns = build_parser().parse_args(list(argv))
    if ns.eta is not None and ns.eta_grid is not None:
        raise UsageError("--eta and --eta-grid are mutually exclusive")
    if ns.eta_grid is not None:
        etas = tuple(float(v) for v in np.linspace(0.0, 1.0, ns.eta_grid))
    elif ns.eta is not None:
        etas = tuple(sorted(set(ns.eta)))
    elif ns.command in ("analytic", "figures"):
        etas = tuple(float(v) for v in np.linspace(0.0, 1.0, 101))
    else:
        etas = (0.0, 0.5, 1.0)
    l0_list = tuple(sorted(set(ns.l0))) if ns.l0 else _DEFAULT_L0[ns.command]
    source_model = ns.source_model
    if source_model is None:
        source_model = SOURCE_PHYSICAL if ns.command == "bell" else SOURCE_PAPER_IDEAL
    elif ns.command == "bell" and source_model != SOURCE_PHYSICAL:
        raise UsageError(
            "argument --source-model: bell tests require the physical model"
        )
    return RunSpec(
        command=ns.command,
        l0_list=l0_list,
        eta_values=etas,
        trials=ns.trials,
        seed=ns.seed,
        source_model=source_model,
        bell_fraction=ns.bell_fraction,
        disclose_fraction=ns.disclose_fraction,
        fmt=ns.fmt,
        out=ns.out,
        strict=ns.strict,
    )


def _emit(spec: RunSpec, rows, path: Path | None) -> None:
    if path is None:
        reports.write_rows(sys.stdout, rows, spec.echo(), spec.fmt)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        reports.write_rows(fh, rows, spec.echo(), spec.fmt)


def _cmd_analytic(spec: RunSpec) -> int:
    rows = reports.analytic_rows(spec.l0_list, spec.eta_values)
    _emit(spec, rows, Path(spec.out) if spec.out else None)
    return 0


def _cmd_figures(spec: RunSpec) -> int:
    out_dir = Path(spec.out) if spec.out else Path("fig_data")
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = spec.echo()
    with open(out_dir / "fig4.csv", "w") as fh:
        reports.write_rows_csv(fh, reports.error_vs_alphabet_rows(), echo)
    panels = [None] + list(spec.l0_list)
    names = ["fig6a.csv", "fig6b.csv", "fig6c.csv", "fig6d.csv"]
    for name, l0 in zip(names, panels):
        with open(out_dir / name, "w") as fh:
            reports.write_rows_csv(
                fh, reports.information_rows(l0, len(spec.eta_values)), echo
            )
    return 0


def _transcript_name(l0: int, eta: float) -> str:
    return f"transcript_l0{l0}_eta{reports.fmt(eta)}.jsonl"


def _cmd_simulate(spec: RunSpec) -> int:
    out_dir = Path(spec.out) if spec.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for l0 in spec.l0_list:
        for eta in spec.eta_values:
            cfg = ProtocolConfig(
                l0=l0, eta=eta, trials=spec.trials, seed=spec.seed,
                source_model=spec.source_model,
                bell_fraction=spec.bell_fraction,
                disclose_fraction=spec.disclose_fraction,
            )
            transcript = run_session(cfg)
            if out_dir is not None:
                with open(out_dir / _transcript_name(l0, eta), "w") as fh:
                    transcript.write_jsonl(fh)
            rows.extend(reports.stats_rows(eta, l0, reports.session_stats(transcript)))
    suffix = "json" if spec.fmt == "json" else "csv"
    _emit(spec, rows, out_dir / f"summary.{suffix}" if out_dir else None)
    return 0


def _cmd_bell(spec: RunSpec) -> int:
    rows = reports.bell_rows(
        spec.l0_list, spec.eta_values, spec.trials, spec.seed, spec.bell_fraction
    )
    _emit(spec, rows, Path(spec.out) if spec.out else None)
    return 0


def _cmd_compare(spec: RunSpec) -> int:
    outcome = reports.run_compare(
        spec.l0_list, spec.eta_values, spec.trials, spec.seed,
        bell_fraction=0.0, disclose_fraction=max(spec.disclose_fraction, 0.2),
    )
    _emit(spec, outcome.rows, Path(spec.out) if spec.out else None)
    if spec.strict and outcome.strict_flags > 0:
        print(
            f"statistical validation failed: {outcome.strict_flags} flags at 5 "
            "standard errors",
            file=sys.stderr,
        )
        return 2
    return 0


_DISPATCH = {
    "analytic": _cmd_analytic,
    "simulate": _cmd_simulate,
    "bell": _cmd_bell,
    "compare": _cmd_compare,
    "figures": _cmd_figures,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        spec = parse_run_spec(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _DISPATCH[spec.command](spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
