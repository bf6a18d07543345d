"""Report assembly and tidy-format emission.

Every tabular output is a long-format table with columns ``x, series,
value`` so downstream plotting needs no reshaping; CSV files carry a single
leading comment line echoing the run specification, and the JSON mirror
embeds the same echo. Numbers are printed with 12 significant digits and no
timestamps, so identical run specifications produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Mapping

import numpy as np

from hyperqkd import analytics
from hyperqkd.analytics import JointDistribution, Symbol
from hyperqkd.protocol import (
    BellAngles,
    NoKeyRounds,
    ProtocolConfig,
    Role,
    Transcript,
    bell_test,
    estimate_error,
    run_session,
    visibility_bound,
)


@dataclass(frozen=True)
class ReportRow:
    x: float
    series: str
    value: float


def fmt(value: float) -> str:
    return f"{value:.12g}"


def write_rows_csv(stream: IO[str], rows: Iterable[ReportRow], spec_echo: Mapping) -> None:
    stream.write("# run_spec: " + json.dumps(spec_echo, separators=(",", ":")) + "\n")
    stream.write("x,series,value\n")
    for row in rows:
        stream.write(f"{fmt(row.x)},{row.series},{fmt(row.value)}\n")


def write_rows_json(stream: IO[str], rows: Iterable[ReportRow], spec_echo: Mapping) -> None:
    payload = {
        "run_spec": dict(spec_echo),
        "columns": ["x", "series", "value"],
        "rows": [
            {"x": float(fmt(r.x)), "series": r.series, "value": float(fmt(r.value))}
            for r in rows
        ],
    }
    json.dump(payload, stream, indent=1, sort_keys=False)
    stream.write("\n")


def write_rows(
    stream: IO[str], rows: Iterable[ReportRow], spec_echo: Mapping, fmt_name: str
) -> None:
    if fmt_name == "json":
        write_rows_json(stream, rows, spec_echo)
    else:
        write_rows_csv(stream, rows, spec_echo)


# ---------------------------------------------------------------------------
# analytic sweeps


def analytic_rows(l0_list: Iterable[int], eta_values: Iterable[float]) -> list[ReportRow]:
    """Closed-form security quantities per (l0, eta), plus baselines.

    Both error-rate definitions are emitted side by side; they genuinely
    disagree at finite l0 and only merge in the large-alphabet limit. The
    same goes for the closed-form mutual information versus the exact value
    from the key-only table at l0 = 1.
    """
    rows: list[ReportRow] = []
    etas = list(eta_values)
    for l0 in l0_list:
        for eta in etas:
            exact_eta = Fraction(eta).limit_denominator(10**9)
            table = analytics.joint_with_eavesdropping(l0, exact_eta)
            prefix = f"l0={l0}"
            rows.extend(
                [
                    ReportRow(eta, f"{prefix}:error_closed", float(analytics.error_rate_closed(l0, eta))),
                    ReportRow(eta, f"{prefix}:error_from_matrix", analytics.error_rate_from_distribution(table)),
                    ReportRow(eta, f"{prefix}:key_fraction", float(analytics.key_fraction_closed(l0, eta))),
                    ReportRow(eta, f"{prefix}:mutual_info", analytics.mutual_info_closed(l0, eta)),
                    ReportRow(eta, f"{prefix}:mutual_info_exact", analytics.mutual_info_of(analytics.key_joint(l0, exact_eta))),
                    ReportRow(eta, f"{prefix}:eve_info", analytics.eve_information(l0, eta)),
                    ReportRow(eta, f"{prefix}:secret_key_rate", analytics.secret_key_rate(l0, eta)),
                    ReportRow(eta, f"{prefix}:entropy_undisturbed", analytics.undisturbed_entropy(l0)),
                    ReportRow(eta, f"{prefix}:competing_oam_error", analytics.competing_oam_error(l0, eta)),
                ]
            )
    for eta in etas:
        point = analytics.bb84_baseline(eta)
        rows.extend(
            [
                ReportRow(eta, "bb84:error", point.error_rate),
                ReportRow(eta, "bb84:mutual_info", point.mutual_info),
                ReportRow(eta, "bb84:eve_info", point.eve_info),
                ReportRow(eta, "bb84:secret_key_rate", point.secret_key_rate),
            ]
        )
    return rows


def error_vs_alphabet_rows(l0_max: int = 25) -> list[ReportRow]:
    """Error rate against alphabet half-width for three interception levels."""
    rows = []
    for eta in (1.0, 0.5, 0.1):
        for l0 in range(1, l0_max + 1):
            rows.append(
                ReportRow(l0, f"eta={fmt(eta)}", float(analytics.error_rate_closed(l0, eta)))
            )
        baseline = analytics.bb84_baseline(eta).error_rate
        for l0 in range(1, l0_max + 1):
            rows.append(ReportRow(l0, f"bb84 eta={fmt(eta)}", baseline))
    return rows


def information_rows(l0: int | None, points: int = 101) -> list[ReportRow]:
    """I(A;B), I_E and secret key rate against eta; l0 None means BB84."""
    rows = []
    for eta in np.linspace(0.0, 1.0, points):
        eta = float(eta)
        if l0 is None:
            point = analytics.bb84_baseline(eta)
            values = (point.mutual_info, point.eve_info, point.secret_key_rate)
        else:
            values = (
                analytics.mutual_info_closed(l0, eta),
                analytics.eve_information(l0, eta),
                analytics.secret_key_rate(l0, eta),
            )
        rows.append(ReportRow(eta, "mutual_info", values[0]))
        rows.append(ReportRow(eta, "eve_info", values[1]))
        rows.append(ReportRow(eta, "secret_key_rate", values[2]))
    return rows


# ---------------------------------------------------------------------------
# empirical reductions


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 1e-12) / n) if n else float("inf")


def counts_to_distribution(
    counts: Mapping[tuple[Symbol, Symbol], int], l0: int
) -> JointDistribution:
    total = sum(counts.values())
    cells = {pair: Fraction(c, total) for pair, c in counts.items()}
    return JointDistribution(l0, cells)


@dataclass
class SessionStats:
    """Empirical summary of one session, with standard errors and counts."""

    model: str
    trials: int
    sifted: int
    key_rounds: int
    f_hat: float
    f_se: float
    e_hat: float | None
    e_se: float | None
    disclosed: int
    mi_hat: float
    counts: dict[tuple[Symbol, Symbol], int]


def session_stats(transcript: Transcript) -> SessionStats:
    summary = transcript.summary()
    counts = transcript.joint_key_counts()
    f_hat = summary.both_key / summary.key_rounds if summary.key_rounds else 0.0
    try:
        e_hat, n_disc = estimate_error(transcript)
        e_se = _binomial_se(max(e_hat, 1e-6), n_disc)
    except NoKeyRounds:
        e_hat, n_disc, e_se = None, 0, None
    mi_hat = analytics.mutual_info_of(
        counts_to_distribution(counts, transcript.config.l0)
    )
    return SessionStats(
        model=transcript.config.source_model,
        trials=len(transcript),
        sifted=summary.sifted,
        key_rounds=summary.key_rounds,
        f_hat=f_hat,
        f_se=_binomial_se(f_hat, summary.key_rounds),
        e_hat=e_hat,
        e_se=e_se,
        disclosed=n_disc,
        mi_hat=mi_hat,
        counts=counts,
    )


def stats_rows(eta: float, l0: int, stats: SessionStats) -> list[ReportRow]:
    prefix = f"l0={l0}:{stats.model}"
    rows = [
        ReportRow(eta, f"{prefix}:trials", stats.trials),
        ReportRow(eta, f"{prefix}:sifted", stats.sifted),
        ReportRow(eta, f"{prefix}:key_rounds", stats.key_rounds),
        ReportRow(eta, f"{prefix}:key_fraction_hat", stats.f_hat),
        ReportRow(eta, f"{prefix}:key_fraction_se", stats.f_se),
        ReportRow(eta, f"{prefix}:mutual_info_hat", stats.mi_hat),
        ReportRow(eta, f"{prefix}:disclosed", stats.disclosed),
    ]
    if stats.e_hat is not None:
        rows.append(ReportRow(eta, f"{prefix}:error_hat", stats.e_hat))
        rows.append(ReportRow(eta, f"{prefix}:error_se", stats.e_se))
    return rows


# ---------------------------------------------------------------------------
# cross-validation (compare command)


@dataclass
class CompareOutcome:
    rows: list[ReportRow]
    strict_flags: int


def _cells_within_5se(
    counts: Mapping[tuple[Symbol, Symbol], int],
    table: JointDistribution,
) -> bool:
    n = sum(counts.values())
    for pair, prob in table.cells.items():
        p = float(prob)
        if abs(counts.get(pair, 0) / n - p) > 5 * _binomial_se(p, n):
            return False
    for pair, c in counts.items():
        if table.probability(*pair) == 0 and c > 0:
            return False
    return True


def _interior_rows_within_5se(
    physical: Mapping[tuple[Symbol, Symbol], int],
    ideal: Mapping[tuple[Symbol, Symbol], int],
    l0: int,
) -> bool:
    """Row-conditional agreement on interior key rows (|k| <= l0 - 2).

    Only row conditionals are compared: the two models provably share them
    on interior rows, while occupancy weights differ through the
    total-angular-momentum spectrum (a documented divergence).
    """
    for k in range(-(l0 - 2), l0 - 1):
        n_p = sum(c for (a, _), c in physical.items() if a == k)
        n_i = sum(c for (a, _), c in ideal.items() if a == k)
        if min(n_p, n_i) == 0:
            return False
        targets = {b for (a, b) in list(physical) + list(ideal) if a == k}
        for b in targets:
            p_p = physical.get((k, b), 0) / n_p
            p_i = ideal.get((k, b), 0) / n_i
            se = math.sqrt(
                _binomial_se(p_p, n_p) ** 2 + _binomial_se(p_i, n_i) ** 2
            )
            if abs(p_p - p_i) > 5 * se:
                return False
    return True


def run_compare(
    l0_list: Iterable[int],
    eta_values: Iterable[float],
    trials: int,
    seed: int,
    bell_fraction: float = 0.0,
    disclose_fraction: float = 0.25,
) -> CompareOutcome:
    """Cross-validate both source models against the exact tables.

    Strict flags are raised for disagreements that should never happen:
    the idealized sampler drifting from its own generating table, or the
    physical model's interior row conditionals drifting from the sampler's.
    Physical-versus-closed-form gaps in the key fraction, error rate and
    occupancies are expected (the spectrum question) and are emitted as
    report rows, not flags.
    """
    if trials < 10_000:
        raise ValueError("compare needs trials >= 10000 for meaningful statistics")
    rows: list[ReportRow] = []
    strict_flags = 0
    for l0 in l0_list:
        for eta in eta_values:
            exact_eta = Fraction(eta).limit_denominator(10**9)
            table = analytics.joint_with_eavesdropping(l0, exact_eta)
            e_matrix = analytics.error_rate_from_distribution(table)
            f_closed = float(analytics.key_fraction_closed(l0, eta))
            rows.extend(
                [
                    ReportRow(eta, f"l0={l0}:analytic:error_closed", float(analytics.error_rate_closed(l0, eta))),
                    ReportRow(eta, f"l0={l0}:analytic:error_from_matrix", e_matrix),
                    ReportRow(eta, f"l0={l0}:analytic:key_fraction", f_closed),
                    ReportRow(eta, f"l0={l0}:analytic:mutual_info", analytics.mutual_info_closed(l0, eta)),
                    ReportRow(eta, f"l0={l0}:analytic:mutual_info_exact", analytics.mutual_info_of(analytics.key_joint(l0, exact_eta))),
                ]
            )

            ideal = run_session(
                ProtocolConfig(
                    l0=l0, eta=eta, trials=trials, seed=seed,
                    source_model="paper-ideal", bell_fraction=bell_fraction,
                    disclose_fraction=disclose_fraction,
                )
            )
            physical = run_session(
                ProtocolConfig(
                    l0=l0, eta=eta, trials=trials, seed=seed + 1,
                    source_model="physical", bell_fraction=bell_fraction,
                    disclose_fraction=disclose_fraction,
                )
            )
            stats_i = session_stats(ideal)
            stats_p = session_stats(physical)
            rows.extend(stats_rows(eta, l0, stats_i))
            rows.extend(stats_rows(eta, l0, stats_p))

            flag_joint = not _cells_within_5se(stats_i.counts, table)
            flag_f = abs(stats_i.f_hat - f_closed) > 5 * stats_i.f_se
            flag_e = (
                stats_i.e_hat is not None
                and abs(stats_i.e_hat - e_matrix) > 5 * stats_i.e_se
            )
            flag_rows = l0 >= 2 and not _interior_rows_within_5se(
                stats_p.counts, stats_i.counts, l0
            )
            for name, value in (
                ("ideal_joint_vs_table", flag_joint),
                ("ideal_key_fraction", flag_f),
                ("ideal_error_rate", flag_e),
                ("physical_interior_rows", flag_rows),
            ):
                rows.append(ReportRow(eta, f"l0={l0}:flag:{name}", float(value)))
                strict_flags += int(value)
            # Expected-divergent gaps, reported but never strict-flagged:
            # the physical spectrum puts extra weight on interior TAM values
            # and half weight at |j| = l0, so f and e drift from the
            # idealized closed forms by design.
            rows.append(
                ReportRow(
                    eta,
                    f"l0={l0}:expected_divergence:key_fraction_gap",
                    stats_p.f_hat - f_closed,
                )
            )
            if stats_p.e_hat is not None:
                rows.append(
                    ReportRow(
                        eta,
                        f"l0={l0}:expected_divergence:error_gap",
                        stats_p.e_hat - e_matrix,
                    )
                )
    return CompareOutcome(rows=rows, strict_flags=strict_flags)


def bell_rows(
    l0_list: Iterable[int],
    eta_values: Iterable[float],
    trials: int,
    seed: int,
    bell_fraction: float,
    angles: BellAngles | None = None,
) -> list[ReportRow]:
    """Empirical CHSH and visibility per (l0, eta) with their bounds."""
    angles = angles or BellAngles()
    rows: list[ReportRow] = []
    for l0 in l0_list:
        for eta in eta_values:
            cfg = ProtocolConfig(
                l0=l0, eta=eta, trials=trials, seed=seed,
                source_model="physical", bell_fraction=bell_fraction,
            )
            result = bell_test(cfg, angles)
            prefix = f"l0={l0}"
            rows.extend(
                [
                    ReportRow(eta, f"{prefix}:s_hat", result.s_value),
                    ReportRow(eta, f"{prefix}:s_se", result.s_stderr),
                    ReportRow(eta, f"{prefix}:visibility_hat", result.visibility),
                    ReportRow(eta, f"{prefix}:visibility_se", result.visibility_stderr),
                    ReportRow(eta, f"{prefix}:visibility_bound", visibility_bound(eta)),
                    ReportRow(eta, f"{prefix}:counted_rounds", result.counted_rounds),
                    ReportRow(eta, f"{prefix}:chsh_rounds", result.chsh_rounds),
                    ReportRow(eta, f"{prefix}:visibility_rounds", result.visibility_rounds),
                ]
            )
    return rows
