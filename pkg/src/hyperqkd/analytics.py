"""Closed-form security quantities for the intercept-resend eavesdropper.

The protocol sifts rounds where both parties measured the same angular
momentum variable and maps outcomes to key symbols in ``-l0 .. l0``;
total-angular-momentum outcomes at ``j = +-(l0 + 1)`` are kept in the
accounting as the NoKey symbol. This module builds the exact joint
symbol distributions (undisturbed, fully intercepted, and their convex
mixtures), an exhaustive branching-tree oracle that re-derives the
intercepted table from first principles, and the scalar security
quantities: key fraction, error rate (two inequivalent definitions, see
``error_rate_closed`` vs ``error_rate_from_distribution``), mutual
information, the eavesdropper's information gain, and the secret key rate,
plus intercept-resend baselines for two-level (BB84-style) and plain
orbital-angular-momentum schemes used in comparison plots.

Tables are exact ``fractions.Fraction`` arithmetic end to end; floating
point appears only in entropy/logarithm evaluations at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Literal, Mapping, Union

import numpy as np

#: Key symbol: an integer key value, or None for the NoKey outcome.
Symbol = Union[int, None]

Variable = Literal["oam", "tam"]

NumberLike = Union[int, float, Fraction]


class ZeroDenominator(ValueError):
    """A conditional quantity was requested from vanishing probability mass."""


def _exact(x: NumberLike) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _check_l0(l0: int) -> None:
    if not isinstance(l0, int) or l0 < 1:
        raise ValueError(f"l0 must be an integer >= 1, got {l0!r}")


def _check_eta(eta: NumberLike) -> None:
    if not 0 <= eta <= 1:
        raise ValueError(f"eta must lie in [0, 1], got {eta!r}")


class JointDistribution:
    """Sparse exact probability table over Alice x Bob key symbols.

    Rows are Alice's symbols, columns Bob's. With ``includes_nokey`` the
    symbol set is ``-l0..l0`` plus ``None``; otherwise key values only.
    """

    def __init__(
        self,
        l0: int,
        cells: Mapping[tuple[Symbol, Symbol], Fraction],
        includes_nokey: bool = True,
    ) -> None:
        _check_l0(l0)
        self.l0 = l0
        self.includes_nokey = includes_nokey
        self.cells: dict[tuple[Symbol, Symbol], Fraction] = {}
        for (a, b), value in cells.items():
            value = _exact(value)
            if value < 0:
                raise ValueError(f"negative probability at ({a}, {b}): {value}")
            if value == 0:
                continue
            for sym in (a, b):
                if sym is None:
                    if not includes_nokey:
                        raise ValueError("NoKey symbol in a key-only table")
                elif abs(sym) > l0:
                    raise ValueError(f"symbol {sym} outside alphabet for l0={l0}")
            self.cells[(a, b)] = value

    def symbols(self) -> list[Symbol]:
        base: list[Symbol] = list(range(-self.l0, self.l0 + 1))
        if self.includes_nokey:
            base.append(None)
        return base

    def total(self) -> Fraction:
        return sum(self.cells.values(), Fraction(0))

    def probability(self, a: Symbol, b: Symbol) -> Fraction:
        return self.cells.get((a, b), Fraction(0))

    def row_masses(self) -> dict[Symbol, Fraction]:
        out: dict[Symbol, Fraction] = {}
        for (a, _), v in self.cells.items():
            out[a] = out.get(a, Fraction(0)) + v
        return out

    def col_masses(self) -> dict[Symbol, Fraction]:
        out: dict[Symbol, Fraction] = {}
        for (_, b), v in self.cells.items():
            out[b] = out.get(b, Fraction(0)) + v
        return out

    def both_value_mass(self) -> Fraction:
        return sum(
            (v for (a, b), v in self.cells.items() if a is not None and b is not None),
            Fraction(0),
        )

    def scaled(self, factor: NumberLike) -> "JointDistribution":
        factor = _exact(factor)
        table = JointDistribution.__new__(JointDistribution)
        table.l0 = self.l0
        table.includes_nokey = self.includes_nokey
        table.cells = {key: value * factor for key, value in self.cells.items()}
        return table

    def mixed_with(self, other: "JointDistribution", weight_other: NumberLike) -> "JointDistribution":
        w = _exact(weight_other)
        cells: dict[tuple[Symbol, Symbol], Fraction] = dict(
            self.scaled(1 - w).cells
        )
        for key, value in other.cells.items():
            cells[key] = cells.get(key, Fraction(0)) + value * w
        return JointDistribution(self.l0, cells, self.includes_nokey)

    def as_array(self) -> np.ndarray:
        """Dense float table ordered -l0..l0 (then NoKey last if present)."""
        order = self.symbols()
        index = {sym: i for i, sym in enumerate(order)}
        out = np.zeros((len(order), len(order)))
        for (a, b), v in self.cells.items():
            out[index[a], index[b]] = float(v)
        return out

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, JointDistribution)
            and self.l0 == other.l0
            and self.includes_nokey == other.includes_nokey
            and self.cells == other.cells
        )


def variable_choice_bias(l0: int) -> Fraction:
    """Beam-splitter bias that equalizes per-value key probabilities.

    Choosing OAM with probability 1/2 - bias and TAM with 1/2 + bias makes
    every key value land with probability 1/(4 l0 + 3) regardless of which
    variable produced it; the bias is 1 / (2 (4 l0 + 3)).
    """
    _check_l0(l0)
    return Fraction(1, 2 * (4 * l0 + 3))


def oam_round_weight(l0: int) -> Fraction:
    """Probability (2l0+1)/(4l0+3) that a round measures OAM under the bias."""
    _check_l0(l0)
    return Fraction(2 * l0 + 1, 4 * l0 + 3)


def undisturbed_joint(l0: int) -> JointDistribution:
    """Joint symbol distribution with no eavesdropper.

    Perfect anticorrelation puts 2/(4l0+3) on each diagonal key cell and
    1/(4l0+3) on the NoKey/NoKey corner.
    """
    _check_l0(l0)
    q = Fraction(2, 4 * l0 + 3)
    cells: dict[tuple[Symbol, Symbol], Fraction] = {
        (k, k): q for k in range(-l0, l0 + 1)
    }
    cells[(None, None)] = q / 2
    return JointDistribution(l0, cells)


def intercept_joint(l0: int) -> JointDistribution:
    """Joint symbol distribution conditional on the eavesdropper intervening.

    Construction rule for the (2l0+2)-square table in units of the
    prefactor 2/(4l0+3):

    * key rows: 3/4 on the diagonal, 1/8 at column offsets +-2 where those
      stay in the alphabet; off-alphabet shifts deposit their 1/8 in the
      NoKey column;
    * NoKey row: 1/32 at each key column two units inside the no-key
      outcomes (they coincide at 0 for l0 = 1) and 7/16 at NoKey/NoKey,
      totalling half a key row.

    ``enumerate_intercept_tree`` re-derives this table independently by
    walking the full branching tree; the two must agree exactly.
    """
    _check_l0(l0)
    q = Fraction(2, 4 * l0 + 3)
    cells: dict[tuple[Symbol, Symbol], Fraction] = {}

    def deposit(a: Symbol, b: Symbol, mass: Fraction) -> None:
        cells[(a, b)] = cells.get((a, b), Fraction(0)) + mass

    for k in range(-l0, l0 + 1):
        deposit(k, k, q * Fraction(3, 4))
        for shift in (-2, +2):
            target = k + shift
            if abs(target) <= l0:
                deposit(k, target, q / 8)
            else:
                deposit(k, None, q / 8)
    for edge_key in (l0 - 1, -(l0 - 1)):
        deposit(None, edge_key, q / 32)
    deposit(None, None, q * Fraction(7, 16))
    return JointDistribution(l0, cells)


def enumerate_intercept_tree(l0: int, alice_variable: Variable) -> JointDistribution:
    """Exhaustive branching-tree oracle, conditional on interception.

    Walks every outcome path with exact rational weights: Alice's value over
    the measured variable's range (the two no-key TAM outcomes carry half
    weight each), the eavesdropper matching her variable with probability
    1/2 (exact anticorrelation for Bob) or missing it and shifting her own
    value by +-1, then Bob shifting again by +-1. Shifted values outside the
    variable's alphabet map to NoKey and never wrap.
    """
    _check_l0(l0)
    if alice_variable == "oam":
        raw_weights = {a: Fraction(1, 2 * l0 + 1) for a in range(-l0, l0 + 1)}
    else:
        raw_weights = {a: Fraction(1, 2 * l0 + 2) for a in range(-l0, l0 + 1)}
        raw_weights[l0 + 1] = Fraction(1, 4 * l0 + 4)
        raw_weights[-(l0 + 1)] = Fraction(1, 4 * l0 + 4)

    def to_key(value: int) -> Symbol:
        return value if abs(value) <= l0 else None

    cells: dict[tuple[Symbol, Symbol], Fraction] = {}

    def deposit(a: Symbol, b: Symbol, mass: Fraction) -> None:
        cells[(a, b)] = cells.get((a, b), Fraction(0)) + mass

    for a, weight in raw_weights.items():
        alice_key = to_key(a)
        # Same-variable interception: measurement agrees, Bob undisturbed.
        deposit(alice_key, to_key(a), weight / 2)
        # Cross-variable interception: value random-walks by two +-1 steps.
        for eve_shift in (-1, +1):
            for bob_shift in (-1, +1):
                bob_value = a + eve_shift + bob_shift
                deposit(alice_key, to_key(bob_value), weight / 8)
    return JointDistribution(l0, cells)


def mixed_intercept_tree(l0: int) -> JointDistribution:
    """Variable-weighted mixture of the two branching-tree tables."""
    w_oam = oam_round_weight(l0)
    oam = enumerate_intercept_tree(l0, "oam")
    tam = enumerate_intercept_tree(l0, "tam")
    return oam.mixed_with(tam, 1 - w_oam)


def joint_with_eavesdropping(l0: int, eta: NumberLike) -> JointDistribution:
    """Convex mixture of the undisturbed and intercepted distributions."""
    _check_eta(eta)
    return undisturbed_joint(l0).mixed_with(intercept_joint(l0), _exact(eta))


def key_joint(l0: int, eta: NumberLike) -> JointDistribution:
    """Key-generating events only: drop the NoKey row/column, renormalize."""
    full = joint_with_eavesdropping(l0, eta)
    mass = full.both_value_mass()
    if mass == 0:
        raise ZeroDenominator("no key-generating probability mass")
    cells = {
        (a, b): v / mass
        for (a, b), v in full.cells.items()
        if a is not None and b is not None
    }
    return JointDistribution(l0, cells, includes_nokey=False)


def key_fraction_closed(l0: int, eta: NumberLike) -> NumberLike:
    """Fraction (4l0+2-eta)/(4l0+3) of sifted rounds that generate key.

    Exact over Fraction inputs; must equal the both-value mass of the full
    joint distribution.
    """
    _check_l0(l0)
    _check_eta(eta)
    return (4 * l0 + 2 - eta) / (4 * l0 + 3)


def error_rate_closed(l0: int, eta: NumberLike) -> NumberLike:
    """Closed-form eavesdropper-induced error rate.

    (eta/8) (4l0+1) / ((2l0+1) - eta/8). Tends to eta/4 as l0 grows. At
    finite l0 this does NOT equal the mismatch-given-both-keys rate computed
    from the joint distribution itself (see error_rate_from_distribution);
    both are reported side by side rather than reconciled.
    """
    _check_l0(l0)
    _check_eta(eta)
    return (eta / 8) * (4 * l0 + 1) / ((2 * l0 + 1) - eta / 8)


def error_rate_from_distribution(table: JointDistribution) -> float:
    """Mismatch probability among rounds where both parties formed a key.

    Explicit event definition: P(alice != bob and both are values) divided
    by P(both are values).
    """
    both = table.both_value_mass()
    if both < Fraction(1, 10**15):
        raise ZeroDenominator("no rounds with both keys present")
    mismatch = sum(
        (
            v
            for (a, b), v in table.cells.items()
            if a is not None and b is not None and a != b
        ),
        Fraction(0),
    )
    return float(mismatch / both)


def _entropy_bits(masses: Iterable[Fraction]) -> float:
    total = 0.0
    for m in masses:
        if m > 0:
            p = float(m)
            total -= p * math.log2(p)
    return total


def mutual_info_of(table: JointDistribution) -> float:
    """Shannon mutual information H(A) + H(B) - H(A,B) in bits."""
    h_a = _entropy_bits(table.row_masses().values())
    h_b = _entropy_bits(table.col_masses().values())
    h_ab = _entropy_bits(table.cells.values())
    return h_a + h_b - h_ab


def undisturbed_entropy(l0: int) -> float:
    """Per-party symbol entropy with no eavesdropper.

    log2(4l0+3) - (4l0+2)/(4l0+3); equals the mutual information of the
    undisturbed joint distribution because it is perfectly correlated.
    """
    _check_l0(l0)
    n = 4 * l0 + 3
    return math.log2(n) - (n - 1) / n


def mutual_info_closed(l0: int, eta: NumberLike) -> float:
    """Closed-form mutual information over the key-only distribution.

    Four-term expression with prefactor 2/(4l0+2-eta); at eta = 0 it reduces
    to log2(2l0+1) and for large l0 it approaches log2(2l0) for every eta.
    The edge-row bookkeeping inside assumes four alphabet-edge rows, which
    is exact for l0 >= 2; at l0 = 1 it deviates slightly from
    mutual_info_of(key_joint(1, eta)) (reported, not hidden).
    """
    _check_l0(l0)
    _check_eta(eta)
    eta = float(eta)
    u = 2.0 / (4 * l0 + 2 - eta)
    terms = (2 * l0 + 1 - eta / 2) * math.log2((4 * l0 + 2 - eta) / 2)
    terms -= 8 * (1 - eta / 8) * math.log2(1 - eta / 8)
    terms += (2 * l0 + 1) * (1 - eta / 4) * math.log2(1 - eta / 4)
    if eta > 0:
        terms += (eta / 4) * (2 * l0 - 1) * math.log2(eta / 8)
    return u * terms


def eve_information(l0: int, eta: NumberLike) -> float:
    """Eavesdropper's expected information gain in bits per sifted photon.

    She learns the full per-photon key content log2(2l0+1) on the half of
    her interceptions that measure the right variable and nothing otherwise:
    (eta/2) log2(2l0+1).
    """
    _check_l0(l0)
    _check_eta(eta)
    return (float(eta) / 2) * math.log2(2 * l0 + 1)


def secret_key_rate(l0: int, eta: NumberLike) -> float:
    """Distillable rate max(I(A;B) - I_E, 0) in bits per sifted photon."""
    return max(mutual_info_closed(l0, eta) - eve_information(l0, eta), 0.0)


@dataclass(frozen=True)
class BB84Point:
    """Intercept-resend working point for a two-level protocol."""

    error_rate: float
    mutual_info: float
    eve_info: float
    secret_key_rate: float


def bb84_baseline(eta: NumberLike) -> BB84Point:
    """Standard intercept-resend quantities for a BB84-style qubit protocol.

    e = eta/4, I(A;B) = 1 - h2(e), I_E = eta/2, kappa = max(I - I_E, 0).
    These are the textbook expressions for the dashed comparison curves.
    """
    _check_eta(eta)
    e = float(eta) / 4
    if 0 < e < 1:
        mutual = 1 + e * math.log2(e) + (1 - e) * math.log2(1 - e)
    else:
        mutual = 1.0
    eve = float(eta) / 2
    return BB84Point(e, mutual, eve, max(mutual - eve, 0.0))


def competing_oam_error(l0: int, eta: NumberLike) -> float:
    """Error rate eta*l0/(2l0+1) of two-basis OAM schemes, for comparison."""
    _check_l0(l0)
    _check_eta(eta)
    return float(eta) * l0 / (2 * l0 + 1)
