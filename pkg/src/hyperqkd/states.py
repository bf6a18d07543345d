"""Exact state engine for a hyperentangled two-photon pair.

The pair is entangled in orbital angular momentum (integer topological
charge ``l``) and in polarization, tracked in the circular-spin basis
``s in {+1, -1}`` (+1 right circular, -1 left circular). A joint basis ket
is ``|l_A, s_A> |l_B, s_B>`` and a state is a sparse map from those labels
to complex amplitudes.

Linear polarizations are fixed superpositions of the circular basis,

    |H> = (|R> + |L>) / sqrt(2)
    |V> = i (|R> - |L>) / sqrt(2)

and a linear polarizer at angle ``t`` passes ``|t> = cos t |H> + sin t |V>``,
which in the circular basis is ``(exp(i t)|R> + exp(-i t)|L>) / sqrt(2)``.

Total angular momentum about the propagation axis is ``j = l + s``.
Measurements are projective in the eigenspace sense: sorting by ``l`` or by
``j`` keeps whatever coherence survives inside the selected eigenspace, as an
interferometric sorter does. Erasure operations relabel modes (``l -> 0``
after a total-angular-momentum sort, ``s -> -s`` after an orbital sort) so
polarization interference can be recovered afterwards.

States are immutable after construction; every operation returns a new
state, so values can be shared freely across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

Party = Literal["A", "B"]
Observable = Literal["oam", "tam"]

#: Joint basis label: (l_A, s_A, l_B, s_B).
ModeKey = tuple[int, int, int, int]

#: A classical mixture of pure states, as (weight, state) pairs.
Ensemble = Sequence[tuple[float, "TwoPhotonState"]]

NORM_TOL = 1e-12
PRUNE_TOL = 1e-15

_SPIN_INDEX = {(+1, +1): 0, (+1, -1): 1, (-1, +1): 2, (-1, -1): 3}


class AmbiguousErasure(ValueError):
    """An OAM erasure would coherently merge distinguishable branches."""


class DegenerateCorrelation(ValueError):
    """Polarization statistics requested where the coincidence signal vanishes."""


@dataclass(frozen=True)
class TwoPhotonState:
    """Sparse normalized amplitude vector over joint (l, s) labels.

    ``l0`` records the configured alphabet half-width; reachable labels obey
    ``|l| <= l0 + 2`` because the source emits ``|l| <= l0`` and no modeled
    operation shifts ``l`` by more than 2.
    """

    amplitudes: Mapping[ModeKey, complex]
    l0: int

    def __post_init__(self) -> None:
        pruned = {
            key: complex(amp)
            for key, amp in self.amplitudes.items()
            if abs(amp) > PRUNE_TOL
        }
        object.__setattr__(self, "amplitudes", pruned)
        cap = self.l0 + 2
        for l_a, s_a, l_b, s_b in pruned:
            if s_a not in (+1, -1) or s_b not in (+1, -1):
                raise ValueError(f"spin labels must be +1 or -1, got ({s_a}, {s_b})")
            if abs(l_a) > cap or abs(l_b) > cap:
                raise ValueError(f"mode |l| exceeds cap {cap}: ({l_a}, {l_b})")
        norm = self.norm()
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state norm {norm!r} is not 1")

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def overlap(self, other: "TwoPhotonState") -> complex:
        """Inner product <self|other>."""
        small, big = self.amplitudes, other.amplitudes
        if len(big) < len(small):
            return complex(np.conj(other.overlap(self)))
        return sum(amp.conjugate() * big.get(key, 0.0) for key, amp in small.items())

    def fidelity(self, other: "TwoPhotonState") -> float:
        """|<self|other>|^2; equality up to a global phase means fidelity 1."""
        return abs(self.overlap(other)) ** 2


@dataclass(frozen=True)
class SpinDensity:
    """4x4 density matrix over the joint spin basis.

    Basis order: (+1,+1), (+1,-1), (-1,+1), (-1,-1) for (s_A, s_B).
    """

    rho: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError("spin density must be 4x4")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-12:
            raise ValueError("spin density is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > 1e-12:
            raise ValueError("spin density trace is not 1")
        if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
            raise ValueError("spin density is not positive semidefinite")
        object.__setattr__(self, "rho", rho)

    def purity(self) -> float:
        return float(np.trace(self.rho @ self.rho).real)

    @staticmethod
    def mix(components: Iterable[tuple[float, "SpinDensity"]]) -> "SpinDensity":
        """Convex combination of spin densities."""
        total = np.zeros((4, 4), dtype=complex)
        for weight, dens in components:
            total += weight * dens.rho
        return SpinDensity(total)


def _party_mode(key: ModeKey, party: Party) -> tuple[int, int]:
    return (key[0], key[1]) if party == "A" else (key[2], key[3])


def _eigenvalue(key: ModeKey, party: Party, observable: Observable) -> int:
    l, s = _party_mode(key, party)
    return l if observable == "oam" else l + s


def make_source_state(l0: int) -> TwoPhotonState:
    """Entangled two-photon source state.

    Equal-weight sum over ``l = -l0 .. l0`` of the OAM-anticorrelated pair
    ``|l>_A |-l>_B`` tensored with the polarization singlet
    ``(|H>_A |V>_B - |V>_A |H>_B) / sqrt(2)``, as produced by type-II
    down-conversion after flattening the OAM spectrum. Expanding the singlet
    in the circular basis leaves two spin terms per ``l``:

        (|H V> - |V H>) = i (|L R> - |R L>)

    so every amplitude has squared magnitude ``1 / (2 (2 l0 + 1))``.
    """
    if l0 < 0:
        raise ValueError("l0 must be a nonnegative integer")
    c = 1.0 / math.sqrt(2 * (2 * l0 + 1))
    amps: dict[ModeKey, complex] = {}
    for l in range(-l0, l0 + 1):
        amps[(l, +1, -l, -1)] = -1j * c
        amps[(l, -1, -l, +1)] = +1j * c
    return TwoPhotonState(amps, l0)


def linear_product_state(
    gamma_a: float, gamma_b: float, l_a: int = 0, l_b: int = 0, l0: int = 0
) -> TwoPhotonState:
    """Separable pair with each photon linearly polarized at the given angle."""
    amps: dict[ModeKey, complex] = {}
    for s_a in (+1, -1):
        for s_b in (+1, -1):
            amp = 0.5 * np.exp(1j * s_a * gamma_a) * np.exp(1j * s_b * gamma_b)
            amps[(l_a, s_a, l_b, s_b)] = amp
    return TwoPhotonState(amps, max(l0, abs(l_a), abs(l_b)))


def born_distribution(
    state: TwoPhotonState, party: Party, observable: Observable
) -> dict[int, float]:
    """Outcome probabilities for a projective measurement of one photon.

    OAM eigenvalue of a mode is ``l``; the total-angular-momentum eigenvalue
    is ``l + s``. Returned dict is keyed by eigenvalue in ascending order.
    """
    weights: dict[int, float] = {}
    for key, amp in state.amplitudes.items():
        ev = _eigenvalue(key, party, observable)
        weights[ev] = weights.get(ev, 0.0) + abs(amp) ** 2
    total = sum(weights.values())
    if abs(total - 1.0) > NORM_TOL * 10:
        raise ValueError("state is not normalized")
    return {ev: weights[ev] for ev in sorted(weights)}


def project_onto(
    state: TwoPhotonState, party: Party, observable: Observable, value: int
) -> tuple[TwoPhotonState, float]:
    """Project one photon onto an eigenvalue and renormalize.

    Returns the collapsed state and the Born probability of the outcome.
    Coherence between labels that share the eigenvalue is preserved.
    """
    kept = {
        key: amp
        for key, amp in state.amplitudes.items()
        if _eigenvalue(key, party, observable) == value
    }
    prob = sum(abs(a) ** 2 for a in kept.values())
    assert prob > 1e-12, "projection onto a zero-probability outcome"
    scale = 1.0 / math.sqrt(prob)
    collapsed = TwoPhotonState({k: a * scale for k, a in kept.items()}, state.l0)
    return collapsed, prob


def project_measure(
    state: TwoPhotonState, party: Party, observable: Observable, random_draw: float
) -> tuple[int, TwoPhotonState, float]:
    """Sample a projective measurement outcome via inverse CDF.

    Eigenvalues are traversed in ascending order, so a fixed draw always maps
    to the same outcome and Monte Carlo runs are reproducible by seed.
    """
    dist = born_distribution(state, party, observable)
    cumulative = 0.0
    outcome = None
    for ev, p in dist.items():
        cumulative += p
        if random_draw < cumulative:
            outcome = ev
            break
    if outcome is None:  # guard against float round-off at the top end
        outcome = max(dist)
    collapsed, prob = project_onto(state, party, observable, outcome)
    return outcome, collapsed, prob


def erase_oam(state: TwoPhotonState, party: Party) -> TwoPhotonState:
    """Erase which-l information on one photon by relabeling ``l -> 0``.

    Physically: sort the l values into paths, shift each to zero, recombine.
    This is only well defined when no two distinct l values share a spin on
    the party's support, i.e. after a total-angular-momentum sort; otherwise
    the relabeling would coherently merge distinguishable branches and
    ``AmbiguousErasure`` is raised.
    """
    seen: dict[int, int] = {}
    for key in state.amplitudes:
        l, s = _party_mode(key, party)
        if s in seen and seen[s] != l:
            raise AmbiguousErasure(
                f"party {party}: spin {s} carries l={seen[s]} and l={l}"
            )
        seen[s] = l
    amps: dict[ModeKey, complex] = {}
    for key, amp in state.amplitudes.items():
        if party == "A":
            new_key = (0, key[1], key[2], key[3])
        else:
            new_key = (key[0], key[1], 0, key[3])
        amps[new_key] = amp
    return TwoPhotonState(amps, state.l0)


def spin_flip(state: TwoPhotonState, party: Party) -> TwoPhotonState:
    """Erase which-j information on one photon by relabeling ``s -> -s``."""
    amps: dict[ModeKey, complex] = {}
    for key, amp in state.amplitudes.items():
        if party == "A":
            new_key = (key[0], -key[1], key[2], key[3])
        else:
            new_key = (key[0], key[1], key[2], -key[3])
        amps[new_key] = amp
    return TwoPhotonState(amps, state.l0)


def spin_density(state: TwoPhotonState | Ensemble) -> SpinDensity:
    """Partial trace over both photons' OAM labels.

    rho(s_A, s_B; s'_A, s'_B) sums amp(l_A, s_A, l_B, s_B) times the
    conjugate amplitude at the same OAM labels. Accepts a pure state or a
    classical mixture given as (weight, state) pairs.
    """
    if not isinstance(state, TwoPhotonState):
        return SpinDensity.mix((w, spin_density(s)) for w, s in state)
    groups: dict[tuple[int, int], np.ndarray] = {}
    for (l_a, s_a, l_b, s_b), amp in state.amplitudes.items():
        vec = groups.setdefault((l_a, l_b), np.zeros(4, dtype=complex))
        vec[_SPIN_INDEX[(s_a, s_b)]] = amp
    rho = np.zeros((4, 4), dtype=complex)
    for vec in groups.values():
        rho += np.outer(vec, vec.conj())
    return SpinDensity(rho)


def negativity(rho: SpinDensity) -> float:
    """Entanglement negativity of a two-qubit spin density.

    Sum of |negative eigenvalues| of the partial transpose over photon B.
    0 for every separable state, 0.5 for the polarization singlet.
    """
    pt = rho.rho.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)
    eigs = np.linalg.eigvalsh(pt)
    return float(-eigs[eigs < 0].sum())


def _polarizer_component(s: int, angle: float) -> complex:
    # <angle|s> for |angle> = (e^{i angle}|R> + e^{-i angle}|L>)/sqrt(2)
    return np.exp(-1j * s * angle) / math.sqrt(2)


def _coincidence_pure(state: TwoPhotonState, theta: float, phi: float) -> float:
    by_oam: dict[tuple[int, int], complex] = {}
    for (l_a, s_a, l_b, s_b), amp in state.amplitudes.items():
        term = amp * _polarizer_component(s_a, theta) * _polarizer_component(s_b, phi)
        pair = (l_a, l_b)
        by_oam[pair] = by_oam.get(pair, 0.0) + term
    return sum(abs(v) ** 2 for v in by_oam.values())


def polarization_coincidence(
    state: TwoPhotonState | Ensemble, theta: float, phi: float
) -> float:
    """Joint detection probability behind linear polarizers at theta, phi.

    Projects each photon's polarization onto the rotated linear state and
    sums squared magnitudes over all OAM labels (orthogonal OAM branches do
    not interfere). Angles are taken modulo pi. On the polarization singlet
    this is sin^2(theta - phi) / 2.
    """
    theta %= math.pi
    phi %= math.pi
    if isinstance(state, TwoPhotonState):
        return _coincidence_pure(state, theta, phi)
    return sum(w * _coincidence_pure(s, theta, phi) for w, s in state)


def correlation_E(
    state: TwoPhotonState | Ensemble, a: float, b: float
) -> float:
    """Two-channel polarization correlation E(a, b) in [-1, 1].

    E = P(a,b) + P(a+90, b+90) - P(a, b+90) - P(a+90, b), with the four
    coincidence probabilities renormalized by their sum (ideal lossless
    two-channel analyzers).
    """
    perp = math.pi / 2
    pp = polarization_coincidence(state, a, b)
    pf = polarization_coincidence(state, a, b + perp)
    fp = polarization_coincidence(state, a + perp, b)
    ff = polarization_coincidence(state, a + perp, b + perp)
    total = pp + pf + fp + ff
    if total < 1e-12:
        raise DegenerateCorrelation("four-outcome coincidence sum vanishes")
    return (pp + ff - pf - fp) / total


def chsh_value(
    state: TwoPhotonState | Ensemble,
    a: float,
    a_prime: float,
    b: float,
    b_prime: float,
) -> float:
    """CHSH statistic S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')|.

    At the canonical angles (0, pi/4, pi/8, 3pi/8) the polarization singlet
    reaches 2*sqrt(2); separable spin states stay at or below 2.
    """
    return abs(
        correlation_E(state, a, b)
        - correlation_E(state, a, b_prime)
        + correlation_E(state, a_prime, b)
        + correlation_E(state, a_prime, b_prime)
    )


def visibility(
    state: TwoPhotonState | Ensemble, theta_fixed: float, points: int = 360
) -> float:
    """Interference visibility of the coincidence curve at fixed theta.

    Sweeps the second polarizer over [0, pi) on a uniform grid and returns
    (max - min) / (max + min) of the coincidence probability.
    """
    values = [
        polarization_coincidence(state, theta_fixed, k * math.pi / points)
        for k in range(points)
    ]
    hi, lo = max(values), min(values)
    if hi + lo < 1e-12:
        raise DegenerateCorrelation("coincidence curve vanishes identically")
    return (hi - lo) / (hi + lo)
