"""Monte Carlo execution of the key distribution protocol.

A trial runs source -> optional interception of the photon flying to Bob ->
biased variable choice and projective measurement at both labs -> erasure of
the unmeasured variable -> sifting -> key mapping, under one of two source
models:

* ``physical``: every trial manipulates the exact two-photon state from
  :mod:`hyperqkd.states`. The eavesdropper measures projectively; when her
  outcome was not already certain she forwards a fresh photon prepared in
  the canonical eigenstate of her result (the resend step of an
  intercept-resend attack), which is what spreads Bob's value by up to two
  units and can push labels to ``|l| = l0 + 2``. When her outcome was
  certain (she picked the variable already fixed) the measurement is a true
  nondemolition probe and the state is untouched.
* ``paper-ideal``: samples the idealized uniform branching tree behind the
  closed-form tables directly, bypassing state vectors. It models the
  sifted ensemble, so every trial has both parties on the same variable.

Randomness is drawn as a fixed-stride table from a counter-based Philox
generator keyed by the seed: trial ``i`` consumes exactly row ``i`` of the
stream, so transcripts are byte-reproducible and trials could be evaluated
in any order or split across workers without changing a single outcome.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import IO, Iterator, Union

import numpy as np

from hyperqkd.analytics import Symbol, variable_choice_bias
from hyperqkd.states import (
    TwoPhotonState,
    erase_oam,
    make_source_state,
    polarization_coincidence,
    project_measure,
    spin_flip,
)

SOURCE_PHYSICAL = "physical"
SOURCE_PAPER_IDEAL = "paper-ideal"

#: Uniform draws consumed per trial (fixed stride; unused slots are burned).
N_DRAWS = 12
_COL_ROLE = 0
_COL_ALICE_VAR = 1
_COL_ALICE_MEAS = 2
_COL_EVE_PRESENT = 3
_COL_EVE_VAR = 4
_COL_EVE_MEAS = 5
_COL_BOB_VAR = 6
_COL_BOB_MEAS = 7
_COL_BELL_MODE = 8
_COL_BELL_SETTING = 9
_COL_BELL_OUTCOME = 10
_COL_DISCLOSE = 11

_CHUNK = 1 << 15


class Variable(IntEnum):
    OAM = 0
    TAM = 1

    @property
    def observable(self) -> str:
        return "oam" if self is Variable.OAM else "tam"


class Role(IntEnum):
    KEY = 0
    BELL = 1
    DISCARDED = 2


_ROLE_NAMES = {Role.KEY: "key", Role.BELL: "bell", Role.DISCARDED: "discarded"}
_VAR_NAMES = {0: "oam", 1: "tam"}


class NoKeyRounds(ValueError):
    """Error estimation requested without any disclosed both-key rounds."""


class InsufficientBellRounds(ValueError):
    """Bell statistics requested from fewer than the minimum counted rounds."""


@dataclass(frozen=True)
class ProtocolConfig:
    """Session parameters; the seed fully determines the transcript."""

    l0: int
    eta: float
    trials: int
    seed: int = 42
    source_model: str = SOURCE_PAPER_IDEAL
    bell_fraction: float = 0.1
    disclose_fraction: float = 0.1
    epsilon_override: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.l0, int) or self.l0 < 1:
            raise ValueError(f"l0 must be an integer >= 1, got {self.l0!r}")
        if not 0 <= self.eta <= 1:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.source_model not in (SOURCE_PHYSICAL, SOURCE_PAPER_IDEAL):
            raise ValueError(f"unknown source model {self.source_model!r}")
        for name in ("bell_fraction", "disclose_fraction"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        if self.epsilon_override is not None and not 0 <= self.epsilon_override < 0.5:
            raise ValueError("epsilon_override must lie in [0, 1/2)")

    @property
    def epsilon(self) -> float:
        if self.epsilon_override is not None:
            return self.epsilon_override
        return float(variable_choice_bias(self.l0))


@dataclass(frozen=True)
class BellAngles:
    """Polarizer settings used on Bell-test rounds.

    The four CHSH pairs are (a, b), (a, b'), (a', b), (a', b'); visibility
    rounds fix one polarizer at ``theta_fixed`` and sweep the other over
    ``sweep_points`` angles uniform on [0, pi).
    """

    a: float = 0.0
    a_prime: float = math.pi / 4
    b: float = math.pi / 8
    b_prime: float = 3 * math.pi / 8
    theta_fixed: float = math.pi / 4
    sweep_points: int = 24

    def chsh_pairs(self) -> list[tuple[float, float]]:
        return [
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        ]

    def sweep_angle(self, index: int) -> float:
        return index * math.pi / self.sweep_points


@dataclass(frozen=True)
class TrialRecord:
    """One protocol round, as exposed to serialization and analysis."""

    trial_index: int
    alice_var: str
    bob_var: str
    eve_var: str | None
    alice_raw: int
    bob_raw: int
    eve_raw: int | None
    sifted: bool
    role: str
    alice_key: Symbol
    bob_key: Symbol
    disclosed: bool
    bell_setting: str | None = None
    bell_outcome: int | None = None


@dataclass
class SessionSummary:
    sifted: int
    key_rounds: int
    both_key: int
    nokey_rounds: int
    bell_rounds: int
    bell_counted: int
    disclosed: int
    disclosed_errors: int


@dataclass
class Transcript:
    """Column-wise record of a full session.

    Bell columns: ``bell_kind`` is -1 off Bell rounds, 0 for a CHSH round
    (setting = pair index 0..3, outcome = joint two-channel result 0..3 for
    ++, +-, -+, --), 1 for a visibility round (setting = sweep-angle index,
    outcome = 1 on coincidence). ``bell_counted`` marks rounds entering the
    Bell statistics: total-angular-momentum rounds with either value at the
    alphabet edge (|j| >= l0) are excluded because the sort there is
    complete and the pair is separable regardless of any eavesdropper.
    """

    config: ProtocolConfig
    alice_var: np.ndarray
    bob_var: np.ndarray
    eve_var: np.ndarray
    alice_raw: np.ndarray
    bob_raw: np.ndarray
    eve_raw: np.ndarray
    sifted: np.ndarray
    role: np.ndarray
    alice_key: np.ndarray
    alice_has_key: np.ndarray
    bob_key: np.ndarray
    bob_has_key: np.ndarray
    disclosed: np.ndarray
    bell_kind: np.ndarray
    bell_setting: np.ndarray
    bell_outcome: np.ndarray
    bell_counted: np.ndarray

    def __len__(self) -> int:
        return len(self.alice_var)

    def summary(self) -> SessionSummary:
        sifted = self.sifted
        key_rounds = sifted & (self.role == Role.KEY)
        both = key_rounds & self.alice_has_key & self.bob_has_key
        disclosed = both & self.disclosed
        errors = disclosed & (self.alice_key != self.bob_key)
        bell = sifted & (self.role == Role.BELL)
        return SessionSummary(
            sifted=int(sifted.sum()),
            key_rounds=int(key_rounds.sum()),
            both_key=int(both.sum()),
            nokey_rounds=int((key_rounds & ~(self.alice_has_key & self.bob_has_key)).sum()),
            bell_rounds=int(bell.sum()),
            bell_counted=int((bell & self.bell_counted).sum()),
            disclosed=int(disclosed.sum()),
            disclosed_errors=int(errors.sum()),
        )

    def joint_key_counts(self) -> dict[tuple[Symbol, Symbol], int]:
        """Empirical symbol-pair counts over sifted key-role rounds."""
        mask = self.sifted & (self.role == Role.KEY)
        counts: dict[tuple[Symbol, Symbol], int] = {}
        a_key = self.alice_key[mask]
        a_has = self.alice_has_key[mask]
        b_key = self.bob_key[mask]
        b_has = self.bob_has_key[mask]
        for i in range(len(a_key)):
            pair = (
                int(a_key[i]) if a_has[i] else None,
                int(b_key[i]) if b_has[i] else None,
            )
            counts[pair] = counts.get(pair, 0) + 1
        return counts

    def records(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            has_eve = self.eve_var[i] >= 0
            is_key = self.role[i] == Role.KEY and self.sifted[i]
            bell_setting = None
            bell_outcome = None
            if self.bell_kind[i] == 0:
                bell_setting = f"chsh:{int(self.bell_setting[i])}"
                bell_outcome = int(self.bell_outcome[i])
            elif self.bell_kind[i] == 1:
                bell_setting = f"sweep:{int(self.bell_setting[i])}"
                bell_outcome = int(self.bell_outcome[i])
            yield TrialRecord(
                trial_index=i,
                alice_var=_VAR_NAMES[int(self.alice_var[i])],
                bob_var=_VAR_NAMES[int(self.bob_var[i])],
                eve_var=_VAR_NAMES[int(self.eve_var[i])] if has_eve else None,
                alice_raw=int(self.alice_raw[i]),
                bob_raw=int(self.bob_raw[i]),
                eve_raw=int(self.eve_raw[i]) if has_eve else None,
                sifted=bool(self.sifted[i]),
                role=_ROLE_NAMES[Role(int(self.role[i]))],
                alice_key=int(self.alice_key[i]) if (is_key and self.alice_has_key[i]) else None,
                bob_key=int(self.bob_key[i]) if (is_key and self.bob_has_key[i]) else None,
                disclosed=bool(self.disclosed[i]),
                bell_setting=bell_setting,
                bell_outcome=bell_outcome,
            )

    def write_jsonl(self, stream: IO[str]) -> None:
        """JSON-lines export: a config header, then one object per trial."""
        cfg = self.config
        header = {
            "record": "config",
            "l0": cfg.l0,
            "eta": cfg.eta,
            "trials": cfg.trials,
            "seed": cfg.seed,
            "source_model": cfg.source_model,
            "bell_fraction": cfg.bell_fraction,
            "disclose_fraction": cfg.disclose_fraction,
            "epsilon": cfg.epsilon,
        }
        stream.write(json.dumps(header, separators=(",", ":")) + "\n")
        for rec in self.records():
            line = {
                "l0": cfg.l0,
                "eta": cfg.eta,
                "trial_index": rec.trial_index,
                "alice_var": rec.alice_var,
                "bob_var": rec.bob_var,
                "eve_var": rec.eve_var,
                "alice_raw": rec.alice_raw,
                "bob_raw": rec.bob_raw,
                "eve_raw": rec.eve_raw,
                "sifted": rec.sifted,
                "role": rec.role,
                "alice_key": rec.alice_key,
                "bob_key": rec.bob_key,
                "disclosed": rec.disclosed,
                "bell_setting": rec.bell_setting,
                "bell_outcome": rec.bell_outcome,
            }
            stream.write(json.dumps(line, separators=(",", ":")) + "\n")


def choose_variable(rng_draw: float, epsilon: float) -> Variable:
    """Biased beam-splitter choice: OAM below 1/2 - epsilon, TAM above."""
    if not 0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 1/2), got {epsilon!r}")
    return Variable.OAM if rng_draw < 0.5 - epsilon else Variable.TAM


_SOURCE_CACHE: dict[int, TwoPhotonState] = {}


def _source(l0: int) -> TwoPhotonState:
    state = _SOURCE_CACHE.get(l0)
    if state is None:
        state = _SOURCE_CACHE[l0] = make_source_state(l0)
    return state


def _resend_state(collapsed: TwoPhotonState, variable: Variable, value: int) -> TwoPhotonState:
    """Fresh photon to Bob in the canonical eigenstate of Eve's outcome.

    Only reachable when her measurement genuinely collapsed the pair, which
    always leaves a single product term; Alice's photon keeps its mode and
    Bob's is replaced by the equal superposition spanning the eigenvalue.
    """
    assert len(collapsed.amplitudes) == 1, "resend after a non-collapsing outcome"
    ((l_a, s_a, _, _), amp), = collapsed.amplitudes.items()
    if variable is Variable.TAM:
        modes_b = [(value - 1, +1), (value + 1, -1)]
    else:
        modes_b = [(value, +1), (value, -1)]
    scale = amp / math.sqrt(2)
    return TwoPhotonState(
        {(l_a, s_a, l_b, s_b): scale for l_b, s_b in modes_b}, collapsed.l0
    )


@dataclass
class _TrialOutcome:
    alice_var: int
    bob_var: int
    eve_var: int
    alice_raw: int
    bob_raw: int
    eve_raw: int
    sifted: bool
    role: int
    alice_key: int
    alice_has_key: bool
    bob_key: int
    bob_has_key: bool
    disclosed: bool
    bell_kind: int
    bell_setting: int
    bell_outcome: int
    bell_counted: bool


def _physical_trial(
    config: ProtocolConfig, u: list[float], angles: BellAngles
) -> _TrialOutcome:
    """One state-vector trial driven by a row of 12 uniform draws."""
    l0 = config.l0
    eps = config.epsilon
    state = _source(l0)

    alice_var = choose_variable(u[_COL_ALICE_VAR], eps)
    alice_raw, state, _ = project_measure(
        state, "A", alice_var.observable, u[_COL_ALICE_MEAS]
    )

    eve_var = -1
    eve_raw = 0
    if u[_COL_EVE_PRESENT] < config.eta:
        eve_choice = Variable.OAM if u[_COL_EVE_VAR] < 0.5 else Variable.TAM
        eve_var = int(eve_choice)
        eve_raw, collapsed, prob = project_measure(
            state, "B", eve_choice.observable, u[_COL_EVE_MEAS]
        )
        if prob < 1 - 1e-9:
            # Information was extracted: the pair collapsed and she must
            # forward a replacement photon in her outcome's eigenstate.
            state = _resend_state(collapsed, eve_choice, eve_raw)
        else:
            state = collapsed

    bob_var = choose_variable(u[_COL_BOB_VAR], eps)
    bob_raw, state, _ = project_measure(
        state, "B", bob_var.observable, u[_COL_BOB_MEAS]
    )

    state = erase_oam(state, "A") if alice_var is Variable.TAM else spin_flip(state, "A")
    state = erase_oam(state, "B") if bob_var is Variable.TAM else spin_flip(state, "B")

    sifted = alice_var == bob_var
    if not sifted:
        role = int(Role.DISCARDED)
    elif u[_COL_ROLE] < config.bell_fraction:
        role = int(Role.BELL)
    else:
        role = int(Role.KEY)

    alice_key = bob_key = 0
    alice_has = bob_has = False
    disclosed = False
    if role == Role.KEY:
        if abs(alice_raw) <= l0:
            alice_key, alice_has = alice_raw, True
        if abs(bob_raw) <= l0:
            bob_key, bob_has = -bob_raw, True
        disclosed = u[_COL_DISCLOSE] < config.disclose_fraction

    bell_kind = -1
    bell_setting = -1
    bell_outcome = -1
    bell_counted = False
    if role == Role.BELL:
        bell_counted = alice_var is Variable.OAM or (
            abs(alice_raw) < l0 and abs(bob_raw) < l0
        )
        if bell_counted:
            if u[_COL_BELL_MODE] < 0.5:
                bell_kind = 0  # CHSH round
                bell_setting = min(int(u[_COL_BELL_SETTING] * 4), 3)
                alpha, beta = angles.chsh_pairs()[bell_setting]
                perp = math.pi / 2
                probs = (
                    polarization_coincidence(state, alpha, beta),
                    polarization_coincidence(state, alpha, beta + perp),
                    polarization_coincidence(state, alpha + perp, beta),
                    polarization_coincidence(state, alpha + perp, beta + perp),
                )
                cumulative = 0.0
                bell_outcome = 3
                for idx, p in enumerate(probs):
                    cumulative += p
                    if u[_COL_BELL_OUTCOME] < cumulative:
                        bell_outcome = idx
                        break
            else:
                bell_kind = 1  # visibility sweep round
                bell_setting = min(
                    int(u[_COL_BELL_SETTING] * angles.sweep_points),
                    angles.sweep_points - 1,
                )
                p_hit = polarization_coincidence(
                    state, angles.theta_fixed, angles.sweep_angle(bell_setting)
                )
                bell_outcome = 1 if u[_COL_BELL_OUTCOME] < p_hit else 0

    return _TrialOutcome(
        alice_var=int(alice_var),
        bob_var=int(bob_var),
        eve_var=eve_var,
        alice_raw=alice_raw,
        bob_raw=bob_raw,
        eve_raw=eve_raw,
        sifted=sifted,
        role=role,
        alice_key=alice_key,
        alice_has_key=alice_has,
        bob_key=bob_key,
        bob_has_key=bob_has,
        disclosed=disclosed,
        bell_kind=bell_kind,
        bell_setting=bell_setting,
        bell_outcome=bell_outcome,
        bell_counted=bell_counted,
    )


def run_trial_physical(
    config: ProtocolConfig, rng: np.random.Generator, angles: BellAngles | None = None
) -> TrialRecord:
    """Run a single state-vector trial off a generator (one row of draws)."""
    if config.source_model != SOURCE_PHYSICAL:
        raise ValueError("run_trial_physical requires the physical source model")
    out = _physical_trial(config, rng.random(N_DRAWS).tolist(), angles or BellAngles())
    return _outcome_to_record(out, 0)


def run_trial_paper_ideal(
    config: ProtocolConfig, rng: np.random.Generator
) -> TrialRecord:
    """Run a single idealized branching-tree trial off a generator."""
    if config.source_model != SOURCE_PAPER_IDEAL:
        raise ValueError("run_trial_paper_ideal requires the paper-ideal source model")
    u = rng.random((1, N_DRAWS))
    transcript = _assemble_ideal(config, [u], 1)
    return next(transcript.records())


def _outcome_to_record(out: _TrialOutcome, index: int) -> TrialRecord:
    is_key = out.role == Role.KEY and out.sifted
    bell_setting = None
    bell_outcome = None
    if out.bell_kind == 0:
        bell_setting = f"chsh:{out.bell_setting}"
        bell_outcome = out.bell_outcome
    elif out.bell_kind == 1:
        bell_setting = f"sweep:{out.bell_setting}"
        bell_outcome = out.bell_outcome
    return TrialRecord(
        trial_index=index,
        alice_var=_VAR_NAMES[out.alice_var],
        bob_var=_VAR_NAMES[out.bob_var],
        eve_var=_VAR_NAMES[out.eve_var] if out.eve_var >= 0 else None,
        alice_raw=out.alice_raw,
        bob_raw=out.bob_raw,
        eve_raw=out.eve_raw if out.eve_var >= 0 else None,
        sifted=out.sifted,
        role=_ROLE_NAMES[Role(out.role)],
        alice_key=out.alice_key if (is_key and out.alice_has_key) else None,
        bob_key=out.bob_key if (is_key and out.bob_has_key) else None,
        disclosed=out.disclosed,
        bell_setting=bell_setting,
        bell_outcome=bell_outcome,
    )


def _draw_chunks(config: ProtocolConfig) -> Iterator[np.ndarray]:
    gen = np.random.Generator(np.random.Philox(key=config.seed))
    remaining = config.trials
    while remaining > 0:
        n = min(remaining, _CHUNK)
        yield gen.random((n, N_DRAWS))
        remaining -= n


def _run_physical(config: ProtocolConfig, angles: BellAngles) -> Transcript:
    outcomes: list[_TrialOutcome] = []
    for chunk in _draw_chunks(config):
        for row in chunk.tolist():
            outcomes.append(_physical_trial(config, row, angles))
    n = len(outcomes)

    def arr(name: str, dtype) -> np.ndarray:
        return np.fromiter((getattr(o, name) for o in outcomes), dtype=dtype, count=n)

    return Transcript(
        config=config,
        alice_var=arr("alice_var", np.int8),
        bob_var=arr("bob_var", np.int8),
        eve_var=arr("eve_var", np.int8),
        alice_raw=arr("alice_raw", np.int16),
        bob_raw=arr("bob_raw", np.int16),
        eve_raw=arr("eve_raw", np.int16),
        sifted=arr("sifted", bool),
        role=arr("role", np.int8),
        alice_key=arr("alice_key", np.int16),
        alice_has_key=arr("alice_has_key", bool),
        bob_key=arr("bob_key", np.int16),
        bob_has_key=arr("bob_has_key", bool),
        disclosed=arr("disclosed", bool),
        bell_kind=arr("bell_kind", np.int8),
        bell_setting=arr("bell_setting", np.int8),
        bell_outcome=arr("bell_outcome", np.int8),
        bell_counted=arr("bell_counted", bool),
    )


def _ideal_raw_values(l0: int, var: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sample of the measured value per variable.

    OAM is uniform on -l0..l0. TAM puts 1/(2l0+2) on each key-capable j and
    half that on the two no-key outcomes +-(l0+1).
    """
    oam_raw = np.minimum((u * (2 * l0 + 1)).astype(np.int64), 2 * l0) - l0
    weights = np.ones(2 * l0 + 3)
    weights[0] = weights[-1] = 0.5
    cdf = np.cumsum(weights) / (2 * l0 + 2)
    tam_raw = np.searchsorted(cdf, u, side="right")
    tam_raw = np.minimum(tam_raw, 2 * l0 + 2) - (l0 + 1)
    return np.where(var == Variable.OAM, oam_raw, tam_raw).astype(np.int16)


def _assemble_ideal(
    config: ProtocolConfig, chunks: Iterator[np.ndarray] | list[np.ndarray], n: int
) -> Transcript:
    l0 = config.l0
    eps = config.epsilon
    parts = []
    for u in chunks:
        var = (u[:, _COL_ALICE_VAR] >= 0.5 - eps).astype(np.int8)
        raw = _ideal_raw_values(l0, var, u[:, _COL_ALICE_MEAS])
        eve = u[:, _COL_EVE_PRESENT] < config.eta
        same = u[:, _COL_EVE_VAR] < 0.5
        shift_e = np.where(u[:, _COL_EVE_MEAS] < 0.5, -1, 1).astype(np.int16)
        shift_b = np.where(u[:, _COL_BOB_MEAS] < 0.5, -1, 1).astype(np.int16)
        cross = eve & ~same
        eve_var = np.where(eve, np.where(same, var, 1 - var), -1).astype(np.int8)
        eve_raw = np.where(cross, -raw + shift_e, -raw).astype(np.int16)
        eve_raw[~eve] = 0
        bob_raw = np.where(cross, -raw + shift_e + shift_b, -raw).astype(np.int16)
        role = np.where(
            u[:, _COL_ROLE] < config.bell_fraction, Role.BELL, Role.KEY
        ).astype(np.int8)
        is_key = role == Role.KEY
        alice_has = is_key & (np.abs(raw) <= l0)
        bob_has = is_key & (np.abs(bob_raw) <= l0)
        parts.append(
            dict(
                alice_var=var,
                bob_var=var.copy(),
                eve_var=eve_var,
                alice_raw=raw,
                bob_raw=bob_raw,
                eve_raw=eve_raw,
                sifted=np.ones(len(var), dtype=bool),
                role=role,
                alice_key=np.where(alice_has, raw, 0).astype(np.int16),
                alice_has_key=alice_has,
                bob_key=np.where(bob_has, -bob_raw, 0).astype(np.int16),
                bob_has_key=bob_has,
                disclosed=is_key & (u[:, _COL_DISCLOSE] < config.disclose_fraction),
                bell_kind=np.full(len(var), -1, dtype=np.int8),
                bell_setting=np.full(len(var), -1, dtype=np.int8),
                bell_outcome=np.full(len(var), -1, dtype=np.int8),
                bell_counted=np.zeros(len(var), dtype=bool),
            )
        )
    merged = {
        name: np.concatenate([p[name] for p in parts]) for name in parts[0]
    }
    return Transcript(config=config, **merged)


def run_session(config: ProtocolConfig, angles: BellAngles | None = None) -> Transcript:
    """Execute the configured number of trials; pure function of the config."""
    angles = angles or BellAngles()
    if config.source_model == SOURCE_PHYSICAL:
        return _run_physical(config, angles)
    return _assemble_ideal(config, _draw_chunks(config), config.trials)


def estimate_error(transcript: Transcript) -> tuple[float, int]:
    """Observed mismatch rate on the disclosed both-key subset.

    Disclosed rounds are sacrificed for this comparison and excluded from
    the final key. Returns (error_rate, disclosed_count).
    """
    mask = (
        transcript.sifted
        & (transcript.role == Role.KEY)
        & transcript.disclosed
        & transcript.alice_has_key
        & transcript.bob_has_key
    )
    n = int(mask.sum())
    if n == 0:
        raise NoKeyRounds("no disclosed rounds where both parties formed a key")
    errors = int((transcript.alice_key[mask] != transcript.bob_key[mask]).sum())
    return errors / n, n


@dataclass(frozen=True)
class BellResult:
    """Aggregated polarization statistics from Bell-test rounds."""

    s_value: float
    s_stderr: float
    visibility: float
    visibility_stderr: float
    correlations: tuple[float, float, float, float]
    chsh_rounds: int
    visibility_rounds: int
    counted_rounds: int


def bell_test(
    config: ProtocolConfig, angles: BellAngles | None = None
) -> BellResult:
    """Run a session and reduce its Bell rounds to S and visibility estimates.

    Requires the physical source model (the idealized sampler carries no
    polarization data) and at least 1000 counted Bell rounds.
    """
    if config.bell_fraction <= 0:
        raise ValueError("bell_test needs bell_fraction > 0")
    angles = angles or BellAngles()
    transcript = run_session(config, angles)
    return reduce_bell_rounds(transcript, angles)


def reduce_bell_rounds(transcript: Transcript, angles: BellAngles) -> BellResult:
    counted = transcript.sifted & (transcript.role == Role.BELL) & transcript.bell_counted
    total = int(counted.sum())
    if total < 1000:
        raise InsufficientBellRounds(
            f"only {total} counted Bell rounds; need at least 1000"
        )
    kind = transcript.bell_kind
    setting = transcript.bell_setting
    outcome = transcript.bell_outcome

    correlations = []
    variances = []
    chsh_rounds = 0
    chsh_mask = counted & (kind == 0)
    for pair in range(4):
        mask = chsh_mask & (setting == pair)
        n = int(mask.sum())
        chsh_rounds += n
        if n == 0:
            raise InsufficientBellRounds(f"no rounds at CHSH setting {pair}")
        signs = np.where(np.isin(outcome[mask], (0, 3)), 1.0, -1.0)
        e = float(signs.mean())
        correlations.append(e)
        variances.append((1 - e**2) / n)
    s_value = abs(
        correlations[0] - correlations[1] + correlations[2] + correlations[3]
    )
    s_stderr = math.sqrt(sum(variances))

    vis_mask = counted & (kind == 1)
    vis_rounds = int(vis_mask.sum())
    rates = []
    rate_vars = []
    for m in range(angles.sweep_points):
        mask = vis_mask & (setting == m)
        n = int(mask.sum())
        if n == 0:
            raise InsufficientBellRounds(f"no rounds at sweep angle {m}")
        p = float((outcome[mask] == 1).mean())
        rates.append(p)
        rate_vars.append(p * (1 - p) / n)
    hi_idx = int(np.argmax(rates))
    lo_idx = int(np.argmin(rates))
    hi, lo = rates[hi_idx], rates[lo_idx]
    visibility = (hi - lo) / (hi + lo) if hi + lo > 0 else 0.0
    denom = (hi + lo) ** 2
    if denom > 0:
        vis_var = (2 * lo / denom) ** 2 * rate_vars[hi_idx] + (
            2 * hi / denom
        ) ** 2 * rate_vars[lo_idx]
    else:
        vis_var = 0.0
    return BellResult(
        s_value=s_value,
        s_stderr=s_stderr,
        visibility=visibility,
        visibility_stderr=math.sqrt(vis_var),
        correlations=tuple(correlations),
        chsh_rounds=chsh_rounds,
        visibility_rounds=vis_rounds,
        counted_rounds=total,
    )


def visibility_bound(eta: float) -> float:
    """Detection threshold 1 - (1 - 1/sqrt(2)) eta on the visibility."""
    return 1 - (1 - 1 / math.sqrt(2)) * eta
