"""State-engine tests.

Expected values are computed by independent oracles inside the tests:
the source state is rebuilt from the linear-polarization definition, Born
weights are recomputed combinatorially, and densities are eigensolved with
numpy rather than trusting the operations under test.
"""

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperqkd.states import (
    AmbiguousErasure,
    SpinDensity,
    TwoPhotonState,
    born_distribution,
    chsh_value,
    correlation_E,
    erase_oam,
    linear_product_state,
    make_source_state,
    negativity,
    polarization_coincidence,
    project_measure,
    project_onto,
    spin_density,
    spin_flip,
    visibility,
)

SQRT2 = math.sqrt(2)


def expand_source_oracle(l0):
    """Rebuild the source state directly from the |H>, |V> definition.

    Independent path: tensor out (|H V> - |V H>) with |H> = (R+L)/sqrt(2),
    |V> = i(R-L)/sqrt(2), accumulate per joint label, and prune.
    """
    h = {+1: 1 / SQRT2, -1: 1 / SQRT2}
    v = {+1: 1j / SQRT2, -1: -1j / SQRT2}
    amps = {}
    norm = 1 / math.sqrt(2 * (2 * l0 + 1))
    for l in range(-l0, l0 + 1):
        for s_a in (+1, -1):
            for s_b in (+1, -1):
                coeff = h[s_a] * v[s_b] - v[s_a] * h[s_b]
                if abs(coeff) > 1e-15:
                    key = (l, s_a, -l, s_b)
                    amps[key] = amps.get(key, 0) + coeff * norm
    return {k: a for k, a in amps.items() if abs(a) > 1e-15}


class TestSourceState:
    def test_degenerate_l0_zero_is_polarization_singlet(self):
        state = make_source_state(0)
        assert len(state.amplitudes) == 2  # i(LR - RL)/sqrt(2): two circular terms
        assert state.norm() == pytest.approx(1.0, abs=1e-12)
        assert state.amplitudes[(0, +1, 0, -1)] == pytest.approx(-1j / SQRT2)
        assert state.amplitudes[(0, -1, 0, +1)] == pytest.approx(+1j / SQRT2)

    @pytest.mark.parametrize("l0", [1, 2, 3])
    def test_matches_linear_basis_expansion(self, l0):
        expected = expand_source_oracle(l0)
        state = make_source_state(l0)
        assert set(state.amplitudes) == set(expected)
        for key, amp in expected.items():
            assert state.amplitudes[key] == pytest.approx(amp, abs=1e-12)

    def test_l0_one_has_six_equal_weight_amplitudes(self):
        # (|HV> - |VH>) reduces to two circular terms per l, so 3 l-values
        # give 6 amplitudes of squared magnitude 1/6 each.
        state = make_source_state(1)
        assert len(state.amplitudes) == 6
        for amp in state.amplitudes.values():
            assert abs(amp) ** 2 == pytest.approx(1 / 6, abs=1e-12)

    @pytest.mark.parametrize("l0", [1, 2, 5])
    def test_oam_marginal_uniform(self, l0):
        dist = born_distribution(make_source_state(l0), "A", "oam")
        assert set(dist) == set(range(-l0, l0 + 1))
        for p in dist.values():
            assert p == pytest.approx(1 / (2 * l0 + 1), abs=1e-12)

    def test_rejects_negative_l0(self):
        with pytest.raises(ValueError):
            make_source_state(-1)


class TestBornDistribution:
    @pytest.mark.parametrize("l0", [1, 2, 3, 4])
    def test_tam_marginal_from_combination_count(self, l0):
        # Oracle: j = l + s has #{(l, s): l + s = j, |l| <= l0} combinations,
        # each carrying weight 1/(2(2l0+1)).
        state = make_source_state(l0)
        dist = born_distribution(state, "A", "tam")
        for j in range(-l0 - 1, l0 + 2):
            combos = sum(
                1 for s in (+1, -1) if abs(j - s) <= l0
            )
            assert dist.get(j, 0.0) == pytest.approx(
                combos / (2 * (2 * l0 + 1)), abs=1e-12
            )
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)

    def test_tam_l0_one_exact_values(self):
        dist = born_distribution(make_source_state(1), "A", "tam")
        assert dist == pytest.approx(
            {-2: 1 / 6, -1: 1 / 6, 0: 1 / 3, 1: 1 / 6, 2: 1 / 6}, abs=1e-12
        )

    def test_party_b_symmetric(self):
        state = make_source_state(1)
        assert born_distribution(state, "B", "oam") == pytest.approx(
            born_distribution(state, "A", "oam")
        )
        assert born_distribution(state, "B", "tam") == pytest.approx(
            born_distribution(state, "A", "tam")
        )


class TestProjectiveMeasurement:
    def test_tam_interior_outcome_keeps_two_terms(self):
        # Measuring j=0 on photon A must leave the coherent two-term state
        # |-1,+1>|+1,-1> - |+1,-1>|-1,+1| (up to phase), still entangled.
        state = make_source_state(1)
        collapsed, prob = project_onto(state, "A", "tam", 0)
        assert prob == pytest.approx(1 / 3, abs=1e-12)
        assert set(collapsed.amplitudes) == {(-1, +1, 1, -1), (1, -1, -1, +1)}
        a1 = collapsed.amplitudes[(-1, +1, 1, -1)]
        a2 = collapsed.amplitudes[(1, -1, -1, +1)]
        assert a1 / a2 == pytest.approx(-1.0, abs=1e-12)
        # Before erasure the spin coherence is tagged by orthogonal OAM
        # labels, so the traced spin density is separable; erasing the OAM
        # on both photons restores the full singlet entanglement.
        assert negativity(spin_density(collapsed)) == pytest.approx(0.0, abs=1e-12)
        erased = erase_oam(erase_oam(collapsed, "A"), "B")
        assert negativity(spin_density(erased)) == pytest.approx(0.5, abs=1e-12)

    def test_tam_edge_outcome_is_single_product_term(self):
        # Only (l, s) = (1, +1) reaches j = 2 when l0 = 1.
        state = make_source_state(1)
        collapsed, prob = project_onto(state, "A", "tam", 2)
        assert prob == pytest.approx(1 / 6, abs=1e-12)
        assert set(collapsed.amplitudes) == {(1, +1, -1, -1)}
        assert negativity(spin_density(collapsed)) == pytest.approx(0.0, abs=1e-12)

    def test_oam_anticorrelation_is_exact(self):
        state = make_source_state(1)
        _, after_a, _ = project_measure(state, "A", "oam", 0.9)  # picks l_A = 1
        dist_b = born_distribution(after_a, "B", "oam")
        assert dist_b == pytest.approx({-1: 1.0}, abs=1e-12)

    @pytest.mark.parametrize("l0", [1, 2, 3, 4, 5])
    @pytest.mark.parametrize("observable", ["oam", "tam"])
    def test_anticorrelation_all_outcomes(self, l0, observable):
        state = make_source_state(l0)
        for value in born_distribution(state, "A", observable):
            collapsed, _ = project_onto(state, "A", observable, value)
            dist_b = born_distribution(collapsed, "B", observable)
            assert dist_b == pytest.approx({-value: 1.0}, abs=1e-12)

    def test_inverse_cdf_ascending_order(self):
        state = make_source_state(1)
        # OAM outcomes -1, 0, 1 at 1/3 each: draw below 1/3 must give -1.
        value, _, _ = project_measure(state, "A", "oam", 0.0)
        assert value == -1
        value, _, _ = project_measure(state, "A", "oam", 0.34)
        assert value == 0
        value, _, _ = project_measure(state, "A", "oam", 0.999)
        assert value == 1

    def test_empirical_frequencies_match_born(self):
        rng = np.random.default_rng(7)
        state = make_source_state(2)
        n = 100_000
        draws = rng.random(n)
        counts: dict[int, int] = {}
        for u in draws:
            v, _, _ = project_measure(state, "A", "tam", u)
            counts[v] = counts.get(v, 0) + 1
        dist = born_distribution(state, "A", "tam")
        for j, p in dist.items():
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts.get(j, 0) / n - p) < 5 * se


class TestErasure:
    def test_collapse_then_erase_gives_spin_singlet(self):
        state = make_source_state(1)
        collapsed, _ = project_onto(state, "A", "tam", 0)
        erased = erase_oam(erase_oam(collapsed, "A"), "B")
        singlet = make_source_state(0)
        assert erased.fidelity(singlet) == pytest.approx(1.0, abs=1e-12)

    def test_identity_on_l_zero(self):
        state = TwoPhotonState({(0, +1, 0, -1): 1.0}, 0)
        erased = erase_oam(state, "A")
        assert erased.amplitudes == state.amplitudes

    def test_ambiguous_on_unsorted_source(self):
        # All three l values carry both spins on the source support.
        with pytest.raises(AmbiguousErasure):
            erase_oam(make_source_state(1), "A")

    def test_spin_flip_involution(self):
        state = make_source_state(1)
        assert spin_flip(spin_flip(state, "A"), "A").amplitudes == pytest.approx(
            state.amplitudes
        )

    def test_spin_flip_on_both_parties_preserves_singlet(self):
        state = make_source_state(0)
        flipped = spin_flip(spin_flip(state, "A"), "B")
        assert flipped.fidelity(state) == pytest.approx(1.0, abs=1e-12)

    def test_spin_flip_relabels_product(self):
        state = TwoPhotonState({(2, +1, -2, -1): 1.0}, 1)
        flipped = spin_flip(state, "A")
        assert set(flipped.amplitudes) == {(2, -1, -2, -1)}


class TestSpinDensity:
    def test_singlet_density_pure(self):
        rho = spin_density(make_source_state(0))
        assert rho.purity() == pytest.approx(1.0, abs=1e-12)
        expected = np.zeros((4, 4), dtype=complex)
        expected[1, 1] = expected[2, 2] = 0.5
        expected[1, 2] = expected[2, 1] = -0.5
        assert np.allclose(rho.rho, expected, atol=1e-12)

    def test_source_traces_to_singlet_density(self):
        # OAM factors out of the source, so the spin sector is already pure.
        rho = spin_density(make_source_state(3))
        singlet = spin_density(make_source_state(0))
        assert np.allclose(rho.rho, singlet.rho, atol=1e-12)

    def test_equal_mixture_of_collapse_products_is_diagonal(self):
        up = TwoPhotonState({(0, +1, 0, -1): 1.0}, 1)
        down = TwoPhotonState({(2, -1, -2, +1): 1.0}, 1)
        rho = spin_density([(0.5, up), (0.5, down)])
        assert np.allclose(rho.rho, np.diag([0, 0.5, 0.5, 0]), atol=1e-12)
        assert rho.purity() == pytest.approx(0.5, abs=1e-12)

    def test_oam_measurement_commutes_with_spin_sector(self):
        state = make_source_state(2)
        before = spin_density(state).rho
        _, collapsed, _ = project_measure(state, "A", "oam", 0.55)
        assert np.allclose(spin_density(collapsed).rho, before, atol=1e-12)


class TestNegativity:
    def test_singlet(self):
        assert negativity(spin_density(make_source_state(0))) == pytest.approx(
            0.5, abs=1e-12
        )

    def test_products_are_ppt(self):
        for gamma in np.linspace(0, math.pi, 7):
            rho = spin_density(linear_product_state(gamma, gamma + math.pi / 2))
            assert negativity(rho) == pytest.approx(0.0, abs=1e-10)

    def test_half_eavesdropped_mixture_regression(self):
        # (1/2) singlet + (1/2) equal mixture of the two collapse products.
        # Partial transpose has one negative eigenvalue, -(1 - eta)/2 = -1/4;
        # frozen from an independent eigensolve of the 4x4 matrix.
        singlet = spin_density(make_source_state(0))
        up = TwoPhotonState({(0, +1, 0, -1): 1.0}, 1)
        down = TwoPhotonState({(2, -1, -2, +1): 1.0}, 1)
        products = spin_density([(0.5, up), (0.5, down)])
        mixed = SpinDensity.mix([(0.5, singlet), (0.5, products)])
        pt = mixed.rho.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)
        oracle = float(-np.linalg.eigvalsh(pt)[0])
        assert oracle == pytest.approx(0.25, abs=1e-12)
        assert negativity(mixed) == pytest.approx(0.25, abs=1e-12)


class TestPolarizationInterference:
    def test_singlet_law_on_grid(self):
        singlet = make_source_state(0)
        for theta in np.linspace(0, math.pi, 10):
            for phi in np.linspace(0, math.pi, 10):
                expected = 0.5 * math.sin(theta - phi) ** 2
                assert polarization_coincidence(singlet, theta, phi) == pytest.approx(
                    expected, abs=1e-12
                )

    def test_singlet_anticorrelation_at_equal_angles(self):
        assert polarization_coincidence(make_source_state(0), 0.7, 0.7) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_separable_product_law(self):
        gamma, theta, phi = 0.9, 0.25, 1.3
        state = linear_product_state(gamma, gamma + math.pi / 2)
        expected = math.cos(gamma - theta) ** 2 * math.sin(gamma - phi) ** 2
        assert polarization_coincidence(state, theta, phi) == pytest.approx(
            expected, abs=1e-12
        )

    def test_oam_tagged_superposition_shows_no_interference(self):
        # |l1,H>|l2,V> + |l2,V>|l1,H> keeps the OAM branches orthogonal, so
        # the phi-dependence of the cross terms is killed: the coincidence
        # curve factorizes and visibility drops to the separable level.
        h = {+1: 1 / SQRT2, -1: 1 / SQRT2}
        v = {+1: 1j / SQRT2, -1: -1j / SQRT2}
        amps = {}
        for s_a in (+1, -1):
            for s_b in (+1, -1):
                amps[(1, s_a, -1, s_b)] = h[s_a] * v[s_b] / SQRT2
                amps[(-1, s_a, 1, s_b)] = v[s_a] * h[s_b] / SQRT2
        tagged = TwoPhotonState(amps, 1)
        # Against the erased counterpart (same spin content, l labels zeroed):
        for theta in (0.3, 1.1):
            for phi in (0.2, 0.9, 2.0):
                got = polarization_coincidence(tagged, theta, phi)
                expected = 0.5 * (
                    math.cos(theta) ** 2 * math.sin(phi) ** 2
                    + math.sin(theta) ** 2 * math.cos(phi) ** 2
                )
                assert got == pytest.approx(expected, abs=1e-12)


class TestCorrelationAndChsh:
    def test_singlet_correlation_closed_form(self):
        singlet = make_source_state(0)
        for a in np.linspace(0, math.pi, 7):
            for b in np.linspace(0, math.pi, 7):
                assert correlation_E(singlet, a, b) == pytest.approx(
                    -math.cos(2 * (a - b)), abs=1e-12
                )

    def test_perfect_anticorrelation_equal_angles(self):
        assert correlation_E(make_source_state(0), 0.4, 0.4) == pytest.approx(-1.0)

    def test_product_state_at_own_axis(self):
        gamma = 0.6
        state = linear_product_state(gamma, gamma + math.pi / 2)
        assert correlation_E(state, gamma, gamma) == pytest.approx(-1.0, abs=1e-12)

    def test_singlet_chsh_canonical_angles(self):
        s = chsh_value(make_source_state(0), 0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)
        assert s == pytest.approx(2 * SQRT2, abs=1e-9)

    def test_product_states_classical_bound(self):
        angles = (0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)
        for gamma in np.linspace(0, math.pi, 37):
            state = linear_product_state(gamma, gamma + math.pi / 2)
            assert chsh_value(state, *angles) <= 2 + 1e-9

    def test_mixture_linearity_bounds_chsh(self):
        singlet = make_source_state(0)
        product = linear_product_state(0.3, 0.3 + math.pi / 2)
        angles = (0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)
        # eta = 1: pure product ensemble.
        assert chsh_value([(0.0, singlet), (1.0, product)], *angles) <= 2 + 1e-9
        # Interpolation stays between the endpoints.
        mid = chsh_value([(0.5, singlet), (0.5, product)], *angles)
        assert mid <= chsh_value(singlet, *angles) + 1e-9


class TestVisibility:
    def test_singlet_full_visibility(self):
        assert visibility(make_source_state(0), math.pi / 4) == pytest.approx(1.0)

    def test_eavesdropped_mixture_bound(self):
        # Fraction eta of rounds collapse; half of those leave a flat
        # circular-product coincidence. Curve visibility is 1 - eta/2,
        # below the 1 - (1 - 1/sqrt(2)) eta detection bound.
        singlet = make_source_state(0)
        up = TwoPhotonState({(0, +1, 0, -1): 1.0}, 0)
        down = TwoPhotonState({(0, -1, 0, +1): 1.0}, 0)
        for eta in np.linspace(0, 1, 11):
            ensemble = [
                (1 - eta / 2, singlet),
                (eta / 4, up),
                (eta / 4, down),
            ]
            v = visibility(ensemble, math.pi / 4)
            assert v == pytest.approx(1 - eta / 2, abs=1e-9)
            assert v <= 1 - (1 - 1 / SQRT2) * eta + 1e-9

    def test_random_collapse_bases_stay_classical(self):
        # Products |gamma>|gamma+90> averaged uniformly over gamma: the
        # averaged curve is 1/4 - cos(2(theta-phi))/8, visibility 1/2.
        gammas = [k * math.pi / 64 for k in range(64)]
        ensemble = [
            (1 / 64, linear_product_state(g, g + math.pi / 2)) for g in gammas
        ]
        v = visibility(ensemble, math.pi / 4)
        assert v == pytest.approx(0.5, abs=1e-9)
        assert v <= 1 / SQRT2


@st.composite
def measured_states(draw):
    """A source state pushed through a random projective history."""
    l0 = draw(st.integers(min_value=1, max_value=3))
    state = make_source_state(l0)
    for _ in range(draw(st.integers(min_value=0, max_value=3))):
        party = draw(st.sampled_from(["A", "B"]))
        observable = draw(st.sampled_from(["oam", "tam"]))
        u = draw(st.floats(min_value=0, max_value=0.999999))
        _, state, _ = project_measure(state, party, observable, u)
    return state


class TestInvariantProperties:
    @given(measured_states())
    @settings(max_examples=60, deadline=None)
    def test_operations_preserve_norm(self, state):
        assert abs(state.norm() - 1.0) < 1e-12
        flipped = spin_flip(state, "A")
        assert abs(flipped.norm() - 1.0) < 1e-12

    @given(measured_states())
    @settings(max_examples=60, deadline=None)
    def test_chsh_never_exceeds_quantum_bound(self, state):
        s = chsh_value(state, 0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)
        assert s <= 2 * SQRT2 + 1e-9

    @given(
        st.integers(min_value=1, max_value=3),
        st.floats(min_value=0, max_value=0.999999),
        st.floats(min_value=0, max_value=0.999999),
        st.sampled_from(["oam", "tam"]),
    )
    @settings(max_examples=60, deadline=None)
    def test_cross_variable_collapse_disentangles(self, l0, u1, u2, observable):
        # Measuring one variable on A and the other on B pins both spins.
        other = "tam" if observable == "oam" else "oam"
        state = make_source_state(l0)
        _, state, _ = project_measure(state, "A", observable, u1)
        _, state, _ = project_measure(state, "B", other, u2)
        assert negativity(spin_density(state)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("l0", [1, 2, 3])
    @pytest.mark.parametrize("observable", ["oam", "tam"])
    def test_same_variable_plus_erasure_restores_singlet(self, l0, observable):
        # Entangling outcomes only: every OAM value qualifies, while TAM
        # collapses completely at |j| >= l0 (a single (l, s) combination
        # survives), so the singlet is recovered on interior j.
        state = make_source_state(l0)
        outcomes = born_distribution(state, "A", observable)
        for value in outcomes:
            if observable == "tam" and abs(value) >= l0:
                continue
            collapsed, _ = project_onto(state, "A", observable, value)
            collapsed, _ = project_onto(collapsed, "B", observable, -value)
            if observable == "tam":
                final = erase_oam(erase_oam(collapsed, "A"), "B")
            else:
                final = spin_flip(spin_flip(collapsed, "A"), "B")
            assert negativity(spin_density(final)) == pytest.approx(0.5, abs=1e-12)
