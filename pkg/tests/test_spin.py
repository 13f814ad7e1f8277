import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microtrap.errors import DomainError, SequenceError, TimingError
from microtrap.spin import (AtomEnsembleState, NoiseModel, PulseEvent, PulseSequence,
                            ThermalEnsemble, analytic_coherence, analytic_p0,
                            apply_rotation, detect, detect_shots, echo_signal, envelope,
                            mc_ensemble_signal, mc_propagate, pulse_angle, ramsey_signal,
                            rotation_matrix, stream, thermal_characteristic)

PI = math.pi
TAU = 11.3e-3
DR = 2 * PI * 1e3


def ramsey_ops(T, area=PI / 2):
    return [(0.0, area, 0.0), (T, area, 0.0)]


def echo_ops(T, T_pi):
    return [(0.0, PI / 2, 0.0), (T_pi, PI, 0.0), (T, PI / 2, 0.0)]


def ensemble60(n=100_000):
    # U/k_B = 60 uK, T = 6 uK, delta0 = 2 pi 280 Hz, so tau is about 11.4 ms
    from scipy.constants import k
    return ThermalEnsemble(n, 6e-6, 60e-6 * k, 2 * PI * 280, 0.5)


class TestPulseAngle:
    def test_full_transmission(self):
        assert pulse_angle(PulseEvent(0.0, PI, addressing={}), 1.0) == PI

    def test_floor_transmission(self):
        theta = pulse_angle(PulseEvent(0.0, PI), 1 / 270)
        assert theta / PI == pytest.approx(1 / 270)
        assert theta / PI == pytest.approx(3.7e-3, abs=0.05e-3)

    def test_epsilon_override(self):
        assert pulse_angle(PulseEvent(0.0, PI), 1 / 270, epsilon=4.2e-3) == \
            pytest.approx(4.2e-3 * PI)
        assert pulse_angle(PulseEvent(0.0, PI), 1.0, epsilon=4.2e-3) == PI

    def test_coupling_exponent(self):
        ev = PulseEvent(0.0, PI, coupling_exponent=2.0)
        assert pulse_angle(ev, 0.5) == pytest.approx(PI / 4)

    def test_event_invariants(self):
        with pytest.raises(DomainError):
            PulseEvent(0.0, -1.0)
        with pytest.raises(DomainError):
            PulseEvent(0.0, PI, addressing={(0, 0): 1.5})


class TestSequence:
    def test_events_sorted(self):
        seq = PulseSequence((PulseEvent(2e-3, PI / 2), PulseEvent(0.0, PI / 2)), 2e-3)
        assert [e.start_time for e in seq.events] == [0.0, 2e-3]

    def test_pulse_after_readout(self):
        with pytest.raises(SequenceError):
            PulseSequence((PulseEvent(3e-3, PI),), 2e-3)

    def test_mask_change_faster_than_rise_time(self):
        seq = PulseSequence((PulseEvent(0.0, PI / 2, addressing={"a": 1.0, "b": 1 / 270}),
                             PulseEvent(1e-3, PI / 2, addressing={"a": 1 / 270, "b": 1.0})),
                            1e-3)
        with pytest.raises(TimingError):
            seq.check_mask_timing(5e-3)
        seq.check_mask_timing(0.5e-3)

    def test_same_mask_is_allowed(self):
        mask = {"a": 1.0}
        PulseSequence((PulseEvent(0.0, PI / 2, addressing=mask),
                       PulseEvent(1e-3, PI / 2, addressing=mask)), 1e-3).check_mask_timing(5e-3)

    def test_site_resolution(self):
        seq = PulseSequence((PulseEvent(0.0, PI / 2),
                             PulseEvent(1e-3, PI, addressing={"a": 1.0, "b": 1 / 270})), 2e-3)
        assert seq.site_ops("b") == [(0.0, PI / 2, 0.0), (1e-3, pytest.approx(PI / 270), 0.0)]
        assert seq.site_ops("b", ideal=True)[1][1] == 0.0
        assert seq.site_ops("a", ideal=True)[1][1] == PI
        with pytest.raises(SequenceError):
            seq.site_ops("c")


class TestRotation:
    def test_pi_inverts(self):
        b = apply_rotation(np.array([0.0, 0.0, -1.0]), PI, 0.0)
        assert (1 + b[2]) / 2 == pytest.approx(1.0, abs=1e-15)

    def test_half_pi_splits(self):
        b = apply_rotation(np.array([0.0, 0.0, -1.0]), PI / 2, 0.3)
        assert (1 + b[2]) / 2 == pytest.approx(0.5, abs=1e-15)

    def test_two_half_pi_equal_pi(self):
        r = rotation_matrix(PI / 2, 0.7) @ rotation_matrix(PI / 2, 0.7)
        assert np.allclose(r, rotation_matrix(PI, 0.7), atol=1e-12)

    def test_bad_bloch_vector(self):
        with pytest.raises(DomainError):
            apply_rotation(np.zeros(2), PI, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(theta=st.floats(0, 4 * PI), phi=st.floats(-PI, PI), seed=st.integers(0, 2 ** 32))
    def test_unitarity_per_atom(self, theta, phi, seed):
        rng = np.random.default_rng(seed)
        amps = rng.normal(size=(50, 2)) + 1j * rng.normal(size=(50, 2))
        amps /= np.linalg.norm(amps, axis=1, keepdims=True)
        out = apply_rotation(AtomEnsembleState(np.zeros(50), amps), theta, phi)
        assert np.allclose(np.linalg.norm(out.amplitudes, axis=1), 1.0, atol=1e-12)
        p0 = np.abs(out.amplitudes[:, 0]) ** 2
        assert np.all((p0 >= -1e-12) & (p0 <= 1 + 1e-12))


class TestRamseySignal:
    def test_zero_delay(self):
        assert ramsey_signal(0.0, DR, TAU) == 1.0

    def test_antinode(self):
        assert ramsey_signal(0.5e-3, DR, 1e3) == pytest.approx(0.0, abs=1e-12)

    def test_envelope_values(self):
        assert envelope(0.0, TAU) == 1.0
        assert envelope(TAU, TAU) == pytest.approx(2 ** -1.5)
        assert np.all(envelope(np.array([1.0, 2.0]), math.inf) == 1.0)

    def test_characteristic_modulus_is_envelope(self):
        t = np.linspace(0, 3 * TAU, 31)
        assert np.allclose(np.abs(thermal_characteristic(t, TAU)), envelope(t, TAU), atol=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(T=st.floats(0, 20e-3), tau=st.floats(1e-4, 1.0))
    def test_opposite_phase_sums_to_one(self, T, tau):
        assert ramsey_signal(T, DR, tau) + ramsey_signal(T, DR, tau, PI) == \
            pytest.approx(1.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(DomainError):
            ramsey_signal(-1e-3, DR, TAU)
        with pytest.raises(DomainError):
            ramsey_signal(1e-3, DR, 0.0)


class TestEchoSignal:
    def test_full_rephasing(self):
        p = echo_signal(8e-3, 4e-3, TAU)
        assert 1 - 2 * p == pytest.approx(1.0, abs=1e-15)

    def test_non_addressed_is_ramsey(self):
        T = np.linspace(0, 12e-3, 25)
        assert np.array_equal(echo_signal(T, 4e-3, TAU, 50e-3, site_addressed=False, ramsey_detuning=DR),
                              ramsey_signal(T, DR, TAU, t2_irr=50e-3))

    def test_finite_t2_peak(self):
        p = echo_signal(8e-3, 4e-3, TAU, 50e-3)
        assert 1 - 2 * p == pytest.approx(math.exp(-8e-3 / 50e-3), rel=1e-12)

    @pytest.mark.parametrize("T", [4e-3, 3e-3])
    def test_pi_pulse_not_inside(self, T):
        with pytest.raises(SequenceError):
            echo_signal(T, 4e-3, TAU)

    @pytest.mark.parametrize("tau", [1e-3, 5e-3, TAU, 100e-3])
    def test_peak_at_twice_t_pi_without_decay(self, tau):
        T = np.round(np.arange(4.1e-3, 12.0001e-3, 0.1e-3), 12)
        contrast = 1 - 2 * echo_signal(T, 4e-3, tau)
        assert T[np.argmax(contrast)] == pytest.approx(8e-3, abs=1e-12)

    @pytest.mark.parametrize("t2", [20e-3, 50e-3, 200e-3])
    def test_peak_with_decay_sits_at_stationary_point(self, t2):
        # d/dT [ln C(|T - 2 T_pi|) - T / T2] = 0 on the early side of the echo
        T = np.linspace(4.001e-3, 12e-3, 200_001)
        contrast = 1 - 2 * echo_signal(T, 4e-3, TAU, t2)
        x = T[np.argmax(contrast)] - 8e-3
        assert -3 * x / (TAU ** 2 + x ** 2) == pytest.approx(1 / t2, rel=1e-3)
        assert x < 0


class TestAnalyticEngine:
    @settings(max_examples=200, deadline=None)
    @given(T=st.floats(0, 20e-3), dr=st.floats(-2e4, 2e4), tau=st.floats(1e-4, 1.0),
           t2=st.floats(1e-3, 1.0))
    def test_matches_ramsey_closed_form(self, T, dr, tau, t2):
        assert analytic_p0(ramsey_ops(T), T, dr, tau, t2) == \
            pytest.approx(ramsey_signal(T, dr, tau, t2_irr=t2), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(T_pi=st.floats(0.5e-3, 6e-3), extra=st.floats(1e-5, 8e-3), dr=st.floats(-2e4, 2e4),
           tau=st.floats(1e-4, 1.0), t2=st.floats(1e-3, 1.0))
    def test_matches_echo_closed_form(self, T_pi, extra, dr, tau, t2):
        T = T_pi + extra
        assert analytic_p0(echo_ops(T, T_pi), T, dr, tau, t2) == \
            pytest.approx(echo_signal(T, T_pi, tau, t2, ramsey_detuning=dr), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(T=st.floats(0, 20e-3), t2=st.floats(1e-3, 1.0))
    def test_complementary_sites(self, T, t2):
        a = analytic_p0(ramsey_ops(T), T, DR, TAU, t2)
        b = analytic_p0([(0.0, PI, 0.0)] + ramsey_ops(T), T, DR, TAU, t2)
        assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_crosstalk_bound(self):
        eps = 4.2e-3
        amp = math.sin(eps * PI / 2) ** 2
        assert amp <= 4.4e-5
        worst = max(analytic_p0(ramsey_ops(T, eps * PI / 2), T, DR, TAU, 50e-3)
                    for T in np.linspace(0, 8e-3, 81))
        assert worst <= amp + 1e-15
        assert worst < 0.01

    def test_contrast_from_coherence(self):
        T = 5e-3
        c = analytic_coherence(ramsey_ops(T), T, DR, TAU)
        assert 2 * abs(c) == pytest.approx(envelope(T, TAU), rel=1e-12)

    def test_populations_clipped(self):
        assert 0.0 <= analytic_p0(echo_ops(8e-3, 4e-3), 8e-3, 0.0, math.inf) <= 1.0


class TestMonteCarlo:
    def test_single_zero_energy_atom_is_pure_cosine(self):
        ens = ensemble60(1)
        for T in np.linspace(0, 8e-3, 17):
            state = mc_propagate(ramsey_ops(T), T, np.zeros(1), ens, DR)
            assert state.p0() == pytest.approx(0.5 * (1 + math.cos(DR * T)), abs=1e-12)

    def test_deterministic(self):
        seq = PulseSequence((PulseEvent(0.0, PI / 2), PulseEvent(3e-3, PI / 2)), 3e-3)
        a = mc_ensemble_signal(seq, ensemble60(2000), 7, ramsey_detuning=DR, t2_irr=50e-3)
        b = mc_ensemble_signal(seq, ensemble60(2000), 7, ramsey_detuning=DR, t2_irr=50e-3)
        c = mc_ensemble_signal(seq, ensemble60(2000), 8, ramsey_detuning=DR, t2_irr=50e-3)
        assert a == b and a != c

    def test_norm_preserved(self):
        ens = ensemble60(1000)
        e = ens.sample_energies(stream(1, 0))
        state = mc_propagate(echo_ops(8e-3, 4e-3), 8e-3, e, ens, DR, 50e-3, stream(1, 1))
        assert np.allclose(np.linalg.norm(state.amplitudes, axis=1), 1.0, atol=1e-12)

    def test_energy_law(self):
        ens = ensemble60(200_000)
        e = ens.sample_energies(stream(3, 0))
        kT = ens.temperature * 1.380649e-23
        assert e.mean() / kT == pytest.approx(3.0, rel=0.01)
        assert e.var() / kT ** 2 == pytest.approx(3.0, rel=0.03)

    @pytest.mark.parametrize("T", [1e-3, 4e-3, 10e-3, 20e-3])
    def test_agrees_with_exact_phase_analytic(self, T):
        ens = ensemble60()
        e = ens.sample_energies(stream(11, int(T * 1e6)))
        state = mc_propagate(ramsey_ops(T), T, e, ens, DR)
        per_atom = np.abs(state.amplitudes[:, 0]) ** 2
        se = per_atom.std(ddof=1) / math.sqrt(per_atom.size)
        ref = analytic_p0(ramsey_ops(T), T, DR, ens.tau, exact_phase=True)
        assert abs(state.p0() - ref) <= 3 * se

    def test_irreversible_decay_at_echo(self):
        ens = ThermalEnsemble(100_000, 0.0, 1e-28, 1.0)
        state = mc_propagate(echo_ops(8e-3, 4e-3), 8e-3, np.zeros(ens.n_atoms), ens, 0.0,
                             50e-3, stream(5, 1))
        contrast = 1 - 2 * state.p0()
        assert contrast == pytest.approx(math.exp(-8e-3 / 50e-3), abs=0.01)

    def test_finite_t2_needs_stream(self):
        with pytest.raises(DomainError):
            mc_propagate(ramsey_ops(1e-3), 1e-3, np.zeros(1), ensemble60(1), DR, 50e-3)


class TestDetection:
    def test_extremes_exact(self):
        noise = NoiseModel()
        assert detect(0.0, noise, stream(0, 2)) == 0.0
        assert detect(1.0, noise, stream(0, 2)) == 1.0

    def test_binomial_statistics(self):
        noise = NoiseModel(atoms_per_site=100, shots_per_point=5)
        rng = stream(42, 2)
        draws = np.array([detect(0.5, noise, rng) for _ in range(20_000)])
        assert draws.mean() == pytest.approx(0.5, abs=0.001)
        assert draws.std() == pytest.approx(math.sqrt(0.25 / 500), rel=0.03)
        assert draws.std() == pytest.approx(0.022, abs=0.001)

    def test_per_shot_streams(self):
        rngs = [stream(9, 2, 0, 0, s) for s in range(5)]
        shots = detect_shots(0.3, 50, 5, rngs)
        again = detect_shots(0.3, 50, 5, [stream(9, 2, 0, 0, s) for s in range(5)])
        assert shots.shape == (5,) and np.array_equal(shots, again)

    @pytest.mark.parametrize("p", [-0.1, 1.1])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            detect(p, NoiseModel(), stream(0))

    def test_atom_range(self):
        noise = NoiseModel()
        rng = stream(0, 3)
        n = [noise.draw_atoms(rng) for _ in range(2000)]
        assert min(n) >= 10 and max(n) <= 100

    @pytest.mark.parametrize("kwargs", [dict(atoms_per_site=0), dict(shots_per_point=0),
                                        dict(irreversible_T2=0.0), dict(crosstalk_epsilon=2.0)])
    def test_noise_invariants(self, kwargs):
        with pytest.raises(DomainError):
            NoiseModel(**kwargs)
