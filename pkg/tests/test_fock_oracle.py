import math

import numpy as np
import pytest

from src.errors import DomainError, UnsupportedRegimeError
from src.fock_oracle import (ConservedCharges, FockOracle, SystemSpec, build_chain, conserved_charges,
                             evolve_exact)
from src.trajectory import TrajectoryMethod


def period_estimate(n):
    return math.log(8.0 * n) / math.sqrt(n + 2.0)


class TestSystemSpec:
    @pytest.mark.parametrize('kwargs', [
        {'n_e0': -1},
        {'n_e0': 2.5},
        {'n_e0': 0, 'n_g0': 0, 'n_a0': 3},
        {'n_e0': 3, 'rabi_frequency': 0.0},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(DomainError):
            SystemSpec(**kwargs)

    def test_seconds(self):
        spec = SystemSpec(n_e0=3, rabi_frequency=2.0)
        np.testing.assert_allclose(spec.seconds([0.0, 1.0]), [0.0, 0.5])


class TestChain:
    def test_single_atom(self):
        chain = build_chain(SystemSpec(n_e0=1))
        assert chain.dimension == 2
        np.testing.assert_allclose(chain.couplings, [1.0])
        np.testing.assert_array_equal(chain.amplitudes, [1.0, 0.0])

    def test_two_atoms(self):
        chain = build_chain(SystemSpec(n_e0=2))
        np.testing.assert_allclose(chain.couplings, [math.sqrt(2.0), 2.0])

    def test_inverse_process_extends_chain(self):
        chain = build_chain(SystemSpec(n_e0=2, n_g0=1, n_a0=1))
        assert (chain.k_min, chain.k_max) == (-1, 2)
        assert chain.origin == 1
        np.testing.assert_allclose(chain.couplings, [math.sqrt(3.0), math.sqrt(8.0), 3.0])

    def test_hamiltonian_is_symmetric_tridiagonal(self):
        matrix = build_chain(SystemSpec(n_e0=5, n_g0=2, n_a0=1)).hamiltonian_matrix()
        np.testing.assert_array_equal(matrix, matrix.T)
        np.testing.assert_array_equal(np.diag(matrix), 0.0)
        assert np.all(np.diag(matrix, 1) < 0.0)
        assert np.count_nonzero(np.triu(matrix, 2)) == 0

    def test_dimension_cap(self):
        with pytest.raises(UnsupportedRegimeError):
            build_chain(SystemSpec(n_e0=20), max_dimension=10)


class TestConservedCharges:
    def test_number_state_values(self):
        charges = conserved_charges(SystemSpec(n_e0=100))
        assert charges == ConservedCharges(s_a=100.0, s_e=100.0, a_bar=401.0, b_bar=10000.0, c_bar=19900.0)

    def test_single_atom(self):
        charges = conserved_charges(SystemSpec(n_e0=1))
        assert (charges.a_bar, charges.b_bar, charges.c_bar) == (5.0, 1.0, 1.0)

    def test_matches_for_number_state(self):
        computed = conserved_charges(SystemSpec(n_e0=37)).as_dict()
        expected = ConservedCharges.for_number_state(37).as_dict()
        assert computed == pytest.approx(expected, rel=1e-14)

    def test_mixed_configuration_against_dense_matrix(self):
        spec = SystemSpec(n_e0=0, n_g0=3, n_a0=2)
        chain = build_chain(spec)
        h = chain.hamiltonian_matrix()
        energy_sq = (h @ h)[chain.origin, chain.origin]
        charges = conserved_charges(spec, chain)
        assert (charges.s_a, charges.s_e) == (3.0, 2.0)
        assert energy_sq == pytest.approx(6.0)
        assert charges.c_bar == pytest.approx(2.0 * 3.0 * 2.0 - energy_sq)


class TestEvolution:
    def test_single_atom_is_cos_squared(self):
        tau = np.linspace(0.0, 10.0, 501)
        traj = evolve_exact(SystemSpec(n_e0=1), tau)
        assert traj.method is TrajectoryMethod.EXACT
        np.testing.assert_allclose(traj.mean_ne, np.cos(tau) ** 2, atol=1e-10)

    @pytest.mark.parametrize('spec', [SystemSpec(n_e0=7), SystemSpec(n_e0=7, n_g0=2, n_a0=3)])
    def test_initial_number_state(self, spec):
        traj = evolve_exact(spec, [0.0, 0.1])
        assert traj.mean_ne[0] == pytest.approx(7.0, abs=1e-12)
        assert traj.variance_ne[0] == pytest.approx(0.0, abs=1e-10)

    def test_no_excitation_stays_constant(self):
        traj = evolve_exact(SystemSpec(n_e0=0, n_g0=5), np.linspace(0.0, 3.0, 31))
        np.testing.assert_array_equal(traj.mean_ne, 0.0)

    @pytest.mark.parametrize('n', [1, 2, 10, 100])
    def test_conservation_over_three_periods(self, n):
        oracle = FockOracle(SystemSpec(n_e0=n))
        frame = oracle.observables(np.linspace(0.0, 3.0 * period_estimate(n), 600))
        assert np.max(np.abs(frame['norm'] - 1.0)) < 1e-12
        for column in ('s_a', 's_e'):
            assert np.max(np.abs(frame[column] - n)) < 1e-10 * n
        energy_sq = frame['energy_sq'].iloc[0]
        assert np.max(np.abs(frame['energy'] - frame['energy'].iloc[0])) < 1e-10 * energy_sq
        assert np.max(np.abs(frame['energy_sq'] - energy_sq)) < 1e-10 * energy_sq

    def test_energy_square_matches_charges(self):
        oracle = FockOracle(SystemSpec(n_e0=10))
        frame = oracle.observables([0.0, 0.5])
        assert 2.0 * 10 * 10 - frame['energy_sq'].iloc[1] == pytest.approx(oracle.charges.c_bar, rel=1e-10)

    def test_amplitudes_keep_unit_norm(self):
        oracle = FockOracle(SystemSpec(n_e0=30, n_g0=4, n_a0=2))
        amps = oracle.amplitudes(np.array([0.0, 0.7, 13.0]))
        np.testing.assert_allclose(np.sum(np.abs(amps) ** 2, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(oracle.amplitudes(0.0), oracle.chain.amplitudes, atol=1e-12)

    def test_initial_curvature(self):
        oracle = FockOracle(SystemSpec(n_e0=100))
        h = 1e-3
        mean = oracle.observables([0.0, h / 2, h])['mean_ne'].to_numpy()
        coarse = 2.0 * (mean[2] - mean[0]) / h ** 2
        fine = 2.0 * (mean[1] - mean[0]) / (h / 2) ** 2
        assert (4.0 * fine - coarse) / 3.0 == pytest.approx(-200.0, rel=1e-4)

    def test_dip_and_variance_peak_for_hundred_atoms(self):
        tau = np.linspace(0.0, period_estimate(100), 1001)
        traj = evolve_exact(SystemSpec(n_e0=100), tau)
        dip = int(np.argmin(traj.mean_ne))
        assert 0.0 < traj.mean_ne[dip] < 50.0
        assert abs(tau[int(np.argmax(traj.variance_ne))] - tau[dip]) < 0.1
        assert traj.provenance['dimension'] == 101
        assert traj.provenance['max_norm_drift'] < 1e-12

    def test_rejects_descending_grid(self):
        with pytest.raises(DomainError):
            evolve_exact(SystemSpec(n_e0=3), [0.0, 0.2, 0.1])
