"""Exact number-basis evolution under the resonant trilinear Hamiltonian.

S_A and S_E commute with the Hamiltonian, so a number state only couples
to the chain |n_e0 - k, n_g0 + k, n_a0 + k>. The chain matrix is real
symmetric tridiagonal with zero diagonal; it is diagonalized once and any
tau is then reached by phase rotation in the eigenbasis.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, eigh_tridiagonal

from src.errors import ConvergenceError, DomainError, NumericalInvariantError, UnsupportedRegimeError
from src.trajectory import Trajectory, TrajectoryMethod, sanitize_variance, validate_tau_grid

MAX_DIMENSION = 100000


def _check_occupation(name, value):
    if isinstance(value, bool) or int(value) != value or value < 0:
        raise DomainError(f"{name} must be a nonnegative integer, got {value!r}", module='fockoracle')
    return int(value)


@dataclass(frozen=True)
class SystemSpec:
    n_e0: int
    n_g0: int = 0
    n_a0: int = 0
    rabi_frequency: float = 1.0  # rad/s, only used to convert tau to seconds

    def __post_init__(self):
        for name in ('n_e0', 'n_g0', 'n_a0'):
            object.__setattr__(self, name, _check_occupation(name, getattr(self, name)))
        if self.n_e0 + self.n_g0 < 1:
            raise DomainError("At least one atom is required (n_e0 + n_g0 >= 1)", module='fockoracle')
        if not self.rabi_frequency > 0:
            raise DomainError(f"Rabi frequency must be positive, got {self.rabi_frequency}", module='fockoracle')

    @property
    def total_atoms(self):
        return self.n_e0 + self.n_g0

    @property
    def excitations(self):
        return self.n_e0 + self.n_a0

    def seconds(self, tau):
        return np.asarray(tau, dtype=float) / self.rabi_frequency


@dataclass(frozen=True)
class ConservedCharges:
    s_a: float
    s_e: float
    a_bar: float
    b_bar: float
    c_bar: float

    @classmethod
    def for_number_state(cls, n):
        """All n atoms excited, no photons: (n, n, 4n+1, n^2, 2n^2-n)."""
        n = float(n)
        return cls(s_a=n, s_e=n, a_bar=4.0 * n + 1.0, b_bar=n * n, c_bar=2.0 * n * n - n)

    def as_dict(self):
        return {'s_a': self.s_a, 's_e': self.s_e, 'a_bar': self.a_bar,
                'b_bar': self.b_bar, 'c_bar': self.c_bar}


@dataclass(frozen=True, eq=False)
class ChainState:
    k_min: int
    k_max: int
    amplitudes: np.ndarray
    couplings: np.ndarray

    @property
    def dimension(self):
        return self.k_max - self.k_min + 1

    @property
    def k_values(self):
        return np.arange(self.k_min, self.k_max + 1)

    @property
    def origin(self):
        """Index of k = 0 inside the chain arrays"""
        return -self.k_min

    def hamiltonian_matrix(self):
        """Dense H/(hbar Omega); only meant for small chains and checks."""
        matrix = np.zeros((self.dimension, self.dimension))
        idx = np.arange(self.dimension - 1)
        matrix[idx, idx + 1] = -self.couplings
        matrix[idx + 1, idx] = -self.couplings
        return matrix


def build_chain(spec, max_dimension=MAX_DIMENSION):
    """Chain basis, couplings h_k between k and k+1, amplitude 1 at k = 0."""
    k_min = -min(spec.n_g0, spec.n_a0)
    k_max = spec.n_e0
    dimension = k_max - k_min + 1
    if dimension > max_dimension:
        raise UnsupportedRegimeError(
            f"Chain dimension {dimension} exceeds the supported maximum {max_dimension}",
            module='fockoracle',
            details={'dimension': dimension}
        )

    k = np.arange(k_min, k_max, dtype=float)
    couplings = np.sqrt((spec.n_e0 - k) * (spec.n_g0 + k + 1.0) * (spec.n_a0 + k + 1.0))
    amplitudes = np.zeros(dimension, dtype=complex)
    amplitudes[-k_min] = 1.0
    return ChainState(k_min=k_min, k_max=k_max, amplitudes=amplitudes, couplings=couplings)


def conserved_charges(spec, chain=None):
    chain = chain if chain is not None else build_chain(spec)
    s_a = float(spec.total_atoms)
    s_e = float(spec.excitations)

    # <0|H^2|0> is the squared norm of the couplings touching k = 0
    origin = chain.origin
    energy_sq = 0.0
    if origin - 1 >= 0:
        energy_sq += chain.couplings[origin - 1] ** 2
    if origin < chain.couplings.size:
        energy_sq += chain.couplings[origin] ** 2

    return ConservedCharges(
        s_a=s_a,
        s_e=s_e,
        a_bar=2.0 * s_e + 2.0 * s_a + 1.0,
        b_bar=s_a * s_e,
        c_bar=2.0 * s_a * s_e - float(energy_sq)
    )


class FockOracle:
    def __init__(self, spec, max_dimension=MAX_DIMENSION, norm_tolerance=1e-12, chunk_size=512):
        self.logger = logging.getLogger('FockOracle')
        self.spec = spec
        self.chain = build_chain(spec, max_dimension)
        self.charges = conserved_charges(spec, self.chain)
        self.chunk_size = int(chunk_size)
        self.norm_tolerance = max(norm_tolerance, 16.0 * self.chain.dimension * np.finfo(float).eps)

        k = self.chain.k_values.astype(float)
        self.excited = spec.n_e0 - k
        self.ground = spec.n_g0 + k
        self.photons = spec.n_a0 + k
        self._decompose()

    def _decompose(self):
        dimension = self.chain.dimension
        if dimension == 1:
            self.eigenvalues = np.zeros(1)
            self.eigenvectors = np.ones((1, 1))
        else:
            try:
                self.eigenvalues, self.eigenvectors = eigh_tridiagonal(
                    np.zeros(dimension), -self.chain.couplings
                )
            except (LinAlgError, ValueError) as e:
                raise ConvergenceError(
                    f"Tridiagonal eigensolver failed for dimension {dimension}: {str(e)}",
                    module='fockoracle',
                    details={'dimension': dimension,
                             'max_coupling': float(np.max(self.chain.couplings))}
                )
        self.overlap = self.eigenvectors[self.chain.origin, :].copy()
        self.logger.debug(
            f"Diagonalized chain of dimension {dimension}, spectrum "
            f"[{self.eigenvalues[0]:.6g}, {self.eigenvalues[-1]:.6g}]"
        )

    def amplitudes(self, tau):
        """State vector(s) over the chain at tau (scalar or 1-d array)"""
        tau_arr = np.asarray(tau, dtype=float)
        phases = np.exp(-1j * np.multiply.outer(np.atleast_1d(tau_arr), self.eigenvalues))
        amps = (phases * self.overlap) @ self.eigenvectors.T
        return amps[0] if tau_arr.ndim == 0 else amps

    def _apply_hamiltonian(self, amps):
        h = self.chain.couplings
        result = np.zeros_like(amps)
        if h.size:
            result[:, :-1] -= h * amps[:, 1:]
            result[:, 1:] -= h * amps[:, :-1]
        return result

    def _chunks(self, tau):
        for start in range(0, tau.size, self.chunk_size):
            yield slice(start, start + self.chunk_size), tau[start:start + self.chunk_size]

    def observables(self, tau_grid):
        """Per-tau expectation values used for the conservation checks"""
        tau = validate_tau_grid(tau_grid, module='fockoracle')
        rows = {name: np.empty(tau.size) for name in
                ('norm', 'mean_ne', 'mean_ng', 'mean_na', 'variance_ne', 'energy', 'energy_sq')}

        for part, tau_part in self._chunks(tau):
            amps = self.amplitudes(tau_part)
            probs = np.abs(amps) ** 2
            norm = probs.sum(axis=1)
            mean_ne = probs @ self.excited
            centered = self.excited[None, :] - mean_ne[:, None]
            h_amps = self._apply_hamiltonian(amps)

            rows['norm'][part] = norm
            rows['mean_ne'][part] = mean_ne
            rows['mean_ng'][part] = probs @ self.ground
            rows['mean_na'][part] = probs @ self.photons
            rows['variance_ne'][part] = (probs * centered ** 2).sum(axis=1)
            rows['energy'][part] = np.real(np.sum(np.conj(amps) * h_amps, axis=1))
            rows['energy_sq'][part] = np.sum(np.abs(h_amps) ** 2, axis=1)

        frame = pd.DataFrame({'tau': tau, **rows})
        frame['s_a'] = frame['mean_ne'] + frame['mean_ng']
        frame['s_e'] = frame['mean_ne'] + frame['mean_na']
        return frame

    def evolve(self, tau_grid):
        frame = self.observables(tau_grid)

        norm_drift = float(np.max(np.abs(frame['norm'] - 1.0)))
        if norm_drift > self.norm_tolerance:
            raise NumericalInvariantError(
                f"Norm drifted by {norm_drift:.3e} (tolerance {self.norm_tolerance:.1e})",
                module='fockoracle',
                details={'norm_drift': norm_drift}
            )

        # N_e = S_E - N_a must reproduce the direct mean
        scale = max(1.0, self.charges.s_e)
        mismatch = float(np.max(np.abs(self.charges.s_e * frame['norm'] - frame['mean_na'] - frame['mean_ne'])))
        if mismatch > 1e-9 * scale:
            raise NumericalInvariantError(
                f"Excited-atom mean disagrees with S_E - N_a by {mismatch:.3e}",
                module='fockoracle',
                details={'mismatch': mismatch}
            )

        energy_scale = max(1.0, float(frame['energy_sq'].iloc[0]))
        variance = sanitize_variance(frame['variance_ne'].to_numpy(), module='fockoracle')
        provenance = {
            'method': TrajectoryMethod.EXACT.value,
            'dimension': self.chain.dimension,
            'eigensolver': 'scipy.linalg.eigh_tridiagonal',
            'max_norm_drift': norm_drift,
            'max_energy_drift': float(np.max(np.abs(frame['energy'] - frame['energy'].iloc[0]))) / energy_scale,
            'max_energy_sq_drift': float(np.max(np.abs(frame['energy_sq'] - frame['energy_sq'].iloc[0]))) / energy_scale,
        }
        self.logger.info(
            f"Exact evolution: n_e0={self.spec.n_e0}, dimension={self.chain.dimension}, "
            f"{len(frame)} samples, norm drift {norm_drift:.2e}"
        )
        return Trajectory(
            method=TrajectoryMethod.EXACT,
            tau_grid=frame['tau'].to_numpy(),
            mean_ne=frame['mean_ne'].to_numpy(),
            variance_ne=variance,
            metadata=self.charges,
            provenance=provenance
        )


def evolve_exact(spec, tau_grid, **options):
    return FockOracle(spec, **options).evolve(tau_grid)
