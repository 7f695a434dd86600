"""Poisson (or custom) mixtures of number-state curves and their revivals.

The mixture mean is sum_l w_l <N_e(tau)>_l over a window of l around nbar.
Terms are evaluated concurrently; the reduction runs in ascending l with
compensated summation, so the result does not depend on scheduling.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import poisson

from src.closed_form import ClosedFormSolver
from src.compensated_sum import CompensatedAccumulator
from src.config_loader import thread_limit
from src.errors import (ConvergenceError, DomainError, TruncationError,
                        UnsupportedRegimeError)
from src.fock_oracle import FockOracle, SystemSpec
from src.trajectory import Trajectory, TrajectoryMethod, validate_tau_grid
from src.trajectory_metrics import TrajectoryMetrics

PER_L_METHODS = ('closed_form', 'exact')


@dataclass(frozen=True)
class EnsembleSpec:
    nbar: float
    weights: object = 'poisson'  # 'poisson' or a mapping l -> weight
    per_l_method: str = 'closed_form'
    truncation_sigmas: float = 8.0

    def __post_init__(self):
        if not self.nbar > 0:
            raise DomainError(f"Mean atom number must be positive, got {self.nbar}", module='ensemble')
        if self.per_l_method not in PER_L_METHODS:
            raise DomainError(f"Unknown per-l method {self.per_l_method!r}; expected one of {PER_L_METHODS}",
                              module='ensemble')
        if not self.truncation_sigmas > 0:
            raise DomainError("truncation_sigmas must be positive", module='ensemble')
        if self.weights != 'poisson':
            if not isinstance(self.weights, dict) or not self.weights:
                raise DomainError("weights must be 'poisson' or a non-empty mapping l -> weight",
                                  module='ensemble')
            for l, w in self.weights.items():
                if int(l) != l or l < 0 or not w >= 0:
                    raise DomainError(f"Invalid weight entry {l!r}: {w!r}", module='ensemble')

    @property
    def is_poisson(self):
        return isinstance(self.weights, str)


@dataclass
class TermCurve:
    l: int
    weight: float
    mean: np.ndarray
    second_moment: np.ndarray = None
    source: str = 'closed_form'
    note: str = field(default='')


class EnsembleAnalyzer:
    def __init__(self, tail_tolerance=1e-10, prominence_fraction=0.02, envelope_periods=1.5,
                 max_fractional_order=5, exact_nbar_limit=300, phase_tolerance=0.25,
                 max_workers=None, solver=None, oracle_options=None):
        self.logger = logging.getLogger('EnsembleAnalyzer')
        self.tail_tolerance = tail_tolerance
        self.prominence_fraction = prominence_fraction
        self.envelope_periods = envelope_periods
        self.max_fractional_order = max_fractional_order
        self.exact_nbar_limit = exact_nbar_limit
        self.phase_tolerance = phase_tolerance
        self.max_workers = max_workers
        self.solver = solver or ClosedFormSolver(max_fractional_order=max_fractional_order)
        self.oracle_options = oracle_options or {}
        self.metrics = TrajectoryMetrics()

    # weights

    def term_weights(self, spec):
        """Return (l values ascending, weights, excluded tail mass)."""
        if spec.is_poisson:
            spread = spec.truncation_sigmas * math.sqrt(spec.nbar)
            lo = max(0, int(math.floor(spec.nbar - spread)))
            hi = int(math.ceil(spec.nbar + spread))
            ls = np.arange(lo, hi + 1)
            weights = poisson.pmf(ls, spec.nbar)
            tail = float(poisson.sf(hi, spec.nbar))
            if lo > 0:
                tail += float(poisson.cdf(lo - 1, spec.nbar))
        else:
            ls = np.array(sorted(int(l) for l in spec.weights))
            weights = np.array([float(spec.weights[l]) for l in ls])
            tail = abs(1.0 - math.fsum(weights))

        if tail >= self.tail_tolerance:
            raise TruncationError(
                f"Weight outside the window is {tail:.3e} (limit {self.tail_tolerance:.0e}); "
                f"increase truncation_sigmas",
                module='ensemble',
                details={'tail_mass': tail, 'window': [int(ls[0]), int(ls[-1])]}
            )
        return ls, weights, tail

    # per-l curves

    def _exact_term(self, l, weight, tau, note=''):
        traj = FockOracle(SystemSpec(n_e0=l), **self.oracle_options).evolve(tau)
        return TermCurve(l=l, weight=weight, mean=traj.mean_ne,
                         second_moment=traj.variance_ne + traj.mean_ne ** 2,
                         source='exact', note=note)

    def _term(self, l, weight, tau, per_l_method):
        if l == 0:
            zeros = np.zeros_like(tau)
            return TermCurve(l=0, weight=weight, mean=zeros, second_moment=zeros, source='vacuum')
        if per_l_method == 'exact':
            return self._exact_term(l, weight, tau)
        if l < self.solver.n_min:
            return self._exact_term(l, weight, tau, note=f'l < n_min={self.solver.n_min}')
        try:
            params = self.solver.solve_elliptic_params(l)
        except ConvergenceError as e:
            self.logger.warning(f"Closed form failed for l={l}, using the exact oracle: {str(e)}")
            return self._exact_term(l, weight, tau, note='closed-form solve failed')
        curve = self.solver.closed_form_mean(params, tau)
        return TermCurve(l=l, weight=weight, mean=curve.mean_ne, source='closed_form')

    def _workers(self):
        return self.max_workers if self.max_workers is not None else thread_limit()

    def ensemble_mean(self, spec, tau_grid):
        tau = validate_tau_grid(tau_grid, module='ensemble')
        if spec.per_l_method == 'exact' and spec.nbar > self.exact_nbar_limit:
            raise UnsupportedRegimeError(
                f"Exact per-l curves are limited to nbar <= {self.exact_nbar_limit}, got {spec.nbar:g}",
                module='ensemble'
            )
        ls, weights, tail = self.term_weights(spec)
        workers = self._workers()
        self.logger.info(
            f"Ensemble nbar={spec.nbar:g}: l in [{ls[0]}, {ls[-1]}] ({ls.size} terms), "
            f"tail mass {tail:.2e}, {spec.per_l_method} terms on {workers} threads"
        )

        with ThreadPoolExecutor(max_workers=workers) as pool:
            terms = list(pool.map(lambda lw: self._term(int(lw[0]), float(lw[1]), tau, spec.per_l_method),
                                  zip(ls, weights)))

        mean_acc = CompensatedAccumulator(tau.shape)
        second_acc = CompensatedAccumulator(tau.shape) if spec.per_l_method == 'exact' else None
        for term in terms:
            mean_acc.add(term.weight * term.mean)
            if second_acc is not None:
                second_acc.add(term.weight * term.second_moment)

        mean = mean_acc.total()
        variance = None
        if second_acc is not None:
            variance = second_acc.total() - mean * mean
            variance = np.where(variance < 0.0, 0.0, variance)

        fallbacks = [{'l': t.l, 'reason': t.note} for t in terms if t.source == 'exact' and t.note]
        if fallbacks:
            self.logger.warning(f"{len(fallbacks)} terms used the exact oracle instead of the closed form")

        return Trajectory(
            method=TrajectoryMethod.ENSEMBLE,
            tau_grid=tau,
            mean_ne=mean,
            variance_ne=variance,
            provenance={
                'method': TrajectoryMethod.ENSEMBLE.value,
                'nbar': float(spec.nbar),
                'weights': 'poisson' if spec.is_poisson else 'custom',
                'per_l_method': spec.per_l_method,
                'window': [int(ls[0]), int(ls[-1])],
                'terms': int(ls.size),
                'tail_mass': tail,
                'truncation_sigmas': spec.truncation_sigmas,
                'threads': workers,
                'summation': 'ascending l, compensated',
                'fallbacks': fallbacks,
            }
        )

    # revivals

    def _nominal_period(self, nbar):
        nbar = max(float(nbar), 1.0)
        return max(math.log(8.0 * nbar), 1.0) / math.sqrt(nbar + 2.0)

    def detect_revivals(self, traj, baseline, threshold=None, window=None):
        """Local maxima of the rolling-max envelope of |N - baseline|.

        `window` is the envelope width in tau; by default a few oscillation
        periods of a number state with n = N(0). Returns (tau, prominence)
        pairs sorted by tau.
        """
        tau = traj.tau_grid
        if tau.size < 3:
            return []
        nbar = float(traj.mean_ne[0])
        if threshold is None:
            threshold = self.prominence_fraction * max(nbar, 1.0)
        if window is None:
            window = self.envelope_periods * self._nominal_period(nbar)

        step = float(np.median(np.diff(tau)))
        width = max(3, int(round(window / step)) | 1)
        envelope = self.metrics.envelope(traj, baseline, width).to_numpy()

        peaks, props = find_peaks(envelope, prominence=threshold)
        found = [(float(tau[i]), float(p)) for i, p in zip(peaks, props['prominences'])]
        self.logger.info(
            f"Detected {len(found)} revivals above prominence {threshold:.3g}: "
            + ', '.join(f"tau={t:.4g} ({p:.3g})" for t, p in found)
        )
        return found

    def revival_criterion_check(self, nbar):
        """Revival time from simultaneous maxima of the l = nbar and nbar + 1 curves.

        With exact periods P_l = 2K/w, the conditions read
        T = (r + 1/2) P_n = (r + 3/2) P_{n+1} for an integer r.
        """
        if nbar < 10 or int(nbar) != nbar:
            raise DomainError(f"Revival criterion needs an integer nbar >= 10, got {nbar}", module='ensemble')
        n = int(nbar)
        p_n = self.solver.solve_elliptic_params(n).period
        p_next = self.solver.solve_elliptic_params(n + 1).period
        ratio = p_next / p_n
        if ratio >= 1.0:
            raise ConvergenceError("Periods do not decrease with n; no revival index exists",
                                   module='ensemble', details={'p_n': p_n, 'p_next': p_next})

        r_star = (1.5 * ratio - 0.5) / (1.0 - ratio)
        candidates = []
        for r in {max(0, int(math.floor(r_star))), max(0, int(math.ceil(r_star)))}:
            t_n = (r + 0.5) * p_n
            t_next = (r + 1.5) * p_next
            candidates.append((abs(t_n - t_next) / p_n, r, 0.5 * (t_n + t_next)))
        mismatch, r, t_numeric = min(candidates)
        if mismatch > self.phase_tolerance:
            raise ConvergenceError(
                f"No integer r gives simultaneous maxima within {self.phase_tolerance} of a period",
                module='ensemble',
                details={'best_r': r, 'best_t': t_numeric, 'phase_mismatch': mismatch}
            )

        t_formula = self.solver.predict_times(n).t_revival
        self.logger.info(f"Revival criterion nbar={n}: r={r}, T_R={t_numeric:.6g} (formula {t_formula:.6g})")
        return t_numeric, t_formula


def ensemble_mean(spec, tau_grid, **options):
    return EnsembleAnalyzer(**options).ensemble_mean(spec, tau_grid)


def detect_revivals(traj, baseline, threshold=None, window=None, **options):
    return EnsembleAnalyzer(**options).detect_revivals(traj, baseline, threshold, window)


def revival_criterion_check(nbar, **options):
    return EnsembleAnalyzer(**options).revival_criterion_check(nbar)
