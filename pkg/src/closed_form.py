"""Number-state solution N(tau) = n - (1/2) m w^2 cn^2(w tau - K(m) | m).

(m, w) come from the two polynomial conditions that make the curve solve
the fourth-order mean equation. The unknowns are taken as (m, W = w^2);
a damped Newton iteration is seeded on the large-n branch
m ~ 1 - 2/n, W ~ n + 2 and falls back to a grid scan when it stalls.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.elliptic import cn_squared_derivatives, complete_elliptic_K, mean_cn_squared
from src.errors import ConvergenceError, DomainError, NumericalInvariantError, UnsupportedRegimeError
from src.fock_oracle import ConservedCharges
from src.trajectory import Trajectory, TrajectoryMethod, sanitize_variance, validate_tau_grid

N_MIN = 4


@dataclass(frozen=True)
class EllipticParams:
    m: float
    omega: float
    k_complete: float
    n: float
    residuals: tuple = (0.0, 0.0)
    iterations: int = 0
    solver: str = 'newton'

    @property
    def period(self):
        """Exact period 2K(m)/w of the number-state curve in tau"""
        return 2.0 * self.k_complete / self.omega

    @property
    def dip_depth(self):
        return 0.5 * self.m * self.omega ** 2

    def provenance(self):
        return {
            'm': self.m,
            'omega': self.omega,
            'k_complete': self.k_complete,
            'residuals': list(self.residuals),
            'iterations': self.iterations,
            'solver': self.solver,
            'branch': 'continuous with m ~ 1 - 2/n, omega^2 ~ n + 2',
        }


@dataclass(frozen=True)
class RevivalPrediction:
    n: float
    t_period: float
    t_period_exact: float
    t_revival: float
    plateau: float
    plateau_exact: float
    fractional: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            'n': self.n,
            't_period': self.t_period,
            't_period_exact': self.t_period_exact,
            't_revival': self.t_revival,
            'fractional': {str(r): t for r, t in sorted(self.fractional.items())},
            'plateau': self.plateau,
            'plateau_exact': self.plateau_exact,
        }


def _coefficients(n, charges):
    """Constant terms of both parameter equations; exact for integral n."""
    c = float(n)
    a, b, cc = charges.a_bar, charges.b_bar, charges.c_bar
    k1 = -120.0 * c ** 3 + 60.0 * a * c ** 2 + 8.0 * a * b + 6.0 * cc + 4.0 * c * (3.0 - 2.0 * a * a - 6.0 * b)
    k2 = 180.0 * c ** 2 - 60.0 * a * c - 6.0 + 4.0 * a * a + 12.0 * b
    return k1, k2, 6.0 * c - a


def parameter_residuals(m, w2, n, charges=None):
    """Both parameter equations at (m, w^2); raw, not normalized."""
    charges = charges or ConservedCharges.for_number_state(n)
    k1, k2, d = _coefficients(n, charges)
    q = m * (m - 1.0)
    p = 2.0 * m - 1.0
    r1 = q * w2 ** 2 * (5.0 * d - 2.0 * w2 * p) + k1
    r2 = w2 ** 2 * (4.0 + 19.0 * q) - 10.0 * w2 * p * d + k2
    return np.array([r1, r2])


def _parameter_jacobian(m, w2, d):
    q = m * (m - 1.0)
    p = 2.0 * m - 1.0
    g = 5.0 * d - 2.0 * w2 * p
    return np.array([
        [w2 ** 2 * (p * g - 4.0 * q * w2), 2.0 * q * w2 * (g - w2 * p)],
        [19.0 * p * w2 ** 2 - 20.0 * w2 * d, 2.0 * w2 * (4.0 + 19.0 * q) - 10.0 * p * d],
    ])


class ClosedFormSolver:
    def __init__(self, n_min=N_MIN, newton_max_iter=60, newton_restarts=4,
                 residual_tolerance=1e-9, scan_points=121, max_fractional_order=5):
        self.logger = logging.getLogger('ClosedFormSolver')
        self.n_min = n_min
        self.newton_max_iter = newton_max_iter
        self.newton_restarts = newton_restarts
        self.residual_tolerance = residual_tolerance
        self.scan_points = scan_points
        self.max_fractional_order = max_fractional_order
        self._cache = {}

    # parameter solve

    def _newton(self, n, charges, seed):
        """Damped Newton in (m, w^2) with backtracking on the residual norm."""
        _, _, d = _coefficients(n, charges)
        scale = (n + 2.0) ** 2
        m, w2 = seed
        residual = parameter_residuals(m, w2, n, charges)
        merit = float(np.linalg.norm(residual)) / scale

        for iteration in range(1, self.newton_max_iter + 1):
            try:
                step = np.linalg.solve(_parameter_jacobian(m, w2, d), -residual)
            except np.linalg.LinAlgError:
                return m, w2, residual, iteration, False

            lam = 1.0
            while lam > 1e-10:
                m_new, w2_new = m + lam * step[0], w2 + lam * step[1]
                if 0.0 < m_new < 1.0 and w2_new > 0.0:
                    trial = parameter_residuals(m_new, w2_new, n, charges)
                    trial_merit = float(np.linalg.norm(trial)) / scale
                    if trial_merit < (1.0 - 1e-4 * lam) * merit or trial_merit < 1e-14:
                        break
                lam *= 0.5
            else:
                return m, w2, residual, iteration, merit < self.residual_tolerance

            m, w2, residual, merit = m_new, w2_new, trial, trial_merit
            if merit < 1e-14 or (abs(lam * step[0]) < 1e-16 and abs(lam * step[1]) < 1e-16 * w2):
                return m, w2, residual, iteration, True

        return m, w2, residual, self.newton_max_iter, merit < self.residual_tolerance

    def _scan_seed(self, n, charges):
        """Best grid point of the residual norm on the asymptotic branch."""
        eps = np.logspace(math.log10(0.05 / n), math.log10(min(0.999, 20.0 / n)), self.scan_points)
        w2 = np.linspace(0.5 * (n + 2.0), 2.0 * (n + 2.0), self.scan_points)
        m_grid, w2_grid = np.meshgrid(1.0 - eps, w2, indexing='ij')
        residual = parameter_residuals(m_grid, w2_grid, n, charges)
        norm = np.hypot(residual[0], residual[1]) / w2_grid ** 2
        i, j = np.unravel_index(np.argmin(norm), norm.shape)
        return float(m_grid[i, j]), float(w2_grid[i, j])

    def solve_elliptic_params(self, n):
        if n < self.n_min:
            raise UnsupportedRegimeError(
                f"Closed form needs n >= {self.n_min}, got {n}; use the exact oracle for small n",
                module='closedform',
                details={'n': n}
            )
        key = float(n)
        if key in self._cache:
            return self._cache[key]

        n = float(n)
        charges = ConservedCharges.for_number_state(n)
        seeds = [
            (1.0 - 2.0 / n, n + 2.0),
            (1.0 - 2.0 / n + 4.0 / n ** 2, n + 2.0 - 0.5 / n),
        ]
        for k in range(1, self.newton_restarts - 1):
            shrink = 0.5 ** k
            seeds.append((1.0 - 2.0 * shrink / n, n + 2.0))

        best = None
        solver = 'newton'
        for seed in seeds:
            if not 0.0 < seed[0] < 1.0:
                continue
            result = self._newton(n, charges, seed)
            if best is None or np.linalg.norm(result[2]) < np.linalg.norm(best[2]):
                best = result
            if result[4]:
                break
        else:
            self.logger.warning(f"Newton stalled for n={n:g}; falling back to a grid scan")
            solver = 'scan+newton'
            result = self._newton(n, charges, self._scan_seed(n, charges))
            if best is None or np.linalg.norm(result[2]) < np.linalg.norm(best[2]):
                best = result

        m, w2, residual, iterations, _ = best
        normalized = tuple(float(abs(r)) / w2 ** 2 for r in residual)
        if max(normalized) >= self.residual_tolerance or not 0.0 < m < 1.0:
            raise ConvergenceError(
                f"Parameter solve for n={n:g} did not converge (residuals {normalized[0]:.2e}, {normalized[1]:.2e})",
                module='closedform',
                details={'n': n, 'm': m, 'omega_sq': w2, 'residuals': normalized}
            )

        params = EllipticParams(
            m=float(m),
            omega=math.sqrt(w2),
            k_complete=complete_elliptic_K(m),
            n=n,
            residuals=normalized,
            iterations=iterations,
            solver=solver
        )
        self.logger.debug(
            f"Solved n={n:g}: m={params.m:.15g}, omega={params.omega:.15g}, "
            f"residuals=({normalized[0]:.1e}, {normalized[1]:.1e}) after {iterations} iterations"
        )
        self._cache[key] = params
        return params

    # curves

    def _cn_squared(self, params, tau):
        z = params.omega * tau - params.k_complete
        return cn_squared_derivatives(z, params.m)

    def closed_form_mean(self, params, tau_grid):
        tau = validate_tau_grid(tau_grid, module='closedform')
        f, f1, _ = self._cn_squared(params, tau)
        mean = params.n - params.dip_depth * f
        mean_dot = -params.dip_depth * params.omega * f1
        return Trajectory(
            method=TrajectoryMethod.CLOSED_FORM,
            tau_grid=tau,
            mean_ne=mean,
            variance_ne=None,
            metadata=ConservedCharges.for_number_state(params.n),
            mean_dot=mean_dot,
            provenance={'method': TrajectoryMethod.CLOSED_FORM.value, **params.provenance()}
        )

    def closed_form_variance(self, params, charges, tau_grid):
        """Variance from the mean equation; raw values, tiny negatives kept."""
        tau = validate_tau_grid(tau_grid, module='closedform')
        f, _, f2 = self._cn_squared(params, tau)
        mean = params.n - params.dip_depth * f
        mean_ddot = -params.dip_depth * params.omega ** 2 * f2
        variance = (mean_ddot - 6.0 * mean * mean + 2.0 * charges.a_bar * mean - 2.0 * charges.b_bar) / 6.0

        floor = -0.05 * params.n ** 2
        if variance.size and float(np.min(variance)) < floor:
            raise NumericalInvariantError(
                f"Closed-form variance reached {float(np.min(variance)):.3e}; the parameter solve is suspect",
                module='closedform',
                details={'min_variance': float(np.min(variance)), 'm': params.m, 'omega': params.omega}
            )
        return variance

    def closed_form_trajectory(self, params, tau_grid, charges=None):
        """Mean and variance together, variance clipped at zero for output."""
        charges = charges or ConservedCharges.for_number_state(params.n)
        traj = self.closed_form_mean(params, tau_grid)
        variance = self.closed_form_variance(params, charges, traj.tau_grid)
        traj.variance_ne = sanitize_variance(variance, module='closedform', floor=-0.05 * params.n ** 2)
        traj.metadata = charges
        return traj

    # predictions

    def predict_times(self, n_or_nbar):
        nbar = float(n_or_nbar)
        if not nbar > 0 or math.log(8.0 * nbar) <= 2.0:
            raise DomainError(
                f"Revival formulas need ln(8 n) > 2 (n > {math.exp(2.0) / 8.0:.3f}), got n={nbar:g}",
                module='closedform'
            )
        params = self.solve_elliptic_params(nbar)

        log8n = math.log(8.0 * nbar)
        t_revival = 2.0 * math.sqrt(nbar) * log8n ** 2 / (log8n - 2.0)
        fractional = {r: t_revival / r for r in range(2, self.max_fractional_order + 1)}
        plateau_exact = nbar - params.dip_depth * mean_cn_squared(params.m)

        return RevivalPrediction(
            n=nbar,
            t_period=log8n / math.sqrt(nbar + 2.0),
            t_period_exact=params.period,
            t_revival=t_revival,
            plateau=nbar * (1.0 - 1.0 / log8n),
            plateau_exact=plateau_exact,
            fractional=fractional
        )


def solve_elliptic_params(n, **options):
    return ClosedFormSolver(**options).solve_elliptic_params(n)


def closed_form_mean(params, tau_grid):
    return ClosedFormSolver().closed_form_mean(params, tau_grid)


def closed_form_variance(params, charges, tau_grid):
    return ClosedFormSolver().closed_form_variance(params, charges, tau_grid)


def predict_times(n_or_nbar, **options):
    return ClosedFormSolver(**options).predict_times(n_or_nbar)
