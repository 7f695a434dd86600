"""Moment-closure dynamics for the mean and variance of N_e.

Three right-hand sides share one integration path:
  - vanishing variance: the operator equation for N_e read as a scalar ODE
  - vanishing asymmetry: coupled (mean, variance) system with the second
    derivative of mean^2 expanded analytically
  - quartic: the decoupled fourth-order equation for the mean alone
"""
import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from src.errors import ConvergenceError, DomainError
from src.trajectory import Trajectory, TrajectoryMethod, sanitize_variance, validate_tau_grid

# Central 9-point stencils: 4th derivative (6th order), 2nd derivative (8th order)
D4_STENCIL = np.array([7 / 240, -2 / 5, 169 / 60, -122 / 15, 91 / 8, -122 / 15, 169 / 60, -2 / 5, 7 / 240])
D2_STENCIL = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])
STENCIL_POINTS = 9


@dataclass(frozen=True)
class MomentState:
    mean: float
    mean_dot: float
    var: float
    var_dot: float

    @classmethod
    def number_state(cls, n0):
        return cls(mean=float(n0), mean_dot=0.0, var=0.0, var_dot=0.0)

    def as_vector(self):
        return np.array([self.mean, self.mean_dot, self.var, self.var_dot], dtype=float)


def mean_acceleration(mean, var, charges):
    """Second derivative of the mean from the closed mean equation."""
    return 6.0 * (var + mean * mean) - 2.0 * charges.a_bar * mean + 2.0 * charges.b_bar


def variance_from_mean(mean, mean_ddot, charges):
    """Mean equation solved for the variance."""
    return (mean_ddot - 6.0 * mean * mean + 2.0 * charges.a_bar * mean - 2.0 * charges.b_bar) / 6.0


def quartic_rhs_value(mean, mean_ddot, charges):
    a, b, c = charges.a_bar, charges.b_bar, charges.c_bar
    return (-10.0 * a * mean_ddot + 60.0 * mean * mean_ddot - 240.0 * mean ** 3
            + 120.0 * a * mean ** 2 + mean * (24.0 - 48.0 * b - 16.0 * a * a)
            + 12.0 * c + 16.0 * a * b)


class MomentIntegrator:
    def __init__(self, rtol=1e-9, atol=1e-9, fourth_order_rtol=1e-12, fourth_order_atol=1e-12,
                 variance_abort_scale=1e-3, max_step=np.inf):
        self.logger = logging.getLogger('MomentIntegrator')
        self.rtol = rtol
        self.atol = atol
        # the four-dimensional systems follow an unstable orbit and drift off it at the scalar tolerances
        self.fourth_order_rtol = fourth_order_rtol
        self.fourth_order_atol = fourth_order_atol
        self.variance_abort_scale = variance_abort_scale
        self.max_step = max_step

    # right-hand sides

    @staticmethod
    def _vanishing_variance_rhs(charges):
        a, b = charges.a_bar, charges.b_bar

        def rhs(tau, y):
            return np.array([y[1], 6.0 * y[0] * y[0] - 2.0 * a * y[0] + 2.0 * b])
        return rhs

    @staticmethod
    def _vanishing_asymmetry_rhs(charges):
        a, b, c = charges.a_bar, charges.b_bar, charges.c_bar

        def rhs(tau, y):
            mean, mean_dot, var, var_dot = y
            mean_ddot = 6.0 * (var + mean * mean) - 2.0 * a * mean + 2.0 * b
            # d^2(mean^2)/dtau^2 = 2 mean_dot^2 + 2 mean mean_ddot
            var_ddot = (20.0 * mean ** 3 + 60.0 * var * mean - 8.0 * a * (var + mean * mean)
                        + 4.0 * (1.0 + 3.0 * b) * mean + 2.0 * c
                        - 2.0 * mean_dot * mean_dot - 2.0 * mean * mean_ddot)
            return np.array([mean_dot, mean_ddot, var_dot, var_ddot])
        return rhs

    @staticmethod
    def _quartic_rhs(charges):
        def rhs(tau, y):
            return np.array([y[1], y[2], y[3], quartic_rhs_value(y[0], y[2], charges)])
        return rhs

    def _tolerances(self, method):
        if method is TrajectoryMethod.VANISHING_VARIANCE:
            return self.rtol, self.atol
        return self.fourth_order_rtol, self.fourth_order_atol

    def _integrate(self, rhs, y0, tau, label):
        """Solve from tau=0 and place the solution on `tau` by cubic Hermite interpolation."""
        if tau[0] < 0.0:
            raise DomainError("Moment trajectories start at tau = 0; negative times are not supported",
                              module='moments')
        y0 = np.asarray(y0, dtype=float)
        tau_end = float(tau[-1])
        if tau_end == 0.0:
            return np.repeat(y0[:, None], tau.size, axis=1), 0

        rtol, atol = self._tolerances(TrajectoryMethod(label))
        sol = solve_ivp(rhs, (0.0, tau_end), y0, method='RK45', rtol=rtol, atol=atol, max_step=self.max_step)
        if not sol.success:
            last_tau = float(sol.t[-1]) if sol.t.size else 0.0
            raise ConvergenceError(
                f"{label} integration failed at tau={last_tau:.6g}: {sol.message}",
                module='moments',
                details={'last_tau': last_tau}
            )

        slopes = np.column_stack([rhs(t, y) for t, y in zip(sol.t, sol.y.T)])
        spline = CubicHermiteSpline(sol.t, sol.y, slopes, axis=1)
        self.logger.debug(f"{label}: {sol.t.size - 1} accepted steps up to tau={tau_end:.6g}")
        return spline(tau), sol.t.size - 1

    def _check_mean_range(self, mean, charges, label):
        slack = 1e-6 * max(1.0, charges.s_a)
        out_of_range = bool(np.min(mean) < -slack or np.max(mean) > charges.s_a + slack)
        if out_of_range:
            self.logger.warning(
                f"{label}: mean left [0, {charges.s_a:g}] "
                f"(range {np.min(mean):.6g} .. {np.max(mean):.6g})"
            )
        return out_of_range

    def _provenance(self, method, steps, out_of_range):
        rtol, atol = self._tolerances(method)
        return {
            'method': method.value,
            'integrator': 'RK45',
            'rtol': rtol,
            'atol': atol,
            'steps': int(steps),
            'interpolation': 'cubic_hermite',
            'mean_out_of_range': out_of_range,
        }

    # public operations

    def vanishing_variance_trajectory(self, charges, n0, tau_grid):
        tau = validate_tau_grid(tau_grid, module='moments')
        label = TrajectoryMethod.VANISHING_VARIANCE.value
        y, steps = self._integrate(self._vanishing_variance_rhs(charges), [n0, 0.0], tau, label)
        out_of_range = self._check_mean_range(y[0], charges, label)
        return Trajectory(
            method=TrajectoryMethod.VANISHING_VARIANCE,
            tau_grid=tau,
            mean_ne=y[0],
            variance_ne=np.zeros_like(tau),
            metadata=charges,
            mean_dot=y[1],
            provenance=self._provenance(TrajectoryMethod.VANISHING_VARIANCE, steps, out_of_range)
        )

    def vanishing_asymmetry_trajectory(self, charges, n0, tau_grid):
        tau = validate_tau_grid(tau_grid, module='moments')
        label = TrajectoryMethod.VANISHING_ASYMMETRY.value
        initial = MomentState.number_state(n0)
        y, steps = self._integrate(self._vanishing_asymmetry_rhs(charges), initial.as_vector(), tau, label)

        floor = -self.variance_abort_scale * max(1.0, float(n0)) ** 2
        variance = sanitize_variance(y[2], module='moments', floor=floor)
        out_of_range = self._check_mean_range(y[0], charges, label)
        self.logger.info(f"Vanishing-asymmetry solve: n0={n0:g}, {steps} steps, tau_max={tau[-1]:.6g}")
        return Trajectory(
            method=TrajectoryMethod.VANISHING_ASYMMETRY,
            tau_grid=tau,
            mean_ne=y[0],
            variance_ne=variance,
            metadata=charges,
            mean_dot=y[1],
            provenance=self._provenance(TrajectoryMethod.VANISHING_ASYMMETRY, steps, out_of_range)
        )

    def quartic_trajectory(self, charges, n0, tau_grid):
        tau = validate_tau_grid(tau_grid, module='moments')
        label = TrajectoryMethod.QUARTIC.value
        y0 = [n0, 0.0, mean_acceleration(n0, 0.0, charges), 0.0]
        y, steps = self._integrate(self._quartic_rhs(charges), y0, tau, label)

        floor = -self.variance_abort_scale * max(1.0, float(n0)) ** 2
        variance = sanitize_variance(variance_from_mean(y[0], y[2], charges), module='moments', floor=floor)
        out_of_range = self._check_mean_range(y[0], charges, label)
        return Trajectory(
            method=TrajectoryMethod.QUARTIC,
            tau_grid=tau,
            mean_ne=y[0],
            variance_ne=variance,
            metadata=charges,
            mean_dot=y[1],
            provenance=self._provenance(TrajectoryMethod.QUARTIC, steps, out_of_range)
        )


def quartic_residual(traj, charges):
    """Pointwise residual of the fourth-order mean equation by finite differences.

    The result is aligned with traj.tau_grid; the four points at each end,
    where the 9-point stencil does not fit, are NaN.
    """
    tau = traj.tau_grid
    if tau.size < STENCIL_POINTS:
        raise DomainError(f"Quartic residual needs at least {STENCIL_POINTS} samples, got {tau.size}",
                          module='moments')
    steps = np.diff(tau)
    h = float(steps.mean())
    if not np.allclose(steps, h, rtol=1e-6, atol=0.0):
        raise DomainError("Quartic residual needs a uniform time grid", module='moments')

    windows = sliding_window_view(traj.mean_ne, STENCIL_POINTS)
    d4 = windows @ D4_STENCIL / h ** 4
    d2 = windows @ D2_STENCIL / h ** 2
    mean = traj.mean_ne[4:-4]

    residual = np.full(tau.size, np.nan)
    residual[4:-4] = d4 - quartic_rhs_value(mean, d2, charges)
    return residual


def first_integral_residual(traj, charges):
    """Drift of the first integral of the scalar (vanishing-variance) equation."""
    if traj.mean_dot is None:
        raise DomainError("First-integral residual needs the integrator's mean derivative", module='moments')
    mean = traj.mean_ne
    energy = (traj.mean_dot ** 2 - 4.0 * mean ** 3 + 2.0 * charges.a_bar * mean ** 2
              - 4.0 * charges.b_bar * mean)
    return energy - energy[0]


def vanishing_variance_trajectory(charges, n0, tau_grid, **options):
    return MomentIntegrator(**options).vanishing_variance_trajectory(charges, n0, tau_grid)


def vanishing_asymmetry_trajectory(charges, n0, tau_grid, **options):
    return MomentIntegrator(**options).vanishing_asymmetry_trajectory(charges, n0, tau_grid)
