import numpy as np
import pandas as pd
from scipy import stats
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.signal import find_peaks

from src.errors import DomainError


class TrajectoryMetrics:
    def summarize(self, traj):
        mean = traj.mean_ne
        summary = {
            'mean': float(np.mean(mean)),
            'std': float(np.std(mean)),
            'skew': float(stats.skew(mean)) if np.ptp(mean) > 0 else 0.0,
            'min': float(np.min(mean)),
            'max': float(np.max(mean)),
        }
        if traj.variance_ne is not None:
            summary['max_delta_e'] = float(np.max(traj.delta_e))
        return summary

    def dip_minimum(self, traj, tau_max=None):
        """(tau, value) of the smallest mean, optionally only for tau <= tau_max"""
        mask = np.ones(traj.tau_grid.size, dtype=bool) if tau_max is None else traj.tau_grid <= tau_max
        if not mask.any():
            raise DomainError(f"No samples at or below tau={tau_max}", module='core')
        idx = int(np.argmin(np.where(mask, traj.mean_ne, np.inf)))
        return float(traj.tau_grid[idx]), float(traj.mean_ne[idx])

    def dip_times(self, traj, derivative=None):
        """Times of the interior local minima of the mean.

        Without `derivative` each grid minimum is refined by a parabola
        through its neighbours. With a callable derivative dN/dtau the zero
        between the neighbouring samples is found by Brent's method.
        """
        tau, mean = traj.tau_grid, traj.mean_ne
        idx, _ = find_peaks(-mean)
        times = []
        for i in idx:
            lo, hi = tau[i - 1], tau[i + 1]
            if derivative is not None and derivative(lo) * derivative(hi) <= 0.0:
                times.append(float(brentq(derivative, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)))
                continue
            y0, y1, y2 = mean[i - 1], mean[i], mean[i + 1]
            h = 0.5 * (hi - lo)
            denom = y0 - 2.0 * y1 + y2
            shift = 0.5 * h * (y0 - y2) / denom if denom != 0 else 0.0
            times.append(float(tau[i] + shift))
        return np.array(times)

    def dip_spacing(self, traj, derivative=None):
        times = self.dip_times(traj, derivative)
        if times.size < 2:
            raise DomainError("Need at least two dips to measure a spacing", module='core')
        return float(np.mean(np.diff(times)))

    def time_average(self, traj, tau0, tau1):
        mask = (traj.tau_grid >= tau0) & (traj.tau_grid <= tau1)
        if mask.sum() < 2:
            raise DomainError(f"Fewer than two samples in [{tau0}, {tau1}]", module='core')
        tau = traj.tau_grid[mask]
        return float(trapezoid(traj.mean_ne[mask], tau) / (tau[-1] - tau[0]))

    def envelope(self, traj, baseline, window):
        """Centered rolling maximum of |N - baseline| over `window` samples"""
        deviation = pd.Series(np.abs(traj.mean_ne - baseline), index=traj.tau_grid)
        return deviation.rolling(int(window), center=True, min_periods=1).max()

    def _check_same_grid(self, a, b):
        if a.tau_grid.shape != b.tau_grid.shape or not np.array_equal(a.tau_grid, b.tau_grid):
            raise DomainError("Trajectories must share the same time grid", module='core')

    def max_deviation(self, a, b):
        self._check_same_grid(a, b)
        return float(np.max(np.abs(a.mean_ne - b.mean_ne)))

    def validity_horizon(self, approx, exact, fraction=0.1):
        """First tau where |approx - exact| exceeds fraction * N(0); None if never"""
        self._check_same_grid(approx, exact)
        scale = fraction * max(float(exact.mean_ne[0]), 1.0)
        exceeded = np.nonzero(np.abs(approx.mean_ne - exact.mean_ne) > scale)[0]
        return float(exact.tau_grid[exceeded[0]]) if exceeded.size else None

    def compare(self, approx, exact, fraction=0.1):
        return {
            **self.summarize(approx),
            'max_deviation': self.max_deviation(approx, exact),
            'validity_horizon': self.validity_horizon(approx, exact, fraction),
        }
