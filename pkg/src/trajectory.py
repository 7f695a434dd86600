from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from src.errors import DomainError, NumericalInvariantError

# Negative variances above this are rounding noise and get clipped
VARIANCE_CLIP = -1e-9


class TrajectoryMethod(str, Enum):
    EXACT = 'exact'
    VANISHING_VARIANCE = 'vanishing_variance'
    VANISHING_ASYMMETRY = 'vanishing_asymmetry'
    QUARTIC = 'quartic'
    CLOSED_FORM = 'closed_form'
    ENSEMBLE = 'ensemble'


def validate_tau_grid(tau_grid, module='core', min_points=1):
    """Return the grid as a float array, rejecting non-ascending input."""
    tau = np.asarray(tau_grid, dtype=float).ravel()
    if tau.size < min_points:
        raise DomainError(f"Time grid needs at least {min_points} points, got {tau.size}", module=module)
    if not np.all(np.isfinite(tau)):
        raise DomainError("Time grid contains non-finite values", module=module)
    if tau.size > 1 and np.any(np.diff(tau) <= 0.0):
        raise DomainError("Time grid must be strictly increasing", module=module)
    return tau


def sanitize_variance(variance, module='core', floor=VARIANCE_CLIP):
    """Clip tiny negative variances to zero; anything below `floor` is an error."""
    variance = np.asarray(variance, dtype=float)
    worst = float(np.min(variance)) if variance.size else 0.0
    if worst < floor:
        raise NumericalInvariantError(
            f"Variance reached {worst:.3e}, below the allowed floor {floor:.3e}",
            module=module,
            details={'min_variance': worst, 'index': int(np.argmin(variance))}
        )
    return np.where(variance < 0.0, 0.0, variance)


@dataclass
class Trajectory:
    """Sampled (tau, mean N_e, variance of N_e) curve tagged with its method.

    `variance_ne` holds Delta_e^2; `delta_e` converts to the standard
    deviation that the output tables carry.
    """
    method: TrajectoryMethod
    tau_grid: np.ndarray
    mean_ne: np.ndarray
    variance_ne: Optional[np.ndarray]
    metadata: object = None
    mean_dot: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.method = TrajectoryMethod(self.method)
        self.tau_grid = validate_tau_grid(self.tau_grid)
        self.mean_ne = np.asarray(self.mean_ne, dtype=float)
        if self.mean_ne.shape != self.tau_grid.shape:
            raise DomainError("mean_ne must match the time grid", module='core')
        if self.variance_ne is not None:
            self.variance_ne = np.asarray(self.variance_ne, dtype=float)
            if self.variance_ne.shape != self.tau_grid.shape:
                raise DomainError("variance_ne must match the time grid", module='core')

    @property
    def delta_e(self):
        if self.variance_ne is None:
            return None
        return np.sqrt(np.clip(self.variance_ne, 0.0, None))

    def __len__(self):
        return self.tau_grid.size

    def to_frame(self):
        frame = pd.DataFrame({'tau': self.tau_grid, 'mean_ne': self.mean_ne})
        if self.variance_ne is not None:
            frame['delta_e'] = self.delta_e
        return frame
