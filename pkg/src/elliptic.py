"""Complete elliptic integrals and Jacobian elliptic functions.

Everything here is driven by one arithmetic-geometric mean (AGM) sequence
per parameter m: K(m) and E(m) read off its limit, and cn/sn/dn come from
the descending Landen chain over the same sequence. Arguments z may be
numpy arrays; m is always a scalar in [0, 1].
"""
import math

import numpy as np

from src.errors import ConvergenceError, DomainError

AGM_MAX_STEPS = 64
HYPERBOLIC_THRESHOLD = 1e-12
_EPS = np.finfo(float).eps


def _check_parameter(m, allow_one=True):
    try:
        m = float(m)
    except (TypeError, ValueError):
        raise DomainError(f"Elliptic parameter must be a real scalar, got {m!r}", module='elliptic')
    if not math.isfinite(m) or m < 0.0 or m > 1.0:
        raise DomainError(f"Elliptic parameter m={m} outside [0, 1]", module='elliptic')
    if m == 1.0 and not allow_one:
        raise DomainError("K(m) diverges at m=1", module='elliptic')
    return m


def agm_sequence(m, max_steps=AGM_MAX_STEPS):
    """AGM of (1, sqrt(1-m)) keeping every a_n and c_n; c_0 = sqrt(m)."""
    m = _check_parameter(m, allow_one=False)
    a = [1.0]
    c = [math.sqrt(m)]
    b = math.sqrt(1.0 - m)

    for _ in range(max_steps):
        if abs(c[-1]) <= _EPS * a[-1]:
            return np.array(a), np.array(c)
        a_prev = a[-1]
        a.append(0.5 * (a_prev + b))
        c.append(0.5 * (a_prev - b))
        b = math.sqrt(a_prev * b)

    raise ConvergenceError(
        f"AGM did not converge for m={m} within {max_steps} steps",
        module='elliptic',
        details={'m': m, 'last_c': c[-1]}
    )


def complete_elliptic_K(m):
    """K(m) = pi / (2 AGM(1, sqrt(1-m))), for 0 <= m < 1."""
    a, _ = agm_sequence(m)
    return math.pi / (2.0 * a[-1])


def complete_elliptic_E(m):
    m = _check_parameter(m)
    if m == 1.0:
        return 1.0
    a, c = agm_sequence(m)
    weights = 2.0 ** (np.arange(len(c)) - 1.0)
    return math.pi / (2.0 * a[-1]) * (1.0 - float(np.sum(weights * c * c)))


def mean_cn_squared(m):
    """Average of cn^2(z|m) over one period 2K(m)."""
    m = _check_parameter(m)
    if m == 1.0:
        return 0.0
    if m < 1e-8:
        return 0.5 - m / 16.0
    return (complete_elliptic_E(m) / complete_elliptic_K(m) - (1.0 - m)) / m


def _as_output(value, scalar):
    return float(value) if scalar else value


def jacobi_cn_sn_dn(z, m):
    """Return (cn, sn, dn) of z for parameter m.

    Within HYPERBOLIC_THRESHOLD of m=1 the degenerate forms
    (sech z, tanh z, sech z) are used directly.
    """
    m = _check_parameter(m)
    z_arr = np.asarray(z, dtype=float)
    scalar = z_arr.ndim == 0

    if 1.0 - m < HYPERBOLIC_THRESHOLD:
        with np.errstate(over='ignore'):
            sech = 1.0 / np.cosh(z_arr)
        tanh = np.tanh(z_arr)
        return _as_output(sech, scalar), _as_output(tanh, scalar), _as_output(sech, scalar)

    a, c = agm_sequence(m)
    depth = len(a) - 1
    quarter = math.pi / (2.0 * a[-1])

    # cn and sn have period 4K
    reduced = z_arr - 4.0 * quarter * np.round(z_arr / (4.0 * quarter))
    phi = (2.0 ** depth) * a[-1] * reduced
    for n in range(depth, 0, -1):
        phi = 0.5 * (phi + np.arcsin(c[n] / a[n] * np.sin(phi)))

    sn = np.sin(phi)
    cn = np.cos(phi)
    # m' + m cn^2 avoids the cancellation in 1 - m sn^2 near the quarter period
    dn = np.sqrt((1.0 - m) + m * cn * cn)
    return _as_output(cn, scalar), _as_output(sn, scalar), _as_output(dn, scalar)


def cn_squared_derivatives(z, m):
    """cn^2 with its first two z-derivatives, using d cn/dz = -sn dn."""
    cn, sn, dn = jacobi_cn_sn_dn(z, m)
    m = float(m)
    f = cn * cn
    f1 = -2.0 * cn * sn * dn
    f2 = -2.0 * (cn * cn * dn * dn - sn * sn * dn * dn - m * sn * sn * cn * cn)
    return f, f1, f2
