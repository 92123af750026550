"""Numerically stable log-domain primitives shared by the dynamic programs.

Log-scale scores are plain float64 values where ``-inf`` encodes
probability zero.  Conventions:

* ``-inf + finite == -inf`` (zero mass is absorbing),
* ``-inf`` compares below every finite value,
* ``(-inf) - (-inf)`` is a caller bug; the functions here are arranged so
  it never happens internally, and NaN inputs are rejected up front.
"""

import numpy as np

from .errors import ContractViolation, DegenerateDistribution


def log_sum_exp(values) -> float:
    """log(sum(exp(values))), computed with a max shift.

    ``values`` is a nonempty 1-D array of log-scale floats; ``-inf``
    entries are allowed and contribute nothing.  Returns ``-inf`` when
    every entry is ``-inf``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ContractViolation("log_sum_exp of an empty vector")
    if np.isnan(v).any():
        raise ContractViolation("log_sum_exp input contains NaN")
    m = v.max()
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.exp(v - m).sum()))


def log_sum_exp_along(a: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp reduction along one axis of an array.

    Slices that are entirely ``-inf`` reduce to ``-inf``.
    """
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    # Shift by 0 where the slice max is -inf so exp() sees -inf, not NaN.
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.squeeze(m, axis=axis) + np.log(
            np.sum(np.exp(a - m_safe), axis=axis)
        )
    return out


def softmax_from_log(values) -> np.ndarray:
    """Normalize a vector of log-scale scores into probabilities.

    Requires at least one finite entry; shift-invariant in the input.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ContractViolation("softmax_from_log of an empty vector")
    if np.isnan(v).any():
        raise ContractViolation("softmax_from_log input contains NaN")
    m = v.max()
    if m == -np.inf:
        raise DegenerateDistribution(
            "softmax_from_log: all entries are -inf, no mass to normalize"
        )
    w = np.exp(v - m)
    return w / w.sum()
