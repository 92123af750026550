"""Exact inference and losses for first-order chain models.

Array conventions
-----------------
Positions are indexed ``0 .. T-1`` and labels ``0 .. K-1``.  A label
sequence ``y`` is scored as::

    score(y) = sum_t emission[t, y[t]] + sum_i transition_at(i)[y[i], y[i+1]]

where ``i`` runs over the ``T-1`` adjacent pairs.  There are no start or
end potentials: the first position contributes its emission only.  This
pins down the forward recursion's initialization (a virtual predecessor
with unit mass and zero transition score into position 0).

``transition`` is either a single ``(K, K)`` matrix shared by every
adjacent pair, or a ``(T-1, K, K)`` tensor with one slice per pair,
indexed ``[pair, from_label, to_label]``.

Distributional targets are row-stochastic ``(T, K)`` matrices; the joint
target over sequences is the product of the per-position rows.  The
soft-label loss is the inclusive KL divergence from that joint target to
the chain model, computed by a single forward-style pass: the partition
function accumulates in log space while the target-weighted
score-plus-entropy term accumulates in linear space.  Target entries
equal to zero contribute exactly zero to every weighted sum (the
``0 * log 0 == 0`` convention), so ``-inf`` log-targets never reach a
finite result.

All dynamic programs run in float64 and cost ``O(T * K**2)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .logspace import log_sum_exp, log_sum_exp_along

_ROW_SUM_TOL = 1e-9


def _as_float_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolation(f"{name} must be a (T, K) matrix, got shape {a.shape}")
    return a


@dataclass
class ScoreSet:
    """Emission matrix plus shared or per-pair transition scores.

    ``transition=None`` means a shared all-zero (K, K) matrix, i.e. a
    chain with no pairwise preferences.
    """

    emission: np.ndarray
    transition: np.ndarray | None = None

    def __post_init__(self):
        self.emission = _as_float_matrix(self.emission, "emission")
        T, K = self.emission.shape
        if self.transition is None:
            self.transition = np.zeros((K, K))
        self.transition = np.asarray(self.transition, dtype=np.float64)
        tr = self.transition
        if tr.ndim == 2:
            if tr.shape != (K, K):
                raise ContractViolation(
                    f"shared transition must be ({K}, {K}), got {tr.shape}"
                )
        elif tr.ndim == 3:
            if tr.shape != (T - 1, K, K):
                raise ContractViolation(
                    f"per-pair transition must be ({T - 1}, {K}, {K}), got {tr.shape}"
                )
        else:
            raise ContractViolation("transition must be 2-D or 3-D")
        if not np.isfinite(self.emission).all() or not np.isfinite(tr).all():
            raise ContractViolation("scores must be finite")

    @property
    def T(self) -> int:
        return self.emission.shape[0]

    @property
    def K(self) -> int:
        return self.emission.shape[1]

    @property
    def shared_transition(self) -> bool:
        return self.transition.ndim == 2

    def transition_at(self, i: int) -> np.ndarray:
        """Transition matrix applied between positions ``i`` and ``i+1``."""
        return self.transition if self.shared_transition else self.transition[i]


@dataclass
class SoftTargets:
    """Row-stochastic (T, K) matrix of per-position target distributions."""

    q: np.ndarray

    def __post_init__(self):
        self.q = _as_float_matrix(self.q, "targets")
        if not np.isfinite(self.q).all() or (self.q < 0).any():
            raise ContractViolation("target rows must be finite and nonnegative")
        row_sums = self.q.sum(axis=1)
        if not np.all(np.abs(row_sums - 1.0) <= _ROW_SUM_TOL):
            raise ContractViolation(
                f"target rows must sum to 1 within {_ROW_SUM_TOL}; sums={row_sums}"
            )

    @property
    def T(self) -> int:
        return self.q.shape[0]

    @property
    def K(self) -> int:
        return self.q.shape[1]


def one_hot(labels, K: int) -> SoftTargets:
    """Point-mass targets for a hard label sequence."""
    labels = _check_labels(labels, K)
    q = np.zeros((labels.size, K))
    q[np.arange(labels.size), labels] = 1.0
    return SoftTargets(q)


@dataclass
class Marginals:
    """Smoothing distributions of a chain model, in linear probability space.

    ``unary[t, k] = p(y_t = k)`` and
    ``pairwise[i, j, k] = p(y_i = j, y_{i+1} = k)``.
    """

    log_Z: float
    unary: np.ndarray
    pairwise: np.ndarray


@dataclass
class ScoreGradients:
    """Loss gradients w.r.t. a ScoreSet; shapes mirror the input.

    When the ScoreSet shares one transition matrix, ``d_transition`` is
    the (K, K) sum over pair slices.
    """

    d_emission: np.ndarray
    d_transition: np.ndarray


def _check_labels(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size < 1:
        raise ContractViolation("labels must be a nonempty 1-D sequence")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractViolation("labels must be integers")
    if (labels < 0).any() or (labels >= K).any():
        raise ContractViolation(f"labels must lie in [0, {K - 1}]")
    return labels.astype(np.intp)


def _check_pair(scores: ScoreSet, targets: SoftTargets):
    if (targets.T, targets.K) != (scores.T, scores.K):
        raise ContractViolation(
            f"targets shape {(targets.T, targets.K)} does not match "
            f"scores shape {(scores.T, scores.K)}"
        )


def log_forward_table(scores: ScoreSet) -> np.ndarray:
    """(T, K) table of log forward variables (prefix sums of path weight)."""
    T, K = scores.T, scores.K
    table = np.empty((T, K))
    table[0] = scores.emission[0]
    for i in range(T - 1):
        table[i + 1] = (
            log_sum_exp_along(table[i][:, None] + scores.transition_at(i), axis=0)
            + scores.emission[i + 1]
        )
    return table


def log_backward_table(scores: ScoreSet) -> np.ndarray:
    """(T, K) table of log backward variables (suffix sums of path weight)."""
    T, K = scores.T, scores.K
    table = np.empty((T, K))
    table[T - 1] = 0.0
    for i in range(T - 2, -1, -1):
        table[i] = log_sum_exp_along(
            scores.transition_at(i)
            + (scores.emission[i + 1] + table[i + 1])[None, :],
            axis=1,
        )
    return table


def log_partition_from(scores: ScoreSet, t: int, log_alpha_t) -> float:
    """Resume the forward recursion at position ``t`` from a given log row.

    Continuing from arbitrary forward values lets callers probe the
    sensitivity of the partition function to each forward variable,
    which the backward table must reproduce exactly.
    """
    row = np.asarray(log_alpha_t, dtype=np.float64)
    if row.shape != (scores.K,):
        raise ContractViolation("log_alpha_t must have shape (K,)")
    for i in range(t, scores.T - 1):
        row = (
            log_sum_exp_along(row[:, None] + scores.transition_at(i), axis=0)
            + scores.emission[i + 1]
        )
    return log_sum_exp(row)


def forward_log_partition(scores: ScoreSet) -> float:
    """Log of the sum of exponentiated scores over all K**T sequences."""
    return log_sum_exp(log_forward_table(scores)[-1])


def _masked_log(q: np.ndarray) -> np.ndarray:
    # log(q) where q > 0, and 0 elsewhere.  Safe because every use of a
    # masked entry is weighted by the corresponding q, which is zero.
    return np.log(np.where(q > 0.0, q, 1.0))


def soft_label_loss(scores: ScoreSet, targets: SoftTargets) -> float:
    """Inclusive KL divergence from the factored targets to the chain model.

    One forward-style pass: alongside the log-space partition recursion,
    a linear-space accumulator carries the target-weighted score plus
    target entropy.  Sequences outside the target support contribute
    nothing.  Always >= 0 up to rounding.
    """
    _check_pair(scores, targets)
    q = targets.q
    log_q = _masked_log(q)
    g = scores.emission[0] - log_q[0]
    for i in range(scores.T - 1):
        q_prev = q[i]
        g = (
            float(g @ q_prev)
            + q_prev @ scores.transition_at(i)
            + scores.emission[i + 1]
            - log_q[i + 1]
        )
    weighted = float(g @ q[-1])
    return -weighted + forward_log_partition(scores)


def hard_label_loss(scores: ScoreSet, gold) -> float:
    """Negative log-likelihood of one gold label sequence."""
    gold = _check_labels(gold, scores.K)
    if gold.size != scores.T:
        raise ContractViolation(f"expected {scores.T} labels, got {gold.size}")
    total = scores.emission[np.arange(scores.T), gold].sum()
    for i in range(scores.T - 1):
        total += scores.transition_at(i)[gold[i], gold[i + 1]]
    return float(-total + forward_log_partition(scores))


def marginals(scores: ScoreSet) -> Marginals:
    """Unary and adjacent-pair smoothing distributions via forward-backward."""
    fwd = log_forward_table(scores)
    bwd = log_backward_table(scores)
    log_Z = log_sum_exp(fwd[-1])
    unary = np.exp(fwd + bwd - log_Z)
    T, K = scores.T, scores.K
    pairwise = np.empty((T - 1, K, K))
    for i in range(T - 1):
        pairwise[i] = np.exp(
            fwd[i][:, None]
            + scores.transition_at(i)
            + (scores.emission[i + 1] + bwd[i + 1])[None, :]
            - log_Z
        )
    return Marginals(log_Z=float(log_Z), unary=unary, pairwise=pairwise)


def soft_label_gradients(scores: ScoreSet, targets: SoftTargets) -> ScoreGradients:
    """Moment-matching gradients of the soft-label loss w.r.t. the scores.

    Emission gradient: model unary marginal minus target row.  Transition
    gradient: model pair marginal minus the product of adjacent target
    rows.  Closed form; no differentiation of the loss recursion needed.
    """
    _check_pair(scores, targets)
    m = marginals(scores)
    q = targets.q
    d_emission = m.unary - q
    d_pairs = m.pairwise - q[:-1, :, None] * q[1:, None, :]
    d_transition = d_pairs.sum(axis=0) if scores.shared_transition else d_pairs
    return ScoreGradients(d_emission=d_emission, d_transition=d_transition)


def viterbi_decode(scores: ScoreSet) -> tuple[np.ndarray, float]:
    """Highest-scoring label sequence and its score.

    Ties break toward the smallest label index at the final position and
    at every backtrack step.
    """
    T, K = scores.T, scores.K
    trellis = scores.emission[0].copy()
    backptr = np.empty((T - 1, K), dtype=np.intp)
    for i in range(T - 1):
        cand = trellis[:, None] + scores.transition_at(i)
        backptr[i] = cand.argmax(axis=0)  # first max = lowest index
        trellis = cand.max(axis=0) + scores.emission[i + 1]
    labels = np.empty(T, dtype=np.intp)
    labels[-1] = trellis.argmax()
    for i in range(T - 2, -1, -1):
        labels[i] = backptr[i, labels[i + 1]]
    return labels, float(trellis.max())


def smoothing_decode(scores: ScoreSet) -> np.ndarray:
    """Position-wise argmax of the unary marginals; ties to smallest index."""
    return marginals(scores).unary.argmax(axis=1)


def factored_soft_loss(emission: np.ndarray, targets: SoftTargets) -> float:
    """Per-position KL loss of an emission-only (no transition) model.

    Equals the chain soft-label loss when every transition score is
    zero: the joint model factors over time.
    """
    emission = _as_float_matrix(emission, "emission")
    if emission.shape != (targets.T, targets.K):
        raise ContractViolation("emission and targets shapes differ")
    log_p = emission - log_sum_exp_along(emission, axis=1)[:, None]
    q = targets.q
    return float((q * (_masked_log(q) - log_p)).sum())


def factored_soft_gradients(emission: np.ndarray, targets: SoftTargets) -> np.ndarray:
    """Gradient of factored_soft_loss: per-position softmax minus target."""
    emission = _as_float_matrix(emission, "emission")
    if emission.shape != (targets.T, targets.K):
        raise ContractViolation("emission and targets shapes differ")
    log_p = emission - log_sum_exp_along(emission, axis=1)[:, None]
    return np.exp(log_p) - targets.q
