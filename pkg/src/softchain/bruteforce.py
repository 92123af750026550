"""Literal enumeration over all K**T label sequences.

Deliberately naive: every quantity is an explicit sum or max over
complete sequences, so these functions are the ground truth the dynamic
programs in :mod:`softchain.crf` are tested against.  A hard size guard
rejects instances with more than ``10**6`` sequences.
"""

import numpy as np

from .crf import Marginals, ScoreSet, SoftTargets, _check_pair
from .errors import InstanceTooLarge
from .logspace import log_sum_exp

MAX_SEQUENCES = 10**6


def _guard(scores: ScoreSet) -> int:
    n = scores.K**scores.T
    if n > MAX_SEQUENCES:
        raise InstanceTooLarge(
            f"K**T = {n} exceeds the enumeration guard of {MAX_SEQUENCES}"
        )
    return n


def _enumerate_paths(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    """All label sequences as an (n, T) array plus their log scores."""
    n = _guard(scores)
    T, K = scores.T, scores.K
    paths = np.stack(
        np.unravel_index(np.arange(n), (K,) * T), axis=1
    )  # row-major: position 0 varies slowest
    log_w = scores.emission[np.arange(T), paths].sum(axis=1)
    for i in range(T - 1):
        log_w += scores.transition_at(i)[paths[:, i], paths[:, i + 1]]
    return paths, log_w


def brute_log_partition(scores: ScoreSet) -> float:
    paths, log_w = _enumerate_paths(scores)
    return log_sum_exp(log_w)


def brute_kl_loss(scores: ScoreSet, targets: SoftTargets) -> float:
    """Exact inclusive KL over the support of the factored targets."""
    _check_pair(scores, targets)
    paths, log_w = _enumerate_paths(scores)
    log_Z = log_sum_exp(log_w)
    q_elems = targets.q[np.arange(scores.T), paths]  # (n, T)
    support = (q_elems > 0.0).all(axis=1)
    log_q = np.log(q_elems[support]).sum(axis=1)
    log_p = log_w[support] - log_Z
    return float((np.exp(log_q) * (log_q - log_p)).sum())


def brute_marginals(scores: ScoreSet) -> Marginals:
    """Exact marginals, each aggregated in log space for full precision."""
    paths, log_w = _enumerate_paths(scores)
    log_Z = log_sum_exp(log_w)
    T, K = scores.T, scores.K
    unary = np.empty((T, K))
    for t in range(T):
        for k in range(K):
            sel = log_w[paths[:, t] == k]
            unary[t, k] = 0.0 if sel.size == 0 else np.exp(log_sum_exp(sel) - log_Z)
    pairwise = np.empty((T - 1, K, K))
    for i in range(T - 1):
        for j in range(K):
            for k in range(K):
                sel = log_w[(paths[:, i] == j) & (paths[:, i + 1] == k)]
                pairwise[i, j, k] = (
                    0.0 if sel.size == 0 else np.exp(log_sum_exp(sel) - log_Z)
                )
    return Marginals(log_Z=float(log_Z), unary=unary, pairwise=pairwise)


def brute_map(scores: ScoreSet) -> tuple[np.ndarray, float]:
    """Exact best sequence, tie-broken like the Viterbi backtrack.

    Among sequences of maximal score, the winner is the one whose label
    at the last position is smallest, then at the second-to-last, and so
    on (backtracking picks the smallest index at each step).
    """
    paths, log_w = _enumerate_paths(scores)
    best = log_w.max()
    tied = paths[log_w == best]
    # lexsort's last key is primary, so order keys from position 0 upward.
    order = np.lexsort(tuple(tied[:, t] for t in range(scores.T)))
    return tied[order[0]].astype(np.intp), float(best)
