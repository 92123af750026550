"""Differential test battery: dynamic programs vs enumeration vs finite
differences, on seeded random instances.  Backs the ``check`` CLI
subcommand and the acceptance suite."""

from dataclasses import dataclass, field

import numpy as np

from . import bruteforce, crf

DP_TOL = 1e-9
FD_TOL = 1e-5
FD_STEP = 1e-4


def random_scores(
    rng: np.random.Generator,
    max_t: int = 5,
    max_k: int = 5,
    sigma: float = 2.0,
    shared: bool | None = None,
) -> crf.ScoreSet:
    T = int(rng.integers(1, max_t + 1))
    K = int(rng.integers(1, max_k + 1))
    if shared is None:
        shared = bool(rng.integers(0, 2))
    emission = rng.normal(0.0, sigma, size=(T, K))
    shape = (K, K) if shared else (T - 1, K, K)
    transition = rng.normal(0.0, sigma, size=shape)
    return crf.ScoreSet(emission=emission, transition=transition)


def random_targets(rng: np.random.Generator, T: int, K: int) -> crf.SoftTargets:
    """Random rows, each zeroed on a random subset (support of size >= 1)."""
    q = rng.uniform(0.05, 1.0, size=(T, K))
    for t in range(T):
        support = int(rng.integers(1, K + 1))
        off = rng.permutation(K)[support:]
        q[t, off] = 0.0
    return crf.SoftTargets(q / q.sum(axis=1, keepdims=True))


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Worst entrywise relative error; ``floor`` bounds the denominator.

    Finite-difference comparisons pass ``floor=1e-3`` so that entries
    below the differencing noise (~1e-8 absolute at step 1e-4) do not
    register as relative failures.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


@dataclass
class CheckReport:
    trials: int
    worst: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def note(self, name: str, err: float, tol: float, context: str):
        self.worst[name] = max(self.worst.get(name, 0.0), err)
        if not err <= tol:
            self.failures.append(f"{name}: error {err:.3e} > {tol:.0e} ({context})")


def fd_score_gradients(
    scores: crf.ScoreSet, targets: crf.SoftTargets, step: float = FD_STEP
) -> crf.ScoreGradients:
    """Central finite differences of the soft-label loss w.r.t. every score."""

    def loss_with(emission, transition):
        return crf.soft_label_loss(
            crf.ScoreSet(emission=emission, transition=transition), targets
        )

    d_em = np.zeros_like(scores.emission)
    for idx in np.ndindex(*scores.emission.shape):
        for sign in (1.0, -1.0):
            e = scores.emission.copy()
            e[idx] += sign * step
            d_em[idx] += sign * loss_with(e, scores.transition)
    d_em /= 2 * step

    d_tr = np.zeros_like(scores.transition)
    for idx in np.ndindex(*scores.transition.shape):
        for sign in (1.0, -1.0):
            tr = scores.transition.copy()
            tr[idx] += sign * step
            d_tr[idx] += sign * loss_with(scores.emission, tr)
    d_tr /= 2 * step
    return crf.ScoreGradients(d_emission=d_em, d_transition=d_tr)


def fd_partition_sensitivity(scores: crf.ScoreSet, rng: np.random.Generator) -> float:
    """Worst relative error of dZ/d(forward value) against the backward table.

    The partition function restarted from the forward row at position t
    is linear in that row, so central differences are exact up to
    rounding and the slope must equal the backward variable.
    """
    fwd = np.exp(crf.log_forward_table(scores))
    bwd = np.exp(crf.log_backward_table(scores))
    t = int(rng.integers(0, scores.T))
    worst = 0.0
    row = fwd[t]
    h = 0.05 * row.max()
    for k in range(scores.K):
        plus = row.copy()
        plus[k] += h
        minus = row.copy()
        minus[k] = max(minus[k] - h, 1e-300)
        step = plus[k] - minus[k]
        z_plus = np.exp(crf.log_partition_from(scores, t, np.log(plus)))
        z_minus = np.exp(crf.log_partition_from(scores, t, np.log(minus)))
        slope = (z_plus - z_minus) / step
        worst = max(worst, rel_err(slope, bwd[t, k]))
    return worst


def run_check(
    trials: int = 200,
    max_t: int = 5,
    max_k: int = 5,
    seed: int = 0,
    fd_trials: int = 25,
) -> CheckReport:
    rng = np.random.default_rng(seed)
    report = CheckReport(trials=trials)
    for i in range(trials):
        scores = random_scores(rng, max_t, max_k)
        targets = random_targets(rng, scores.T, scores.K)
        ctx = f"trial {i}, T={scores.T}, K={scores.K}"

        report.note(
            "log_partition",
            rel_err(crf.forward_log_partition(scores), bruteforce.brute_log_partition(scores)),
            DP_TOL,
            ctx,
        )
        report.note(
            "soft_label_loss",
            rel_err(crf.soft_label_loss(scores, targets), bruteforce.brute_kl_loss(scores, targets)),
            DP_TOL,
            ctx,
        )
        m = crf.marginals(scores)
        bm = bruteforce.brute_marginals(scores)
        report.note("unary_marginals", max_rel_err(m.unary, bm.unary), DP_TOL, ctx)
        report.note("pairwise_marginals", max_rel_err(m.pairwise, bm.pairwise), DP_TOL, ctx)
        v_labels, v_score = crf.viterbi_decode(scores)
        b_labels, b_score = bruteforce.brute_map(scores)
        report.note("viterbi_score", rel_err(v_score, b_score), DP_TOL, ctx)
        if not np.array_equal(v_labels, b_labels):
            report.failures.append(f"viterbi labels differ from enumeration ({ctx})")

        if i < fd_trials:
            scores_small = random_scores(rng, min(max_t, 4), min(max_k, 4), sigma=1.0)
            targets_small = random_targets(rng, scores_small.T, scores_small.K)
            got = crf.soft_label_gradients(scores_small, targets_small)
            want = fd_score_gradients(scores_small, targets_small)
            report.note(
                "gradient_vs_fd",
                max(
                    max_rel_err(got.d_emission, want.d_emission, floor=1e-3),
                    max_rel_err(got.d_transition, want.d_transition, floor=1e-3),
                ),
                FD_TOL,
                ctx,
            )
            report.note(
                "partition_sensitivity",
                fd_partition_sensitivity(scores_small, rng),
                FD_TOL,
                ctx,
            )
    return report
