"""Mini-batch training with Adam, global gradient clipping, evaluation.

The per-batch loss is ``mean(label_loss) + gamma * mean(delta_loss)``
over the instances of the batch, where an instance's delta loss sums the
smooth-L1 box-regression terms of its qualifying phrases (those whose
best-overlap candidate reaches the IoU threshold).  Gradient clipping
rescales all accumulators together so the largest absolute entry never
exceeds ``clip_norm``, preserving direction.

Training is deterministic given the config seed and instance order.
With ``jobs > 1`` the batch is partitioned round-robin across worker
threads with private accumulators, merged in fixed partition order, so
parallel runs are also repeatable (though not bit-identical to serial
ones; use ``jobs=1`` for byte-for-byte reproducibility).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boxes import decode_box_deltas, encode_box_deltas, iou, smooth_l1, smooth_l1_grad
from .crf import (
    ScoreGradients,
    factored_soft_gradients,
    factored_soft_loss,
    hard_label_loss,
    one_hot,
    smoothing_decode,
    soft_label_gradients,
    soft_label_loss,
    viterbi_decode,
)
from .data import build_targets
from .errors import ConfigError, ContractViolation, DivergenceError
from .scoring import ModelParams, predict_deltas, score_backward, score_with_cache

REGIMES = ("hard", "soft")
MODELS = ("crf", "non-crf")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    batch_size: int = 16
    clip_norm: float = 10.0
    gamma: float = 10.0
    iterations: int = 2000
    snapshot_every: int = 5000
    regime: str = "soft"
    model: str = "crf"
    transition_mode: str = "--"
    seed: int = 0
    iou_threshold: float = 0.5
    freeze_transitions: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning_rate, epsilon and clip_norm must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.snapshot_every < 1 or self.jobs < 1:
            raise ConfigError("batch_size, snapshot_every and jobs must be >= 1")
        if self.iterations < 0 or self.gamma < 0:
            raise ConfigError("iterations and gamma must be >= 0")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        if self.model == "crf" and self.transition_mode not in ("--", "M"):
            raise ConfigError("crf model needs transition_mode '--' or 'M'")


def init_adam_state(params: ModelParams) -> dict:
    return {
        name: {"m": np.zeros_like(t), "v": np.zeros_like(t)}
        for name, t in params.tensors.items()
    }


def adam_step(params: ModelParams, moments: dict, t: int, cfg: TrainConfig):
    """Bias-corrected moment update applied in place; accumulators zeroed."""
    if t < 1:
        raise ContractViolation("Adam step index starts at 1")
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name in sorted(params.tensors):
        g = params.grads[name]
        st = moments[name]
        st["m"] = cfg.beta1 * st["m"] + (1.0 - cfg.beta1) * g
        st["v"] = cfg.beta2 * st["v"] + (1.0 - cfg.beta2) * g * g
        m_hat = st["m"] / c1
        v_hat = st["v"] / c2
        params.tensors[name] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    params.zero_grads()


def clip_gradients(grads: dict, clip_norm: float) -> float:
    """Rescale all accumulators so max |entry| <= clip_norm; returns pre-clip max."""
    worst = 0.0
    for g in grads.values():
        if g.size == 0:
            continue
        m = float(np.abs(g).max())
        if np.isnan(m):
            raise DivergenceError("gradient accumulator contains NaN")
        worst = max(worst, m)
    if worst > clip_norm:
        scale = clip_norm / worst
        for g in grads.values():
            g *= scale
    return worst


@dataclass
class PreparedInstance:
    """Instance with its targets and regression bookkeeping precomputed."""

    inst: object
    soft: object
    hard: np.ndarray
    reg_labels: np.ndarray  # -1 where no candidate reaches the threshold
    reg_targets: np.ndarray  # (T, 4) encoded deltas, zero rows where masked


def prepare_instance(inst, threshold: float) -> PreparedInstance:
    soft, hard = build_targets(inst, threshold)
    reg_labels = np.full(inst.T, -1, dtype=np.intp)
    reg_targets = np.zeros((inst.T, 4))
    for t in range(inst.T):
        best = hard[t]
        if iou(inst.candidate_boxes[best], inst.gold_boxes[t]) >= threshold:
            reg_labels[t] = best
            reg_targets[t] = encode_box_deltas(
                inst.gold_boxes[t], inst.candidate_boxes[best]
            )
    return PreparedInstance(inst, soft, hard, reg_labels, reg_targets)


def _instance_pass(
    prep: PreparedInstance, params: ModelParams, cfg: TrainConfig, scale: float
) -> tuple[float, float]:
    """Forward, losses, backward for one instance; returns (label, reg) losses."""
    inst = prep.inst
    mode = "none" if cfg.model == "non-crf" else cfg.transition_mode
    scores, cache = score_with_cache(inst, params, mode=mode)

    if cfg.model == "non-crf":
        targets = prep.soft if cfg.regime == "soft" else one_hot(prep.hard, inst.K)
        label_loss = factored_soft_loss(scores.emission, targets)
        d_em = factored_soft_gradients(scores.emission, targets)
        d_scores = ScoreGradients(
            d_emission=d_em * scale, d_transition=np.zeros((inst.K, inst.K))
        )
    else:
        if cfg.regime == "soft":
            targets = prep.soft
            label_loss = soft_label_loss(scores, targets)
        else:
            targets = one_hot(prep.hard, inst.K)
            label_loss = hard_label_loss(scores, prep.hard)
        g = soft_label_gradients(scores, targets)
        d_scores = ScoreGradients(
            d_emission=g.d_emission * scale, d_transition=g.d_transition * scale
        )

    reg_loss = 0.0
    d_reg = None
    if cfg.gamma > 0 and (prep.reg_labels >= 0).any():
        safe = np.where(prep.reg_labels >= 0, prep.reg_labels, 0)
        deltas = predict_deltas(inst, params, safe, fused=cache.fused)
        diffs = deltas - prep.reg_targets
        mask = (prep.reg_labels >= 0)[:, None]
        reg_loss = float((smooth_l1(diffs) * mask).sum())
        d_reg = smooth_l1_grad(diffs) * mask * (cfg.gamma * scale)

    score_backward(
        inst, params, d_scores, d_reg=d_reg, reg_labels=prep.reg_labels, cache=cache
    )
    return label_loss, reg_loss


@dataclass
class TrainReport:
    """Per-iteration records plus the selected best snapshot."""

    records: list = field(default_factory=list)
    best_iteration: int | None = None
    best_val_accuracy: float | None = None
    best_params: ModelParams | None = None


def train(instances, cfg: TrainConfig, params: ModelParams, val_instances=()) -> TrainReport:
    """Run the mini-batch loop; mutates ``params`` and returns the report."""
    expected_mode = "none" if cfg.model == "non-crf" else cfg.transition_mode
    if params.config.transition_mode != expected_mode:
        raise ConfigError(
            f"model {cfg.model!r} with transition_mode {cfg.transition_mode!r} needs "
            f"parameters built for {expected_mode!r}, "
            f"got {params.config.transition_mode!r}"
        )
    instances = list(instances)
    if cfg.iterations > 0 and not instances:
        raise ConfigError("cannot train on an empty instance stream")

    prepared = [prepare_instance(inst, cfg.iou_threshold) for inst in instances]
    order_rng = np.random.default_rng(cfg.seed)
    moments = init_adam_state(params)
    report = TrainReport()
    params.zero_grads()

    pool = ThreadPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None
    try:
        queue: list[int] = []
        for it in range(1, cfg.iterations + 1):
            while len(queue) < cfg.batch_size:
                queue.extend(order_rng.permutation(len(prepared)).tolist())
            batch = [prepared[i] for i in queue[: cfg.batch_size]]
            del queue[: cfg.batch_size]
            scale = 1.0 / len(batch)

            if pool is None:
                losses = [_instance_pass(p, params, cfg, scale) for p in batch]
            else:
                losses = _parallel_batch(pool, batch, params, cfg, scale)

            label_loss = sum(l for l, _ in losses) * scale
            reg_loss = sum(r for _, r in losses) * scale
            total = label_loss + cfg.gamma * reg_loss
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at iteration {it}: "
                    f"label={label_loss} reg={reg_loss}"
                )

            if cfg.freeze_transitions:
                for name in params.grads:
                    if name.startswith("trans_"):
                        params.grads[name][...] = 0.0
            grad_norm = clip_gradients(params.grads, cfg.clip_norm)
            adam_step(params, moments, it, cfg)
            report.records.append(
                {
                    "iteration": it,
                    "loss": total,
                    "loss_label": label_loss,
                    "loss_reg": reg_loss,
                    "grad_norm": grad_norm,
                }
            )

            if it % cfg.snapshot_every == 0 or it == cfg.iterations:
                record = {"iteration": it, "snapshot": True}
                if len(val_instances):
                    acc = evaluate(val_instances, params, threshold=cfg.iou_threshold)
                    record["val_accuracy"] = acc
                    if (
                        report.best_val_accuracy is None
                        or acc > report.best_val_accuracy
                    ):
                        report.best_iteration = it
                        report.best_val_accuracy = acc
                        report.best_params = params.clone()
                report.records.append(record)
    finally:
        if pool is not None:
            pool.shutdown()
    if report.best_params is None and cfg.iterations > 0:
        report.best_iteration = cfg.iterations
        report.best_params = params.clone()
    return report


def _parallel_batch(pool, batch, params, cfg, scale):
    jobs = min(cfg.jobs, len(batch))
    partitions = [batch[w::jobs] for w in range(jobs)]
    workers = [params.with_fresh_grads() for _ in range(jobs)]

    def run(w):
        return [_instance_pass(p, workers[w], cfg, scale) for p in partitions[w]]

    results = list(pool.map(run, range(jobs)))
    for worker in workers:  # merge in fixed partition order
        for name, g in worker.grads.items():
            params.grads[name] += g
    losses = [None] * len(batch)
    for w, part_losses in enumerate(results):
        losses[w::jobs] = part_losses
    return losses


def decode_labels(inst, params: ModelParams, decoder: str = "viterbi"):
    """Decoded labels plus the fused cache (reused for box refinement)."""
    scores, cache = score_with_cache(inst, params)
    if decoder == "viterbi":
        labels, _ = viterbi_decode(scores)
    elif decoder == "smoothing":
        labels = smoothing_decode(scores)
    else:
        raise ConfigError(f"unknown decoder {decoder!r}")
    return labels, cache


def predicted_boxes(inst, params: ModelParams, labels, cache=None, regress=True):
    boxes = inst.candidate_boxes[np.asarray(labels, dtype=np.intp)]
    if regress:
        fused = cache.fused if cache is not None else None
        deltas = predict_deltas(inst, params, labels, fused=fused)
        boxes = decode_box_deltas(boxes, deltas)
    return boxes


def fraction_grounded(inst, boxes, threshold: float = 0.5) -> int:
    """Number of phrases whose predicted box reaches the overlap threshold."""
    return int((iou(boxes, inst.gold_boxes) >= threshold).sum())


def evaluate(
    instances,
    params: ModelParams,
    decoder: str = "viterbi",
    regress: bool = True,
    threshold: float = 0.5,
) -> float:
    """Fraction of phrases grounded within the IoU threshold."""
    hits = 0
    total = 0
    for inst in instances:
        labels, cache = decode_labels(inst, params, decoder)
        boxes = predicted_boxes(inst, params, labels, cache=cache, regress=regress)
        hits += fraction_grounded(inst, boxes, threshold)
        total += inst.T
    if total == 0:
        raise ContractViolation("evaluate needs at least one phrase")
    return hits / total
