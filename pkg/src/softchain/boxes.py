"""Axis-aligned box arithmetic: overlap, soft targets, delta regression.

A box is a length-4 float array ``[x_min, y_min, x_max, y_max]`` with
positive width and height.  Functions broadcast over leading axes, so a
stack of boxes is just an ``(..., 4)`` array.
"""

import numpy as np

from .errors import ContractViolation


def check_boxes(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    if b.shape[-1] != 4:
        raise ContractViolation(f"boxes must have trailing dimension 4, got {b.shape}")
    if not np.isfinite(b).all():
        raise ContractViolation("box coordinates must be finite")
    if (b[..., 2] <= b[..., 0]).any() or (b[..., 3] <= b[..., 1]).any():
        raise ContractViolation("boxes must have positive width and height")
    return b


def box_area(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def box_center_size(boxes) -> np.ndarray:
    """[x_center, y_center, width, height] with the same leading shape."""
    b = np.asarray(boxes, dtype=np.float64)
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return np.stack(
        [b[..., 0] + 0.5 * w, b[..., 1] + 0.5 * h, w, h], axis=-1
    )


def iou(a, b) -> np.ndarray:
    """Intersection over union, broadcasting; 0 for disjoint boxes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ix = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    iy = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    union = box_area(a) + box_area(b) - inter
    out = np.where(inter > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    return out if out.ndim else float(out)


def soft_targets(candidates, gold, threshold: float = 0.5, weight=None) -> np.ndarray:
    """Distribute target mass over candidates that overlap the gold box.

    Candidates with IoU >= threshold receive mass proportional to
    ``weight(iou)`` (identity by default) and the rest receive zero.  If
    no candidate qualifies, the result is one-hot on the max-IoU
    candidate (lowest index on ties) so every position stays trainable.
    """
    candidates = check_boxes(candidates)
    if candidates.ndim != 2:
        raise ContractViolation("candidates must be a (K, 4) array")
    overlaps = iou(candidates, np.asarray(gold, dtype=np.float64))
    scores = overlaps if weight is None else np.asarray(weight(overlaps))
    masked = np.where(overlaps >= threshold, scores, 0.0)
    total = masked.sum()
    if total > 0.0:
        return masked / total
    out = np.zeros(len(candidates))
    out[overlaps.argmax()] = 1.0
    return out


def encode_box_deltas(gold, anchor) -> np.ndarray:
    """Center offsets scaled by anchor size, plus log size ratios."""
    g = box_center_size(check_boxes(gold))
    a = box_center_size(check_boxes(anchor))
    return np.stack(
        [
            (g[..., 0] - a[..., 0]) / a[..., 2],
            (g[..., 1] - a[..., 1]) / a[..., 3],
            np.log(g[..., 2] / a[..., 2]),
            np.log(g[..., 3] / a[..., 3]),
        ],
        axis=-1,
    )


def decode_box_deltas(anchor, deltas) -> np.ndarray:
    """Invert encode_box_deltas; output always has positive width/height."""
    a = box_center_size(check_boxes(anchor))
    d = np.asarray(deltas, dtype=np.float64)
    if d.shape[-1] != 4:
        raise ContractViolation("deltas must have trailing dimension 4")
    cx = a[..., 0] + d[..., 0] * a[..., 2]
    cy = a[..., 1] + d[..., 1] * a[..., 3]
    w = a[..., 2] * np.exp(d[..., 2])
    h = a[..., 3] * np.exp(d[..., 3])
    return np.stack(
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1
    )


def smooth_l1(x) -> np.ndarray:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; C1 at the switch."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    out = np.where(a < 1.0, 0.5 * x * x, a - 0.5)
    return out if out.ndim else float(out)


def smooth_l1_grad(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(x) < 1.0, x, np.sign(x))
    return out if out.ndim else float(out)


def regression_loss(predicted, target) -> float:
    """Componentwise smooth-L1 between two delta 4-vectors, summed."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape or predicted.shape[-1] != 4:
        raise ContractViolation("delta vectors must share shape (..., 4)")
    return float(smooth_l1(predicted - target).sum())
