"""Scoring heads: bilinear fusion, emission, pair transitions, box deltas.

A phrase vector ``p`` and a region vector ``r`` are fused by a low-rank
bilinear map::

    fused = pool.T @ (text_proj.T @ p * region_proj.T @ r) + bias

The fused vector feeds a linear emission head and a linear box-delta
head.  Transition scores for a label pair come from a two-layer ReLU
network over the concatenated region feature vectors, optionally
extended with a per-step context vector.

Everything is trained without an autodiff framework: ``score_backward``
implements the chain rule explicitly and accumulates into
``ModelParams.grads``.  The ReLU subgradient at exactly zero is taken to
be zero.

Transition modes
----------------
``"--"``    one shared (K, K) matrix from ``[r_j || r_k]``
``"M"``     per-step (T-1, K, K) scores from ``[r_j || r_k || ctx_t]``
``"none"``  transitions pinned to zero (position-independent model)
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .boxes import decode_box_deltas
from .errors import ConfigError, ContractViolation, SchemaError

TRANSITION_MODES = ("--", "M", "none")

CHECKPOINT_FORMAT = "softchain-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_text: int = 16
    d_vis: int = 13
    rank: int = 16
    d_joint: int = 16
    hidden: int = 16
    d_ctx: int = 8
    transition_mode: str = "--"

    def __post_init__(self):
        for name in ("d_text", "d_vis", "rank", "d_joint", "hidden", "d_ctx"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.transition_mode not in TRANSITION_MODES:
            raise ConfigError(
                f"transition_mode must be one of {TRANSITION_MODES}, "
                f"got {self.transition_mode!r}"
            )

    @property
    def pair_dim(self) -> int:
        extra = self.d_ctx if self.transition_mode == "M" else 0
        return 2 * self.d_vis + extra


def _tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "fuse_text": (config.d_text, config.rank),
        "fuse_region": (config.d_vis, config.rank),
        "fuse_pool": (config.rank, config.d_joint),
        "fuse_bias": (config.d_joint,),
        "emit_w": (config.d_joint,),
        "emit_b": (),
        "reg_w": (4, config.d_joint),
        "reg_b": (4,),
    }
    if config.transition_mode != "none":
        shapes["trans_w1"] = (config.hidden, config.pair_dim)
        shapes["trans_b1"] = (config.hidden,)
        shapes["trans_w2"] = (config.hidden,)
        shapes["trans_b2"] = ()
    return shapes


class ModelParams:
    """Named parameter tensors with same-shape gradient accumulators."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = _tensor_shapes(config)
        if set(tensors) != set(expected):
            raise ContractViolation(
                f"tensor names {sorted(tensors)} != expected {sorted(expected)}"
            )
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ContractViolation(
                    f"tensor {name} has shape {tensors[name].shape}, expected {shape}"
                )
        self.config = config
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def clone(self) -> "ModelParams":
        out = ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})
        out.grads = {k: v.copy() for k, v in self.grads.items()}
        return out

    def with_fresh_grads(self) -> "ModelParams":
        """Share tensors, private zero accumulators (per-worker use)."""
        out = ModelParams.__new__(ModelParams)
        out.config = self.config
        out.tensors = self.tensors
        out.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        return out


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""

    def xavier(shape, fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)

    c = config
    tensors = {
        "fuse_text": xavier((c.d_text, c.rank), c.d_text, c.rank),
        "fuse_region": xavier((c.d_vis, c.rank), c.d_vis, c.rank),
        "fuse_pool": xavier((c.rank, c.d_joint), c.rank, c.d_joint),
        "fuse_bias": np.zeros(c.d_joint),
        "emit_w": xavier((c.d_joint,), c.d_joint, 1),
        "emit_b": np.zeros(()),
        "reg_w": xavier((4, c.d_joint), c.d_joint, 4),
        "reg_b": np.zeros(4),
    }
    if c.transition_mode != "none":
        tensors["trans_w1"] = xavier((c.hidden, c.pair_dim), c.pair_dim, c.hidden)
        tensors["trans_b1"] = np.zeros(c.hidden)
        tensors["trans_w2"] = xavier((c.hidden,), c.hidden, 1)
        tensors["trans_b2"] = np.zeros(())
    return ModelParams(config, tensors)


def lrbp_fuse(p_t, r_k, params: ModelParams) -> np.ndarray:
    """Fuse one phrase vector with one region vector."""
    p_t = np.asarray(p_t, dtype=np.float64)
    r_k = np.asarray(r_k, dtype=np.float64)
    c = params.config
    if p_t.shape != (c.d_text,) or r_k.shape != (c.d_vis,):
        raise ContractViolation(
            f"expected vectors of size {c.d_text} and {c.d_vis}, "
            f"got {p_t.shape} and {r_k.shape}"
        )
    had = (params["fuse_text"].T @ p_t) * (params["fuse_region"].T @ r_k)
    return params["fuse_pool"].T @ had + params["fuse_bias"]


@dataclass
class ScoreCache:
    """Intermediates kept by the forward pass for the backward pass."""

    mode: str
    up: np.ndarray  # (T, rank)
    vr: np.ndarray  # (K, rank)
    had: np.ndarray  # (T, K, rank)
    fused: np.ndarray  # (T, K, d_joint)
    pair_in: np.ndarray | None  # (M, pair_dim)
    pair_z: np.ndarray | None  # (M, hidden) pre-activation
    pair_a: np.ndarray | None  # (M, hidden) post-ReLU


def _check_instance_dims(inst, config: ModelConfig):
    if inst.phrase_feats.shape[1] != config.d_text:
        raise ContractViolation(
            f"instance phrase features have width {inst.phrase_feats.shape[1]}, "
            f"model expects {config.d_text}"
        )
    if inst.region_feats.shape[1] != config.d_vis:
        raise ContractViolation(
            f"instance region features have width {inst.region_feats.shape[1]}, "
            f"model expects {config.d_vis}"
        )


def _pair_inputs(inst, mode: str, d_ctx: int) -> np.ndarray:
    region = inst.region_feats
    K = region.shape[0]
    left = np.repeat(region, K, axis=0)  # row j*K + k holds region[j]
    right = np.tile(region, (K, 1))  # row j*K + k holds region[k]
    base = np.concatenate([left, right], axis=1)
    if mode == "--":
        return base
    ctx = inst.context_feats
    if ctx is None:
        raise ConfigError(
            "transition mode 'M' needs per-step context features, "
            "but the instance has none"
        )
    if ctx.shape[1] != d_ctx:
        raise ContractViolation(
            f"context features have width {ctx.shape[1]}, model expects {d_ctx}"
        )
    steps = inst.T - 1
    tiled = np.tile(base, (steps, 1))
    expanded = np.repeat(ctx, K * K, axis=0)
    return np.concatenate([tiled, expanded], axis=1)


def score_with_cache(inst, params: ModelParams, mode: str | None = None):
    """Forward pass producing a ScoreSet plus reusable intermediates."""
    from .crf import ScoreSet  # local to keep module import order flexible

    c = params.config
    mode = c.transition_mode if mode is None else mode
    if mode not in TRANSITION_MODES:
        raise ConfigError(f"unknown transition mode {mode!r}")
    if mode != "none" and mode != c.transition_mode:
        raise ConfigError(
            f"parameters were built for transition mode {c.transition_mode!r}, "
            f"cannot score in mode {mode!r}"
        )
    _check_instance_dims(inst, c)
    T, K = inst.T, inst.K

    up = inst.phrase_feats @ params["fuse_text"]  # (T, rank)
    vr = inst.region_feats @ params["fuse_region"]  # (K, rank)
    had = up[:, None, :] * vr[None, :, :]  # (T, K, rank)
    fused = had @ params["fuse_pool"] + params["fuse_bias"]  # (T, K, d_joint)
    emission = fused @ params["emit_w"] + params["emit_b"]

    pair_in = pair_z = pair_a = None
    if mode == "none" or T == 1:
        transition = np.zeros((K, K))
    else:
        pair_in = _pair_inputs(inst, mode, c.d_ctx)
        pair_z = pair_in @ params["trans_w1"].T + params["trans_b1"]
        pair_a = np.maximum(pair_z, 0.0)
        raw = pair_a @ params["trans_w2"] + params["trans_b2"]
        transition = raw.reshape((K, K) if mode == "--" else (T - 1, K, K))

    cache = ScoreCache(
        mode=mode, up=up, vr=vr, had=had, fused=fused,
        pair_in=pair_in, pair_z=pair_z, pair_a=pair_a,
    )
    return ScoreSet(emission=emission, transition=transition), cache


def score_instance(inst, params: ModelParams, mode: str | None = None):
    """Emission and transition scores for every phrase/candidate of one instance."""
    scores, _ = score_with_cache(inst, params, mode)
    return scores


def score_backward(
    inst,
    params: ModelParams,
    d_scores=None,
    d_reg: np.ndarray | None = None,
    reg_labels: np.ndarray | None = None,
    cache: ScoreCache | None = None,
):
    """Chain rule from score/delta gradients into the parameter accumulators.

    ``d_scores`` carries gradients w.r.t. emission and transition scores
    (either may be zero).  ``d_reg`` is a (T, 4) array of gradients
    w.r.t. the box-delta outputs; ``reg_labels[t]`` names the candidate
    the delta head was evaluated on, with -1 meaning "no delta loss at
    this phrase".  Accumulation is additive across calls.
    """
    if cache is None:
        _, cache = score_with_cache(inst, params)
    g = params.grads
    fused = cache.fused
    T, K = fused.shape[0], fused.shape[1]
    d_fused = np.zeros_like(fused)

    if d_scores is not None:
        d_em = np.asarray(d_scores.d_emission, dtype=np.float64)
        if d_em.shape != (T, K):
            raise ContractViolation(
                f"d_emission shape {d_em.shape} does not match instance ({T}, {K})"
            )
        g["emit_w"] += np.einsum("tk,tkj->j", d_em, fused)
        g["emit_b"] += d_em.sum()
        d_fused += d_em[..., None] * params["emit_w"]

        d_tr = np.asarray(d_scores.d_transition, dtype=np.float64)
        if cache.mode != "none" and T > 1 and d_tr.any():
            want = (K, K) if cache.mode == "--" else (T - 1, K, K)
            if d_tr.shape != want:
                raise ContractViolation(
                    f"d_transition shape {d_tr.shape} does not match mode "
                    f"{cache.mode!r} expectation {want}"
                )
            d_flat = d_tr.reshape(-1)
            d_act = d_flat[:, None] * params["trans_w2"]
            d_z = d_act * (cache.pair_z > 0.0)
            g["trans_w2"] += cache.pair_a.T @ d_flat
            g["trans_b2"] += d_flat.sum()
            g["trans_w1"] += d_z.T @ cache.pair_in
            g["trans_b1"] += d_z.sum(axis=0)

    if d_reg is not None:
        d_reg = np.asarray(d_reg, dtype=np.float64)
        if reg_labels is None or d_reg.shape != (T, 4):
            raise ContractViolation("d_reg must be (T, 4) with matching reg_labels")
        reg_labels = np.asarray(reg_labels, dtype=np.intp)
        sel = reg_labels >= 0
        if sel.any():
            ts = np.nonzero(sel)[0]
            labs = reg_labels[sel]
            d_sel = d_reg[sel]
            f_sel = fused[ts, labs]
            g["reg_w"] += d_sel.T @ f_sel
            g["reg_b"] += d_sel.sum(axis=0)
            np.add.at(d_fused, (ts, labs), d_sel @ params["reg_w"])

    if d_fused.any():
        g["fuse_pool"] += np.einsum("tkr,tkj->rj", cache.had, d_fused)
        g["fuse_bias"] += d_fused.sum(axis=(0, 1))
        d_had = np.einsum("tkj,rj->tkr", d_fused, params["fuse_pool"])
        d_up = np.einsum("tkr,kr->tr", d_had, cache.vr)
        d_vr = np.einsum("tkr,tr->kr", d_had, cache.up)
        g["fuse_text"] += inst.phrase_feats.T @ d_up
        g["fuse_region"] += inst.region_feats.T @ d_vr


def predict_deltas(
    inst, params: ModelParams, labels, fused: np.ndarray | None = None
) -> np.ndarray:
    """Box-delta head output for the named candidate at each phrase."""
    labels = np.asarray(labels, dtype=np.intp)
    if fused is None:
        _, cache = score_with_cache(inst, params, mode="none")
        fused = cache.fused
    chosen = fused[np.arange(len(labels)), labels]
    return chosen @ params["reg_w"].T + params["reg_b"]


def regress_boxes(inst, params: ModelParams, labels) -> np.ndarray:
    """Refine each phrase's labeled candidate box with predicted deltas."""
    labels = np.asarray(labels, dtype=np.intp)
    deltas = predict_deltas(inst, params, labels)
    return decode_box_deltas(inst.candidate_boxes[labels], deltas)


def save_checkpoint(path, params: ModelParams):
    """Write a versioned JSON container of named tensors with shape headers."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "tensors": {
            name: {
                "shape": list(t.shape),
                "data": t.reshape(-1).tolist(),
            }
            for name, t in sorted(params.tensors.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported version {payload.get('version')}")
    try:
        config = ModelConfig(**payload["config"])
    except (TypeError, KeyError, ConfigError) as exc:
        raise SchemaError(f"{path}: bad config section ({exc})") from exc
    tensors = {}
    for name, entry in payload.get("tensors", {}).items():
        try:
            shape = tuple(entry["shape"])
            tensors[name] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: bad tensor {name!r} ({exc})") from exc
    try:
        return ModelParams(config, tensors)
    except ContractViolation as exc:
        raise SchemaError(f"{path}: {exc}") from exc
