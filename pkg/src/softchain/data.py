"""Synthetic grounding-style benchmark: generator, file format, targets.

Each instance is one "caption/image" analog: T phrases that must each be
assigned one of K candidate boxes.  Gold boxes are planted in the unit
square; with probability ``relation_strength`` consecutive golds obey a
spatial relation (the next center sits 0.15-0.45 to the right, modulo
the square), which is what makes transition scores informative.
Candidates are jittered copies of the golds plus random distractors, so
several candidates typically clear the 0.5 IoU bar for each phrase.

Features are deterministic functions of box geometry plus seeded noise.
Appearance-style features are sinusoids of the box parameters at fixed
random frequencies, shared between the phrase and region maps, so that
feature similarity decays smoothly with geometric distance and a
bilinear scoring head can rank candidates by proximity to the encoded
gold.  Region features carry exact spatial coordinates
``[x_min, y_min, x_max, y_max, area]`` in their last five slots; context
features carry a (noisy) indicator of whether the pair was constrained.

Generation is deterministic given ``(seed, split, index)``; parallel
generation partitions the index space instead of sharing one stream.
"""

import json
from dataclasses import dataclass

import numpy as np

from .boxes import box_center_size, check_boxes, iou, soft_targets
from .crf import SoftTargets
from .errors import ConfigError, ContractViolation, SchemaError

SCHEMA_NAME = "softchain-instances"
SCHEMA_VERSION = 1

_FEATURE_KEY = 0
_SPLIT_KEYS = {"train": 1, "val": 2, "test": 3}

_SIZE_LO, _SIZE_HI = 0.12, 0.30
_SHIFT_LO, _SHIFT_HI = 0.15, 0.45


@dataclass
class Instance:
    """One caption/image analog; all arrays are float64."""

    id: str
    candidate_boxes: np.ndarray  # (K, 4)
    region_feats: np.ndarray  # (K, d_vis)
    phrase_feats: np.ndarray  # (T, d_text)
    context_feats: np.ndarray | None  # (T-1, d_ctx)
    gold_boxes: np.ndarray  # (T, 4)

    def __post_init__(self):
        self.candidate_boxes = check_boxes(self.candidate_boxes)
        self.gold_boxes = check_boxes(self.gold_boxes)
        self.region_feats = np.asarray(self.region_feats, dtype=np.float64)
        self.phrase_feats = np.asarray(self.phrase_feats, dtype=np.float64)
        if self.candidate_boxes.ndim != 2 or self.gold_boxes.ndim != 2:
            raise ContractViolation("box stacks must be 2-D")
        if self.region_feats.ndim != 2 or self.phrase_feats.ndim != 2:
            raise ContractViolation("feature stacks must be 2-D")
        K = self.candidate_boxes.shape[0]
        T = self.gold_boxes.shape[0]
        if K < 1 or T < 1:
            raise ContractViolation("need at least one candidate and one phrase")
        if self.region_feats.shape[0] != K:
            raise ContractViolation("region_feats row count must equal K")
        if self.phrase_feats.shape[0] != T:
            raise ContractViolation("phrase_feats row count must equal T")
        if self.context_feats is not None:
            self.context_feats = np.asarray(self.context_feats, dtype=np.float64)
            if self.context_feats.shape[0] != T - 1 or self.context_feats.ndim != 2:
                raise ContractViolation("context_feats must be (T-1, d_ctx)")
            if not np.isfinite(self.context_feats).all():
                raise ContractViolation("context_feats must be finite")
        if not np.isfinite(self.region_feats).all() or not np.isfinite(
            self.phrase_feats
        ).all():
            raise ContractViolation("features must be finite")

    @property
    def T(self) -> int:
        return self.gold_boxes.shape[0]

    @property
    def K(self) -> int:
        return self.candidate_boxes.shape[0]


@dataclass(frozen=True)
class GeneratorConfig:
    K: int = 20
    distractors: int = 10
    mean_T: float = 2.76
    max_T: int = 8
    d_text: int = 16
    d_vis: int = 13
    d_ctx: int = 8
    jitter: float = 0.13
    anchor_jitter: float = 0.015
    anchor_rate: float = 0.25
    mirage_rate: float = 0.8
    noise: float = 0.5
    noise_fine: float = 0.15
    relation_strength: float = 0.5
    freq_scale: float = 2.5
    freq_scale_fine: float = 15.0
    container_min_scale: float = 1.45
    container_max_scale: float = 1.75
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.relation_strength <= 1.0:
            raise ConfigError("relation_strength must lie in [0, 1]")
        if self.K < 1 or not 0 <= self.distractors < self.K:
            raise ConfigError("need K >= 1 and 0 <= distractors < K")
        if self.mean_T < 1.0 or self.max_T < 1:
            raise ConfigError("mean_T and max_T must be at least 1")
        if min(self.jitter, self.anchor_jitter, self.noise, self.noise_fine) < 0:
            raise ConfigError("jitter and noise levels must be >= 0")
        if not 0.0 <= self.anchor_rate <= 1.0 or not 0.0 <= self.mirage_rate <= 1.0:
            raise ConfigError("anchor_rate and mirage_rate must lie in [0, 1]")
        if self.freq_scale <= 0 or self.freq_scale_fine <= 0:
            raise ConfigError("frequency scales must be positive")
        if not 1.0 < self.container_min_scale <= self.container_max_scale:
            raise ConfigError("container scales must satisfy 1 < min <= max")
        if self.d_text < 2 or self.d_text % 2:
            raise ConfigError("d_text must be an even number >= 2")
        if self.d_vis < 7 or (self.d_vis - 5) % 2:
            raise ConfigError("d_vis must be 5 spatial dims plus an even count >= 2")
        if self.d_ctx < 1:
            raise ConfigError("d_ctx must be >= 1")


def _fine_rows(n: int) -> np.ndarray:
    """Row mask: leading half coarse, trailing half fine.

    Coarse rows localize a box within the square (and keep a linear
    probe of the encoded geometry viable); fine rows resolve offsets at
    the jitter scale, which is what graded within-cluster credit needs.
    """
    return np.arange(n) >= (n + 1) // 2


def _freq_block(
    n: int, cfg: GeneratorConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    fine = _fine_rows(n)
    scales = np.where(fine, cfg.freq_scale_fine, cfg.freq_scale)
    return rng.normal(0.0, 1.0, size=(n, 4)) * scales[:, None], fine


def _feature_frequencies(cfg: GeneratorConfig):
    """Fixed random frequency banks; the leading rows are shared.

    Returns (region_freqs, region_fine, phrase_freqs, phrase_fine) where
    the ``*_fine`` vectors mark rows drawn at the fine scale.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(_FEATURE_KEY,))
    )
    n_region = (cfg.d_vis - 5) // 2
    n_phrase = cfg.d_text // 2
    n_shared = min(n_region, n_phrase)
    shared, shared_fine = _freq_block(n_shared, cfg, rng)

    def extra(n):
        # Unshared rows stay coarse: they only add geometry channels and
        # keeping them smooth preserves linear decodability.
        return rng.normal(0.0, cfg.freq_scale, size=(n, 4)), np.zeros(n, dtype=bool)

    extra_region, extra_region_fine = extra(n_region - n_shared)
    extra_phrase, extra_phrase_fine = extra(n_phrase - n_shared)
    region_freqs = np.concatenate([shared, extra_region], axis=0)
    region_fine = np.concatenate([shared_fine, extra_region_fine])
    phrase_freqs = np.concatenate([shared, extra_phrase], axis=0)
    phrase_fine = np.concatenate([shared_fine, extra_phrase_fine])
    return region_freqs, region_fine, phrase_freqs, phrase_fine


def _sinusoid_embed(boxes: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    phases = box_center_size(boxes) @ freqs.T
    return np.concatenate([np.cos(phases), np.sin(phases)], axis=-1)


def _channel_noise(cfg: GeneratorConfig, fine_rows: np.ndarray) -> np.ndarray:
    """Per-dimension noise scale for a [cos || sin] embedding block.

    Coarse channels take the base noise (cross-cluster ambiguity that
    pairwise structure can repair); fine channels stay cleaner so that
    graded within-cluster credit remains resolvable.
    """
    per_row = np.where(fine_rows, cfg.noise_fine, cfg.noise)
    return np.concatenate([per_row, per_row])


def _random_box(rng: np.random.Generator) -> np.ndarray:
    w = rng.uniform(_SIZE_LO, _SIZE_HI)
    h = rng.uniform(_SIZE_LO, _SIZE_HI)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def _sample_length(cfg: GeneratorConfig, rng: np.random.Generator) -> int:
    # Truncated geometric: resample anything beyond max_T.
    p = 1.0 / cfg.mean_T
    while True:
        t = int(rng.geometric(p))
        if t <= cfg.max_T:
            return t


def _jittered_copy(
    box: np.ndarray, jitter: float, rng: np.random.Generator
) -> np.ndarray:
    cx, cy, w, h = box_center_size(box)
    cx += rng.normal(0.0, jitter) * w
    cy += rng.normal(0.0, jitter) * h
    w *= np.exp(rng.normal(0.0, jitter))
    h *= np.exp(rng.normal(0.0, jitter))
    cx = np.clip(cx, w / 2, 1 - w / 2)
    cy = np.clip(cy, h / 2, 1 - h / 2)
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def _container_box(
    box: np.ndarray, cfg: GeneratorConfig, rng: np.random.Generator
) -> np.ndarray:
    """An oversized, nearly centered copy whose overlap straddles the 0.5 bar.

    Scaling both axes by s puts the overlap at 1/s**2, so the configured
    scale range controls how often the container counts as correct.
    These are the deliberately tempting decoys: well centered (easy for
    a matcher to score high) but usually just below the accuracy bar.
    """
    cx, cy, w, h = box_center_size(box)
    s = rng.uniform(cfg.container_min_scale, cfg.container_max_scale)
    cx += rng.normal(0.0, 0.05) * w
    cy += rng.normal(0.0, 0.05) * h
    w, h = w * s, h * s
    cx = np.clip(cx, w / 2, 1 - w / 2)
    cy = np.clip(cy, h / 2, 1 - h / 2)
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def generate_instance(
    cfg: GeneratorConfig, rng: np.random.Generator, instance_id: str = "inst"
) -> Instance:
    """Sample one instance from the given stream position."""
    region_freqs, region_fine, phrase_freqs, phrase_fine = _feature_frequencies(cfg)
    T = _sample_length(cfg, rng)

    golds = np.empty((T, 4))
    constrained = np.zeros(max(T - 1, 0), dtype=bool)
    golds[0] = _random_box(rng)
    for t in range(1, T):
        w = rng.uniform(_SIZE_LO, _SIZE_HI)
        h = rng.uniform(_SIZE_LO, _SIZE_HI)
        if rng.random() < cfg.relation_strength:
            constrained[t - 1] = True
            prev_cx = 0.5 * (golds[t - 1, 0] + golds[t - 1, 2])
            cx = (prev_cx + rng.uniform(_SHIFT_LO, _SHIFT_HI)) % 1.0
            cx = np.clip(cx, w / 2, 1 - w / 2)
        else:
            cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        golds[t] = [cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]

    # Candidate slots per gold, in round-robin order.  The first slot is a
    # moderately jittered copy so every phrase stays solvable.  The second
    # is, with probability anchor_rate, a near-exact anchor copy; the
    # third, with probability mirage_rate, a mirage: a candidate whose
    # FEATURES are computed from a near-exact copy of the gold but whose
    # actual box lies elsewhere (a descriptor that looks right and is
    # wrong).  The fourth is an oversized container decoy; the rest are
    # moderate copies.  Anchors and mirages are indistinguishable in
    # feature space; only graded overlap credit tells a trainer that the
    # exact-match pattern is unreliable.
    has_anchor = rng.random(T) < cfg.anchor_rate
    has_mirage = rng.random(T) < cfg.mirage_rate
    dup_slots = cfg.K - cfg.distractors
    slot_counts = np.bincount(
        [s % T for s in range(dup_slots)], minlength=T
    )
    candidates = np.empty((cfg.K, 4))
    feature_boxes = np.empty((cfg.K, 4))
    seen = np.zeros(T, dtype=int)
    for s in range(dup_slots):
        t = s % T
        seen[t] += 1
        occurrence = seen[t]
        if occurrence == 2 and has_anchor[t] and slot_counts[t] >= 2:
            candidates[s] = _jittered_copy(golds[t], cfg.anchor_jitter, rng)
            feature_boxes[s] = candidates[s]
        elif occurrence == 3 and has_mirage[t] and slot_counts[t] >= 3:
            candidates[s] = _random_box(rng)
            feature_boxes[s] = _jittered_copy(golds[t], cfg.anchor_jitter, rng)
        elif occurrence == 4 and slot_counts[t] >= 4:
            candidates[s] = _container_box(golds[t], cfg, rng)
            feature_boxes[s] = candidates[s]
        else:
            candidates[s] = _jittered_copy(golds[t], cfg.jitter, rng)
            feature_boxes[s] = candidates[s]
    for s in range(dup_slots, cfg.K):
        candidates[s] = _random_box(rng)
        feature_boxes[s] = candidates[s]
    perm = rng.permutation(cfg.K)
    candidates = candidates[perm]
    feature_boxes = feature_boxes[perm]

    appearance = _sinusoid_embed(feature_boxes, region_freqs)
    appearance += _channel_noise(cfg, region_fine) * rng.standard_normal(
        appearance.shape
    )
    spatial = np.concatenate(
        [
            feature_boxes,
            (
                (feature_boxes[:, 2] - feature_boxes[:, 0])
                * (feature_boxes[:, 3] - feature_boxes[:, 1])
            )[:, None],
        ],
        axis=1,
    )
    region_feats = np.concatenate([appearance, spatial], axis=1)

    phrase_feats = _sinusoid_embed(golds, phrase_freqs)
    phrase_feats += _channel_noise(cfg, phrase_fine) * rng.standard_normal(
        phrase_feats.shape
    )

    if T > 1:
        context = np.zeros((T - 1, cfg.d_ctx))
        context[:, 0] = constrained.astype(np.float64)
        context += cfg.noise * rng.standard_normal(context.shape)
    else:
        context = np.zeros((0, cfg.d_ctx))

    return Instance(
        id=instance_id,
        candidate_boxes=candidates,
        region_feats=region_feats,
        phrase_feats=phrase_feats,
        context_feats=context,
        gold_boxes=golds,
    )


def split_rng(cfg: GeneratorConfig, split: str, index: int) -> np.random.Generator:
    """Independent generator for one (split, index) stream position."""
    if split not in _SPLIT_KEYS:
        raise ConfigError(f"unknown split {split!r}; expected one of {sorted(_SPLIT_KEYS)}")
    return np.random.default_rng(
        np.random.SeedSequence(cfg.seed, spawn_key=(_SPLIT_KEYS[split], index))
    )


def generate_split(cfg: GeneratorConfig, split: str, count: int) -> list[Instance]:
    return [
        generate_instance(cfg, split_rng(cfg, split, i), f"{split}-{i:05d}")
        for i in range(count)
    ]


def write_instances(path, instances):
    """Line-delimited UTF-8 records behind a one-line schema header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA_NAME, "version": SCHEMA_VERSION}))
        fh.write("\n")
        for inst in instances:
            record = {
                "id": inst.id,
                "T": inst.T,
                "K": inst.K,
                "candidate_boxes": inst.candidate_boxes.tolist(),
                "region_feats": inst.region_feats.tolist(),
                "phrase_feats": inst.phrase_feats.tolist(),
                "context_feats": None
                if inst.context_feats is None
                else inst.context_feats.tolist(),
                "gold_boxes": inst.gold_boxes.tolist(),
            }
            fh.write(json.dumps(record))
            fh.write("\n")


_RECORD_FIELDS = (
    "id",
    "T",
    "K",
    "candidate_boxes",
    "region_feats",
    "phrase_feats",
    "context_feats",
    "gold_boxes",
)


def _instance_from_record(record: dict, lineno: int) -> Instance:
    if not isinstance(record, dict):
        raise SchemaError(f"line {lineno}: record is not an object")
    missing = [f for f in _RECORD_FIELDS if f not in record]
    if missing:
        raise SchemaError(f"line {lineno}: missing fields {missing}")
    unknown = [f for f in record if f not in _RECORD_FIELDS]
    if unknown:
        raise SchemaError(f"line {lineno}: unknown fields {unknown}")
    inst_id = record["id"]
    try:
        inst = Instance(
            id=str(inst_id),
            candidate_boxes=np.asarray(record["candidate_boxes"], dtype=np.float64),
            region_feats=np.asarray(record["region_feats"], dtype=np.float64),
            phrase_feats=np.asarray(record["phrase_feats"], dtype=np.float64),
            context_feats=None
            if record["context_feats"] is None
            else np.asarray(record["context_feats"], dtype=np.float64),
            gold_boxes=np.asarray(record["gold_boxes"], dtype=np.float64),
        )
    except (ContractViolation, ValueError) as exc:
        raise SchemaError(f"line {lineno} (id={inst_id!r}): {exc}") from exc
    if inst.T != record["T"] or inst.K != record["K"]:
        raise SchemaError(
            f"line {lineno} (id={inst_id!r}): declared T/K "
            f"({record['T']}, {record['K']}) do not match array shapes "
            f"({inst.T}, {inst.K})"
        )
    return inst


def read_instances(path) -> list[Instance]:
    """Parse and validate an instance file; failures name the line and id."""
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line 1: header is not valid JSON ({exc})") from exc
        if (
            not isinstance(header, dict)
            or header.get("schema") != SCHEMA_NAME
            or header.get("version") != SCHEMA_VERSION
        ):
            raise SchemaError(
                f"line 1: expected header for {SCHEMA_NAME} v{SCHEMA_VERSION}, "
                f"got {header_line.strip()!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: malformed record ({exc})") from exc
            instances.append(_instance_from_record(record, lineno))
    return instances


def build_targets(inst: Instance, threshold: float = 0.5):
    """Soft target rows plus hard (max-overlap) labels for every phrase."""
    rows = np.empty((inst.T, inst.K))
    hard = np.empty(inst.T, dtype=np.intp)
    for t in range(inst.T):
        overlaps = iou(inst.candidate_boxes, inst.gold_boxes[t])
        rows[t] = soft_targets(inst.candidate_boxes, inst.gold_boxes[t], threshold)
        hard[t] = int(overlaps.argmax())
    return SoftTargets(rows), hard
