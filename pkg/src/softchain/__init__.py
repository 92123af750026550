"""softchain: chain CRFs trained on distributional targets.

Exact log-space inference (partition function, forward-backward
marginals, Viterbi and per-position decoding), an inclusive-KL loss over
factored per-position target distributions with closed-form
moment-matching gradients, bilinear fusion scoring heads with manual
backprop, box-overlap soft targets and delta regression, a seeded
synthetic benchmark, and a brute-force enumeration oracle that every
dynamic program is tested against.
"""

from .boxes import (
    decode_box_deltas,
    encode_box_deltas,
    iou,
    regression_loss,
    smooth_l1,
    soft_targets,
)
from .bruteforce import brute_kl_loss, brute_log_partition, brute_map, brute_marginals
from .crf import (
    Marginals,
    ScoreGradients,
    ScoreSet,
    SoftTargets,
    factored_soft_gradients,
    factored_soft_loss,
    forward_log_partition,
    hard_label_loss,
    marginals,
    one_hot,
    smoothing_decode,
    soft_label_gradients,
    soft_label_loss,
    viterbi_decode,
)
from .data import (
    GeneratorConfig,
    Instance,
    build_targets,
    generate_instance,
    generate_split,
    read_instances,
    write_instances,
)
from .logspace import log_sum_exp, softmax_from_log
from .scoring import (
    ModelConfig,
    ModelParams,
    init_params,
    load_checkpoint,
    lrbp_fuse,
    regress_boxes,
    save_checkpoint,
    score_backward,
    score_instance,
)
from .training import (
    TrainConfig,
    TrainReport,
    adam_step,
    clip_gradients,
    evaluate,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Marginals",
    "ScoreGradients",
    "ScoreSet",
    "SoftTargets",
    "GeneratorConfig",
    "Instance",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "brute_kl_loss",
    "brute_log_partition",
    "brute_map",
    "brute_marginals",
    "build_targets",
    "clip_gradients",
    "decode_box_deltas",
    "encode_box_deltas",
    "evaluate",
    "factored_soft_gradients",
    "factored_soft_loss",
    "forward_log_partition",
    "generate_instance",
    "generate_split",
    "hard_label_loss",
    "init_params",
    "iou",
    "load_checkpoint",
    "log_sum_exp",
    "lrbp_fuse",
    "marginals",
    "one_hot",
    "read_instances",
    "regress_boxes",
    "regression_loss",
    "save_checkpoint",
    "score_backward",
    "score_instance",
    "smooth_l1",
    "smoothing_decode",
    "soft_label_gradients",
    "soft_label_loss",
    "soft_targets",
    "softmax_from_log",
    "train",
    "viterbi_decode",
    "write_instances",
]
