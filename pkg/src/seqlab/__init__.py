"""seqlab: a desk-scale multi-task sequence-to-sequence training lab.

Pointer-generator decoding with coverage, soft layer-specific parameter
sharing across tasks, and a small reverse-mode autodiff core on plain numpy
arrays.  Everything runs on a CPU in minutes and is verified by gradient
checks, distribution invariants, and exact metric oracles.
"""

from .checkpoint import (
    CHECKPOINT_VERSION,
    Checkpoint,
    load_checkpoint,
    restore_optimizer,
    restore_task_params,
    save_checkpoint,
)
from .config import (
    DecodeConfig,
    EvalConfig,
    RunConfig,
    TaskDef,
    load_run_config,
    parse_run_config,
)
from .data import (
    Batch,
    EncodedExample,
    Example,
    SynthSpec,
    TaskCorpora,
    Vocab,
    encode_example,
    encode_source_only,
    ids_to_tokens,
    load_corpus,
    load_sources,
    make_batch,
    make_task_corpora,
    save_corpus,
    task_seed,
)
from .decoding import Hypothesis, beam_search, greedy_decode, score_sequence
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    NumericError,
    SeqLabError,
)
from .metrics import (
    EvalItem,
    EvalReport,
    Score,
    evaluate_corpus,
    lcs_length,
    novel_ngram_pct,
    repetition_rate,
    rouge_l,
    rouge_n,
    saliency_match,
)
from .model import ModelConfig, forward_loss
from .sharing import Mode, ParamRegistry, SharingPlan, TaskParams, single_task_params
from .tensor import (
    GradCheckReport,
    Tensor,
    backward,
    gradient_check,
    no_grad,
    tensor,
)
from .training import (
    AdamState,
    RunResult,
    TrainConfig,
    TrainTask,
    in_vocab_fraction,
    mixing_scheduler,
    penalty_descent,
    read_metrics,
    token_accuracy,
    train,
    validation_loss,
    warm_start,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Batch",
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DecodeConfig",
    "DimensionError",
    "EncodedExample",
    "EvalConfig",
    "EvalItem",
    "EvalReport",
    "Example",
    "GradCheckReport",
    "Hypothesis",
    "Mode",
    "ModelConfig",
    "NumericError",
    "ParamRegistry",
    "RunConfig",
    "RunResult",
    "Score",
    "SeqLabError",
    "SharingPlan",
    "SynthSpec",
    "TaskCorpora",
    "TaskDef",
    "TaskParams",
    "Tensor",
    "TrainConfig",
    "TrainTask",
    "Vocab",
    "backward",
    "beam_search",
    "encode_example",
    "encode_source_only",
    "evaluate_corpus",
    "forward_loss",
    "gradient_check",
    "greedy_decode",
    "ids_to_tokens",
    "lcs_length",
    "load_checkpoint",
    "load_corpus",
    "load_run_config",
    "load_sources",
    "make_batch",
    "make_task_corpora",
    "mixing_scheduler",
    "no_grad",
    "novel_ngram_pct",
    "parse_run_config",
    "penalty_descent",
    "read_metrics",
    "repetition_rate",
    "restore_optimizer",
    "restore_task_params",
    "rouge_l",
    "rouge_n",
    "saliency_match",
    "save_checkpoint",
    "save_corpus",
    "score_sequence",
    "single_task_params",
    "task_seed",
    "tensor",
    "train",
    "token_accuracy",
    "in_vocab_fraction",
    "validation_loss",
    "warm_start",
    "__version__",
]
