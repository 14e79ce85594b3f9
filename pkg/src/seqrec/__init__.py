"""Sequential-recommendation training with adaptive negative sampling."""

from .data import (InteractionLog, SequenceBatch, Splits, Vocab, build_sequences,
                   five_core_filter, ingest, make_batches, split_leave_one_out)
from .encoder import (EncoderConfig, EncoderParams, encode, init_params,
                      load_checkpoint, save_checkpoint, score_all)
from .evaluation import EvalResult, evaluate
from .samplers import (CurriculumSpec, NegativeDraw, SamplerSpec, beta_schedule,
                       curriculum_step, genni_sample, informative_negatives,
                       sample_popularity, sample_uniform)
from .synthetic import SyntheticSpec, generate_log, write_tsv
from .training import RunMetrics, TrainConfig, adam_step, bpr_loss, nce_loss, train

__version__ = "0.1.0"

__all__ = [
    "InteractionLog", "SequenceBatch", "Splits", "Vocab", "build_sequences",
    "five_core_filter", "ingest", "make_batches", "split_leave_one_out",
    "EncoderConfig", "EncoderParams", "encode", "init_params", "load_checkpoint",
    "save_checkpoint", "score_all", "EvalResult", "evaluate", "CurriculumSpec",
    "NegativeDraw", "SamplerSpec", "beta_schedule", "curriculum_step",
    "genni_sample", "informative_negatives", "sample_popularity", "sample_uniform",
    "SyntheticSpec", "generate_log", "write_tsv", "RunMetrics", "TrainConfig",
    "adam_step", "bpr_loss", "nce_loss", "train",
]
