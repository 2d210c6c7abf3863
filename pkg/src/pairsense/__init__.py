"""Multimodal detection of confusion and conflict in collaborative dialogue."""

from .datamodel import Corpus, Label, NormStats, UtteranceRecord, load_corpus, save_corpus, synth_corpus
from .errors import DataError, NumericError, PairsenseError, ParseError, SchemaError
from .evaluation import (
    AlignmentCounts,
    EvalReport,
    FoldPlan,
    cohens_kappa,
    cross_validate,
    error_analysis,
    metrics,
    plan_folds,
    wer,
)
from .fusionmodels import (
    FusionSpec,
    ModalityChannel,
    MlpClassifier,
    early_fuse,
    late_fuse,
    tensor_fuse,
    xattn_fuse,
)
from .pipeline import TrainedPipeline, fit_pipeline
from .resample import SmoteConfig, smote
from .seqembed import SeqEncoderConfig, SeqEncoderModel, encode, tokenize_frames
from .trainer import TrainConfig, make_validation_split, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentCounts", "Corpus", "DataError", "EvalReport", "FoldPlan", "FusionSpec",
    "Label", "MlpClassifier", "ModalityChannel", "NormStats", "NumericError",
    "PairsenseError", "ParseError", "SchemaError", "SeqEncoderConfig", "SeqEncoderModel",
    "SmoteConfig", "TrainConfig", "TrainedPipeline", "UtteranceRecord",
    "cohens_kappa", "cross_validate", "early_fuse", "encode", "error_analysis",
    "fit_pipeline", "late_fuse", "load_corpus", "make_validation_split", "metrics",
    "plan_folds", "save_corpus", "smote", "synth_corpus", "tensor_fuse",
    "tokenize_frames", "train", "wer", "xattn_fuse",
]
