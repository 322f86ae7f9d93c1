"""Emphasis selection with sentence-structure and word-similarity graphs.

Everything runs on the package's own numpy autodiff engine
(:mod:`emphasis_gnn.autodiff`).
"""

from .autodiff import Tape, Tensor, grad_check
from .checkpoint import EmphasisModel
from .corpus import EmbeddingTable, SentenceRecord, load_embeddings, parse_emphasis_file
from .evaluation import MatchReport, evaluate, match_m, top_m
from .model import ModelConfig, forward
from .parse_tree import ParseTree, TagVocab, build_ssg, parse_sexpr
from .train import TrainConfig, pretrain_ssg, train_loop
from .wsg import build_wsg, normalize_adjacency

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "grad_check", "EmphasisModel", "EmbeddingTable", "SentenceRecord",
    "load_embeddings", "parse_emphasis_file", "MatchReport", "evaluate", "match_m", "top_m",
    "ModelConfig", "forward", "ParseTree", "TagVocab", "build_ssg", "parse_sexpr",
    "TrainConfig", "pretrain_ssg", "train_loop", "build_wsg", "normalize_adjacency",
]
