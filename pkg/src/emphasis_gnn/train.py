"""Adam training of the emphasis model.

Every annotator's labelling is a separate sample.  A batch is a shuffled
group of samples; samples sharing a sentence are made adjacent and the
sentence is encoded once, its loss weighted by how many of its samples the
batch holds.  Because the per-sentence loss is linear in the label counts,
this is the same objective as running the samples one by one with a shared
dropout draw.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .autodiff import Tape, Tensor
from .checkpoint import EmphasisModel, save
from .corpus import EmbeddingTable, SentenceRecord, TrainSample, train_samples
from .errors import ContractError, NonFiniteError
from .evaluation import evaluate
from .model import VARIANTS, ModelConfig, dropout_mask, forward, nll_loss
from .parse_tree import ParseTree

__all__ = [
    "TrainConfig", "AdamState", "adam_step", "make_batches", "dropout_mask",
    "split_dev", "train_loop", "pretrain_ssg", "TrainResult",
]

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    dropout: float = 0.5
    leaky_slope: float = 0.2
    graph_layers: int = 2
    gru_layers: int = 2
    d1: int = 300
    d2: int = 50
    hidden: int = 512
    d_s: int = 300
    head_hidden: int = 256
    variant: str = "full"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    dev_fraction: float = 0.1
    select: str = "best"
    freeze_words: bool = False
    pretrain_epochs: int = 0
    grad_clip: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0 or self.pretrain_epochs < 0:
            raise ContractError("lr and batch_size must be positive, epoch counts non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ContractError("dev_fraction must lie in [0, 1)")
        if self.select not in ("best", "last"):
            raise ContractError("select must be 'best' or 'last'")
        if self.variant not in VARIANTS + ("ssg_only",):
            raise ContractError(f"unknown variant {self.variant!r}")

    def model_config(self, variant: Optional[str] = None) -> ModelConfig:
        return ModelConfig(d1=self.d1, d2=self.d2, hidden=self.hidden, d_s=self.d_s,
                           head_hidden=self.head_hidden, gru_layers=self.gru_layers,
                           graph_layers=self.graph_layers, leaky_slope=self.leaky_slope,
                           dropout=self.dropout, variant=variant or self.variant)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict):
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ContractError(f"unknown training settings: {sorted(unknown)}")
        return cls(**values)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@numba.njit(cache=True)
def _adam_kernel(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(theta.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        theta[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Optional[np.ndarray]], state: AdamState,
              config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, in place.

    Parameters whose gradient is None are skipped (their moments are left
    untouched).  Any non-finite gradient aborts the step before anything is
    modified.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ContractError(f"gradient of {name} has shape {g.shape}, parameter {params[name].shape}")
        if not math.isfinite(float(np.sum(g))) and not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in {name}", name)
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        if name not in state.m or state.m[name].shape != p.shape:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if config.weight_decay:
            g = g + config.weight_decay * p.data
        _adam_kernel(p.data.reshape(-1), np.ascontiguousarray(g).reshape(-1),
                     state.m[name].reshape(-1), state.v[name].reshape(-1),
                     config.lr, config.beta1, config.beta2, config.eps_adam, bc1, bc2)
    return state


# ---------------------------------------------------------------------------
# batching


def make_batches(samples: Sequence[TrainSample], batch_size: int, seed) -> List[List[TrainSample]]:
    """Shuffle, cut into batches, and make each sentence's samples adjacent.

    ``seed`` is an int or a numpy Generator (which is advanced).
    """
    if not samples:
        raise ContractError("no samples to batch")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        groups: Dict[int, List[TrainSample]] = {}
        for s in chunk:
            groups.setdefault(s.sentence, []).append(s)
        batches.append([s for group in groups.values() for s in group])
    return batches


def split_dev(n: int, fraction: float, rng) -> Tuple[List[int], List[int]]:
    """Sentence-level train/dev index split."""
    if fraction <= 0 or n < 2:
        return list(range(n)), []
    n_dev = min(n - 1, max(1, int(round(fraction * n))))
    perm = rng.permutation(n)
    dev = sorted(int(i) for i in perm[:n_dev])
    dev_set = set(dev)
    return [i for i in range(n) if i not in dev_set], dev


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: EmphasisModel
    log: List[Tuple]
    best_epoch: int
    final_model: EmphasisModel


def _format_log_row(row) -> str:
    epoch, loss, scores = row
    vals = [f"{loss:.10g}"] + [("nan" if s is None else f"{s:.10g}") for s in scores]
    return "\t".join([str(epoch)] + vals)


def _batch_targets(batch: Sequence[TrainSample], examples):
    groups: Dict[int, np.ndarray] = {}
    for s in batch:
        counts = groups.get(s.sentence)
        if counts is None:
            counts = groups[s.sentence] = np.zeros((examples[s.sentence].n, 3))
        counts[np.arange(len(s.labels)), s.labels] += 1.0
    exs = [examples[k] for k in groups]
    return exs, np.concatenate(list(groups.values()))


def train_loop(records: Sequence[SentenceRecord], trees: Sequence[ParseTree], table: EmbeddingTable,
               config: TrainConfig, dev: Optional[Tuple[Sequence[SentenceRecord], Sequence[ParseTree]]] = None,
               checkpoint_path=None, log_path=None, init_ssg: Optional[np.ndarray] = None,
               model: Optional[EmphasisModel] = None, progress=None) -> TrainResult:
    """Train from scratch (or from ``model``) and return the selected model.

    ``dev`` overrides the automatic sentence-level dev split; pass an empty
    tuple ``((), ())`` to train on everything.  With a dev set the best
    epoch by dev average Match is kept (``select='best'``); otherwise the
    last epoch is kept.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, shuffle_rng, drop_rng, split_rng = (np.random.default_rng(s) for s in seeds)

    records, trees = list(records), list(trees)
    if dev is None:
        train_idx, dev_idx = split_dev(len(records), config.dev_fraction, split_rng)
        dev_records = [records[i] for i in dev_idx]
        dev_trees = [trees[i] for i in dev_idx]
        records = [records[i] for i in train_idx]
        trees = [trees[i] for i in train_idx]
    else:
        dev_records, dev_trees = list(dev[0]), list(dev[1])
    if not records:
        raise ContractError("no training sentences")

    if model is None:
        model = EmphasisModel.create(config.model_config(), records, trees, table, init_rng)
    if init_ssg is None and config.pretrain_epochs > 0 and model.config.uses_ssg:
        init_ssg = pretrain_ssg(records, trees, table, config, dev=((), ()))
    if init_ssg is not None:
        if init_ssg.shape != model.params["ssg_embed"].shape:
            raise ContractError(f"pretrained SSG embeddings {init_ssg.shape} do not match "
                                f"{model.params['ssg_embed'].shape}")
        model.params["ssg_embed"].data = np.array(init_ssg, dtype=np.float64)
    if config.freeze_words:
        model.params["word_embed"].requires_grad = False
    examples = model.prepare(records, trees, table)
    dev_examples = model.prepare(dev_records, dev_trees, table) if dev_records else []
    samples = train_samples(records)
    trainable = {k: v for k, v in model.params.items()
                 if not (config.freeze_words and k == "word_embed")}
    extra = {"train_config": config.to_dict()}

    state = AdamState()
    log: List[Tuple] = []
    best_score, best_epoch = -math.inf, 0
    best = model.copy()
    last_good = best

    def finish():
        if checkpoint_path is not None:
            save(best, checkpoint_path, extra)
        if log_path is not None:
            with open(log_path, "w", encoding="utf-8") as fh:
                fh.writelines(_format_log_row(r) + "\n" for r in log)

    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for batch in make_batches(samples, config.batch_size, shuffle_rng):
            exs, targets = _batch_targets(batch, examples)
            for p in trainable.values():
                p.grad = None
            with Tape() as tape:
                out = forward(model.params, model.config, exs, mode="train", rng=drop_rng)
                loss = nll_loss(out.p, targets) * (1.0 / len(batch))
            value = loss.item()
            if not math.isfinite(value):
                best = last_good
                finish()
                raise NonFiniteError(f"non-finite loss in epoch {epoch}")
            tape.backward(loss)
            grads = {k: p.grad for k, p in trainable.items()}
            if config.grad_clip > 0:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None))
                if norm > config.grad_clip:
                    grads = {k: None if g is None else g * (config.grad_clip / norm) for k, g in grads.items()}
            try:
                adam_step(trainable, grads, state, config)
            except NonFiniteError:
                best = last_good
                finish()
                raise
            total += value * len(batch)
        epoch_loss = total / len(samples)
        scores: List[Optional[float]] = [None] * 5
        if dev_examples:
            report = evaluate(model, dev_examples)
            scores = report.values()
        log.append((epoch, epoch_loss, scores))
        if progress is not None:
            progress(epoch, epoch_loss, scores)
        logger.info("epoch %d loss %.6f dev %s", epoch, epoch_loss, scores)
        snapshot = model.copy()
        last_good = snapshot
        if dev_examples and config.select == "best":
            if scores[-1] > best_score:
                best_score, best_epoch, best = scores[-1], epoch, snapshot
        else:
            best_epoch, best = epoch, snapshot
    finish()
    return TrainResult(best, log, best_epoch, model)


def pretrain_ssg(records: Sequence[SentenceRecord], trees: Sequence[ParseTree], table: EmbeddingTable,
                 config: TrainConfig, epochs: Optional[int] = None, **kwargs) -> np.ndarray:
    """Train the structure-branch-only classifier; return its SSG node embeddings."""
    pre = replace(config, variant="ssg_only", pretrain_epochs=0,
                  epochs=config.pretrain_epochs if epochs is None else epochs)
    result = train_loop(records, trees, table, pre, **kwargs)
    return result.model.params["ssg_embed"].data.copy()


def format_log(log) -> str:
    return "".join(_format_log_row(r) + "\n" for r in log)
