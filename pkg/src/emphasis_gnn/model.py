"""Three-branch emphasis model.

* sequence encoder: word and POS-tag embeddings into a 2-layer BiGRU
* word-similarity branch: gated residual graph convolution over the WSG
* structure branch: masked self-attention over the parse-derived SSG

The head concatenates ``[h_i, v_i, w_i]`` (whichever branches the variant
keeps), applies a one-hidden-layer network and a softmax over B/I/O.

Batches of sentences are processed together: word rows are stacked, the
BiGRU runs over a padded batch inside one fused tape operation, and the two
graphs become block-diagonal so sentences never exchange information.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag
from scipy.special import expit

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

VARIANTS = ("full", "no_wsg", "no_ssg", "no_both")
# ssg_only is the structure-branch classifier used for tag pretraining.
ALL_VARIANTS = VARIANTS + ("ssg_only",)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    d1: int = 300
    d2: int = 50
    hidden: int = 512
    d_s: int = 300
    head_hidden: int = 256
    gru_layers: int = 2
    graph_layers: int = 2
    leaky_slope: float = 0.2
    dropout: float = 0.5
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in ALL_VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must lie in [0, 1)")
        for name in ("d1", "d2", "hidden", "d_s", "head_hidden", "gru_layers", "graph_layers"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")

    @classmethod
    def glove(cls, **overrides):
        return cls(**{**dict(d1=300, d2=50, hidden=512, d_s=300, head_hidden=256), **overrides})

    @property
    def uses_encoder(self):
        return self.variant != "ssg_only"

    @property
    def uses_wsg(self):
        return self.variant in ("full", "no_ssg")

    @property
    def uses_ssg(self):
        return self.variant in ("full", "no_wsg", "ssg_only")

    @property
    def head_input(self):
        width = 2 * self.hidden if self.uses_encoder else 0
        if self.uses_ssg:
            width += self.d_s
        if self.uses_wsg:
            width += self.d1
        return width

    def to_dict(self):
        return asdict(self)


def branch_of(name: str) -> str:
    """Which model branch a parameter belongs to."""
    if name.startswith(("gru.", "tag_embed")):
        return "encoder"
    if name == "word_embed":
        return "shared"
    if name.startswith("gcn."):
        return "wsg"
    if name.startswith(("attn.", "ssg_embed")):
        return "ssg"
    return "head"


class GRUParams(NamedTuple):
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor


GRU_FIELDS = GRUParams._fields


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, n_words: int, n_tags: int, rng,
                word_init: Optional[np.ndarray] = None) -> Dict[str, Tensor]:
    """Fresh parameters for every branch; the head is sized for the variant."""
    c = config
    p: Dict[str, np.ndarray] = {}
    if word_init is not None:
        word_init = np.asarray(word_init, dtype=np.float64)
        if word_init.shape != (n_words, c.d1):
            raise ShapeError(f"word_init must be {(n_words, c.d1)}, got {word_init.shape}")
        p["word_embed"] = word_init.copy()
    else:
        p["word_embed"] = rng.uniform(-0.1, 0.1, size=(n_words, c.d1))
    p["tag_embed"] = rng.uniform(-0.1, 0.1, size=(n_tags, c.d2))
    d_in = c.d1 + c.d2
    for layer in range(c.gru_layers):
        for direction in ("fwd", "bwd"):
            pre = f"gru.{layer}.{direction}."
            for gate in "zrh":
                p[pre + "W_" + gate] = _glorot(rng, d_in, c.hidden)
            for gate in "zrh":
                p[pre + "U_" + gate] = _glorot(rng, c.hidden, c.hidden)
            for gate in "zrh":
                p[pre + "b_" + gate] = np.zeros(c.hidden)
        d_in = 2 * c.hidden
    for layer in range(c.graph_layers):
        p[f"gcn.{layer}.W"] = _glorot(rng, c.d1, c.d1)
        p[f"gcn.{layer}.Wg"] = _glorot(rng, c.d1, c.d1)
    p["ssg_embed"] = rng.uniform(-0.1, 0.1, size=(n_tags, c.d_s))
    for layer in range(c.graph_layers):
        for k in ("Wk", "Wq", "Wv"):
            p[f"attn.{layer}.{k}"] = _glorot(rng, c.d_s, c.d_s)
    p["head.W1"] = _glorot(rng, c.head_input, c.head_hidden)
    p["head.b1"] = np.zeros(c.head_hidden)
    p["head.W2"] = _glorot(rng, c.head_hidden, 3)
    p["head.b2"] = np.zeros(3)
    return {name: Tensor(arr, requires_grad=True, name=name) for name, arr in p.items()}


def gru_params(params: Dict[str, Tensor], layer: int, direction: str) -> GRUParams:
    pre = f"gru.{layer}.{direction}."
    return GRUParams(*(params[pre + f] for f in GRU_FIELDS))


def dropout_mask(shape, rate: float, rng=None, mode: str = "train") -> np.ndarray:
    """Inverted-dropout mask: Bernoulli(1 - rate) / (1 - rate) in training."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return np.ones(shape)
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _dropout(x: Tensor, rate, rng, mode) -> Tensor:
    if mode != "train" or rate == 0.0:
        return x
    return ad.mul(x, Tensor(dropout_mask(x.shape, rate, rng, mode)))


# ---------------------------------------------------------------------------
# sequence encoder


def gru_cell(x: Tensor, h_prev: Tensor, p: GRUParams) -> Tensor:
    """One GRU step built from primitive tape operations.

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    c = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * c
    """
    if x.shape[-1] != p.W_z.shape[0] or h_prev.shape[-1] != p.U_z.shape[0]:
        raise ShapeError(f"gru_cell: input {x.shape} / state {h_prev.shape} do not match "
                         f"weights {p.W_z.shape} / {p.U_z.shape}")
    z = ad.sigmoid(x @ p.W_z + h_prev @ p.U_z + p.b_z)
    r = ad.sigmoid(x @ p.W_r + h_prev @ p.U_r + p.b_r)
    c = ad.tanh(x @ p.W_h + (r * h_prev) @ p.U_h + p.b_h)
    return (1.0 - z) * h_prev + z * c


def _pad_index(lengths, reverse):
    """(B, T) map from padded slots to stacked rows, longest sentence first.

    Padding slots hold the sentinel ``sum(lengths)``.
    """
    lengths = np.asarray(lengths)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    order = np.argsort(-lengths, kind="stable")
    n_total = int(lengths.sum())
    idx = np.full((len(lengths), int(lengths.max())), n_total, dtype=np.intp)
    for row, b in enumerate(order):
        n = int(lengths[b])
        pos = np.arange(n)
        idx[row, :n] = offsets[b] + (n - 1 - pos if reverse else pos)
    return idx, lengths[order]


def gru_sequence(X: Tensor, lengths: Sequence[int], p: GRUParams, reverse: bool = False) -> Tensor:
    """Run a GRU over every sentence of a stacked batch in one tape operation.

    ``X`` stacks the rows of consecutive sentences with the given lengths.
    With ``reverse`` each sentence is read right to left.  Output row k is
    the hidden state at the position of input row k.  Same recurrence as
    :func:`gru_cell`; backward is hand-written backpropagation through time.
    Sentences are sorted by length so step t only touches the sentences
    that are still running.
    """
    lengths = [int(n) for n in lengths]
    if not lengths or min(lengths) < 1:
        raise ContractError("every sentence needs at least one word")
    N, d = X.shape
    if sum(lengths) != N:
        raise ShapeError(f"lengths sum to {sum(lengths)} but X has {N} rows")
    h = p.U_z.shape[0]
    idx, sorted_len = _pad_index(lengths, reverse)
    B, T = idx.shape
    active = [(sorted_len > t).sum() for t in range(T)]
    valid = idx < N
    targets = idx[valid]

    Wcat = np.concatenate([p.W_z.data, p.W_r.data, p.W_h.data], axis=1)
    bcat = np.concatenate([p.b_z.data, p.b_r.data, p.b_h.data])
    Uzr = np.concatenate([p.U_z.data, p.U_r.data], axis=1)
    Uh = p.U_h.data
    A_rows = X.data @ Wcat + bcat
    A = np.zeros((B, T, 3 * h))
    A[valid] = A_rows[targets]

    Hprev = np.zeros((B, T, h))
    Z = np.zeros((B, T, h))
    R = np.zeros((B, T, h))
    C = np.zeros((B, T, h))
    Hout = np.zeros((B, T, h))
    state = np.zeros((B, h))
    for t in range(T):
        a = active[t]
        hp = state[:a]
        Hprev[:a, t] = hp
        zr = expit(A[:a, t, :2 * h] + hp @ Uzr)
        z, r = zr[:, :h], zr[:, h:]
        c = np.tanh(A[:a, t, 2 * h:] + (r * hp) @ Uh)
        new = hp + z * (c - hp)
        state[:a] = new
        Z[:a, t], R[:a, t], C[:a, t], Hout[:a, t] = z, r, c, new

    out = np.empty((N, h))
    out[targets] = Hout[valid]

    def back(g):
        dH = np.zeros((B, T, h))
        dH[valid] = g[targets]
        dA = np.zeros((B, T, 3 * h))
        UzrT, UhT = Uzr.T, Uh.T
        dh = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            a = active[t]
            dht = dh[:a] + dH[:a, t]
            z, r, c, hp = Z[:a, t], R[:a, t], C[:a, t], Hprev[:a, t]
            dcp = dht * z * (1.0 - c * c)
            drh = dcp @ UhT
            dzr = np.concatenate([dht * (c - hp) * z * (1.0 - z), drh * hp * r * (1.0 - r)], axis=1)
            dA[:a, t, :2 * h] = dzr
            dA[:a, t, 2 * h:] = dcp
            dh[:a] = dht * (1.0 - z) + drh * r + dzr @ UzrT
        dA_rows = np.empty((N, 3 * h))
        dA_rows[targets] = dA[valid]
        hprev_rows = Hprev[valid]
        rh_rows = R[valid] * hprev_rows
        dA_v = dA[valid]
        Xd = X.data
        grads = [
            dA_rows @ Wcat.T if X.requires_grad else None,
            Xd.T @ dA_rows[:, :h], Xd.T @ dA_rows[:, h:2 * h], Xd.T @ dA_rows[:, 2 * h:],
            hprev_rows.T @ dA_v[:, :h], hprev_rows.T @ dA_v[:, h:2 * h], rh_rows.T @ dA_v[:, 2 * h:],
            dA_rows[:, :h].sum(axis=0), dA_rows[:, h:2 * h].sum(axis=0), dA_rows[:, 2 * h:].sum(axis=0),
        ]
        return tuple(grads)

    return ad.record(out, (X,) + tuple(p), back)


def encode_sequence(words: Tensor, tags: Tensor, lengths: Sequence[int], params: Dict[str, Tensor],
                    config: ModelConfig, mode: str = "eval", rng=None) -> Tensor:
    """Stacked BiGRU over ``[w_i, e_i]``; returns rows ``[forward, backward]``."""
    x = ad.concat([words, tags])
    for layer in range(config.gru_layers):
        if layer > 0:
            x = _dropout(x, config.dropout, rng, mode)
        fwd = gru_sequence(x, lengths, gru_params(params, layer, "fwd"), reverse=False)
        bwd = gru_sequence(x, lengths, gru_params(params, layer, "bwd"), reverse=True)
        x = ad.concat([fwd, bwd])
    return x


# ---------------------------------------------------------------------------
# graph branches


def gcn_gated_layer(H: Tensor, A_hat, W: Tensor, W_g: Tensor, slope: float = 0.2,
                    gate: Optional[Tensor] = None) -> Tensor:
    """leaky_relu(M + (A_hat M) * C) with M = H W and C = sigmoid(H W_g).

    ``gate`` replaces C when given (used to probe the residual path).
    """
    A_hat = A_hat if isinstance(A_hat, Tensor) else Tensor(A_hat)
    M = H @ W
    C = ad.sigmoid(H @ W_g) if gate is None else gate
    return ad.leaky_relu(M + (A_hat @ M) * C, slope)


def graph_attention_layer(V: Tensor, neighbors, W_k: Tensor, W_q: Tensor, W_v: Tensor) -> Tensor:
    """Each node mixes the values of its neighbours with softmax(q_i . k_j) weights."""
    mask = np.asarray(neighbors, dtype=bool)
    if mask.shape != (V.shape[0], V.shape[0]):
        raise ShapeError(f"neighbour mask {mask.shape} does not match {V.shape[0]} nodes")
    if not mask.any(axis=1).all():
        node = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise ContractError(f"node {node} has no neighbours (missing self-loop?)")
    K = V @ W_k
    Q = V @ W_q
    values = V @ W_v
    attn = ad.masked_softmax_rows(Q @ ad.transpose(K), mask)
    return attn @ values


# ---------------------------------------------------------------------------
# head and loss


def classify(features: Tensor, params: Dict[str, Tensor], slope: float = 0.2,
             dropout: float = 0.0, mode: str = "eval", rng=None) -> Tensor:
    """softmax(W2 leaky_relu(W1 x + b1) + b2) per row of ``features``."""
    x = _dropout(features, dropout, rng, mode)
    hidden = ad.leaky_relu(x @ params["head.W1"] + params["head.b1"], slope)
    return ad.softmax_rows(hidden @ params["head.W2"] + params["head.b2"])


def _as_targets(targets, n) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1:
        if t.shape[0] != n:
            raise ShapeError(f"{t.shape[0]} labels for {n} words")
        if ((t < 0) | (t > 2)).any():
            raise ContractError("labels must be 0 (B), 1 (I) or 2 (O)")
        onehot = np.zeros((n, 3))
        onehot[np.arange(n), t.astype(np.intp)] = 1.0
        return onehot
    if t.shape != (n, 3):
        raise ShapeError(f"target counts must be {(n, 3)}, got {t.shape}")
    return t.astype(np.float64)


def nll_loss(p: Tensor, targets, return_clamped: bool = False):
    """Summed negative log-likelihood of gold labels.

    ``targets`` is a label vector (B=0, I=1, O=2) or an n x 3 matrix of
    label counts, in which case the loss is the sum over the counted
    samples.  Probabilities below 1e-12 at gold labels are clamped.
    """
    weights = _as_targets(targets, p.shape[0])
    clamped = int(((weights > 0) & (p.data < PROB_FLOOR)).sum())
    loss = ad.mul(ad.sum_all(ad.mul(Tensor(weights), ad.log(p, floor=PROB_FLOOR))), -1.0)
    return (loss, clamped) if return_clamped else loss


# ---------------------------------------------------------------------------
# full forward pass


@dataclass
class ForwardOutput:
    """Stacked per-word outputs of one or more sentences."""

    p: Tensor
    h: Optional[Tensor] = None
    w_L: Optional[Tensor] = None
    v_L: Optional[Tensor] = None
    lengths: List[int] = field(default_factory=list)

    def emphasis(self) -> np.ndarray:
        """p(B) + p(I) per stacked word."""
        return self.p.data[:, 0] + self.p.data[:, 1]

    def split(self, values: np.ndarray) -> List[np.ndarray]:
        return np.split(values, np.cumsum(self.lengths)[:-1])


def forward(params: Dict[str, Tensor], config: ModelConfig, examples, mode: str = "eval",
            rng=None) -> ForwardOutput:
    """Run the model over a batch of prepared examples (or a single one)."""
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not isinstance(examples, (list, tuple)):
        examples = [examples]
    if not examples:
        raise ContractError("forward needs at least one example")
    lengths = [ex.n for ex in examples]
    word_ids = np.concatenate([ex.word_ids for ex in examples])
    out = ForwardOutput(p=None, lengths=lengths)
    parts = []

    words = None
    if config.uses_encoder or config.uses_wsg:
        words = ad.gather_rows(params["word_embed"], word_ids)
    if config.uses_encoder:
        pos = ad.gather_rows(params["tag_embed"], np.concatenate([ex.pos_ids for ex in examples]))
        out.h = encode_sequence(words, pos, lengths, params, config, mode, rng)
        parts.append(out.h)
    if config.uses_ssg:
        V = ad.gather_rows(params["ssg_embed"], np.concatenate([ex.node_ids for ex in examples]))
        mask = block_diag(*[ex.adjacency for ex in examples]).astype(bool)
        for layer in range(config.graph_layers):
            V = graph_attention_layer(V, mask, params[f"attn.{layer}.Wk"],
                                      params[f"attn.{layer}.Wq"], params[f"attn.{layer}.Wv"])
        offsets = np.cumsum([0] + [ex.adjacency.shape[0] for ex in examples[:-1]])
        leaves = np.concatenate([ex.alignment + off for ex, off in zip(examples, offsets)])
        out.v_L = ad.gather_rows(V, leaves)
        parts.append(out.v_L)
    if config.uses_wsg:
        A_hat = Tensor(block_diag(*[ex.a_hat for ex in examples]))
        H = words
        for layer in range(config.graph_layers):
            H = gcn_gated_layer(H, A_hat, params[f"gcn.{layer}.W"], params[f"gcn.{layer}.Wg"],
                                config.leaky_slope)
        out.w_L = H
        parts.append(out.w_L)
    features = parts[0] if len(parts) == 1 else ad.concat(parts)
    out.p = classify(features, params, config.leaky_slope, config.dropout, mode, rng)
    return out
