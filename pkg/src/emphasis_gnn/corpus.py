"""Multi-annotator emphasis data and static word embeddings.

Emphasis file layout: UTF-8, one block per sentence, blocks separated by a
blank line.  A block may open with ``#id <string>``; every other row is
``token<TAB>L1<TAB>...<TAB>L9`` with each label in {B, I, O}.

Embedding file layout: ``token v1 ... vd`` per line, single spaces, no
header.
"""

import io
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, FormatError

logger = logging.getLogger(__name__)

LABELS = ("B", "I", "O")
LABEL_INDEX = {label: k for k, label in enumerate(LABELS)}
N_ANNOTATORS = 9


def _open_text(source) -> Tuple[TextIO, str, bool]:
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        return source, getattr(source, "name", "<stream>"), False
    text = str(source)
    if "\n" in text or "\t" in text:
        return io.StringIO(text), "<string>", False
    return open(text, encoding="utf-8"), text, True


@dataclass(frozen=True)
class SentenceRecord:
    """One sentence with its nine annotator label sequences."""

    id: str
    tokens: Tuple[str, ...]
    annotations: Tuple[Tuple[str, ...], ...]
    emphasis_freq: Tuple[float, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "annotations", tuple(tuple(a) for a in self.annotations))
        if len(self.annotations) != N_ANNOTATORS:
            raise ContractError(
                f"sentence {self.id!r}: expected {N_ANNOTATORS} annotations, "
                f"got {len(self.annotations)}")
        object.__setattr__(self, "emphasis_freq",
                           tuple(aggregate_emphasis(self.annotations, len(self.tokens))))

    def __len__(self):
        return len(self.tokens)

    def label_ids(self) -> np.ndarray:
        """Class ids (B=0, I=1, O=2) as a 9 x n integer array."""
        return np.array([[LABEL_INDEX[lab] for lab in a] for a in self.annotations],
                        dtype=np.intp)

    def label_counts(self) -> np.ndarray:
        """Per-word count of each class over the annotators, n x 3."""
        ids = self.label_ids()
        counts = np.zeros((len(self.tokens), 3))
        for k in range(3):
            counts[:, k] = (ids == k).sum(axis=0)
        return counts


@dataclass(frozen=True)
class TrainSample:
    """One annotator's labelling of one sentence."""

    sentence: int
    annotator: int
    labels: Tuple[int, ...]


def aggregate_emphasis(annotations: Sequence[Sequence[str]], n: Optional[int] = None) -> List[float]:
    """Fraction of annotators marking each position B or I."""
    annotations = [tuple(a) for a in annotations]
    if n is None:
        n = len(annotations[0]) if annotations else 0
    for k, a in enumerate(annotations):
        if len(a) != n:
            raise ContractError(f"annotation {k} has length {len(a)}, expected {n}")
    total = len(annotations)
    return [sum(1 for a in annotations if a[i] != "O") / total for i in range(n)]


def bio_violations(record: SentenceRecord) -> List[Tuple[int, int]]:
    """(annotator, position) pairs where I appears with no earlier B."""
    bad = []
    for k, ann in enumerate(record.annotations):
        seen_b = False
        for i, lab in enumerate(ann):
            if lab == "B":
                seen_b = True
            elif lab == "I" and not seen_b:
                bad.append((k, i))
    return bad


def parse_emphasis_file(source) -> List[SentenceRecord]:
    """Parse an emphasis file (path, text containing newlines, or stream)."""
    stream, name, owned = _open_text(source)
    try:
        return _parse_emphasis_lines(stream, name)
    finally:
        if owned:
            stream.close()


def _parse_emphasis_lines(stream, name) -> List[SentenceRecord]:
    records = []
    block: List[Tuple[int, str]] = []

    def flush():
        if not block:
            return
        rec = _parse_block(block, name, len(records))
        records.append(rec)
        violations = bio_violations(rec)
        if violations:
            logger.warning("%s: sentence %r has %d I label(s) without an earlier B; kept as emphasized",
                           name, rec.id, len(violations))
        block.clear()

    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        block.append((lineno, line))
    flush()
    return records


def _parse_block(rows, name, index) -> SentenceRecord:
    sid = None
    if rows[0][1].startswith("#id"):
        lineno, head = rows[0]
        sid = head[3:].strip()
        if not sid:
            raise FormatError("empty sentence id", source=name, line=lineno)
        rows = rows[1:]
    if not rows:
        raise FormatError("block has an id line but no tokens", source=name, line=lineno)
    tokens, columns = [], [[] for _ in range(N_ANNOTATORS)]
    for lineno, line in rows:
        parts = line.split("\t")
        if len(parts) != 1 + N_ANNOTATORS:
            raise FormatError(f"expected {1 + N_ANNOTATORS} tab-separated columns, got {len(parts)}",
                              source=name, line=lineno)
        token = parts[0]
        if not token or token != token.strip():
            raise FormatError(f"bad token {token!r}", source=name, line=lineno)
        for k, lab in enumerate(parts[1:]):
            if lab not in LABEL_INDEX:
                raise FormatError(f"unknown label {lab!r} in column {k + 2}", source=name, line=lineno)
            columns[k].append(lab)
        tokens.append(token)
    return SentenceRecord(id=sid if sid is not None else str(index), tokens=tuple(tokens),
                          annotations=tuple(tuple(c) for c in columns))


def serialize_emphasis(records: Iterable[SentenceRecord]) -> str:
    """Canonical text form; parsing it back yields equal records."""
    blocks = []
    for rec in records:
        lines = [f"#id {rec.id}"]
        for i, tok in enumerate(rec.tokens):
            lines.append("\t".join([tok] + [a[i] for a in rec.annotations]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""


def train_samples(records: Sequence[SentenceRecord]) -> List[TrainSample]:
    """Nine samples per sentence, one per annotator."""
    samples = []
    for s, rec in enumerate(records):
        ids = rec.label_ids()
        for k in range(N_ANNOTATORS):
            samples.append(TrainSample(s, k, tuple(int(v) for v in ids[k])))
    return samples


class EmbeddingTable:
    """Static word vectors with exact -> lowercase -> mean-vector fallback."""

    def __init__(self, dim: int, vectors: Dict[str, np.ndarray], oov_vector: np.ndarray,
                 duplicates: int = 0):
        self.dim = int(dim)
        self.vectors = vectors
        self.oov_vector = np.asarray(oov_vector, dtype=np.float64)
        self.duplicates = duplicates

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token):
        return token in self.vectors

    def resolve(self, token: str) -> Optional[str]:
        """The table key used for ``token``, or None if it falls back to OOV."""
        if token in self.vectors:
            return token
        low = token.lower()
        if low in self.vectors:
            return low
        return None

    def lookup(self, token: str) -> np.ndarray:
        key = self.resolve(token)
        return self.oov_vector if key is None else self.vectors[key]

    def matrix(self, tokens: Sequence[str]) -> np.ndarray:
        return np.stack([self.lookup(t) for t in tokens]) if tokens else np.zeros((0, self.dim))

    @classmethod
    def from_dict(cls, vectors: Dict[str, Sequence[float]]):
        if not vectors:
            raise ContractError("empty embedding table")
        arrs = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        dim = len(next(iter(arrs.values())))
        return cls(dim, arrs, np.mean(np.stack(list(arrs.values())), axis=0))


def load_embeddings(source, expected_dim: int, keep: Optional[Iterable[str]] = None) -> EmbeddingTable:
    """Read a whitespace-separated embedding file.

    The OOV vector is the mean of every vector in the file.  When ``keep``
    is given only those tokens (and their lowercase forms) are stored, which
    bounds memory for large tables without changing the mean.
    """
    keep_set = None
    if keep is not None:
        keep_set = set()
        for t in keep:
            keep_set.add(t)
            keep_set.add(t.lower())
    stream, name, owned = _open_text(source)
    vectors: Dict[str, np.ndarray] = {}
    seen = set()
    total = np.zeros(expected_dim)
    count = duplicates = 0
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 1 + expected_dim:
                raise FormatError(f"expected token + {expected_dim} values, got {len(parts) - 1} values",
                                  source=name, line=lineno)
            token = parts[0]
            if token in seen:
                duplicates += 1
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"non-numeric value ({exc})", source=name, line=lineno) from None
            seen.add(token)
            total += vec
            count += 1
            if keep_set is None or token in keep_set:
                vectors[token] = vec
    finally:
        if owned:
            stream.close()
    if count == 0:
        raise FormatError("no embeddings found", source=name)
    if duplicates:
        logger.warning("%s: %d duplicate token(s) ignored (first occurrence kept)", name, duplicates)
    return EmbeddingTable(expected_dim, vectors, total / count, duplicates=duplicates)


def lookup_sequence(record: Union[SentenceRecord, Sequence[str]], table: EmbeddingTable) -> Tensor:
    tokens = record.tokens if isinstance(record, SentenceRecord) else list(record)
    if not tokens:
        raise ContractError("cannot embed an empty sentence")
    return Tensor(table.matrix(tokens))


def similar_word_statistic(records: Sequence[SentenceRecord], table: EmbeddingTable) -> Tuple[float, int]:
    """Co-emphasis rate of a sentence's top word and its nearest neighbour.

    For each sentence with some emphasis and at least two words, take the
    most emphasized word A (earliest on ties) and the word B != A with the
    highest cosine similarity to A.  Returns the fraction of those sentences
    in which B's emphasis frequency exceeds the sentence median, and the
    number of sentences considered.
    """
    hits = considered = 0
    for rec in records:
        freq = np.asarray(rec.emphasis_freq)
        if len(freq) < 2 or freq.max() <= 0:
            continue
        a = int(np.argmax(freq))
        vecs = table.matrix(rec.tokens)
        norms = np.linalg.norm(vecs, axis=1)
        norms[norms == 0] = 1.0
        sims = (vecs @ vecs[a]) / (norms * norms[a])
        sims[a] = -np.inf
        b = int(np.argmax(sims))
        considered += 1
        if freq[b] > np.median(freq):
            hits += 1
    return (hits / considered if considered else float("nan")), considered
