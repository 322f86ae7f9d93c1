"""A trained model bundle and its on-disk format.

Layout: the 8-byte magic ``EMPHGNN1``, a little-endian uint64 header length,
a UTF-8 JSON header (sorted keys) holding the version, configuration echo,
vocabularies and a tensor index, then every tensor as row-major
little-endian float64 in index order.  Saving is deterministic, so
save -> load -> save reproduces the file byte for byte.
"""

import io
import json
import struct
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .corpus import EmbeddingTable, SentenceRecord
from .dataset import Example, WordVocab, build_example
from .autodiff import Tensor
from .errors import FormatError
from .model import ModelConfig, init_params
from .parse_tree import ParseTree, TagVocab

MAGIC = b"EMPHGNN1"
FORMAT_VERSION = 1


class EmphasisModel:
    """Configuration, vocabularies and parameters of one model."""

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor], words: WordVocab, tags: TagVocab):
        self.config = config
        self.params = params
        self.words = words
        self.tags = tags

    @classmethod
    def create(cls, config: ModelConfig, records: Sequence[SentenceRecord], trees: Sequence[ParseTree],
               table: EmbeddingTable, rng) -> "EmphasisModel":
        words = WordVocab(t for rec in records for t in rec.tokens)
        tags = TagVocab.from_trees(trees)
        if table.dim != config.d1:
            raise ValueError(f"embedding dimension {table.dim} does not match d1={config.d1}")
        params = init_params(config, len(words), len(tags), rng, word_init=table.matrix(words.tokens))
        return cls(config, params, words, tags)

    def ensure_words(self, tokens: Sequence[str], table: EmbeddingTable):
        """Append rows, initialised from ``table``, for tokens not yet known."""
        new = [t for t in dict.fromkeys(tokens) if t not in self.words]
        if not new:
            return
        for t in new:
            self.words.add(t)
        emb = self.params["word_embed"]
        emb.data = np.concatenate([emb.data, table.matrix(new)])
        emb.grad = None

    def prepare(self, records: Sequence[SentenceRecord], trees: Sequence[ParseTree],
                table: EmbeddingTable) -> List[Example]:
        self.ensure_words([t for rec in records for t in rec.tokens], table)
        return [build_example(rec.tokens, tree, table, self.words, self.tags, record=rec)
                for rec, tree in zip(records, trees)]

    def prepare_unlabeled(self, sentences: Sequence[Sequence[str]], trees: Sequence[ParseTree],
                          table: EmbeddingTable) -> List[Example]:
        self.ensure_words([t for s in sentences for t in s], table)
        return [build_example(tokens, tree, table, self.words, self.tags, sid=str(k))
                for k, (tokens, tree) in enumerate(zip(sentences, trees))]

    def with_variant(self, variant: str) -> "EmphasisModel":
        """Same parameters viewed as another variant (head sizes must agree)."""
        return EmphasisModel(replace(self.config, variant=variant), self.params, self.words, self.tags)

    def copy(self) -> "EmphasisModel":
        params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)
                  for k, v in self.params.items()}
        return EmphasisModel(self.config, params, WordVocab(self.words.tokens), TagVocab(self.tags.tags[1:]))


def to_bytes(model: EmphasisModel, extra: Optional[dict] = None) -> bytes:
    index = []
    offset = 0
    for name, t in model.params.items():
        count = int(t.data.size)
        index.append({"name": name, "shape": list(t.shape), "offset": offset, "count": count})
        offset += count
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "extra": extra or {},
        "words": model.words.tokens,
        "tags": model.tags.tags,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    for t in model.params.values():
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(blob: bytes):
    if blob[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')}")
    data = np.frombuffer(blob, dtype="<f8", offset=16 + hlen)
    params = {}
    for entry in header["tensors"]:
        arr = data[entry["offset"]:entry["offset"] + entry["count"]].astype(np.float64)
        if arr.size != entry["count"]:
            raise FormatError(f"checkpoint truncated in tensor {entry['name']}")
        params[entry["name"]] = Tensor(arr.reshape(entry["shape"]), requires_grad=True, name=entry["name"])
    tags = TagVocab()
    tags.tags = list(header["tags"])
    tags.index = {t: k for k, t in enumerate(tags.tags)}
    model = EmphasisModel(ModelConfig(**header["model_config"]), params, WordVocab(header["words"]), tags)
    return model, header["extra"]


def save(model: EmphasisModel, path, extra: Optional[dict] = None):
    with open(path, "wb") as fh:
        fh.write(to_bytes(model, extra))


def load(path):
    """Returns ``(model, extra)``."""
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
