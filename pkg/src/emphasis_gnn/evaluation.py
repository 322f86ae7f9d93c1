"""Match-m scoring of predicted emphasis rankings against annotator rankings.

For a sentence, the gold and predicted top-m word sets are compared and the
overlap is divided by ``min(n, m)``; dataset scores average over sentences.
Ties at the cut are broken in favour of the earliest position ("strict").
The "optimistic" mode instead lets tied gold words be chosen to maximise the
overlap, which bounds how much the tie rule matters.
"""

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .errors import ContractError, ShapeError

M_VALUES = (1, 2, 3, 4)
TIE_MODES = ("strict", "optimistic")


def _ranking(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    # lexsort: last key is primary; descending score, then ascending position
    return np.lexsort((np.arange(len(scores)), -scores))


def top_m(scores, m: int) -> set:
    """Indices of the ``min(n, m)`` highest scores, earliest position first on ties."""
    if m < 1:
        raise ContractError(f"m must be at least 1, got {m}")
    return set(int(i) for i in _ranking(scores)[:m])


def match_m(pred, gold, m: int, tie_mode: str = "strict") -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ShapeError(f"prediction {pred.shape} and gold {gold.shape} must be equal-length vectors")
    if m < 1:
        raise ContractError(f"m must be at least 1, got {m}")
    n = len(gold)
    k = min(n, m)
    chosen = top_m(pred, m)
    if tie_mode == "strict":
        return len(chosen & top_m(gold, m)) / k
    if tie_mode != "optimistic":
        raise ContractError(f"unknown tie mode {tie_mode!r}")
    cut = gold[_ranking(gold)[k - 1]]
    above = {i for i in range(n) if gold[i] > cut}
    tied = {i for i in range(n) if gold[i] == cut}
    need = k - len(above)
    return (len(chosen & above) + min(need, len(chosen & tied))) / k


@dataclass
class MatchReport:
    match: Dict[int, float]
    average: float
    per_sentence: List[Dict[int, float]] = field(default_factory=list)
    ids: List[str] = field(default_factory=list)
    variant: str = ""

    def row(self) -> str:
        vals = [self.match[m] for m in M_VALUES] + [self.average]
        return "\t".join([self.variant] + [f"{v:.3f}" for v in vals])

    def values(self) -> List[float]:
        return [self.match[m] for m in M_VALUES] + [self.average]

    def write_per_sentence(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"match{m}" for m in M_VALUES])
            for sid, scores in zip(self.ids, self.per_sentence):
                w.writerow([sid] + [repr(scores[m]) for m in M_VALUES])


def score_dataset(preds: Sequence, golds: Sequence, ids: Sequence[str] = (), tie_mode: str = "strict",
                  variant: str = "") -> MatchReport:
    """Mean Match-1..4 over sentences."""
    if len(preds) != len(golds):
        raise ShapeError(f"{len(preds)} predictions for {len(golds)} sentences")
    if not golds:
        raise ContractError("cannot score an empty dataset")
    per = [{m: match_m(p, g, m, tie_mode) for m in M_VALUES} for p, g in zip(preds, golds)]
    match = {m: float(np.mean([s[m] for s in per])) for m in M_VALUES}
    average = float(np.mean([match[m] for m in M_VALUES]))
    return MatchReport(match, average, per, list(ids) or [str(k) for k in range(len(golds))], variant)


def predict_emphasis(model, examples, batch_size: int = 32) -> List[np.ndarray]:
    """Eval-mode p(B) + p(I) for each example."""
    from .model import forward

    out: List[np.ndarray] = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        res = forward(model.params, model.config, chunk, mode="eval")
        out.extend(res.split(res.emphasis()))
    return out


def evaluate(model, examples, tie_mode: str = "strict", batch_size: int = 32) -> MatchReport:
    """Score an :class:`EmphasisModel` on labelled examples."""
    preds = predict_emphasis(model, examples, batch_size)
    return score_dataset(preds, [ex.freq for ex in examples], [ex.id for ex in examples], tie_mode,
                         model.config.variant)


def tied_ranks(scores) -> List[str]:
    """Rank labels where tied scores share the span of positions, e.g. '1/2'."""
    scores = np.asarray(scores, dtype=np.float64)
    order = _ranking(scores)
    labels = [""] * len(scores)
    pos = 0
    while pos < len(order):
        end = pos
        while end + 1 < len(order) and scores[order[end + 1]] == scores[order[pos]]:
            end += 1
        label = "/".join(str(r + 1) for r in range(pos, end + 1))
        for k in range(pos, end + 1):
            labels[order[k]] = label
        pos = end + 1
    return labels


def case_table(tokens: Sequence[str], gold, pred, digits: int = 3) -> str:
    """Per-word table of gold and predicted emphasis with their ranks.

    ``gold`` may be None for unlabelled sentences.
    """
    def column(values):
        if values is None:
            return ["-"] * len(tokens)
        return [f"{v:.{digits}f}({r})" for v, r in zip(values, tied_ranks(values))]

    rows = [("", "gold", "pred")] + list(zip(tokens, column(gold), column(pred)))
    widths = [max(len(r[c]) for r in rows) for c in range(3)]
    return "\n".join("  ".join(r[c].ljust(widths[c]) for c in range(3)).rstrip() for r in rows)


def model_case_table(model, example, digits: int = 3) -> str:
    pred = predict_emphasis(model, [example])[0]
    return case_table(example.tokens, example.freq, pred, digits)
