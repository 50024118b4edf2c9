"""Chunk extraction and conlleval-compatible precision/recall/F1.

BIOES input is first relabelled to IOB2 (S as B, E as I), then chunks are
read with the boundary rules of the CoNLL-2000 ``conlleval`` script: a chunk
opens at B, or at I following O or a different type; it closes before B, O
or a type change.  Structurally invalid predictions are therefore scored
exactly as the official script scores them after the usual IOBES-to-IOB
conversion.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .conll import SchemeError, split_label


class ChunkSpan(NamedTuple):
    type: str
    start: int
    end: int   # inclusive


def _iob_tag(label: str) -> tuple[str, str]:
    prefix, kind = split_label(label)
    if prefix == "S":
        return "B", kind
    if prefix == "E":
        return "I", kind
    return prefix, kind


def extract_chunks(labels: Sequence[str]) -> set[ChunkSpan]:
    spans: set[ChunkSpan] = set()
    start = None
    cur_type = ""
    prev_tag, prev_type = "O", ""
    for i, lab in enumerate(labels):
        tag, kind = _iob_tag(lab)
        ends = prev_tag != "O" and (tag in ("B", "O") or kind != prev_type)
        starts = tag == "B" or (tag == "I" and (prev_tag == "O" or kind != prev_type))
        if ends and start is not None:
            spans.add(ChunkSpan(cur_type, start, i - 1))
            start = None
        if starts:
            start, cur_type = i, kind
        prev_tag, prev_type = tag, kind
    if start is not None:
        spans.add(ChunkSpan(cur_type, start, len(labels) - 1))
    return spans


def render_bioes(spans: Iterable[ChunkSpan], length: int) -> list[str]:
    """Inverse of ``extract_chunks`` for non-overlapping spans."""
    out = ["O"] * length
    for kind, s, e in spans:
        if s == e:
            out[s] = "S-" + kind
        else:
            out[s] = "B-" + kind
            for i in range(s + 1, e):
                out[i] = "I-" + kind
            out[e] = "E-" + kind
    return out


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int


def _scores(correct: int, gold: int, predicted: int) -> Scores:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Scores(p, r, f, gold, predicted, correct)


@dataclass
class EvalReport:
    overall: Scores
    per_type: dict[str, Scores] = field(default_factory=dict)
    tokens: int = 0
    correct_tags: int = 0

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f1(self) -> float:
        return self.overall.f1

    @property
    def accuracy(self) -> float:
        return self.correct_tags / self.tokens if self.tokens else 0.0

    def format(self) -> str:
        """The layout printed by conlleval (percentages, two decimals)."""
        o = self.overall
        lines = [f"processed {self.tokens} tokens with {o.gold} phrases; "
                 f"found: {o.predicted} phrases; correct: {o.correct}."]
        if self.tokens:
            lines.append(f"accuracy: {100 * self.accuracy:6.2f}%; "
                         f"precision: {100 * o.precision:6.2f}%; "
                         f"recall: {100 * o.recall:6.2f}%; FB1: {100 * o.f1:6.2f}")
        for kind in sorted(self.per_type):
            s = self.per_type[kind]
            lines.append(f"{kind:>17}: precision: {100 * s.precision:6.2f}%; "
                         f"recall: {100 * s.recall:6.2f}%; FB1: {100 * s.f1:6.2f}  {s.predicted}")
        return "\n".join(lines) + "\n"


def evaluate(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> EvalReport:
    """Phrase-level scores over parallel label sequences, one per sentence."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    n_gold: Counter = Counter()
    n_pred: Counter = Counter()
    n_correct: Counter = Counter()
    tokens = correct_tags = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(f"sentence {i}: {len(g)} gold labels vs {len(p)} predicted")
        gs, ps = extract_chunks(g), extract_chunks(p)
        n_gold.update(s.type for s in gs)
        n_pred.update(s.type for s in ps)
        n_correct.update(s.type for s in gs & ps)
        tokens += len(g)
        correct_tags += sum(_iob_tag(a) == _iob_tag(b) for a, b in zip(g, p))
    kinds = set(n_gold) | set(n_pred)
    per_type = {k: _scores(n_correct[k], n_gold[k], n_pred[k]) for k in kinds}
    overall = _scores(sum(n_correct.values()), sum(n_gold.values()), sum(n_pred.values()))
    return EvalReport(overall, per_type, tokens, correct_tags)


def read_predictions(lines: Iterable[str]) -> tuple[list[list[str]], list[list[str]], list[list[str]]]:
    """Parse ``token ... gold pred`` lines into tokens, gold and predicted labels."""
    tokens: list[list[str]] = []
    gold: list[list[str]] = []
    pred: list[list[str]] = []
    cur: tuple[list, list, list] = ([], [], [])

    def flush():
        if cur[0]:
            tokens.append(list(cur[0]))
            gold.append(list(cur[1]))
            pred.append(list(cur[2]))
            for part in cur:
                part.clear()

    for lineno, line in enumerate(lines, start=1):
        cols = line.split()
        if not cols or cols[0] == "-X-" or cols[0].startswith("-DOCSTART-"):
            flush()
            continue
        if len(cols) < 3:
            raise ValueError(f"line {lineno}: expected token, gold and predicted columns")
        try:
            split_label(cols[-2])
            split_label(cols[-1])
        except SchemeError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        cur[0].append(cols[0])
        cur[1].append(cols[-2])
        cur[2].append(cols[-1])
    flush()
    return tokens, gold, pred


def write_predictions(out, tokens: Sequence[Sequence[str]], gold: Sequence[Sequence[str]],
                      pred: Sequence[Sequence[str]]) -> None:
    for toks, gs, ps in zip(tokens, gold, pred):
        for tok, g, p in zip(toks, gs, ps):
            out.write(f"{tok} {g} {p}\n")
        out.write("\n")
