"""Column-format corpora, tagging-scheme conversion, vocabularies and batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PAD = "<PAD>"
UNK = "<UNK>"
PAD_ID = 0
UNK_ID = 1


class ConllFormatError(ValueError):
    pass


class SchemeError(ValueError):
    pass


@dataclass
class Sentence:
    tokens: list[str]
    labels: list[str]
    char_ids: list[list[int]] | None = None
    external: np.ndarray | None = field(default=None, repr=False)  # (T, d) aligned vectors

    def __post_init__(self):
        if len(self.tokens) != len(self.labels) or not self.tokens:
            raise ValueError(
                f"sentence needs equal, nonzero token/label counts "
                f"({len(self.tokens)} vs {len(self.labels)})")

    def __len__(self) -> int:
        return len(self.tokens)


class Vocabulary:
    """Bijective item/index map.  Word and char kinds reserve PAD=0, UNK=1."""

    def __init__(self, kind: str, items: Iterable[str] = ()):
        if kind not in ("word", "char", "label"):
            raise ValueError(f"unknown vocabulary kind {kind!r}")
        self.kind = kind
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        if kind != "label":
            self.add(PAD)
            self.add(UNK)
        for item in items:
            self.add(item)

    def add(self, item: str) -> int:
        idx = self.stoi.get(item)
        if idx is None:
            idx = len(self.itos)
            self.stoi[item] = idx
            self.itos.append(item)
        return idx

    def encode(self, item: str) -> int:
        idx = self.stoi.get(item)
        if idx is not None:
            return idx
        if self.kind == "label":
            raise KeyError(f"unknown label {item!r}")
        return UNK_ID

    def decode(self, idx: int) -> str:
        return self.itos[idx]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, item: str) -> bool:
        return item in self.stoi

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, kind: str, items: Sequence[str]) -> "Vocabulary":
        vocab = cls(kind)
        start = 0 if kind == "label" else 2
        if kind != "label" and list(items[:2]) != [PAD, UNK]:
            raise ValueError("serialized vocabulary does not start with PAD, UNK")
        for item in items[start:]:
            vocab.add(item)
        if len(vocab) != len(items):
            raise ValueError("serialized vocabulary contains duplicates")
        return vocab


@dataclass
class Vocabs:
    word: Vocabulary
    char: Vocabulary
    label: Vocabulary


def build_vocabs(train: Sequence[Sentence], extra: Sequence[Sentence] = (),
                 known_words: set[str] | None = None) -> Vocabs:
    """Vocabularies from training data.

    Words from ``extra`` corpora are admitted only when present in
    ``known_words`` (typically the pretrained file), so evaluation words
    still reach their pretrained vectors.  Characters and labels come from
    training data alone.
    """
    word = Vocabulary("word")
    char = Vocabulary("char")
    for sent in train:
        for tok in sent.tokens:
            word.add(tok)
            for ch in tok:
                char.add(ch)
    if known_words:
        for sent in extra:
            for tok in sent.tokens:
                if tok in known_words:
                    word.add(tok)
    labels = sorted({lab for sent in train for lab in sent.labels})
    if "O" in labels:
        labels.remove("O")
        labels.insert(0, "O")
    return Vocabs(word, char, Vocabulary("label", labels))


# --------------------------------------------------------------------------
# parsing

def parse_conll(lines: Iterable[str], token_column: int = 0,
                label_column: int = -1) -> list[Sentence]:
    """Read whitespace-separated columns; blank lines end sentences."""
    if label_column >= 0:
        need = max(token_column, label_column) + 1
    else:
        need = max(token_column + 2, -label_column)
    corpus: list[Sentence] = []
    tokens: list[str] = []
    labels: list[str] = []

    def flush():
        if tokens:
            corpus.append(Sentence(list(tokens), list(labels)))
            tokens.clear()
            labels.clear()

    for lineno, line in enumerate(lines, start=1):
        cols = line.split()
        if not cols:
            flush()
            continue
        if cols[0].startswith("-DOCSTART-"):
            flush()
            continue
        if len(cols) < need:
            raise ConllFormatError(
                f"line {lineno}: expected at least {need} columns, got {len(cols)}")
        tokens.append(cols[token_column])
        labels.append(cols[label_column])
    flush()
    return corpus


def read_conll(path, token_column: int = 0, label_column: int = -1) -> list[Sentence]:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh, token_column, label_column)


# --------------------------------------------------------------------------
# tagging schemes

def split_label(label: str) -> tuple[str, str]:
    """``"B-PER"`` -> ``("B", "PER")``; ``"O"`` -> ``("O", "")``."""
    if label == "O":
        return "O", ""
    prefix, sep, kind = label.partition("-")
    if not sep or prefix not in ("B", "I", "E", "S") or not kind:
        raise SchemeError(f"malformed label {label!r}")
    return prefix, kind


def bio1_to_bio2(labels: Sequence[str]) -> list[str]:
    """IOB1 (B only between same-type chunks) to IOB2 (B opens every chunk)."""
    out = []
    prev_kind = ""
    prev_prefix = "O"
    for lab in labels:
        prefix, kind = split_label(lab)
        if prefix == "I" and (prev_prefix == "O" or prev_kind != kind):
            lab = "B-" + kind
        out.append(lab)
        prev_prefix, prev_kind = prefix, kind
    return out


def convert_to_bioes(labels: Sequence[str]) -> list[str]:
    """Valid IOB2 to BIOES; raises ``SchemeError`` on an invalid transition."""
    parsed = [split_label(lab) for lab in labels]
    out = []
    for i, (prefix, kind) in enumerate(parsed):
        if prefix not in ("B", "I", "O"):
            raise SchemeError(f"position {i}: {labels[i]!r} is not a BIO2 label")
        if prefix == "I":
            prev_prefix, prev_kind = parsed[i - 1] if i else ("O", "")
            if prev_prefix not in ("B", "I") or prev_kind != kind:
                raise SchemeError(
                    f"position {i}: {labels[i]!r} does not continue a {kind} chunk")
        if prefix == "O":
            out.append("O")
            continue
        nxt_prefix, nxt_kind = parsed[i + 1] if i + 1 < len(parsed) else ("O", "")
        continues = nxt_prefix == "I" and nxt_kind == kind
        if prefix == "B":
            out.append(("B-" if continues else "S-") + kind)
        else:
            out.append(("I-" if continues else "E-") + kind)
    return out


def bioes_to_bio2(labels: Sequence[str]) -> list[str]:
    """Relabel S as B and E as I; leaves IOB input untouched."""
    out = []
    for lab in labels:
        prefix, kind = split_label(lab)
        if prefix == "S":
            out.append("B-" + kind)
        elif prefix == "E":
            out.append("I-" + kind)
        else:
            out.append(lab)
    return out


def to_bioes(corpus: Sequence[Sentence], scheme: str) -> list[Sentence]:
    """Normalize a corpus tagged in ``scheme`` (bio1, bio2 or bioes) to BIOES."""
    if scheme not in ("bio1", "bio2", "bioes"):
        raise SchemeError(f"unknown input scheme {scheme!r}")
    out = []
    for sent in corpus:
        labels = sent.labels
        if scheme == "bio1":
            labels = bio1_to_bio2(labels)
        if scheme != "bioes":
            labels = convert_to_bioes(labels)
        out.append(Sentence(sent.tokens, labels, sent.char_ids, sent.external))
    return out


# --------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    words: np.ndarray          # (B, T) word ids
    chars: np.ndarray          # (B, T, C) char ids
    labels: np.ndarray         # (B, T) label ids
    lengths: np.ndarray        # (B,)
    sentences: list[Sentence] = field(repr=False)
    external: np.ndarray | None = field(default=None, repr=False)  # (B, T, d)
    indices: np.ndarray | None = None  # positions of the sentences in their corpus

    @property
    def tokens(self) -> int:
        return int(self.lengths.sum())

    @property
    def mask(self) -> np.ndarray:
        steps = np.arange(self.words.shape[1])
        return (steps[None, :] < self.lengths[:, None]).astype(np.float64)

    def __len__(self) -> int:
        return len(self.sentences)


def char_ids_for(sent: Sentence, char_vocab: Vocabulary) -> list[list[int]]:
    if sent.char_ids is not None:
        return sent.char_ids
    return [[char_vocab.encode(ch) for ch in tok] for tok in sent.tokens]


def pad_batch(sentences: Sequence[Sentence], vocabs: Vocabs,
              with_labels: bool = True, indices: np.ndarray | None = None) -> Batch:
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    b, t = len(sentences), int(lengths.max())
    chars = [char_ids_for(s, vocabs.char) for s in sentences]
    c = max(len(w) for sent in chars for w in sent)
    words = np.full((b, t), PAD_ID, dtype=np.int64)
    char_cube = np.full((b, t, c), PAD_ID, dtype=np.int64)
    labels = np.zeros((b, t), dtype=np.int64)
    for i, sent in enumerate(sentences):
        n = len(sent)
        words[i, :n] = [vocabs.word.encode(tok) for tok in sent.tokens]
        for j, w in enumerate(chars[i]):
            char_cube[i, j, :len(w)] = w
        if with_labels:
            labels[i, :n] = [vocabs.label.encode(lab) for lab in sent.labels]
    external = None
    if sentences[0].external is not None:
        dim = sentences[0].external.shape[1]
        external = np.zeros((b, t, dim))
        for i, sent in enumerate(sentences):
            if sent.external is None or sent.external.shape != (len(sent), dim):
                raise ValueError("external embeddings missing or misaligned for a sentence")
            external[i, :len(sent)] = sent.external
    return Batch(words, char_cube, labels, lengths, list(sentences), external, indices)


def make_batches(corpus: Sequence[Sentence], vocabs: Vocabs, token_budget: int,
                 rng: np.random.Generator | None = None, shuffle: bool = False,
                 with_labels: bool = True) -> list[Batch]:
    """Length-bucketed greedy packing under a budget on true token counts."""
    if not corpus:
        return []
    longest = max(len(s) for s in corpus)
    if longest > token_budget:
        raise ValueError(
            f"sentence of length {longest} exceeds the token budget {token_budget}")
    order = np.arange(len(corpus))
    if shuffle:
        if rng is None:
            raise ValueError("shuffling requires an rng")
        order = rng.permutation(len(corpus))
    order = sorted(order, key=lambda i: len(corpus[i]))  # stable

    groups: list[list[int]] = []
    current: list[int] = []
    used = 0
    for i in order:
        n = len(corpus[i])
        if current and used + n > token_budget:
            groups.append(current)
            current, used = [], 0
        current.append(int(i))
        used += n
    groups.append(current)
    if shuffle:
        groups = [groups[k] for k in rng.permutation(len(groups))]
    return [pad_batch([corpus[i] for i in g], vocabs, with_labels, np.array(g))
            for g in groups]
