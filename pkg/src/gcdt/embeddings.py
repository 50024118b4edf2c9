"""Local word representations and precomputed external embeddings.

External embedding file format (UTF-8 text, one record per sentence,
records separated by a blank line)::

    <n_tokens> <n_subtokens> <dim>
    <token_index> <v_1> ... <v_dim>      # one line per sub-token, in order

``token_index`` is the 0-based index of the original token the sub-token
belongs to.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conll import PAD_ID, Vocabulary
from .init import glorot_bound

ALIGN_MODES = ("first", "mean", "max")


class EmbeddingFormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# pretrained word vectors

@dataclass
class PretrainedTable:
    vocab: Vocabulary
    matrix: Tensor
    frozen: bool = True
    found: int = 0   # in-vocabulary words that were present in the file

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def random_table(vocab: Vocabulary, dim: int, rng: np.random.Generator,
                 frozen: bool = True) -> PretrainedTable:
    bound = glorot_bound(len(vocab), dim)
    mat = rng.uniform(-bound, bound, size=(len(vocab), dim))
    mat[PAD_ID] = 0.0
    return PretrainedTable(vocab, Tensor(mat, requires_grad=not frozen, name="word_table"), frozen)


def load_pretrained(lines: Iterable[str], dim: int, vocab: Vocabulary,
                    rng: np.random.Generator, frozen: bool = True) -> PretrainedTable:
    """Fill rows for in-vocabulary words from ``word v1 ... v_dim`` lines.

    Words missing from the file keep their random initial row; PAD is zero.
    Lookups are case-sensitive.
    """
    table = random_table(vocab, dim, rng, frozen)
    mat = table.matrix.data
    found = 0
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != dim + 1:
            raise EmbeddingFormatError(
                f"line {lineno}: expected a word and {dim} values, got {len(parts) - 1} values")
        idx = vocab.stoi.get(parts[0])
        if idx is None or idx == PAD_ID:
            continue
        try:
            mat[idx] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise EmbeddingFormatError(f"line {lineno}: {exc}") from exc
        found += 1
    table.found = found
    return table


def read_words(path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.split(" ", 1)[0] for line in fh if line.strip()}


# --------------------------------------------------------------------------
# character CNN

@dataclass
class CharCNN:
    table: Tensor      # (n_chars, char_dim)
    filters: Tensor    # (width * char_dim, n_filters)
    bias: Tensor       # (n_filters,)
    width: int = 3

    @property
    def n_filters(self) -> int:
        return self.filters.shape[1]

    def tensors(self):
        yield "char_table", self.table
        yield "char_filters", self.filters
        yield "char_bias", self.bias


def char_cnn_forward(char_ids: np.ndarray, cnn: CharCNN) -> Tensor:
    """Max-pooled valid convolution over each word's characters.

    ``char_ids`` is (..., T, C) with PAD (0) right-padding.  Words are padded
    to at least the filter width; windows starting past
    ``max(len, width) - width`` are masked out of the max, so the result
    does not depend on how far a batch was padded.
    """
    char_ids = np.asarray(char_ids, dtype=np.int64)
    k = cnn.width
    c = char_ids.shape[-1]
    if c < k:
        pad = np.zeros(char_ids.shape[:-1] + (k - c,), dtype=np.int64)
        char_ids = np.concatenate([char_ids, pad], axis=-1)
        c = k
    n_windows = c - k + 1
    emb = ad.gather_rows(cnn.table, char_ids)                    # (..., T, C, d)
    windows = ad.concat([ad.take(emb, (Ellipsis, slice(j, j + n_windows), slice(None)))
                         for j in range(k)])                      # (..., T, P, k*d)
    conv = ad.add(ad.matmul(windows, cnn.filters), cnn.bias)     # (..., T, P, F)
    lengths = (char_ids != PAD_ID).sum(axis=-1)
    valid = np.maximum(lengths, k) - k + 1                       # (..., T)
    if (valid < n_windows).any():
        blocked = np.arange(n_windows) >= valid[..., None]       # (..., T, P)
        penalty = np.where(blocked, -1e30, 0.0)[..., None]
        conv = ad.add(conv, np.broadcast_to(penalty, conv.shape).copy())
    return ad.max(conv, axis=-2)


# --------------------------------------------------------------------------
# external contextual embeddings

@dataclass
class ExternalRecord:
    vectors: np.ndarray       # (n_subtokens, dim)
    token_index: np.ndarray   # (n_subtokens,) owning token of each sub-token
    n_tokens: int


@dataclass
class ExternalEmbeddingSet:
    records: list[ExternalRecord] = field(default_factory=list)
    mode: str = "first"

    def __len__(self) -> int:
        return len(self.records)


def align_record(rec: ExternalRecord, mode: str) -> np.ndarray:
    if mode not in ALIGN_MODES:
        raise ValueError(f"unknown alignment mode {mode!r}")
    out = np.zeros((rec.n_tokens, rec.vectors.shape[1]))
    for t in range(rec.n_tokens):
        rows = rec.vectors[rec.token_index == t]
        if len(rows) == 0:
            raise EmbeddingFormatError(f"token {t} has no sub-tokens")
        if mode == "first":
            out[t] = rows[0]
        elif mode == "mean":
            out[t] = rows.mean(axis=0)
        else:
            out[t] = rows.max(axis=0)
    return out


def align_external(emb_set: ExternalEmbeddingSet) -> list[np.ndarray]:
    """One (n_tokens, dim) matrix per sentence under the set's pooling mode."""
    return [align_record(rec, emb_set.mode) for rec in emb_set.records]


def read_external(lines: Iterable[str], mode: str = "first") -> ExternalEmbeddingSet:
    records: list[ExternalRecord] = []
    header: tuple[int, int, int] | None = None
    rows: list[list[float]] = []
    owners: list[int] = []

    def close(lineno):
        nonlocal header
        if header is None:
            return
        n_tok, n_sub, dim = header
        if len(rows) != n_sub:
            raise EmbeddingFormatError(
                f"line {lineno}: record declares {n_sub} sub-tokens, found {len(rows)}")
        vecs = np.array(rows, dtype=np.float64).reshape(n_sub, dim)
        records.append(ExternalRecord(vecs, np.array(owners, dtype=np.int64), n_tok))
        header = None
        rows.clear()
        owners.clear()

    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if text.startswith("#"):
            continue
        if not text:
            close(lineno)
            continue
        parts = text.split()
        try:
            if header is None:
                if len(parts) != 3:
                    raise EmbeddingFormatError(f"line {lineno}: expected a record header")
                header = tuple(int(p) for p in parts)
                continue
            dim = header[2]
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"line {lineno}: expected token index and {dim} values")
            owner = int(parts[0])
            if not 0 <= owner < header[0]:
                raise EmbeddingFormatError(f"line {lineno}: token index {owner} out of range")
            owners.append(owner)
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            if isinstance(exc, EmbeddingFormatError):
                raise
            raise EmbeddingFormatError(f"line {lineno}: {exc}") from exc
    close(lineno + 1)
    return ExternalEmbeddingSet(records, mode)


def write_external(emb_set: ExternalEmbeddingSet, out: TextIO) -> None:
    for rec in emb_set.records:
        n_sub, dim = rec.vectors.shape
        out.write(f"{rec.n_tokens} {n_sub} {dim}\n")
        for owner, vec in zip(rec.token_index, rec.vectors):
            out.write(f"{int(owner)} " + " ".join(repr(float(v)) for v in vec) + "\n")
        out.write("\n")


def attach_external(corpus: Sequence, emb_set: ExternalEmbeddingSet) -> None:
    """Store aligned vectors on each sentence, matching records by order."""
    if len(corpus) != len(emb_set):
        raise EmbeddingFormatError(
            f"{len(emb_set)} external records for {len(corpus)} sentences")
    for i, (sent, mat) in enumerate(zip(corpus, align_external(emb_set))):
        if mat.shape[0] != len(sent):
            raise EmbeddingFormatError(
                f"sentence {i}: {mat.shape[0]} aligned tokens vs {len(sent)} tokens")
        sent.external = mat
