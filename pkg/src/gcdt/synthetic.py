"""Deterministic toy corpora with a learnable labelling rule.

Each entity type owns a disjoint block of the vocabulary and the rest are
filler words.  Entities are one to three words long and always separated by
at least one filler, so the BIOES tag of every token is a function of its
own word and its neighbours.
"""

from __future__ import annotations

import numpy as np

from .conll import Sentence

DEFAULT_TYPES = ("PER", "LOC", "ORG", "MISC", "DATE")
_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def make_lexicon(vocab_size: int, rng: np.random.Generator) -> list[str]:
    """Distinct lowercase pseudo-words of length 3 to 7."""
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < vocab_size:
        n = int(rng.integers(3, 8))
        w = "".join(_LETTERS[i] for i in rng.integers(0, 26, size=n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def synthetic_corpus(n_sentences: int = 50, vocab_size: int = 100,
                     types: tuple[str, ...] = DEFAULT_TYPES, seed: int = 0,
                     min_len: int = 4, max_len: int = 12,
                     entity_share: float = 0.5) -> list[Sentence]:
    """``n_sentences`` BIOES-labelled sentences over ``vocab_size`` words."""
    if vocab_size < 2 * len(types):
        raise ValueError("vocabulary too small for the number of types")
    rng = np.random.default_rng(seed)
    lexicon = make_lexicon(vocab_size, rng)
    per_type = int(vocab_size * entity_share) // len(types)
    blocks = {t: lexicon[i * per_type:(i + 1) * per_type] for i, t in enumerate(types)}
    filler = lexicon[per_type * len(types):]
    out = []
    for _ in range(n_sentences):
        target = int(rng.integers(min_len, max_len + 1))
        tokens: list[str] = []
        labels: list[str] = []
        while len(tokens) < target:
            if labels and labels[-1] != "O" or rng.random() < 0.55:
                tokens.append(filler[int(rng.integers(len(filler)))])
                labels.append("O")
                continue
            kind = types[int(rng.integers(len(types)))]
            span = int(rng.integers(1, 4))
            words = [blocks[kind][int(rng.integers(per_type))] for _ in range(span)]
            tags = ["S"] if span == 1 else ["B"] + ["I"] * (span - 2) + ["E"]
            tokens.extend(words)
            labels.extend(f"{t}-{kind}" for t in tags)
        out.append(Sentence(tokens, labels))
    return out
