"""Greedy and beam-search decoding with label feedback."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .conll import Batch, Sentence, make_batches
from .model import GCDT


@dataclass
class BeamHypothesis:
    prefix: tuple[int, ...]
    score: float            # summed log-probabilities of the prefix
    state: np.ndarray       # decoder state after the last label


def encode_states(model: GCDT, batch: Batch) -> tuple[np.ndarray, np.ndarray | None]:
    with ad.no_grad():
        h, g = model.encode_batch(batch, training=False)
    return h.data, None if g is None else g.data


def _rows(v: np.ndarray | None, n: int) -> np.ndarray | None:
    return None if v is None else np.repeat(v[None, :], n, axis=0)


def beam_search_states(model: GCDT, h: np.ndarray, g: np.ndarray | None,
                       beam: int) -> BeamHypothesis:
    """Best hypothesis over encoder states ``h`` (T, 2*encoder_hidden).

    Every step expands every live hypothesis over all labels and keeps the
    ``beam`` best by summed log-probability; ties go to the smaller label
    id, then the lexicographically smaller prefix.
    """
    if beam < 1:
        raise ValueError(f"beam width must be at least 1, got {beam}")
    session = model.decoder_session()
    hyps = [BeamHypothesis((), 0.0, session.initial_state(1)[0])]
    for t in range(h.shape[0]):
        n = len(hyps)
        prev = np.array([hy.prefix[-1] if hy.prefix else model.start_id for hy in hyps])
        states = np.stack([hy.state for hy in hyps])
        logits, new_states = session.step(_rows(h[t], n), prev, states, _rows(g, n))
        logp = ad.log_softmax_np(logits)
        cands = []
        for i, hy in enumerate(hyps):
            for j in range(logp.shape[1]):
                cands.append((-(hy.score + logp[i, j]), j, hy.prefix, i))
        cands.sort()
        hyps = [BeamHypothesis(prefix + (j,), -neg, new_states[i])
                for neg, j, prefix, i in cands[:beam]]
    return hyps[0]


def greedy_states(model: GCDT, h: np.ndarray, g: np.ndarray | None) -> BeamHypothesis:
    """Feed back the arg-max label at every step."""
    session = model.decoder_session()
    state = session.initial_state(1)
    prefix: list[int] = []
    score = 0.0
    for t in range(h.shape[0]):
        prev = np.array([prefix[-1] if prefix else model.start_id])
        logits, state = session.step(h[t][None, :], prev, state, _rows(g, 1))
        totals = score + ad.log_softmax_np(logits)[0]
        j = int(np.argmax(totals))
        prefix.append(j)
        score = float(totals[j])
    return BeamHypothesis(tuple(prefix), score, state[0])


def _single_batch(model: GCDT, sentence: Sentence) -> Batch:
    return make_batches([sentence], model.vocabs, len(sentence), with_labels=False)[0]


def greedy_decode(sentence: Sentence, model: GCDT) -> list[str]:
    h, g = encode_states(model, _single_batch(model, sentence))
    best = greedy_states(model, h[0], None if g is None else g[0])
    return [model.vocabs.label.decode(j) for j in best.prefix]


def beam_search(sentence: Sentence, model: GCDT, beam: int | None = None) -> list[str]:
    beam = model.config.beam_size if beam is None else beam
    if beam < 1:
        raise ValueError(f"beam width must be at least 1, got {beam}")
    h, g = encode_states(model, _single_batch(model, sentence))
    best = beam_search_states(model, h[0], None if g is None else g[0], beam)
    return [model.vocabs.label.decode(j) for j in best.prefix]


def predict(model: GCDT, corpus: Sequence[Sentence], beam: int | None = None,
            token_budget: int = 4096) -> list[list[str]]:
    """Label sequences for ``corpus`` in order; beam 1 decodes greedily."""
    beam = model.config.beam_size if beam is None else beam
    if beam < 1:
        raise ValueError(f"beam width must be at least 1, got {beam}")
    out: list[list[str] | None] = [None] * len(corpus)
    budget = max(token_budget, max((len(s) for s in corpus), default=1))
    for batch in make_batches(corpus, model.vocabs, budget, with_labels=False):
        h, g = encode_states(model, batch)
        for b, (sent, pos) in enumerate(zip(batch.sentences, batch.indices)):
            hb = h[b, :len(sent)]
            gb = None if g is None else g[b]
            best = greedy_states(model, hb, gb) if beam == 1 else \
                beam_search_states(model, hb, gb, beam)
            out[pos] = [model.vocabs.label.decode(j) for j in best.prefix]
    return out  # type: ignore[return-value]
