"""Finite-difference checks for every differentiable component, at toy sizes."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import (DTBlockParams, GRUParams, LGRUParams, Runner, TGRUParams, dt_step,
                    gru_step, lgru_step, tgru_step)
from .conll import Sentence, build_vocabs, make_batches
from .embeddings import CharCNN, char_cnn_forward
from .init import glorot_uniform, zeros
from .model import GCDT, ModelConfig

TOLERANCE = 1e-4
COMPONENTS = ("lgru", "tgru", "dt_block", "gru", "char_cnn", "decoder_step", "model_loss")


@dataclass
class CheckResult:
    component: str
    max_error: float
    seeds: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= TOLERANCE)


def _randomize(tensors, rng: np.random.Generator, scale: float = 0.5) -> None:
    # zero-initialized biases would leave part of the backward pass untested
    for t in tensors:
        t.data[...] = rng.uniform(-scale, scale, size=t.shape)


def _check_step_fn(step: Callable[[Tensor, Tensor], Tensor], params, d_in: int, hidden: int,
                   rng: np.random.Generator, max_coords: int) -> float:
    x = Tensor(rng.standard_normal((2, d_in)), requires_grad=True, name="x")
    h = Tensor(rng.standard_normal((2, hidden)) * 0.5, requires_grad=True, name="h")
    _randomize(params, rng)
    weights = rng.standard_normal((2, hidden))
    loss = lambda: ad.sum(ad.mul(step(x, h), weights))   # noqa: E731
    return ad.gradient_check(loss, [x, h, *params], max_coords=max_coords, rng=rng)


def check_lgru(rng, max_coords=6) -> float:
    d, h = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    p = LGRUParams.init(d, h, rng)
    return _check_step_fn(lambda x, s: lgru_step(x, s, p), [t for _, t in p.tensors()],
                          d, h, rng, max_coords)


def check_tgru(rng, max_coords=6) -> float:
    h = int(rng.integers(2, 9))
    p = TGRUParams.init(h, rng)
    return _check_step_fn(lambda x, s: tgru_step(ad.add(x, s), p), [t for _, t in p.tensors()],
                          h, h, rng, max_coords)


def check_dt_block(rng, max_coords=4, transitions: int = 4) -> float:
    d, h = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    p = DTBlockParams.init(d, h, transitions, rng)
    return _check_step_fn(lambda x, s: dt_step(x, s, p), [t for _, t in p.tensors()],
                          d, h, rng, max_coords)


def check_gru(rng, max_coords=6) -> float:
    d, h = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    p = GRUParams.init(d, h, rng)
    return _check_step_fn(lambda x, s: gru_step(x, s, p), [t for _, t in p.tensors()],
                          d, h, rng, max_coords)


def check_char_cnn(rng, max_coords=8) -> float:
    n_chars, dim, filters = 7, int(rng.integers(2, 6)), int(rng.integers(2, 7))
    cnn = CharCNN(glorot_uniform((n_chars, dim), rng, "char_table"),
                  glorot_uniform((3 * dim, filters), rng, "char_filters"),
                  zeros((filters,), "char_bias"), 3)
    _randomize([cnn.bias], rng)
    # words of length 1..6, right-padded; lengths below the width exercise the padding path
    lengths = rng.integers(1, 7, size=(2, 3))
    ids = np.zeros((2, 3, 6), dtype=np.int64)
    for idx in np.ndindex(lengths.shape):
        ids[idx][:lengths[idx]] = rng.integers(1, n_chars, size=lengths[idx])
    weights = rng.standard_normal((2, 3, filters))
    loss = lambda: ad.sum(ad.mul(char_cnn_forward(ids, cnn), weights))   # noqa: E731
    return ad.gradient_check(loss, [t for _, t in cnn.tensors()], max_coords=max_coords, rng=rng)


def _toy_model(rng, position: str = "encoder_input", cell: str = "dt",
               dropout: float = 0.0) -> tuple[GCDT, list[Sentence]]:
    words = ["ab", "bcd", "c", "dde", "e", "fa"]
    labels = ["O", "S-A", "B-B", "E-B", "S-B"]
    corpus = []
    for n in (4, 2, 3):
        corpus.append(Sentence([words[i] for i in rng.integers(0, len(words), n)],
                               [labels[i] for i in rng.integers(0, len(labels), n)]))
    vocabs = build_vocabs(corpus)
    cfg = ModelConfig(transition_count=2, cell_kind=cell, encoder_hidden=4, global_hidden=3,
                      decoder_hidden=4, label_embed_dim=3, word_dim=5, char_dim=3,
                      char_filters=4, global_position=position,
                      use_global=position != "none", dropout_embed=dropout,
                      dropout_hidden=dropout, inner_dropout=dropout > 0)
    model = GCDT.create(cfg, vocabs, rng)
    if model.params.word_table is not None:
        model.params.word_table.matrix.requires_grad = True
    return model, corpus


def check_decoder_step(rng, max_coords=4) -> float:
    position = ("decoder_input", "softmax_input", "encoder_input")[int(rng.integers(3))]
    model, _ = _toy_model(rng, position)
    rows = 3
    h = Tensor(rng.standard_normal((rows, 2 * model.config.encoder_hidden)), requires_grad=True)
    s = Tensor(rng.standard_normal((rows, model.config.decoder_hidden)) * 0.5, requires_grad=True)
    g = Tensor(rng.standard_normal((rows, model.config.global_dim)), requires_grad=True)
    prev = rng.integers(0, model.start_id + 1, size=rows)
    target = rng.integers(0, model.n_labels, size=rows)
    params = [t for name, t in model.params.registry()
              if not name.startswith(("char_cnn", "global_encoder", "encoder"))]

    def loss():
        runner = Runner(model.params.decoder)
        state = runner.step(runner.project(model.decoder_inputs(h, prev, g)), s)
        return ad.softmax_cross_entropy(model.output_logits(state, g), target)

    return ad.gradient_check(loss, [h, s, g, *params], max_coords=max_coords, rng=rng)


def directional_check(loss_fn: Callable[[], Tensor], tensors, rng: np.random.Generator,
                      directions: int = 3, epsilon: float = 1e-5) -> float:
    """Compare the backprop directional derivative with central differences.

    Each probe perturbs every tensor at once along a random unit direction,
    so all coordinates take part at the cost of two loss evaluations.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    ad.backward(loss_fn())
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for _ in range(directions):
        vs = [rng.standard_normal(t.shape) for t in tensors]
        norm = np.sqrt(sum(float(np.vdot(v, v)) for v in vs))
        vs = [v / norm for v in vs]
        orig = [t.data.copy() for t in tensors]
        values = []
        for sign in (1.0, -1.0):
            for t, o, v in zip(tensors, orig, vs):
                t.data[...] = o + sign * epsilon * v
            with ad.no_grad():
                values.append(float(loss_fn().data))
        for t, o in zip(tensors, orig):
            t.data[...] = o
        numeric = (values[0] - values[1]) / (2.0 * epsilon)
        analytic = sum(float(np.vdot(g, v)) for g, v in zip(grads, vs))
        if not (np.isfinite(numeric) and np.isfinite(analytic)):
            raise FloatingPointError("directional check: non-finite derivative")
        worst = max(worst, float(ad.rel_error(np.float64(analytic), np.float64(numeric))))
    return worst


def check_model_loss(rng, max_coords=4) -> float:
    position = ("encoder_input", "decoder_input", "softmax_input", "none")[int(rng.integers(4))]
    model, corpus = _toy_model(rng, position, ("dt", "gru")[int(rng.integers(2))], dropout=0.3)
    batch = make_batches(corpus, model.vocabs, 64)[0]
    drop_seed = int(rng.integers(1 << 31))
    tensors = [t for _, t in model.params.all_tensors()]

    def loss():
        # the same dropout masks on every evaluation
        return model.loss(batch, training=True, rng=np.random.default_rng(drop_seed))

    worst = directional_check(loss, tensors, rng)
    # plus a few single coordinates of randomly chosen tensors
    picked = [tensors[i] for i in rng.choice(len(tensors), max_coords, replace=False)]
    return max(worst, ad.gradient_check(loss, picked, max_coords=2, rng=rng))


CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "lgru": check_lgru,
    "tgru": check_tgru,
    "dt_block": check_dt_block,
    "gru": check_gru,
    "char_cnn": check_char_cnn,
    "decoder_step": check_decoder_step,
    "model_loss": check_model_loss,
}


def run_suite(seeds: int = 20, base_seed: int = 0,
              components: tuple[str, ...] = COMPONENTS) -> list[CheckResult]:
    """Max relative error per component over ``seeds`` random instances."""
    results = []
    for name in components:
        fn = CHECKS[name]
        start = time.perf_counter()
        worst = 0.0
        for s in range(seeds):
            rng = np.random.default_rng([base_seed, s, COMPONENTS.index(name)])
            try:
                worst = max(worst, fn(rng))
            except FloatingPointError:
                worst = float("inf")
        results.append(CheckResult(name, worst, seeds, time.perf_counter() - start))
    return results
