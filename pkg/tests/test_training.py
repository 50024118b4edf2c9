import hashlib
import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcdt.autodiff import Tensor
from gcdt.conll import build_vocabs, make_batches
from gcdt.init import glorot_uniform
from gcdt.model import GCDT
from gcdt.synthetic import synthetic_corpus
from gcdt.training import (AdamState, CheckpointError, DivergenceError, TrainConfig, adam_step,
                           aggregate_runs, clip_gradients, init_params, load_checkpoint,
                           lr_at_step, save_checkpoint, snapshot, train)
from oracles import adam_reference
from toys import tiny_config


def test_glorot_bound_and_zero_biases(rng):
    w = glorot_uniform((4, 4), rng)
    assert np.abs(w.data).max() <= math.sqrt(6 / 8)
    corpus = synthetic_corpus(5)
    params = init_params(tiny_config(), build_vocabs(corpus), rng)
    for name, t in params.registry():
        if name.rsplit(".", 1)[-1].startswith("b_") or name.endswith("char_bias"):
            assert (t.data == 0).all(), name


def test_same_seed_same_parameters():
    corpus = synthetic_corpus(5)
    vocabs = build_vocabs(corpus)
    a = init_params(tiny_config(), vocabs, np.random.default_rng(3))
    b = init_params(tiny_config(), vocabs, np.random.default_rng(3))
    for (na, ta), (nb, tb) in zip(a.all_tensors(), b.all_tensors()):
        assert na == nb and np.array_equal(ta.data, tb.data)


def test_clip_examples():
    g = [np.array([1.2, 1.6])]                      # norm 2
    assert clip_gradients(g, 5.0)[0][0].tolist() == [1.2, 1.6]
    assert clip_gradients([np.array([3.0, 4.0])], 5.0)[0][0].tolist() == [3.0, 4.0]
    assert clip_gradients([np.array([6.0, 8.0])], 5.0)[0][0].tolist() == [3.0, 4.0]
    with pytest.raises(FloatingPointError):
        clip_gradients([np.array([1.0, np.nan])], 5.0)


@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5), min_size=1, max_size=4),
       st.floats(0.1, 10))
def test_clipped_norm_bounded(raw, clip):
    grads, _ = clip_gradients([np.array(r) for r in raw], clip)
    assert math.sqrt(sum(float((g ** 2).sum()) for g in grads)) <= clip + 1e-9


def _param(values, requires_grad=True):
    return ("p", Tensor(np.array(values, float), requires_grad=requires_grad))


def test_adam_zero_gradient_keeps_parameters():
    p = _param([1.0, -2.0])
    state = AdamState()
    adam_step([p], [np.zeros(2)], state, lr=0.1)
    assert p[1].data.tolist() == [1.0, -2.0] and state.step == 1


def test_adam_first_step_is_signed_lr():
    p = _param([0.0, 0.0, 0.0])
    adam_step([p], [np.array([0.3, -5.0, 1e-3])], AdamState(), lr=0.008)
    np.testing.assert_allclose(p[1].data, [-0.008, 0.008, -0.008], rtol=1e-4)


def test_adam_matches_hand_recursion():
    p = _param([0.5])
    state = AdamState()
    grads = [0.2, 0.2, -0.7]
    ref = adam_reference(grads, 0.01, p0=0.5)
    for g, (pv, m, v) in zip(grads, ref):
        adam_step([p], [np.array([g])], state, lr=0.01)
        assert state.m["p"][0] == pytest.approx(m, rel=1e-15)
        assert state.v["p"][0] == pytest.approx(v, rel=1e-15)
        assert p[1].data[0] == pytest.approx(pv, rel=1e-14)
    assert state.step == 3


def test_adam_skips_frozen_and_rejects_shape_drift():
    frozen = _param([1.0], requires_grad=False)
    adam_step([frozen], [np.array([9.0])], AdamState(), lr=0.1)
    assert frozen[1].data.tolist() == [1.0]
    with pytest.raises(ValueError, match="shape"):
        adam_step([_param([1.0, 2.0])], [np.ones(3)], AdamState())


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at_step(0, cfg) == 0.008
    assert lr_at_step(1000, TrainConfig(lr_decay_rate=0.5)) == pytest.approx(0.004, rel=1e-15)
    rates = [lr_at_step(s, cfg) for s in range(0, 20000, 137)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_aggregate_runs():
    assert aggregate_runs([91.0, 91.0, 91.0]) == (91.0, 0.0)
    mean, std = aggregate_runs([90.0, 92.0])
    assert mean == 91.0 and std == pytest.approx(math.sqrt(2), rel=1e-15)
    assert aggregate_runs([3.0, 1.0, 2.5]) == aggregate_runs([2.5, 3.0, 1.0])
    with pytest.raises(ValueError):
        aggregate_runs([1.0])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(clip_norm=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(seeds=()).validate()


@pytest.fixture(scope="module")
def toy():
    return synthetic_corpus(12, vocab_size=40, seed=4, max_len=8)


FAST = dict(token_budget=40, max_epochs=3)


def test_patience_zero_stops_after_first_flat_epoch(toy):
    result = train(toy, toy, tiny_config(), TrainConfig(initial_lr=1e-12, patience=0,
                                                        max_epochs=10, token_budget=40))
    assert len(result.history) == 2


def test_same_seed_same_history(toy):
    runs = [train(toy, toy, tiny_config(), TrainConfig(**FAST), seed=5) for _ in range(2)]
    assert runs[0].history == runs[1].history


def test_divergence_reports_step(toy):
    def poison(record):
        raise AssertionError("unreachable")

    cfg = tiny_config()
    vocabs = build_vocabs(toy)
    from gcdt import training

    real = training.GCDT.create

    def create(*args, **kw):
        model = real(*args, **kw)
        model.params.b_out.data[0] = np.nan
        return model

    training.GCDT.create = create
    try:
        with pytest.raises(DivergenceError, match="step 1"):
            train(toy, toy, cfg, TrainConfig(**FAST), vocabs=vocabs, on_epoch=poison)
    finally:
        training.GCDT.create = real


def test_frozen_table_unchanged_by_training(toy):
    digest = []

    def record(_):
        digest.append(hashlib.sha256(holder[0].params.word_table.matrix.data.tobytes()).hexdigest())

    from gcdt import training
    holder = []
    real = training.GCDT.create

    def create(*args, **kw):
        holder.append(real(*args, **kw))
        digest.append(hashlib.sha256(holder[0].params.word_table.matrix.data.tobytes()).hexdigest())
        return holder[0]

    training.GCDT.create = create
    try:
        train(toy, toy, tiny_config(), TrainConfig(**FAST), on_epoch=record)
    finally:
        training.GCDT.create = real
    assert len(digest) == 4 and len(set(digest)) == 1


def test_best_checkpoint_is_kept(toy):
    result = train(toy, toy, tiny_config(), TrainConfig(**FAST))
    best = max(r["dev_f1"] for r in result.history)
    assert result.checkpoint.best_dev == best
    first = next(r["epoch"] for r in result.history if r["dev_f1"] == best)
    assert result.checkpoint.epoch == first


def test_checkpoint_round_trip(tmp_path, toy):
    result = train(toy, toy, tiny_config(), TrainConfig(**FAST))
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, result.final)
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.rng_state == result.final.rng_state
    assert loaded.adam.step == result.final.adam.step
    batch = make_batches(toy[:5], loaded.vocabs, 100)[0]
    model = loaded.model()
    original = GCDT(result.final.model_config, result.final.vocabs, result.final.model().params)
    assert np.array_equal(model.teacher_forced_logits(batch).data,
                          original.teacher_forced_logits(batch).data)
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".ckpt-")]


def test_checkpoint_corruption_detected(tmp_path, toy):
    result = train(toy, toy, tiny_config(), TrainConfig(token_budget=40, max_epochs=1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, result.checkpoint)
    raw = path.read_bytes()
    (tmp_path / "bad_magic").write_bytes(b"X" + raw[1:])
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "bad_magic")
    tampered = raw.replace(b'"encoder_hidden":4', b'"encoder_hidden":5', 1)
    (tmp_path / "tampered").write_bytes(tampered)
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(tmp_path / "tampered")
    (tmp_path / "short").write_bytes(raw[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short")


def test_snapshot_is_independent_of_later_updates(toy):
    vocabs = build_vocabs(toy)
    model = GCDT.create(tiny_config(), vocabs, np.random.default_rng(0))
    snap = snapshot(model, AdamState(), TrainConfig(), 1, 0.5, None)
    model.params.b_out.data[...] += 1.0
    assert (snap.tensors["output.b_l"] == 0).all()
