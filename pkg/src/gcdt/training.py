"""Optimization: initialization, Adam, clipping, learning-rate decay, checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import statistics
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .conll import PAD_ID, Sentence, Vocabs, Vocabulary, build_vocabs, make_batches
from .decoding import predict
from .embeddings import PretrainedTable
from .evaluation import evaluate
from .model import GCDT, ModelConfig, ModelParams, build_params

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    initial_lr: float = 0.008
    lr_decay_rate: float = 0.95
    lr_decay_steps: int = 1000
    clip_norm: float = 5.0
    max_epochs: int = 100
    patience: int = 10
    seeds: tuple[int, ...] = (1,)
    token_budget: int = 4096
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dev_beam: int = 1
    target_f1: float | None = None   # stop as soon as dev F1 reaches this value

    def validate(self) -> "TrainConfig":
        for name in ("initial_lr", "lr_decay_rate", "lr_decay_steps", "clip_norm",
                     "max_epochs", "token_budget", "adam_eps", "dev_beam"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 0:
            raise ValueError("patience must be nonnegative")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["seeds"] = tuple(d.get("seeds", (1,)))
        return cls(**d)


def init_params(config: ModelConfig, vocabs: Vocabs, rng: np.random.Generator,
                word_table: PretrainedTable | None = None) -> ModelParams:
    return build_params(config, vocabs, rng, word_table)


def clip_gradients(grads: Sequence[np.ndarray], clip_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale so the global L2 norm is at most ``clip_norm``; returns (grads, norm)."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if not math.isfinite(norm):
        raise DivergenceError("gradient norm is not finite")
    if norm > clip_norm:
        factor = clip_norm / norm
        return [g * factor for g in grads], norm
    return list(grads), norm


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 0.008


def adam_step(params: Sequence[tuple[str, ad.Tensor]], grads: Sequence[np.ndarray],
              state: AdamState, lr: float | None = None) -> None:
    """Bias-corrected Adam update, in place.  Non-trainable tensors are skipped."""
    if len(params) != len(grads):
        raise ValueError("adam_step: parameter and gradient counts differ")
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for (name, p), g in zip(params, grads):
        if not p.requires_grad:
            continue
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} for {name} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ValueError(f"adam_step: accumulator shape drift for {name}")
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_at_step(step: int, config: TrainConfig) -> float:
    return config.initial_lr * config.lr_decay_rate ** (step / config.lr_decay_steps)


def aggregate_runs(scores: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation."""
    if len(scores) < 2:
        raise ValueError("aggregating runs needs at least two scores")
    vals = [float(s) for s in sorted(scores)]
    return statistics.fmean(vals), statistics.stdev(vals)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"GCDTCKPT"
FORMAT_VERSION = 1


def config_digest(config: ModelConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    vocabs: Vocabs
    tensors: dict[str, np.ndarray]
    adam: AdamState
    epoch: int = 0
    best_dev: float = 0.0
    rng_state: dict | None = None

    def model(self) -> GCDT:
        """Rebuild the model with parameter values copied from the checkpoint."""
        params = build_params(self.model_config, self.vocabs, np.random.default_rng(0))
        for name, t in params.all_tensors():
            if name not in self.tensors:
                raise KeyError(f"checkpoint lacks tensor {name}")
            src = self.tensors[name]
            if src.shape != t.shape:
                raise ValueError(f"checkpoint tensor {name}: shape {src.shape} vs {t.shape}")
            t.data = src.astype(np.float64, copy=True)
        return GCDT(self.model_config, self.vocabs, params)


def snapshot(model: GCDT, adam: AdamState, train_config: TrainConfig, epoch: int,
             best_dev: float, rng: np.random.Generator | None) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in model.params.all_tensors()}
    opt = AdamState({k: v.copy() for k, v in adam.m.items()},
                    {k: v.copy() for k, v in adam.v.items()},
                    adam.step, adam.beta1, adam.beta2, adam.eps, adam.lr)
    return Checkpoint(model.config, train_config, model.vocabs, tensors, opt, epoch,
                      best_dev, None if rng is None else rng.bit_generator.state)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Single file: magic, header length, JSON header, raw little-endian float64 data.

    Written to a temporary file in the target directory and renamed into
    place, so readers never see a partial checkpoint.
    """
    entries = []
    blobs = []
    offset = 0

    def add(kind, name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"kind": kind, "name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    for name in sorted(ckpt.tensors):
        add("param", name, ckpt.tensors[name])
    for name in sorted(ckpt.adam.m):
        add("adam_m", name, ckpt.adam.m[name])
        add("adam_v", name, ckpt.adam.v[name])
    header = {
        "format": FORMAT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "config_digest": config_digest(ckpt.model_config),
        "train_config": ckpt.train_config.to_dict(),
        "vocabs": {"word": ckpt.vocabs.word.to_list(), "char": ckpt.vocabs.char.to_list(),
                   "label": ckpt.vocabs.label.to_list()},
        "adam": {"step": ckpt.adam.step, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "lr": ckpt.adam.lr},
        "epoch": ckpt.epoch,
        "best_dev": ckpt.best_dev,
        "rng_state": ckpt.rng_state,
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')}")
    body = data[start + hlen:]
    mcfg = ModelConfig.from_dict(header["model_config"])
    if config_digest(mcfg) != header["config_digest"]:
        raise CheckpointError(f"{path}: config digest mismatch")
    tensors: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for e in header["tensors"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
        {"param": tensors, "adam_m": m, "adam_v": v}[e["kind"]][e["name"]] = arr
    a = header["adam"]
    voc = header["vocabs"]
    vocabs = Vocabs(Vocabulary.from_list("word", voc["word"]),
                    Vocabulary.from_list("char", voc["char"]),
                    Vocabulary.from_list("label", voc["label"]))
    return Checkpoint(mcfg, TrainConfig.from_dict(header["train_config"]), vocabs, tensors,
                      AdamState(m, v, a["step"], a["beta1"], a["beta2"], a["eps"], a["lr"]),
                      header["epoch"], header["best_dev"], header["rng_state"])


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    checkpoint: Checkpoint          # best dev epoch
    history: list[dict]
    model: GCDT                     # restored from the best checkpoint
    final: Checkpoint | None = None


def _gradients(params: Sequence[tuple[str, ad.Tensor]]) -> list[np.ndarray]:
    return [np.zeros_like(t.data) if t.grad is None else t.grad for _, t in params]


def train(train_corpus: Sequence[Sentence], dev_corpus: Sequence[Sentence],
          model_config: ModelConfig, train_config: TrainConfig, seed: int | None = None,
          vocabs: Vocabs | None = None, word_table: PretrainedTable | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one model; the result holds the best-dev checkpoint and per-epoch history.

    Corpora are expected in BIOES.  Dev F1 is measured once per epoch with
    ``train_config.dev_beam``; training stops after ``max_epochs`` or after
    more than ``patience`` consecutive epochs without a dev improvement.
    """
    train_config.validate()
    model_config.validate()
    seed = train_config.seeds[0] if seed is None else seed
    rng = np.random.default_rng(seed)
    if vocabs is None:
        vocabs = build_vocabs(train_corpus)
    model = GCDT.create(model_config, vocabs, rng, word_table)
    params = model.params.registry()
    pad_rows = [t for name, t in params if name == "char_cnn.char_table"]
    adam = AdamState(beta1=train_config.beta1, beta2=train_config.beta2,
                     eps=train_config.adam_eps, lr=train_config.initial_lr)
    gold = [s.labels for s in dev_corpus]
    history: list[dict] = []
    best: Checkpoint | None = None
    best_f1 = -1.0
    stale = 0
    for epoch in range(1, train_config.max_epochs + 1):
        batches = make_batches(train_corpus, vocabs, train_config.token_budget, rng, shuffle=True)
        total = 0.0
        tokens = 0
        lr = lr_at_step(adam.step, train_config)
        for batch in batches:
            for _, t in params:
                t.grad = None
            loss = model.loss(batch, training=True, rng=rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {adam.step + 1}")
            ad.backward(loss)
            for t in pad_rows:
                if t.grad is not None:
                    t.grad[PAD_ID] = 0.0
            try:
                grads, _ = clip_gradients(_gradients(params), train_config.clip_norm)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at step {adam.step + 1}") from None
            lr = lr_at_step(adam.step, train_config)
            adam_step(params, grads, adam, lr)
            total += value * batch.tokens
            tokens += batch.tokens
        pred = predict(model, dev_corpus, train_config.dev_beam, train_config.token_budget)
        report = evaluate(gold, pred)
        record = {"epoch": epoch, "step": adam.step, "loss": total / max(tokens, 1),
                  "lr": lr, "dev_f1": report.f1, "dev_accuracy": report.accuracy}
        history.append(record)
        log.info("epoch %d step %d loss %.5f lr %.6f dev F1 %.4f", epoch, adam.step,
                 record["loss"], lr, report.f1)
        if on_epoch is not None:
            on_epoch(record)
        if report.f1 > best_f1:
            best_f1 = report.f1
            stale = 0
            best = snapshot(model, adam, train_config, epoch, best_f1, rng)
            if train_config.target_f1 is not None and best_f1 >= train_config.target_f1:
                break
        else:
            stale += 1
            if stale > train_config.patience:
                break
    final = snapshot(model, adam, train_config, history[-1]["epoch"], best_f1, rng)
    return TrainResult(best, history, best.model(), final)


def _train_seed(args) -> tuple[int, TrainResult]:
    train_corpus, dev_corpus, mcfg, tcfg, seed, vocabs, table = args
    return seed, train(train_corpus, dev_corpus, mcfg, tcfg, seed, vocabs, table)


def run_seeds(train_corpus, dev_corpus, model_config: ModelConfig, train_config: TrainConfig,
              vocabs: Vocabs | None = None, word_table: PretrainedTable | None = None,
              workers: int = 1) -> dict[int, TrainResult]:
    """Independent replicas, one per seed; ``workers`` > 1 runs them in processes."""
    vocabs = vocabs or build_vocabs(train_corpus)
    jobs = [(train_corpus, dev_corpus, model_config, train_config, s, vocabs, word_table)
            for s in train_config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return dict(pool.map(_train_seed, jobs))
    return dict(map(_train_seed, jobs))
