"""The GCDT tagger: global contextual encoder, labeling encoder, label-feedback decoder."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cells import Block, DTBlockParams, GRUParams, Runner, run_bidirectional, run_sequence
from .conll import Batch, PAD_ID, Vocabs
from .embeddings import CharCNN, PretrainedTable, char_cnn_forward, random_table
from .init import glorot_uniform, zeros

GLOBAL_POSITIONS = ("encoder_input", "decoder_input", "softmax_input", "none")
CELL_KINDS = ("dt", "gru")
POOLINGS = ("mean", "max")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    use_char: bool = True
    use_pretrained: bool = True
    use_global: bool = True
    use_external: bool = False
    cell_kind: str = "dt"
    transition_count: int = 4
    encoder_hidden: int = 256
    global_hidden: int = 128
    decoder_hidden: int = 256
    label_embed_dim: int = 32
    global_position: str = "encoder_input"
    global_pooling: str = "mean"
    beam_size: int = 5
    dropout_embed: float = 0.5
    dropout_hidden: float = 0.3
    inner_dropout: bool = False
    word_dim: int = 300
    char_dim: int = 30
    char_filters: int = 128
    char_width: int = 3
    external_dim: int = 0
    # the global encoder may use its own cell (parameter-size comparisons)
    global_cell_kind: str | None = None
    global_transition_count: int | None = None

    def validate(self) -> "ModelConfig":
        if not (self.use_char or self.use_pretrained or self.use_external):
            raise ConfigError("at least one of use_char, use_pretrained, use_external must be set")
        if self.global_position not in GLOBAL_POSITIONS:
            raise ConfigError(f"global_position must be one of {GLOBAL_POSITIONS}")
        if self.use_global != (self.global_position != "none"):
            raise ConfigError("use_global must be false exactly when global_position is none")
        if self.use_global and not (self.use_char or self.use_pretrained):
            raise ConfigError("the global encoder reads char and/or pretrained embeddings")
        for kind in (self.cell_kind, self.global_cell):
            if kind not in CELL_KINDS:
                raise ConfigError(f"cell kind must be one of {CELL_KINDS}, got {kind!r}")
        if self.global_pooling not in POOLINGS:
            raise ConfigError(f"global_pooling must be one of {POOLINGS}")
        for name in ("encoder_hidden", "global_hidden", "decoder_hidden", "label_embed_dim",
                     "beam_size", "word_dim", "char_dim", "char_filters", "char_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.transition_count < 0 or self.global_transitions < 0:
            raise ConfigError("transition counts must be nonnegative")
        if self.use_external and self.external_dim < 1:
            raise ConfigError("use_external needs external_dim > 0")
        for name in ("dropout_embed", "dropout_hidden"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        return self

    @property
    def global_cell(self) -> str:
        return self.global_cell_kind or self.cell_kind

    @property
    def global_transitions(self) -> int:
        if self.global_transition_count is None:
            return self.transition_count
        return self.global_transition_count

    @property
    def global_dim(self) -> int:
        return 2 * self.global_hidden if self.use_global else 0

    @property
    def global_input_dim(self) -> int:
        return self.char_filters * self.use_char + self.word_dim * self.use_pretrained

    @property
    def token_dim(self) -> int:
        dim = self.global_input_dim + self.external_dim * self.use_external
        if self.global_position == "encoder_input":
            dim += self.global_dim
        return dim

    @property
    def decoder_input_dim(self) -> int:
        dim = 2 * self.encoder_hidden + self.label_embed_dim
        if self.global_position == "decoder_input":
            dim += self.global_dim
        return dim

    @property
    def output_input_dim(self) -> int:
        dim = self.decoder_hidden
        if self.global_position == "softmax_input":
            dim += self.global_dim
        return dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def make_block(kind: str, d_in: int, hidden: int, transitions: int,
               rng: np.random.Generator) -> Block:
    if kind == "dt":
        return DTBlockParams.init(d_in, hidden, transitions, rng)
    return GRUParams.init(d_in, hidden, rng)


@dataclass
class ModelParams:
    char_cnn: CharCNN | None
    word_table: PretrainedTable | None
    global_fwd: Block | None
    global_bwd: Block | None
    enc_fwd: Block
    enc_bwd: Block
    decoder: Block
    label_table: Tensor        # (n_labels + 1, label_embed_dim); last row is <start>
    W_out: Tensor
    b_out: Tensor

    def components(self) -> Iterator[tuple[str, list[tuple[str, Tensor]]]]:
        """Trainable tensors grouped by component; the frozen word table is left out."""
        if self.char_cnn is not None:
            yield "char_cnn", list(self.char_cnn.tensors())
        if self.global_fwd is not None:
            yield "global_encoder", [(f"fwd.{n}", t) for n, t in self.global_fwd.tensors()] + \
                [(f"bwd.{n}", t) for n, t in self.global_bwd.tensors()]
        yield "encoder", [(f"fwd.{n}", t) for n, t in self.enc_fwd.tensors()] + \
            [(f"bwd.{n}", t) for n, t in self.enc_bwd.tensors()]
        yield "decoder", list(self.decoder.tensors())
        yield "label_embedding", [("table", self.label_table)]
        yield "output", [("W_l", self.W_out), ("b_l", self.b_out)]

    def registry(self) -> list[tuple[str, Tensor]]:
        out = []
        for comp, items in self.components():
            out.extend((f"{comp}.{name}", t) for name, t in items)
        return out

    def all_tensors(self) -> list[tuple[str, Tensor]]:
        """Registry plus frozen tensors; what a checkpoint stores."""
        out = self.registry()
        if self.word_table is not None:
            out.append(("word_table", self.word_table.matrix))
        return out


def build_params(config: ModelConfig, vocabs: Vocabs, rng: np.random.Generator,
                 word_table: PretrainedTable | None = None) -> ModelParams:
    """Glorot-uniform matrices and embedding tables, zero biases."""
    config.validate()
    n_labels = len(vocabs.label)
    cnn = None
    if config.use_char:
        table = glorot_uniform((len(vocabs.char), config.char_dim), rng, "char_table")
        table.data[PAD_ID] = 0.0
        cnn = CharCNN(table,
                      glorot_uniform((config.char_width * config.char_dim, config.char_filters),
                                     rng, "char_filters"),
                      zeros((config.char_filters,), "char_bias"),
                      config.char_width)
    if config.use_pretrained:
        if word_table is None:
            word_table = random_table(vocabs.word, config.word_dim, rng)
        elif word_table.dim != config.word_dim:
            raise ConfigError(f"pretrained dim {word_table.dim} != word_dim {config.word_dim}")
    else:
        word_table = None
    g_fwd = g_bwd = None
    if config.use_global:
        g_fwd, g_bwd = (make_block(config.global_cell, config.global_input_dim,
                                   config.global_hidden, config.global_transitions, rng)
                        for _ in range(2))
    e_fwd, e_bwd = (make_block(config.cell_kind, config.token_dim, config.encoder_hidden,
                               config.transition_count, rng) for _ in range(2))
    dec = make_block(config.cell_kind, config.decoder_input_dim, config.decoder_hidden,
                     config.transition_count, rng)
    labels = glorot_uniform((n_labels + 1, config.label_embed_dim), rng, "label_table")
    w_out = glorot_uniform((config.output_input_dim, n_labels), rng, "W_l")
    return ModelParams(cnn, word_table, g_fwd, g_bwd, e_fwd, e_bwd, dec, labels, w_out,
                       zeros((n_labels,), "b_l"))


def _tile_time(v: Tensor, t: int) -> Tensor:
    """(B, d) -> (B, T, d)."""
    v3 = ad.reshape(v, (v.shape[0], 1, v.shape[1]))
    return ad.take(v3, (slice(None), np.zeros(t, dtype=np.int64)))


class GCDT:
    def __init__(self, config: ModelConfig, vocabs: Vocabs, params: ModelParams):
        self.config = config.validate()
        self.vocabs = vocabs
        self.params = params
        self.n_labels = len(vocabs.label)
        self.start_id = self.n_labels

    @classmethod
    def create(cls, config: ModelConfig, vocabs: Vocabs, rng: np.random.Generator,
               word_table: PretrainedTable | None = None) -> "GCDT":
        return cls(config, vocabs, build_params(config, vocabs, rng, word_table))

    def param_count(self) -> int:
        return param_count(self.params)

    # ----------------------------------------------------------------------
    # representation

    def local_embeddings(self, batch: Batch) -> tuple[Tensor | None, Tensor | None, Tensor | None]:
        p, cfg = self.params, self.config
        c = char_cnn_forward(batch.chars, p.char_cnn) if cfg.use_char else None
        w = ad.gather_rows(p.word_table.matrix, batch.words) if cfg.use_pretrained else None
        ext = None
        if cfg.use_external:
            if batch.external is None or batch.external.shape[-1] != cfg.external_dim:
                raise ConfigError("batch lacks external embeddings of the configured dimension")
            ext = Tensor(batch.external)
        return c, w, ext

    def global_context(self, c, w, lengths, training: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Pooled bidirectional states of the global encoder over [c; w]: (B, 2*global_hidden)."""
        cfg, p = self.config, self.params
        lengths = np.asarray(lengths)
        if lengths.min() < 1:
            raise ValueError("global context of an empty sentence")
        x = ad.concat([t for t in (c, w) if t is not None])
        x = ad.dropout(x, 1.0 - cfg.dropout_embed, rng, training)
        keep = 1.0 - cfg.dropout_hidden if training else 1.0
        states = run_bidirectional(x, p.global_fwd, p.global_bwd, lengths, keep,
                                   rng if training else None, cfg.inner_dropout)
        return pool_states(states, lengths, cfg.global_pooling)

    def token_represent(self, c, w, ext, g, training: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
        parts = [t for t in (c, w, ext) if t is not None]
        if self.config.global_position == "encoder_input":
            parts.append(_tile_time(g, parts[0].shape[1]))
        x = ad.concat(parts)
        return ad.dropout(x, 1.0 - self.config.dropout_embed, rng, training)

    def encode(self, x: Tensor, lengths, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        cfg, p = self.config, self.params
        keep = 1.0 - cfg.dropout_hidden if training else 1.0
        return run_bidirectional(x, p.enc_fwd, p.enc_bwd, lengths, keep,
                                 rng if training else None, cfg.inner_dropout)

    def encode_batch(self, batch: Batch, training: bool = False,
                     rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor | None]:
        """Encoder states H (B, T, 2*encoder_hidden) and the global vector g (or None)."""
        c, w, ext = self.local_embeddings(batch)
        g = None
        if self.config.use_global:
            g = self.global_context(c, w, batch.lengths, training, rng)
        x = self.token_represent(c, w, ext, g, training, rng)
        return self.encode(x, batch.lengths, training, rng), g

    # ----------------------------------------------------------------------
    # decoding

    def _check_label_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() > self.start_id):
            raise ValueError(f"previous label id outside [0, {self.start_id}]")

    def output_logits(self, s: Tensor, g: Tensor | None) -> Tensor:
        if self.config.global_position == "softmax_input":
            if s.ndim == 3:
                g = _tile_time(g, s.shape[1])
            s = ad.concat([s, g])
        return ad.add(ad.matmul(s, self.params.W_out), self.params.b_out)

    def decoder_inputs(self, h: Tensor, prev_ids: np.ndarray, g: Tensor | None) -> Tensor:
        prev_ids = np.asarray(prev_ids, dtype=np.int64)
        self._check_label_ids(prev_ids)
        parts = [h, ad.gather_rows(self.params.label_table, prev_ids)]
        if self.config.global_position == "decoder_input":
            parts.append(g if h.ndim == 2 else _tile_time(g, h.shape[1]))
        return ad.concat(parts)

    def teacher_forced_logits(self, batch: Batch, training: bool = False,
                              rng: np.random.Generator | None = None) -> Tensor:
        """(B, T, n_labels) logits with gold previous labels fed to the decoder."""
        h, g = self.encode_batch(batch, training, rng)
        prev = np.empty_like(batch.labels)
        prev[:, 0] = self.start_id
        prev[:, 1:] = batch.labels[:, :-1]
        dec_in = self.decoder_inputs(h, prev, g)
        mask = batch.mask.astype(bool)
        keep = 1.0 - self.config.dropout_hidden if training else 1.0
        s = run_sequence(dec_in, self.params.decoder, None if mask.all() else mask, keep,
                         rng if training else None, self.config.inner_dropout)
        return self.output_logits(s, g)

    def loss(self, batch: Batch, training: bool = True,
             rng: np.random.Generator | None = None) -> Tensor:
        """Mean token cross-entropy over non-pad positions."""
        logits = self.teacher_forced_logits(batch, training, rng)
        return masked_cross_entropy(logits, batch.labels, batch.mask)

    def decoder_session(self, g: Tensor | None = None) -> "DecoderSession":
        return DecoderSession(self, g)


class DecoderSession:
    """Step-wise decoding with fused weights built once (eval mode, no dropout)."""

    def __init__(self, model: GCDT, g: Tensor | None):
        self.model = model
        self.g = g
        self.runner = Runner(model.params.decoder)

    def initial_state(self, rows: int) -> np.ndarray:
        return np.zeros((rows, self.runner.hidden))

    def step(self, h_t: np.ndarray, prev_ids: np.ndarray, state: np.ndarray,
             g_rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Logits (R, n_labels) and new state (R, decoder_hidden) for R rows."""
        with ad.no_grad():
            g = None if g_rows is None else Tensor(g_rows)
            x = self.model.decoder_inputs(Tensor(h_t), prev_ids, g)
            s = self.runner.step(self.runner.project(x), Tensor(state))
            logits = self.model.output_logits(s, g)
        return logits.data, s.data


def decode_step(model: GCDT, h_t, prev_ids, state, g=None):
    """One decoder step for a set of rows: returns (logits, new_state)."""
    return DecoderSession(model, None).step(
        np.asarray(h_t), np.asarray(prev_ids), np.asarray(state),
        None if g is None else np.asarray(g))


def pool_states(states: Tensor, lengths: np.ndarray, mode: str) -> Tensor:
    """Mean or coordinatewise max over the true time steps of (B, T, d) states."""
    b, t, d = states.shape
    lengths = np.asarray(lengths)
    pad = (np.arange(t)[None, :] >= lengths[:, None])
    if mode == "mean":
        if pad.any():
            keep = np.repeat(np.where(pad, 0.0, 1.0)[:, :, None], d, axis=2)
            states = ad.mul(states, keep)
        inv = np.repeat((1.0 / lengths)[:, None], d, axis=1)
        return ad.mul(ad.sum(states, axis=1), inv)
    if pad.any():
        penalty = np.repeat(np.where(pad, -1e30, 0.0)[:, :, None], d, axis=2)
        states = ad.add(states, penalty)
    return ad.max(states, axis=1)


def masked_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    count = float(mask.sum())
    if count == 0:
        raise ValueError("loss over a batch without any real tokens")
    k = logits.shape[-1]
    flat = ad.reshape(logits, (-1, k))
    total = ad.softmax_cross_entropy(flat, np.asarray(labels).reshape(-1),
                                     np.asarray(mask, dtype=np.float64).reshape(-1))
    return ad.scale(total, 1.0 / count)


def param_count(params: ModelParams) -> int:
    return int(sum(t.size for _, t in params.registry()))


def component_counts(params: ModelParams) -> dict[str, int]:
    return {comp: int(sum(t.size for _, t in items)) for comp, items in params.components()}
