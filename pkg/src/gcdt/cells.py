"""Recurrent cells: L-GRU, T-GRU, the deep transition block and a plain GRU.

All weights use the row-vector convention ``x @ W`` with ``W`` shaped
(in, out).  Every step function accepts any number of leading batch axes.

L-GRU candidate state::

    h~ = tanh(x W_xh + r * (h W_hh) + b_h) + l * (x W_x)

The gated linear path sits outside the tanh, so the input has an
unsquashed route into the state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .init import glorot_uniform, zeros


@dataclass
class LGRUParams:
    W_xh: Tensor
    W_x: Tensor
    W_xr: Tensor
    W_xz: Tensor
    W_xl: Tensor
    W_hh: Tensor
    W_hr: Tensor
    W_hz: Tensor
    W_hl: Tensor
    b_r: Tensor
    b_z: Tensor
    b_l: Tensor
    b_h: Tensor

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[0]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator) -> "LGRUParams":
        kw = {}
        for name in ("W_xh", "W_x", "W_xr", "W_xz", "W_xl"):
            kw[name] = glorot_uniform((d_in, hidden), rng, name)
        for name in ("W_hh", "W_hr", "W_hz", "W_hl"):
            kw[name] = glorot_uniform((hidden, hidden), rng, name)
        for name in ("b_r", "b_z", "b_l", "b_h"):
            kw[name] = zeros((hidden,), name)
        return cls(**kw)

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.__dataclass_fields__:
            yield name, getattr(self, name)

    # fused layouts used by the step functions
    def input_weights(self) -> Tensor:
        return ad.concat([self.W_xr, self.W_xz, self.W_xl, self.W_xh, self.W_x])

    def input_bias(self) -> Tensor:
        return ad.concat([self.b_r, self.b_z, self.b_l, self.b_h,
                          np.zeros(self.hidden, dtype=self.b_h.data.dtype)])

    def hidden_weights(self) -> Tensor:
        return ad.concat([self.W_hr, self.W_hz, self.W_hl, self.W_hh])


@dataclass
class TGRUParams:
    W_h: Tensor
    W_r: Tensor
    W_z: Tensor
    b_h: Tensor
    b_r: Tensor
    b_z: Tensor

    @property
    def hidden(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator) -> "TGRUParams":
        kw = {name: glorot_uniform((hidden, hidden), rng, name) for name in ("W_h", "W_r", "W_z")}
        kw.update({name: zeros((hidden,), name) for name in ("b_h", "b_r", "b_z")})
        return cls(**kw)

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.__dataclass_fields__:
            yield name, getattr(self, name)

    def fused(self) -> tuple[Tensor, Tensor]:
        return ad.concat([self.W_r, self.W_z, self.W_h]), ad.concat([self.b_r, self.b_z])


@dataclass
class DTBlockParams:
    lgru: LGRUParams
    tgrus: list[TGRUParams] = field(default_factory=list)

    @property
    def hidden(self) -> int:
        return self.lgru.hidden

    @property
    def depth(self) -> int:
        return len(self.tgrus)

    @classmethod
    def init(cls, d_in: int, hidden: int, transitions: int,
             rng: np.random.Generator) -> "DTBlockParams":
        lgru = LGRUParams.init(d_in, hidden, rng)
        return cls(lgru, [TGRUParams.init(hidden, rng) for _ in range(transitions)])

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.lgru.tensors():
            yield f"lgru.{name}", t
        for j, tg in enumerate(self.tgrus, start=1):
            for name, t in tg.tensors():
                yield f"tgru{j}.{name}", t


@dataclass
class GRUParams:
    W_xr: Tensor
    W_xz: Tensor
    W_xh: Tensor
    W_hr: Tensor
    W_hz: Tensor
    W_hh: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[0]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator) -> "GRUParams":
        kw = {}
        for name in ("W_xr", "W_xz", "W_xh"):
            kw[name] = glorot_uniform((d_in, hidden), rng, name)
        for name in ("W_hr", "W_hz", "W_hh"):
            kw[name] = glorot_uniform((hidden, hidden), rng, name)
        for name in ("b_r", "b_z", "b_h"):
            kw[name] = zeros((hidden,), name)
        return cls(**kw)

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.__dataclass_fields__:
            yield name, getattr(self, name)

    def input_weights(self) -> Tensor:
        return ad.concat([self.W_xr, self.W_xz, self.W_xh])

    def input_bias(self) -> Tensor:
        return ad.concat([self.b_r, self.b_z, self.b_h])

    def hidden_weights(self) -> Tensor:
        return ad.concat([self.W_hr, self.W_hz, self.W_hh])


Block = Union[DTBlockParams, GRUParams]


# --------------------------------------------------------------------------
# single steps

def _interpolate(h_prev: Tensor, z: Tensor, cand: Tensor) -> Tensor:
    # (1 - z) * h_prev + z * cand
    return ad.add(h_prev, ad.mul(z, ad.sub(cand, h_prev)))


def _lgru_core(xp: Tensor, h_prev: Tensor, w_h: Tensor) -> Tensor:
    """One L-GRU update from the precomputed input projection ``xp`` (..., 5h)."""
    n = h_prev.shape[-1]
    hp = ad.matmul(h_prev, w_h)                                        # (..., 4h)
    gates = ad.sigmoid(ad.add(ad.slice_last(xp, 0, 3 * n), ad.slice_last(hp, 0, 3 * n)))
    r = ad.slice_last(gates, 0, n)
    z = ad.slice_last(gates, n, 2 * n)
    lin = ad.slice_last(gates, 2 * n, 3 * n)
    cand = ad.tanh(ad.add(ad.slice_last(xp, 3 * n, 4 * n),
                          ad.mul(r, ad.slice_last(hp, 3 * n, 4 * n))))
    cand = ad.add(cand, ad.mul(lin, ad.slice_last(xp, 4 * n, 5 * n)))
    return _interpolate(h_prev, z, cand)


def _tgru_core(h_below: Tensor, w: Tensor, b_rz: Tensor, b_h: Tensor) -> Tensor:
    n = h_below.shape[-1]
    g = ad.matmul(h_below, w)                                          # (..., 3h)
    rz = ad.sigmoid(ad.add(ad.slice_last(g, 0, 2 * n), b_rz))
    r = ad.slice_last(rz, 0, n)
    z = ad.slice_last(rz, n, 2 * n)
    cand = ad.tanh(ad.add(ad.mul(r, ad.slice_last(g, 2 * n, 3 * n)), b_h))
    return _interpolate(h_below, z, cand)


def _gru_core(xp: Tensor, h_prev: Tensor, w_h: Tensor) -> Tensor:
    n = h_prev.shape[-1]
    hp = ad.matmul(h_prev, w_h)
    rz = ad.sigmoid(ad.add(ad.slice_last(xp, 0, 2 * n), ad.slice_last(hp, 0, 2 * n)))
    r = ad.slice_last(rz, 0, n)
    z = ad.slice_last(rz, n, 2 * n)
    cand = ad.tanh(ad.add(ad.slice_last(xp, 2 * n, 3 * n),
                          ad.mul(r, ad.slice_last(hp, 2 * n, 3 * n))))
    return _interpolate(h_prev, z, cand)


def _check_step(op: str, x: Tensor, h: Tensor, d_in: int, hidden: int) -> None:
    if x.shape[-1] != d_in or h.shape[-1] != hidden or x.shape[:-1] != h.shape[:-1]:
        raise ad.ShapeError(
            f"{op}: shape mismatch input {x.shape} / state {h.shape} "
            f"for cell ({d_in} -> {hidden})")


def lgru_step(x_t, h_prev, params: LGRUParams) -> Tensor:
    x_t, h_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev)
    _check_step("lgru_step", x_t, h_prev, params.W_xh.shape[0], params.hidden)
    xp = ad.add(ad.matmul(x_t, params.input_weights()), params.input_bias())
    return _lgru_core(xp, h_prev, params.hidden_weights())


def tgru_step(h_below, params: TGRUParams) -> Tensor:
    h_below = ad.as_tensor(h_below)
    if h_below.shape[-1] != params.hidden:
        raise ad.ShapeError(
            f"tgru_step: shape mismatch state {h_below.shape} for hidden {params.hidden}")
    w, b_rz = params.fused()
    return _tgru_core(h_below, w, b_rz, params.b_h)


def dt_step(x_t, h_prev, block: DTBlockParams) -> Tensor:
    h = lgru_step(x_t, h_prev, block.lgru)
    for tg in block.tgrus:
        h = tgru_step(h, tg)
    return h


def gru_step(x_t, h_prev, params: GRUParams) -> Tensor:
    x_t, h_prev = ad.as_tensor(x_t), ad.as_tensor(h_prev)
    _check_step("gru_step", x_t, h_prev, params.W_xh.shape[0], params.hidden)
    xp = ad.add(ad.matmul(x_t, params.input_weights()), params.input_bias())
    return _gru_core(xp, h_prev, params.hidden_weights())


def block_step(x_t, h_prev, block: Block) -> Tensor:
    if isinstance(block, DTBlockParams):
        return dt_step(x_t, h_prev, block)
    return gru_step(x_t, h_prev, block)


# --------------------------------------------------------------------------
# sequences

class Runner:
    """A block with its fused weights built once, for stepping through time.

    ``keep_prob`` < 1 with ``rng`` set enables variational dropout on the
    block output (one mask per sequence, shared by the recurrent carry and
    the emitted state).  ``inner_dropout`` adds the same kind of mask after
    every cell inside the transition chain except the last.
    """

    def __init__(self, block: Block, batch_shape: tuple[int, ...] = (),
                 keep_prob: float = 1.0, rng: np.random.Generator | None = None,
                 inner_dropout: bool = False):
        self.block = block
        self.hidden = block.hidden
        self.is_dt = isinstance(block, DTBlockParams)
        cell = block.lgru if self.is_dt else block
        self.d_in = cell.W_xh.shape[0]
        self.w_in = cell.input_weights()
        self.b_in = cell.input_bias()
        self.w_h = cell.hidden_weights()
        self.chain = [tg.fused() + (tg.b_h,) for tg in block.tgrus] if self.is_dt else []
        shape = batch_shape + (self.hidden,)
        self.mask = None
        self.inner_masks: list[np.ndarray | None] = [None] * len(self.chain)
        if rng is not None and keep_prob < 1.0:
            self.mask = ad.dropout_mask(shape, keep_prob, rng)
            if inner_dropout:
                self.inner_masks = [ad.dropout_mask(shape, keep_prob, rng)
                                    for _ in range(len(self.chain))]

    def project(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise ad.ShapeError(f"block input: shape mismatch {x.shape} for input dim {self.d_in}")
        return ad.add(ad.matmul(x, self.w_in), self.b_in)

    def step(self, xp: Tensor, h_prev: Tensor) -> Tensor:
        if not self.is_dt:
            h = _gru_core(xp, h_prev, self.w_h)
        else:
            h = _lgru_core(xp, h_prev, self.w_h)
            for (w, b_rz, b_h), inner in zip(self.chain, self.inner_masks):
                if inner is not None:
                    h = ad.mul(h, inner)
                h = _tgru_core(h, w, b_rz, b_h)
        if self.mask is not None:
            h = ad.mul(h, self.mask)
        return h


def run_sequence(inputs, block: Block, mask: np.ndarray | None = None,
                 keep_prob: float = 1.0, rng: np.random.Generator | None = None,
                 inner_dropout: bool = False) -> Tensor:
    """Left-to-right pass over (B, T, d) inputs; returns (B, T, h).

    ``mask`` (B, T) marks true positions.  At padded positions the carry is
    held and the emitted row is zero.
    """
    inputs = ad.as_tensor(inputs)
    b, t = inputs.shape[0], inputs.shape[1]
    runner = Runner(block, (b,), keep_prob, rng, inner_dropout)
    proj = runner.project(inputs)
    h = ad.Tensor(np.zeros((b, runner.hidden), dtype=proj.data.dtype))
    outs = []
    for step in range(t):
        h_new = runner.step(ad.take(proj, (slice(None), step)), h)
        m = None if mask is None else mask[:, step]
        if m is None or m.all():
            h = h_new
            outs.append(h)
        else:
            keep = np.repeat(m[:, None], runner.hidden, axis=1)
            h = ad.add(ad.mul(h_new, keep), ad.mul(h, 1.0 - keep))
            outs.append(ad.mul(h_new, keep))
    return ad.stack(outs, axis=1)


def reverse_index(lengths: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Fancy index reversing each row within its length (pads stay put)."""
    steps = np.arange(t)[None, :]
    lengths = np.asarray(lengths)[:, None]
    cols = np.where(steps < lengths, lengths - 1 - steps, steps)
    rows = np.broadcast_to(np.arange(len(lengths))[:, None], cols.shape)
    return rows, cols


def run_bidirectional(inputs, fwd: Block, bwd: Block, lengths=None,
                      keep_prob: float = 1.0, rng: np.random.Generator | None = None,
                      inner_dropout: bool = False) -> Tensor:
    """Concatenated forward and backward states, (B, T, 2h) or (T, 2h)."""
    if type(fwd) is not type(bwd):
        raise TypeError(
            f"run_bidirectional: direction kinds differ ({type(fwd).__name__} "
            f"vs {type(bwd).__name__})")
    if fwd.hidden != bwd.hidden:
        raise ad.ShapeError(
            f"run_bidirectional: hidden sizes differ ({fwd.hidden} vs {bwd.hidden})")
    inputs = ad.as_tensor(inputs)
    single = inputs.ndim == 2
    if single:
        inputs = ad.reshape(inputs, (1,) + inputs.shape)
    b, t = inputs.shape[0], inputs.shape[1]
    lengths = np.full(b, t) if lengths is None else np.asarray(lengths).reshape(b)
    mask = (np.arange(t)[None, :] < lengths[:, None])
    fmask = None if mask.all() else mask
    forward = run_sequence(inputs, fwd, fmask, keep_prob, rng, inner_dropout)
    idx = reverse_index(lengths, t)
    backward = run_sequence(ad.take(inputs, idx), bwd, fmask, keep_prob, rng, inner_dropout)
    out = ad.concat([forward, ad.take(backward, idx)])
    if single:
        out = ad.reshape(out, out.shape[1:])
    return out
