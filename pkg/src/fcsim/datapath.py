"""Functional model of the processing datapath.

A processing element is a T x T matrix-vector multiplier (T*T
multipliers plus a per-row adder tree) feeding a vector accumulator
that sums tile partial products across time slots. After the last slot
of a pass, the output stage adds the bias, requantizes, and clamps
through ReLU.

Pipeline registers are not modeled here: pipelining changes timing
only, never values, so the functional result is identical for the
pipelined and non-pipelined parts.

run_inference evaluates the P processing elements of a slot together;
their accumulators are disjoint by schedule construction, so results
are deterministic for any evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fxnum import (
    FixedWord,
    QFormat,
    WideAcc,
    check_acc_headroom,
    requantize_array,
    rshift_round_half_even,
    saturate,
)
from .layer import LayerConfig, TileGrid, plan_schedule, require_valid


@dataclass
class PeState:
    """Per-PE accumulator bank: one wide accumulator per tile row."""

    acc: np.ndarray  # (T,) int64 raws at scale 2**(-2*frac_bits)

    @classmethod
    def zero(cls, tile: int) -> "PeState":
        return cls(np.zeros(tile, dtype=np.int64))


@dataclass
class SlotTrace:
    pass_idx: int
    slot: int
    tiles: list[tuple[int, int]]
    weight_reads: int
    input_reads: int


@dataclass
class InferenceResult:
    """Layer outputs as raw counts plus an optional per-slot trace."""

    outputs_raw: np.ndarray  # (out_features,) int16, all >= 0 after ReLU
    fmt: QFormat
    trace: list[SlotTrace] | None = None

    def output_values(self) -> np.ndarray:
        return self.outputs_raw.astype(np.float64) * self.fmt.lsb


def mv_mult_tile(tile: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One PE slot: exact integer tile @ x, one wide raw per tile row."""
    tile = np.asarray(tile)
    x = np.asarray(x)
    if tile.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"tile shape {tile.shape} does not match input length {x.shape}")
    return tile.astype(np.int64) @ x.astype(np.int64)


def v_accum(state: PeState, partial: np.ndarray) -> PeState:
    """Fold a slot's partial products into the accumulator bank."""
    if state.acc.shape != partial.shape:
        raise ValueError("accumulator/partial length mismatch")
    acc = state.acc + partial
    check_acc_headroom(acc)
    return PeState(acc)


def bias_relu(acc: WideAcc, bias: FixedWord, fmt: QFormat | None = None) -> FixedWord:
    """Output stage for one neuron: add bias, requantize, clamp at zero.

    The bias is promoted to accumulator scale exactly (a left shift), so
    the addition introduces no error.
    """
    fmt = fmt or acc.fmt
    promoted = bias.raw << fmt.frac_bits
    raw = rshift_round_half_even(acc.raw + promoted, fmt.frac_bits)
    return FixedWord(max(0, saturate(raw, fmt)), fmt)


def _pad_input(x: np.ndarray, cfg: LayerConfig) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (cfg.in_features,):
        raise ValueError(f"input length {x.shape} does not match in_features {cfg.in_features}")
    padded = np.zeros(cfg.padded_cols, dtype=np.int16)
    padded[: cfg.in_features] = x
    return padded


def _padded_bias(cfg: LayerConfig) -> np.ndarray:
    bias = np.zeros(cfg.padded_rows, dtype=np.int64)
    bias[: cfg.out_features] = cfg.bias().astype(np.int64)
    return bias << cfg.fmt.frac_bits  # promoted to accumulator scale


def run_inference(
    cfg: LayerConfig,
    grid: TileGrid,
    x: np.ndarray,
    mem=None,
    collect_trace: bool = False,
    slot_order=None,
) -> InferenceResult:
    """Evaluate the layer under the tile schedule.

    With ``mem`` set (a memsys.MemorySystem), every tile and input slice
    is delivered through the modeled HBM read path and recorded in the
    memory trace; otherwise tiles come straight from the grid. The
    result is bit-identical either way, and bit-identical to
    reference_serial_fixed.

    ``slot_order`` optionally reorders the slots within each pass;
    accumulation is exact integer addition, so any order gives the same
    outputs (this hook exists for the order-invariance tests).
    """
    require_valid(cfg)
    sched = plan_schedule(cfg)
    t, pe_count = cfg.tile, cfg.pe_count
    x_pad = _pad_input(x, cfg)
    bias_promoted = _padded_bias(cfg)

    if mem is not None:
        mem.set_input(x_pad)

    order = list(slot_order) if slot_order is not None else list(range(sched.slots_per_pass))
    if sorted(order) != list(range(sched.slots_per_pass)):
        raise ValueError("slot_order must be a permutation of the slot indices")

    out_pad = np.zeros(cfg.padded_rows, dtype=np.int16)
    trace: list[SlotTrace] | None = [] if collect_trace else None

    for p in range(sched.passes):
        acc = np.zeros((pe_count, t), dtype=np.int64)  # disjoint per-PE banks
        row0 = p * pe_count
        for s in order:
            if mem is not None:
                xs = mem.read_input_slot(p, s)
                tiles = np.stack([mem.fetch_tile(ch, p, s) for ch in range(pe_count)])
            else:
                xs = x_pad[s * t : (s + 1) * t]
                tiles = grid.tiles[row0 : row0 + pe_count, s]
            acc += np.einsum("ptc,c->pt", tiles.astype(np.int64), xs.astype(np.int64))
            if trace is not None:
                trace.append(
                    SlotTrace(
                        pass_idx=p,
                        slot=s,
                        tiles=[(row0 + pe, s) for pe in range(pe_count)],
                        weight_reads=pe_count,
                        input_reads=1,
                    )
                )
        check_acc_headroom(acc)
        rows = slice(row0 * t, (row0 + pe_count) * t)
        vals = acc.reshape(pe_count * t) + bias_promoted[rows]
        folded = rshift_round_half_even(vals, cfg.fmt.frac_bits)
        out_pad[rows] = np.clip(folded, 0, cfg.fmt.raw_max).astype(np.int16)  # ReLU + saturate

    return InferenceResult(out_pad[: cfg.out_features].copy(), cfg.fmt, trace)


def reference_serial_fixed(cfg: LayerConfig, weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Untiled row-by-row evaluation with the same numerics.

    Serves as the bit-exact oracle for run_inference: a plain integer
    matrix-vector product into 48-bit accumulators, then the identical
    bias / requantize / ReLU output stage.
    """
    require_valid(cfg)
    weights = np.asarray(weights)
    x = np.asarray(x)
    if weights.shape != (cfg.out_features, cfg.in_features):
        raise ValueError("weight shape does not match layer")
    if x.shape != (cfg.in_features,):
        raise ValueError("input length does not match layer")
    acc = weights.astype(np.int64) @ x.astype(np.int64)
    check_acc_headroom(acc)
    vals = acc + (cfg.bias().astype(np.int64) << cfg.fmt.frac_bits)
    folded = rshift_round_half_even(vals, cfg.fmt.frac_bits)
    return np.clip(folded, 0, cfg.fmt.raw_max).astype(np.int16)


def reference_real(cfg: LayerConfig, weights_real: np.ndarray, x_real: np.ndarray) -> np.ndarray:
    """Real-arithmetic reference y = ReLU(W x + b) in float64.

    The bias comes from the config and is dequantized, so it is exactly
    the value the fixed-point path adds.
    """
    weights_real = np.asarray(weights_real, dtype=np.float64)
    x_real = np.asarray(x_real, dtype=np.float64)
    if weights_real.shape != (cfg.out_features, cfg.in_features):
        raise ValueError("weight shape does not match layer")
    bias = cfg.bias().astype(np.float64) * cfg.fmt.lsb
    return np.maximum(0.0, weights_real @ x_real + bias)
