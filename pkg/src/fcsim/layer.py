"""Layer geometry: configuration, zero-padded tiling of the weight
matrix, and the column-sequential schedule that assigns one tile column
per time slot with all tile rows of that column processed in parallel.

Construction is single-threaded; the resulting TileGrid and Schedule
are immutable and can be shared freely by concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fxnum import Q16_10, QFormat

SUPPORTED_TILES = (8, 16)

# Slot budget per tile size: weight-read beats plus 3 processing cycles
# (matrix-vector multiply, accumulate, write back).
DEFAULT_CYCLES_PER_SLOT = {8: 11, 16: 7}
PROCESSING_CYCLES = 3

# Paper-mode processing clocks (Hz): non-pipelined vs 7-stage pipelined PE.
CLK_NON_PIPELINED = 100e6
CLK_PIPELINED = 662e6


@dataclass(eq=False)
class LayerConfig:
    """Dimensions and datapath parameters of one fully connected layer.

    ``bias_raw`` holds the bias as raw counts in ``fmt`` (length
    out_features); None means all-zero bias. ``clk_hz`` of None selects
    the default processing clock for the pipelined flag.
    """

    in_features: int
    out_features: int
    tile: int = 8
    pe_count: int = 128
    fmt: QFormat = Q16_10
    pipelined: bool = False
    clk_hz: float | None = None
    bias_raw: np.ndarray | None = None
    cycles_per_slot: int | None = None

    # -- derived geometry -------------------------------------------------

    @property
    def padded_cols(self) -> int:
        return math.ceil(self.in_features / self.tile) * self.tile

    @property
    def padded_rows(self) -> int:
        block = self.tile * self.pe_count
        return math.ceil(self.out_features / block) * block

    @property
    def rows_of_tiles(self) -> int:
        return self.padded_rows // self.tile

    @property
    def cols_of_tiles(self) -> int:
        return self.padded_cols // self.tile

    @property
    def passes(self) -> int:
        return self.rows_of_tiles // self.pe_count

    @property
    def slots_per_pass(self) -> int:
        return self.cols_of_tiles

    @property
    def slot_cycles(self) -> int:
        if self.cycles_per_slot is not None:
            return self.cycles_per_slot
        return DEFAULT_CYCLES_PER_SLOT[self.tile]

    @property
    def clock_hz(self) -> float:
        if self.clk_hz is not None:
            return self.clk_hz
        return CLK_PIPELINED if self.pipelined else CLK_NON_PIPELINED

    def bias(self) -> np.ndarray:
        """Bias raw counts, length out_features (zeros when unset)."""
        if self.bias_raw is None:
            return np.zeros(self.out_features, dtype=np.int16)
        return np.asarray(self.bias_raw, dtype=np.int16)


def validate_config(cfg: LayerConfig) -> list[str]:
    """Return human-readable violations; an empty list means runnable."""
    problems = []
    if cfg.in_features < 1:
        problems.append("in_features must be at least 1")
    if cfg.out_features < 1:
        problems.append("out_features must be at least 1")
    if cfg.tile not in SUPPORTED_TILES:
        problems.append("tile size must be 8 or 16")
    if cfg.pe_count < 1:
        problems.append("pe_count must be at least 1")
    if cfg.clk_hz is not None and cfg.clk_hz <= 0:
        problems.append("clock frequency must be positive")
    if cfg.bias_raw is not None and len(cfg.bias_raw) != cfg.out_features:
        problems.append(
            f"bias length {len(cfg.bias_raw)} does not match out_features {cfg.out_features}"
        )
    if cfg.cycles_per_slot is not None and cfg.cycles_per_slot < PROCESSING_CYCLES + 1:
        problems.append(
            f"cycles_per_slot must leave at least 1 read cycle plus "
            f"{PROCESSING_CYCLES} processing cycles"
        )
    return problems


def require_valid(cfg: LayerConfig):
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid layer config: " + "; ".join(problems))


@dataclass(eq=False)
class TileGrid:
    """Weight matrix split into T x T tiles, zero padded on both axes.

    ``tiles`` has shape (rows_of_tiles, cols_of_tiles, T, T) of raw int16
    counts; tile (r, c) covers output rows r*T..r*T+T-1 and input columns
    c*T..c*T+T-1. ``pad_row_start`` / ``pad_col_start`` mark where the
    zero padding begins (the original N and M).
    """

    tile: int
    fmt: QFormat
    tiles: np.ndarray
    pad_row_start: int
    pad_col_start: int

    @property
    def rows_of_tiles(self) -> int:
        return self.tiles.shape[0]

    @property
    def cols_of_tiles(self) -> int:
        return self.tiles.shape[1]

    def padded_matrix(self) -> np.ndarray:
        """Reassemble the full padded weight matrix from the tiles."""
        r, c, t, _ = self.tiles.shape
        return self.tiles.transpose(0, 2, 1, 3).reshape(r * t, c * t)


def tile_weights(weights: np.ndarray, cfg: LayerConfig) -> TileGrid:
    """Split an out_features x in_features raw weight matrix into tiles.

    Pads rows to a multiple of tile*pe_count and columns to a multiple of
    tile, filling with zero words.
    """
    require_valid(cfg)
    weights = np.asarray(weights)
    if weights.shape != (cfg.out_features, cfg.in_features):
        raise ValueError(
            f"weight shape {weights.shape} does not match layer "
            f"({cfg.out_features}, {cfg.in_features})"
        )
    if weights.dtype != np.int16:
        if np.any(weights < cfg.fmt.raw_min) or np.any(weights > cfg.fmt.raw_max):
            raise ValueError("raw weights outside 16-bit range")
        weights = weights.astype(np.int16)

    t = cfg.tile
    padded = np.zeros((cfg.padded_rows, cfg.padded_cols), dtype=np.int16)
    padded[: cfg.out_features, : cfg.in_features] = weights
    r, c = cfg.rows_of_tiles, cfg.cols_of_tiles
    tiles = padded.reshape(r, t, c, t).transpose(0, 2, 1, 3).copy()
    return TileGrid(
        tile=t,
        fmt=cfg.fmt,
        tiles=tiles,
        pad_row_start=cfg.out_features,
        pad_col_start=cfg.in_features,
    )


def untile_weights(grid: TileGrid) -> np.ndarray:
    """Inverse of tile_weights restricted to the unpadded region."""
    return grid.padded_matrix()[: grid.pad_row_start, : grid.pad_col_start].copy()


@dataclass(frozen=True)
class Schedule:
    """Column-sequential schedule: one tile column per slot, every PE
    handling a distinct tile row of that column; large layers run the
    same slot sequence once per pass with a fresh weight page."""

    passes: int
    slots_per_pass: int
    cycles_per_slot: int
    pe_count: int

    @property
    def total_cycles(self) -> int:
        return self.passes * self.slots_per_pass * self.cycles_per_slot

    @property
    def tile_count(self) -> int:
        return self.passes * self.slots_per_pass * self.pe_count

    def assignment(self, pass_idx: int, slot: int, pe: int) -> tuple[int, int]:
        """Tile coordinate (row_tile, col_tile) processed by a PE in a slot."""
        if not (0 <= pass_idx < self.passes):
            raise ValueError(f"pass {pass_idx} out of range")
        if not (0 <= slot < self.slots_per_pass):
            raise ValueError(f"slot {slot} out of range")
        if not (0 <= pe < self.pe_count):
            raise ValueError(f"pe {pe} out of range")
        return pass_idx * self.pe_count + pe, slot

    def assignments(self):
        """Yield (pass, slot, pe, row_tile, col_tile) for every work item."""
        for p in range(self.passes):
            for s in range(self.slots_per_pass):
                for pe in range(self.pe_count):
                    yield p, s, pe, p * self.pe_count + pe, s


def plan_schedule(cfg: LayerConfig) -> Schedule:
    """Build the schedule for a config; padding guarantees rows_of_tiles
    is an exact multiple of pe_count."""
    require_valid(cfg)
    assert cfg.rows_of_tiles % cfg.pe_count == 0
    return Schedule(
        passes=cfg.passes,
        slots_per_pass=cfg.slots_per_pass,
        cycles_per_slot=cfg.slot_cycles,
        pe_count=cfg.pe_count,
    )
