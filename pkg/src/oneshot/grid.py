"""Multi-resolution grids around an anchor point and the sub-signal wire format.

Geometry
--------
The coarse lattice ``G`` has spacing ``grid_res = min(2, log2(mn)/sqrt(n))``,
is anchored at the origin and keeps only points inside the domain.  Around
an anchor ``s`` sits the cube ``C_s`` of half-width
``half_width = min(1, log2(mn)/sqrt(n))``; level ``l`` splits it into
``2^(l d)`` equal sub-cubes whose centers form the level-``l`` grid.  A
point is addressed by ``(level, cell)`` with ``cell`` in ``[0, 2^l)^d``, and
its parent is ``(level - 1, cell // 2)``.

Wire format
-----------
Each sub-signal is a fixed ``sub_signal_bits`` wide, MSB first::

    s offsets   d * s_bits      lattice index minus the smallest index
    level       level_bits      ceil(log2(t + 1))
    cell        d * level       one ``level``-bit field per coordinate
    delta codes d * width[l]    mid-rise quantizer codes
    padding     zeros to the fixed width

See ``docs/wire-format.md``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MAX_CODE_BITS = 52
EXACT_CODE_BITS = 64


class BudgetError(ValueError):
    """Raised when a configuration cannot fit inside its bit budget."""


class MalformedSignalError(ValueError):
    pass


@dataclass(frozen=True)
class MreParams:
    m: int
    n: int
    d: int
    B: int
    delta_scale: float
    lo: float
    hi: float
    exact: bool
    logmn: float
    grid_res: float
    half_width: float
    delta: float
    delta_clamped: bool
    t: int
    sub_signals: int
    sub_signal_bits: int
    s_min: int
    s_max: int
    s_bits: int
    level_bits: int
    code_bits: tuple
    code_range: tuple

    @property
    def accuracy(self) -> float:
        """Guaranteed bound on ``|dequantize(quantize(v)) - v|`` for in-box ``v``."""
        return 2 * self.delta * self.half_width

    @property
    def nominal_accuracy(self) -> float:
        """``2 delta log2(mn) / sqrt(n)``, never tighter than :attr:`accuracy`."""
        return 2 * self.delta * self.logmn / math.sqrt(self.n)

    @property
    def width(self) -> int:
        """Bits actually occupied by one encoded sub-signal."""
        if self.exact:
            return self.header_bits(self.t) + self.d * EXACT_CODE_BITS
        return self.sub_signal_bits

    @property
    def machine_bits(self) -> int:
        return self.sub_signals * self.width

    @property
    def machine_budget(self) -> int:
        """``ceil(B / (d log mn)) * floor(d log mn)``."""
        return self.sub_signals * self.sub_signal_bits

    def header_bits(self, level: int) -> int:
        return self.d * self.s_bits + self.level_bits + self.d * level

    def level_probabilities(self) -> np.ndarray:
        w = 2.0 ** ((self.d - 2) * np.arange(self.t + 1))
        return w / w.sum()


def derive_params(m, n, d, B, delta_scale=1.0, lo=-1.0, hi=1.0, exact=False) -> MreParams:
    """Protocol constants for ``m`` machines, ``n`` samples, dimension ``d`` and budget ``B``.

    ``exact=True`` switches the gradient-difference codes to raw 64-bit
    floats (no quantization); such signals exceed the budget and exist only
    for equivalence testing.
    """
    if min(m, n, d, B) < 1:
        raise ValueError("m, n, d and B must be positive")
    if m * n < 4:
        raise ValueError("need mn >= 4")
    if delta_scale <= 0:
        raise ValueError("delta_scale must be positive")
    logmn = math.log2(m * n)
    if B < d * logmn:
        raise BudgetError(f"B={B} is below d*log2(mn)={d * logmn:.3f}")
    radius = logmn / math.sqrt(n)
    grid_res = min(2.0, radius)
    half_width = min(1.0, radius)

    raw = delta_scale * 2 * d * logmn**3 * max((m * B) ** (-1 / d), 2 ** (d / 2) / math.sqrt(m))
    delta = min(raw, 1.0)
    if raw >= 1.0:
        log.info("delta %.4g clamped to 1 (m=%d n=%d d=%d B=%d)", raw, m, n, d, B)
    t = max(0, math.floor(math.log2(1 / delta) + 1e-12))

    width = math.floor(d * logmn)
    sub_signals = math.ceil(B / (d * logmn))
    s_min = math.ceil(lo / grid_res - 1e-12)
    s_max = math.floor(hi / grid_res + 1e-12)
    s_bits = _bits_for(s_max - s_min + 1)
    level_bits = _bits_for(t + 1)
    accuracy = 2 * delta * half_width

    code_bits, code_range = [], []
    for level in range(t + 1):
        a = 1.0 if level == 0 else 2.0**-level * math.sqrt(d) * half_width
        header = d * s_bits + level_bits + d * level
        if exact:
            b = EXACT_CODE_BITS
        else:
            need = max(0, math.ceil(math.log2(a * math.sqrt(d) / accuracy) - 1e-12))
            b = min(MAX_CODE_BITS, (width - header) // d)
            if b < need:
                raise BudgetError(
                    f"level {level} needs {header + d * need} bits per sub-signal, have {width}"
                )
        code_bits.append(b)
        code_range.append(a)

    return MreParams(
        m=m, n=n, d=d, B=B, delta_scale=delta_scale, lo=lo, hi=hi, exact=exact,
        logmn=logmn, grid_res=grid_res, half_width=half_width, delta=delta,
        delta_clamped=raw >= 1.0, t=t, sub_signals=sub_signals, sub_signal_bits=width,
        s_min=s_min, s_max=s_max, s_bits=s_bits, level_bits=level_bits,
        code_bits=tuple(code_bits), code_range=tuple(code_range),
    )


def _bits_for(count: int) -> int:
    return max(0, math.ceil(math.log2(count))) if count > 1 else 0


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class GridPoint:
    s: tuple
    level: int
    cell: tuple

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be nonnegative")
        if any(c < 0 or c >= 2**self.level for c in self.cell):
            raise ValueError(f"cell {self.cell} out of range for level {self.level}")


def nearest_grid_indices(theta, params: MreParams) -> np.ndarray:
    """Lattice index of the closest point of ``G`` for each row of ``theta``.

    Ties go to the smaller index in every coordinate.
    """
    theta = np.asarray(theta, dtype=float)
    k = np.ceil(theta / params.grid_res - 0.5)
    return np.clip(k, params.s_min, params.s_max).astype(np.int64)


def nearest_grid_point(theta, params: MreParams) -> tuple:
    return tuple(int(k) for k in nearest_grid_indices(np.reshape(theta, (1, -1)), params)[0])


def anchor_position(s, params: MreParams) -> np.ndarray:
    return np.asarray(s, dtype=float) * params.grid_res


def cell_positions(s, level, cell, params: MreParams) -> np.ndarray:
    """Centers of the level-``level`` sub-cubes ``cell`` of ``C_s`` (broadcasting)."""
    w = params.half_width
    level = np.asarray(level)[..., None]
    size = 2 * w / 2.0**level
    return anchor_position(s, params) - w + (np.asarray(cell) + 0.5) * size


def position(p: GridPoint, params: MreParams) -> np.ndarray:
    return cell_positions(p.s, p.level, p.cell, params)


def parent_of(p: GridPoint) -> GridPoint:
    if p.level == 0:
        raise ValueError("level-0 point has no parent")
    return GridPoint(p.s, p.level - 1, tuple(c // 2 for c in p.cell))


def children_of(p: GridPoint) -> list[GridPoint]:
    d = len(p.cell)
    out = []
    for bits in range(2**d):
        offs = [(bits >> (d - 1 - j)) & 1 for j in range(d)]
        out.append(GridPoint(p.s, p.level + 1, tuple(2 * c + o for c, o in zip(p.cell, offs))))
    return out


def level_cells(level: int, d: int) -> np.ndarray:
    """All cells of a level in lexicographic order, shape ``(2^(level d), d)``."""
    side = 2**level
    idx = np.arange(side**d)
    return np.stack([(idx // side ** (d - 1 - j)) % side for j in range(d)], axis=1)


def cell_ordinal(cell, level: int) -> np.ndarray:
    """Lexicographic rank of ``cell`` within its level."""
    cell = np.asarray(cell, dtype=np.int64)
    d = cell.shape[-1]
    weights = (2**level) ** np.arange(d - 1, -1, -1, dtype=np.int64)
    return cell @ weights


def sample_level(params: MreParams, rng, size=None):
    """Draw levels with ``Pr(l)`` proportional to ``2^((d - 2) l)`` on ``0..t``."""
    if params.t == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    out = rng.choice(params.t + 1, size=size, p=params.level_probabilities())
    return int(out) if size is None else out.astype(np.int64)


# ---------------------------------------------------------------------------
# quantization


@dataclass(frozen=True)
class QuantizedDelta:
    level: int
    codes: tuple


def quantize_codes(v, levels, params: MreParams):
    """Quantize rows of ``v`` at the given levels.

    Returns ``(codes, clamped)`` where ``clamped`` counts rows that fell
    outside their level's box and were clipped first.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), v.shape[:1])
    if params.exact:
        return np.ascontiguousarray(v).view(np.uint64).copy(), 0
    a = np.asarray(params.code_range)[levels][:, None]
    b = np.asarray(params.code_bits)[levels][:, None]
    outside = np.any(np.abs(v) > a, axis=1)
    k = 2.0**b
    step = 2 * a / k
    codes = np.floor((np.clip(v, -a, a) + a) / step)
    codes = np.clip(codes, 0, k - 1).astype(np.uint64)
    return codes, int(outside.sum())


def dequantize_codes(codes, levels, params: MreParams) -> np.ndarray:
    codes = np.atleast_2d(np.asarray(codes, dtype=np.uint64))
    levels = np.broadcast_to(np.asarray(levels, dtype=np.int64), codes.shape[:1])
    if params.exact:
        return np.ascontiguousarray(codes).view(np.float64).copy()
    a = np.asarray(params.code_range)[levels][:, None]
    b = np.asarray(params.code_bits)[levels][:, None]
    step = 2 * a / 2.0**b
    return -a + (codes.astype(float) + 0.5) * step


def quantize_delta(v, level: int, params: MreParams) -> QuantizedDelta:
    codes, clamped = quantize_codes(np.reshape(v, (1, -1)), level, params)
    if clamped:
        log.debug("delta outside level-%d box clamped", level)
    return QuantizedDelta(level, tuple(int(c) for c in codes[0]))


def dequantize_delta(q: QuantizedDelta, params: MreParams) -> np.ndarray:
    return dequantize_codes(np.array([q.codes], dtype=np.uint64), q.level, params)[0]


# ---------------------------------------------------------------------------
# sub-signal codec


@dataclass(frozen=True)
class SubSignal:
    s: tuple
    p: GridPoint
    delta: QuantizedDelta

    def __post_init__(self):
        if self.p.s != self.s:
            raise ValueError("grid point belongs to a different anchor")
        if self.delta.level != self.p.level:
            raise ValueError("delta level does not match grid point level")


def _write(bits, rows, pos, values, width):
    if width == 0:
        return
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    vals = np.asarray(values, dtype=np.uint64)[:, None]
    bits[rows, pos : pos + width] = ((vals >> shifts) & np.uint64(1)).astype(np.uint8)


def _read(bits, pos, width):
    if width == 0:
        return np.zeros(len(bits), dtype=np.uint64)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return np.bitwise_or.reduce(bits[:, pos : pos + width].astype(np.uint64) << shifts, axis=1)


def encode_fields(s, levels, cells, codes, params: MreParams) -> np.ndarray:
    """Pack sub-signal fields into a ``(N, width)`` matrix of 0/1 bytes."""
    s = np.atleast_2d(np.asarray(s, dtype=np.int64))
    levels = np.asarray(levels, dtype=np.int64).reshape(-1)
    cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    codes = np.atleast_2d(np.asarray(codes, dtype=np.uint64))
    N, d = s.shape
    if np.any((s < params.s_min) | (s > params.s_max)):
        raise ValueError("anchor index outside the lattice")
    if np.any((levels < 0) | (levels > params.t)):
        raise ValueError("level outside 0..t")
    bits = np.zeros((N, params.width), dtype=np.uint8)
    rows = np.arange(N)
    pos = 0
    for j in range(d):
        _write(bits, rows, pos, s[:, j] - params.s_min, params.s_bits)
        pos += params.s_bits
    _write(bits, rows, pos, levels, params.level_bits)
    pos += params.level_bits
    for level in np.unique(levels):
        sel = np.flatnonzero(levels == level)
        at = pos
        for j in range(d):
            _write(bits, sel, at, cells[sel, j], level)
            at += level
        b = params.code_bits[level]
        if not params.exact and np.any(codes[sel] >> np.uint64(b)):
            raise ValueError("quantizer code wider than its field")
        for j in range(d):
            _write(bits, sel, at, codes[sel, j], b)
            at += b
    return bits


def decode_fields(bits, params: MreParams):
    """Inverse of :func:`encode_fields`; returns ``(s, levels, cells, codes)``."""
    bits = np.asarray(bits)
    if bits.ndim != 2 or bits.shape[1] != params.width:
        raise MalformedSignalError(f"expected rows of {params.width} bits, got shape {bits.shape}")
    if np.any(bits > 1):
        raise MalformedSignalError("bit matrix holds values other than 0 and 1")
    N, d = len(bits), params.d
    s = np.empty((N, d), dtype=np.int64)
    pos = 0
    for j in range(d):
        s[:, j] = _read(bits, pos, params.s_bits).astype(np.int64) + params.s_min
        pos += params.s_bits
    if np.any(s > params.s_max):
        raise MalformedSignalError("anchor index outside the lattice")
    levels = _read(bits, pos, params.level_bits).astype(np.int64)
    pos += params.level_bits
    if np.any(levels > params.t):
        raise MalformedSignalError(f"level above t={params.t}")
    cells = np.zeros((N, d), dtype=np.int64)
    codes = np.zeros((N, d), dtype=np.uint64)
    for level in np.unique(levels):
        sel = np.flatnonzero(levels == level)
        sub = bits[sel]
        at = pos
        for j in range(d):
            cells[sel, j] = _read(sub, at, level).astype(np.int64)
            at += level
        b = params.code_bits[level]
        for j in range(d):
            codes[sel, j] = _read(sub, at, b)
            at += b
        if np.any(sub[:, at:]):
            raise MalformedSignalError("nonzero padding")
    return s, levels, cells, codes


def encode_subsignal(sub: SubSignal, params: MreParams) -> np.ndarray:
    bits = encode_fields([sub.s], [sub.p.level], [sub.p.cell], [sub.delta.codes], params)
    return bits[0]


def decode_subsignal(bits, params: MreParams) -> SubSignal:
    s, levels, cells, codes = decode_fields(np.reshape(bits, (1, -1)), params)
    level = int(levels[0])
    anchor = tuple(int(k) for k in s[0])
    point = GridPoint(anchor, level, tuple(int(c) for c in cells[0]))
    return SubSignal(anchor, point, QuantizedDelta(level, tuple(int(c) for c in codes[0])))


def bits_to_hex(bits) -> str:
    """Hex dump of a bit vector, zero-padded at the end to whole bytes."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()
