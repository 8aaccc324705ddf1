"""One-shot estimators, each split into a machine-side map and a server-side reduce.

Machine maps work on a whole :class:`~oneshot.losses.MachineDataset` at
once and return one signal row per machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import grid
from .grid import GridPoint, MreParams
from .losses import DomainCube, MachineDataset, erm_minimize_batch

__all__ = [
    "EncodedSignal",
    "SignalBatch",
    "GradientField",
    "MrecResult",
    "mrec_machine",
    "mrec_machines",
    "mrec_server",
    "redundancy_elimination",
    "avgm_machine",
    "avgm_server",
    "quantize_point",
    "dequantize_point",
    "constbit_machine",
    "constbit_server",
    "centralized",
    "boost_confidence",
    "Outcome",
    "ESTIMATORS",
    "get_estimator",
]


@dataclass(frozen=True)
class EncodedSignal:
    bits: np.ndarray
    machine_id: int

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class SignalBatch:
    """Equal-length signals from many machines, one row each."""

    bits: np.ndarray
    machine_ids: np.ndarray

    @classmethod
    def from_signals(cls, signals: Sequence[EncodedSignal]) -> "SignalBatch":
        signals = list(signals)
        if not signals:
            raise ValueError("no signals")
        lengths = {len(s.bits) for s in signals}
        if len(lengths) != 1:
            raise grid.MalformedSignalError(f"signals of differing lengths {sorted(lengths)}")
        return cls(
            np.stack([np.asarray(s.bits, dtype=np.uint8) for s in signals]),
            np.array([s.machine_id for s in signals], dtype=np.int64),
        )

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        for row, mid in zip(self.bits, self.machine_ids):
            yield EncodedSignal(row, int(mid))

    def bit_lengths(self) -> np.ndarray:
        return np.full(len(self.bits), self.bits.shape[1])


# ---------------------------------------------------------------------------
# MRE-C


def mrec_machines(data: MachineDataset, params: MreParams, rng, cube: DomainCube | None = None,
                  erm_tol: float = 1e-8, machine_ids=None):
    """Encode every machine's sub-signals.

    Returns ``(SignalBatch, clamped)`` where ``clamped`` counts gradient
    differences that fell outside their level's box before quantization.
    """
    cube = cube or DomainCube(params.d, params.lo, params.hi)
    M, d, k = data.m, params.d, params.sub_signals
    if params.s_min == params.s_max:
        # one-point lattice: every local minimizer maps to the same anchor
        s = np.full((M, d), params.s_min, dtype=np.int64)
    else:
        theta_i = erm_minimize_batch(data.first_half(), cube, tol=erm_tol)
        s = grid.nearest_grid_indices(theta_i, params)

    levels = grid.sample_level(params, rng, (M, k))
    cells = rng.integers(0, 2 ** levels[..., None], size=(M, k, d))
    parents = np.where(levels[..., None] > 0, cells // 2, cells)
    p_pos = grid.cell_positions(s[:, None, :], levels, cells, params)
    q_pos = grid.cell_positions(s[:, None, :], np.maximum(levels - 1, 0), parents, params)
    pts = cube.project(np.concatenate([p_pos, q_pos], axis=1))
    g = data.second_half().mean_grad(pts)
    delta = np.where(levels[..., None] > 0, g[:, :k] - g[:, k:], g[:, :k])

    flat_levels = levels.reshape(-1)
    codes, clamped = grid.quantize_codes(delta.reshape(-1, d), flat_levels, params)
    bits = grid.encode_fields(
        np.repeat(s, k, axis=0), flat_levels, cells.reshape(-1, d), codes, params
    )
    ids = np.arange(M) if machine_ids is None else np.asarray(machine_ids)
    return SignalBatch(bits.reshape(M, k * params.width), ids), clamped


def mrec_machine(data: MachineDataset, params: MreParams, rng, cube=None, machine_id: int = 0,
                 erm_tol: float = 1e-8) -> EncodedSignal:
    if data.m != 1:
        raise ValueError("mrec_machine encodes a single machine; use mrec_machines")
    batch, _ = mrec_machines(data, params, rng, cube, erm_tol, [machine_id])
    return next(iter(batch))


@dataclass
class GradientField:
    """Server-side gradient estimates on every level of ``C_{s*}``.

    ``estimates[l]`` and ``counts[l]`` are indexed by the lexicographic rank
    of the cell.  A point is ``orphaned`` when it or one of its ancestors
    received no sub-signal; orphaned points carry their parent's estimate.
    """

    s_star: tuple
    estimates: list
    counts: list
    orphaned: list
    params: MreParams = field(repr=False)

    def get(self, p: GridPoint):
        if p.s != self.s_star:
            raise KeyError(f"{p} is not on the grid around {self.s_star}")
        i = int(grid.cell_ordinal(p.cell, p.level))
        return self.estimates[p.level][i], int(self.counts[p.level][i])

    def positions(self, level: int) -> np.ndarray:
        cells = grid.level_cells(level, self.params.d)
        return grid.cell_positions(np.array(self.s_star), level, cells, self.params)


@dataclass
class MrecResult:
    theta: np.ndarray
    field: GradientField
    s_star: tuple
    fallback: bool = False
    received: int = 0
    surviving: int = 0


def redundancy_elimination(machine_ids, levels, ordinals) -> np.ndarray:
    """Indices of the first sub-signal of every ``(machine, point)`` pair, in input order."""
    keys = np.stack([np.asarray(machine_ids), np.asarray(levels), np.asarray(ordinals)], axis=1)
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def mrec_server(signals, params: MreParams, cube: DomainCube | None = None) -> MrecResult:
    """Rebuild the gradient field around the modal anchor and return its minimum-norm point."""
    cube = cube or DomainCube(params.d, params.lo, params.hi)
    if not isinstance(signals, SignalBatch):
        signals = SignalBatch.from_signals(signals)
    if len(signals) == 0:
        raise ValueError("no signals")
    M, total = signals.bits.shape
    if total % params.width:
        raise grid.MalformedSignalError(f"signal length {total} is not a multiple of {params.width}")
    k = total // params.width
    s, levels, cells, codes = grid.decode_fields(signals.bits.reshape(M * k, params.width), params)
    owners = np.repeat(signals.machine_ids, k)

    anchors, counts = np.unique(s, axis=0, return_counts=True)
    s_star = anchors[np.argmax(counts)]
    on = np.flatnonzero(np.all(s == s_star, axis=1))
    ordinals = _ordinals(cells[on], levels[on])
    keep = redundancy_elimination(owners[on], levels[on], ordinals)
    rows = on[keep]
    ordinals = ordinals[keep]
    lv = levels[rows]
    deltas = grid.dequantize_codes(codes[rows], lv, params)

    d = params.d
    estimates, tallies, orphaned = [], [], []
    for level in range(params.t + 1):
        size = 2 ** (level * d)
        sel = lv == level
        sums = np.zeros((size, d))
        np.add.at(sums, ordinals[sel], deltas[sel])
        n = np.bincount(ordinals[sel], minlength=size)
        mean = np.where(n[:, None] > 0, sums / np.maximum(n, 1)[:, None], 0.0)
        if level == 0:
            est, orph = mean, n == 0
        else:
            parent = grid.cell_ordinal(grid.level_cells(level, d) // 2, level - 1)
            est = estimates[-1][parent] + mean
            orph = orphaned[-1][parent] | (n == 0)
        estimates.append(est)
        tallies.append(n)
        orphaned.append(orph)

    s_tuple = tuple(int(v) for v in s_star)
    gfield = GradientField(s_tuple, estimates, tallies, orphaned, params)
    if tallies[0][0] == 0:
        theta = cube.project(grid.anchor_position(s_star, params))
        return MrecResult(theta, gfield, s_tuple, True, M * k, len(rows))
    best = int(np.argmin(np.linalg.norm(estimates[-1], axis=1)))
    theta = cube.project(gfield.positions(params.t)[best])
    return MrecResult(theta, gfield, s_tuple, False, M * k, len(rows))


def _ordinals(cells, levels):
    out = np.zeros(len(cells), dtype=np.int64)
    for level in np.unique(levels):
        sel = levels == level
        out[sel] = grid.cell_ordinal(cells[sel], int(level))
    return out


# ---------------------------------------------------------------------------
# averaging


def quantize_point(theta, cube: DomainCube, bits: int) -> np.ndarray:
    """Uniform grid of ``2^bits`` values per coordinate spanning the cube, endpoints included."""
    levels = 2**bits - 1
    u = (np.asarray(theta, dtype=float) - cube.lo) / (cube.hi - cube.lo)
    return np.rint(np.clip(u, 0, 1) * levels).astype(np.int64)


def dequantize_point(codes, cube: DomainCube, bits: int) -> np.ndarray:
    return cube.lo + np.asarray(codes, dtype=float) / (2**bits - 1) * (cube.hi - cube.lo)


def avgm_machine(data: MachineDataset, cube: DomainCube, bits: int | None = None, erm_tol=1e-8):
    """Each machine's minimizer over all its samples, optionally quantized to ``bits`` per coordinate."""
    theta = erm_minimize_batch(data.samples, cube, tol=erm_tol)
    if bits is None:
        return theta
    return dequantize_point(quantize_point(theta, cube, bits), cube, bits)


def avgm_server(points) -> np.ndarray:
    return np.asarray(points, dtype=float).mean(axis=0)


# ---------------------------------------------------------------------------
# constant-bit


def constbit_machine(data: MachineDataset, cube: DomainCube, rng, erm_tol=1e-8) -> np.ndarray:
    """One random bit per coordinate, 1 with probability ``(theta_j - lo) / (hi - lo)``.

    On ``[-1, 1]^d`` this is ``(1 + theta_j) / 2``; on ``[0, 1]^d`` it is
    ``theta_j``.
    """
    theta = erm_minimize_batch(data.samples, cube, tol=erm_tol)
    prob = np.clip((theta - cube.lo) / (cube.hi - cube.lo), 0.0, 1.0)
    return (rng.random(theta.shape) < prob).astype(np.uint8)


def constbit_server(bitstrings, cube: DomainCube | None = None) -> np.ndarray:
    """Unbiased inverse of the machine map applied to the mean bit."""
    rows = [np.asarray(b) for b in bitstrings]
    if not rows:
        raise ValueError("no signals")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("bit strings of differing lengths")
    bits = np.stack(rows).astype(float)
    cube = cube or DomainCube(bits.shape[1])
    if bits.shape[1] != cube.d:
        raise ValueError(f"expected {cube.d} bits per machine, got {bits.shape[1]}")
    return cube.lo + (cube.hi - cube.lo) * bits.mean(axis=0)


# ---------------------------------------------------------------------------
# centralized


def centralized(data: MachineDataset, cube: DomainCube, erm_tol=1e-8) -> np.ndarray:
    """Minimizer of the pooled empirical loss of all machines."""
    return erm_minimize_batch(data.samples.pooled(), cube, tol=erm_tol)[0]


# ---------------------------------------------------------------------------
# confidence boosting


def boost_confidence(estimates) -> np.ndarray:
    """Center of a small ball holding a strict majority of the estimates.

    For every estimate, take the radius reaching its ``floor(k/2) + 1``
    nearest estimates (itself included) and return the estimate with the
    smallest such radius.  Ties go to the earliest estimate.
    """
    pts = np.asarray(estimates, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    k = len(pts)
    if k < 3:
        raise ValueError("need at least three estimates")
    q = k // 2 + 1
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    radius = np.sort(dist, axis=1)[:, q - 1]
    return pts[int(np.argmin(radius))].copy()


# ---------------------------------------------------------------------------
# registry


@dataclass
class Outcome:
    """Result of one estimator run plus its bit accounting.

    ``budget`` is the stated per-machine cap, or ``None`` for the
    unconstrained centralized baseline.
    """

    theta: np.ndarray
    machine_bits: np.ndarray
    budget: int | None
    info: dict = field(default_factory=dict)


def _run_mrec(data, cube, rng, *, B, delta_scale=1.0, erm_tol=1e-8, **_):
    params = grid.derive_params(data.m, data.n, cube.d, B, delta_scale, cube.lo, cube.hi)
    signals, clamped = mrec_machines(data, params, rng, cube, erm_tol)
    result = mrec_server(signals, params, cube)
    info = {"t": params.t, "delta": params.delta, "clamped": clamped, "fallback": result.fallback}
    return Outcome(result.theta, signals.bit_lengths(), params.machine_budget, info)


def _run_avgm(data, cube, rng, *, erm_tol=1e-8, **_):
    bits = math.ceil(math.log2(data.m * data.n))
    points = avgm_machine(data, cube, bits, erm_tol)
    return Outcome(avgm_server(points), np.full(data.m, bits * cube.d), bits * cube.d)


def _run_constbit(data, cube, rng, *, erm_tol=1e-8, **_):
    bits = constbit_machine(data, cube, rng, erm_tol)
    return Outcome(constbit_server(bits, cube), np.full(data.m, bits.shape[1]), cube.d)


def _run_centralized(data, cube, rng, *, erm_tol=1e-8, **_):
    raw = 64 * data.samples.floats_per_sample * data.n
    return Outcome(centralized(data, cube, erm_tol), np.full(data.m, raw), None)


ESTIMATORS: dict[str, Callable[..., Outcome]] = {
    "mre-c": _run_mrec,
    "avgm": _run_avgm,
    "const-bit": _run_constbit,
    "centralized": _run_centralized,
}


def get_estimator(name: str) -> Callable[..., Outcome]:
    try:
        return ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; known: {sorted(ESTIMATORS)}") from None
