"""Monte-Carlo sweeps of estimator error against the number of machines."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import instances  # noqa: F401  (registers the class-c distribution)
from .estimators import get_estimator
from .losses import LossDistribution, distribution_parameters, make_distribution

log = logging.getLogger(__name__)

THREADS_ENV = "ONESHOT_THREADS"
B_RULE = "d*log2(mn)"
COLUMNS = ("estimator", "m", "n", "d", "B", "trials", "mean_error", "std_error", "mean_bits")


class BudgetViolation(AssertionError):
    """A machine sent more bits than its estimator's stated budget."""


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: str
    estimators: tuple[str, ...]
    m_values: tuple[int, ...]
    n: int
    d: int
    B: int | str = B_RULE
    trials: int = 1
    master_seed: int = 0
    delta_scale: float = 1.0
    distribution_params: dict = field(default_factory=dict)
    output: str | None = None
    format: str = "csv"
    erm_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "m_values", tuple(int(m) for m in self.m_values))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.m_values or min(self.m_values) < 1:
            raise ValueError("m values must be positive")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if isinstance(self.B, str) and self.B != B_RULE:
            raise ValueError(f"B must be an integer or {B_RULE!r}")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        for name in self.estimators:
            get_estimator(name)

    def budget_for(self, m: int) -> int:
        if isinstance(self.B, str):
            return math.ceil(self.d * math.log2(m * self.n))
        return int(self.B)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["estimators"] = list(self.estimators)
        out["m_values"] = list(self.m_values)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            return cls.from_json(path.read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc

    def build_distribution(self) -> LossDistribution:
        params = dict(self.distribution_params)
        if "d" in distribution_parameters(self.distribution):
            params.setdefault("d", self.d)
        dist = make_distribution(self.distribution, params)
        if dist.d != self.d:
            raise ValueError(f"distribution {self.distribution!r} has d={dist.d}, config says d={self.d}")
        return dist


@dataclass(frozen=True)
class TrialRecord:
    estimator: str
    m: int
    n: int
    d: int
    B: int
    trial: int
    error: float
    bits_total: int
    max_machine_bits: int
    budget: int | None
    wall_time: float
    seed: int
    theta: tuple = ()
    info: dict = field(default_factory=dict)


def trial_seed(master_seed: int, estimator: str, m: int, trial: int) -> int:
    """64-bit seed from SHA-256 of ``master_seed|estimator|m|trial``."""
    digest = hashlib.sha256(f"{master_seed}|{estimator}|{m}|{trial}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_trial(config: ExperimentConfig, estimator: str, m: int, trial: int,
              distribution: LossDistribution | None = None) -> TrialRecord:
    """Draw ``m x n`` samples, run one estimator and score it against the true minimizer."""
    dist = distribution or config.build_distribution()
    seed = trial_seed(config.master_seed, estimator, m, trial)
    rng = np.random.default_rng(seed)
    B = config.budget_for(m)
    start = time.perf_counter()
    data = dist.dataset(m, config.n, rng)
    outcome = get_estimator(estimator)(
        data, dist.cube, rng, B=B, delta_scale=config.delta_scale, erm_tol=config.erm_tol
    )
    elapsed = time.perf_counter() - start

    bits = np.asarray(outcome.machine_bits)
    if bits.shape != (m,):
        raise BudgetViolation(f"{estimator}: expected {m} per-machine bit counts, got shape {bits.shape}")
    if outcome.budget is not None:
        over = np.flatnonzero(bits > outcome.budget)
        if over.size:
            raise BudgetViolation(
                f"{estimator}: machine {over[0]} sent {bits[over[0]]} bits, budget {outcome.budget}"
            )
        if bits.sum() > m * outcome.budget:
            raise BudgetViolation(f"{estimator}: total {bits.sum()} exceeds {m} x {outcome.budget}")
    theta = np.asarray(outcome.theta, dtype=float)
    error = float(np.linalg.norm(theta - dist.true_minimizer))
    return TrialRecord(
        estimator, m, config.n, config.d, B, trial, error, int(bits.sum()), int(bits.max()), outcome.budget,
        elapsed, seed, tuple(float(v) for v in theta), dict(outcome.info),
    )


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    value = int(raw)
    if value < 1:
        raise ValueError(f"{THREADS_ENV} must be positive")
    return value


def run_trials(config: ExperimentConfig, threads: int | None = None) -> list[TrialRecord]:
    """Every (estimator, m, trial) record, sorted by that key."""
    dist = config.build_distribution()
    jobs = [(e, m, k) for e in config.estimators for m in config.m_values for k in range(config.trials)]
    threads = threads or _threads()
    if threads == 1:
        records = [run_trial(config, e, m, k, dist) for e, m, k in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda job: run_trial(config, *job, dist), jobs))
    return sorted(records, key=lambda r: (r.estimator, r.m, r.trial))


def aggregate(records: Sequence[TrialRecord]) -> list[dict]:
    """Mean and population standard deviation of error per (estimator, m)."""
    groups: dict[tuple[str, int], list[TrialRecord]] = {}
    for r in sorted(records, key=lambda r: (r.estimator, r.m, r.trial)):
        groups.setdefault((r.estimator, r.m), []).append(r)
    rows = []
    for (name, m), recs in sorted(groups.items()):
        errors = np.array([r.error for r in recs])
        rows.append({
            "estimator": name,
            "m": m,
            "n": recs[0].n,
            "d": recs[0].d,
            "B": recs[0].B,
            "trials": len(recs),
            "mean_error": float(errors.mean()),
            "std_error": float(errors.std()),
            "mean_bits": float(np.mean([r.bits_total for r in recs])),
        })
    return rows


def run_sweep(config: ExperimentConfig, threads: int | None = None) -> list[dict]:
    return aggregate(run_trials(config, threads))


def _cell(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def format_results(rows: Sequence[dict], format: str = "csv") -> str:
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in COLUMNS])
        return buf.getvalue()
    if format == "json":
        return json.dumps([{c: row[c] for c in COLUMNS} for row in rows], indent=2) + "\n"
    raise ValueError("format must be csv or json")


def emit_results(rows: Sequence[dict], format: str, path) -> Path:
    path = Path(path)
    text = format_results(rows, format)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def parse_results(text: str, format: str = "csv") -> list[dict]:
    """Inverse of ``format_results``."""
    if format == "json":
        return json.loads(text)
    types = {"estimator": str, "m": int, "n": int, "d": int, "B": int, "trials": int}
    reader = csv.DictReader(io.StringIO(text))
    return [{k: types.get(k, float)(v) for k, v in row.items()} for row in reader]
