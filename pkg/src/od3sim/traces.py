"""Time series of supplier capacities and user targets, with drift accounting.

A :class:`SystemTrace` carries everything time-varying about a run: the
capacity path ``Q(t)`` (shape T x R) and the per-user bliss targets ``s_i(t)``
(shape T x N x R), plus the *realized* per-step drift maxima.  Traces come
from three places: synthetic random walks (:func:`synth_trace`), capacity CSV
files (:func:`ingest_capacity_csv`), or explicit arrays
(:meth:`SystemTrace.from_arrays`).

Drift conventions: capacity drift is ``max_t ||Q(t+1) - Q(t)||``; target
drift is recorded in gradient units under the unit-scale quadratic
convention, ``2 * max_{t,i} ||s_i(t+1) - s_i(t)||`` (for non-unit scales
``derive_global_params`` recomputes it from the utilities themselves).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from od3sim.model import Dimensions

__all__ = [
    "SystemTrace",
    "TraceValidation",
    "synth_trace",
    "ingest_capacity_csv",
    "attach_targets",
    "rescale_capacities",
    "validate_trace",
    "capacity_drift_profile",
    "target_drift_profile",
]

_DRIFT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SystemTrace:
    """Immutable capacity/target time series.

    Attributes:
        capacities: (T, R) array, Q(t) in power units.
        targets: (T, N, R) array of bliss points s_i(t).  N may be zero for a
            capacities-only trace awaiting :func:`attach_targets`.
        realized_gamma: max over t of ||Q(t+1) - Q(t)|| (0 when T == 1).
        realized_alpha: max over t, i of 2*||s_i(t+1) - s_i(t)|| (unit-scale
            gradient-drift convention; 0 when T == 1 or N == 0).
    """

    capacities: np.ndarray
    targets: np.ndarray
    realized_gamma: float
    realized_alpha: float

    def __post_init__(self) -> None:
        caps = np.asarray(self.capacities, dtype=float)
        tgts = np.asarray(self.targets, dtype=float)
        if caps.ndim != 2:
            raise ValueError(f"capacities must be (T, R), got shape {caps.shape}")
        if tgts.ndim != 3:
            raise ValueError(f"targets must be (T, N, R), got shape {tgts.shape}")
        if tgts.shape[0] != caps.shape[0] or tgts.shape[2] != caps.shape[1]:
            raise ValueError(
                f"targets shape {tgts.shape} inconsistent with capacities {caps.shape}"
            )
        if caps.shape[0] < 1:
            raise ValueError("empty horizon")
        if not np.all(np.isfinite(caps)) or not np.all(np.isfinite(tgts)):
            raise ValueError("trace contains non-finite values")
        caps = caps.copy()
        tgts = tgts.copy()
        caps.setflags(write=False)
        tgts.setflags(write=False)
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "targets", tgts)

    # -- shape helpers ---------------------------------------------------

    @property
    def horizon(self) -> int:
        return int(self.capacities.shape[0])

    @property
    def n_suppliers(self) -> int:
        return int(self.capacities.shape[1])

    @property
    def n_users(self) -> int:
        return int(self.targets.shape[1])

    @property
    def dims(self) -> Dimensions:
        return Dimensions(n_users=self.n_users, n_suppliers=self.n_suppliers)

    @classmethod
    def from_arrays(cls, capacities: np.ndarray, targets: np.ndarray) -> "SystemTrace":
        """Build a trace from raw arrays, computing the realized drifts."""
        capacities = np.asarray(capacities, dtype=float)
        targets = np.asarray(targets, dtype=float)
        gamma = _realized_gamma(capacities)
        alpha = _realized_alpha(targets)
        return cls(
            capacities=capacities,
            targets=targets,
            realized_gamma=gamma,
            realized_alpha=alpha,
        )


def _realized_gamma(capacities: np.ndarray) -> float:
    if capacities.shape[0] < 2:
        return 0.0
    return float(np.max(np.linalg.norm(np.diff(capacities, axis=0), axis=-1)))


def _realized_alpha(targets: np.ndarray) -> float:
    if targets.shape[0] < 2 or targets.shape[1] == 0:
        return 0.0
    steps = np.linalg.norm(np.diff(targets, axis=0), axis=-1)  # (T-1, N)
    return float(2.0 * np.max(steps))


def capacity_drift_profile(trace: SystemTrace) -> np.ndarray:
    """Per-step capacity drift norms, shape (T-1,)."""
    if trace.horizon < 2:
        return np.zeros(0)
    return np.linalg.norm(np.diff(trace.capacities, axis=0), axis=-1)


def target_drift_profile(trace: SystemTrace) -> np.ndarray:
    """Per-step, per-user gradient-drift (unit-scale convention), shape (T-1, N)."""
    if trace.horizon < 2 or trace.n_users == 0:
        return np.zeros((max(trace.horizon - 1, 0), trace.n_users))
    return 2.0 * np.linalg.norm(np.diff(trace.targets, axis=0), axis=-1)


# =====================================================================
# Synthesis
# =====================================================================


def _random_steps(rng: np.random.Generator, n: int, dim: int, bound: float) -> np.ndarray:
    """n random increments of Euclidean norm <= bound.

    Direction uniform on the sphere, radius uniform in [0, bound]; this
    exercises the worst case near the bound while keeping typical drift
    nonzero.
    """
    directions = rng.normal(size=(n, dim))
    norms = np.linalg.norm(directions, axis=-1, keepdims=True)
    # A zero draw is a measure-zero event but would poison the normalize.
    directions = np.where(norms > 0, directions / np.where(norms == 0, 1.0, norms), 0.0)
    directions[norms[:, 0] == 0, 0] = 1.0
    radii = rng.uniform(0.0, bound, size=(n, 1))
    return directions * radii


def synth_trace(
    dims: Dimensions,
    horizon: int,
    gamma: float,
    alpha: float,
    seed: int,
    base_capacity: np.ndarray | None = None,
    base_targets: np.ndarray | None = None,
) -> SystemTrace:
    """Random-walk trace honoring the per-step drift bounds by construction.

    Targets follow per-user random walks with gradient drift (unit-scale
    convention) at most ``alpha`` per step; capacities follow a random walk
    with increments of norm at most ``gamma``.  Deterministic for a fixed
    seed.

    Args:
        dims: population shape (N users, R suppliers).
        horizon: number of steps T >= 1.
        gamma: capacity drift bound (>= 0).
        alpha: utility gradient drift bound (>= 0).
        seed: RNG seed; identical seeds give bit-identical traces.
        base_capacity: optional (R,) starting capacity.  Default: a uniform
            fraction in [0.5, 0.75] of the column sum of the starting targets
            (so demand pressure is nontrivial but bounded).
        base_targets: optional (N, R) starting bliss points.  Default:
            uniform in [0, 10).
    """
    if gamma < 0 or alpha < 0:
        raise ValueError(f"drift bounds must be nonnegative, got gamma={gamma} alpha={alpha}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    n, r = dims.n_users, dims.n_suppliers
    rng = np.random.default_rng(seed)

    if base_targets is None:
        s = rng.uniform(0.0, 10.0, size=(n, r))
    else:
        s = np.asarray(base_targets, dtype=float).reshape(n, r).copy()
    if base_capacity is None:
        q = s.sum(axis=0) * rng.uniform(0.5, 0.75)
    else:
        q = np.asarray(base_capacity, dtype=float).reshape(r).copy()

    targets = np.empty((horizon, n, r))
    caps = np.empty((horizon, r))
    targets[0], caps[0] = s, q
    for t in range(1, horizon):
        # Gradient drift of a unit-scale quadratic is 2*||target step||, so
        # target increments are capped at alpha/2.
        s = s + _random_steps(rng, n, r, alpha / 2.0)
        q = q + _random_steps(rng, 1, r, gamma)[0]
        targets[t], caps[t] = s, q
    return SystemTrace.from_arrays(caps, targets)


# =====================================================================
# CSV ingestion
# =====================================================================


class IngestionError(ValueError):
    """Raised when a capacity CSV cannot be parsed; message names row/column."""


def ingest_capacity_csv(
    path: str | Path,
    columns: Sequence[str],
    targets: np.ndarray | None = None,
) -> SystemTrace:
    """Read a capacity trace from a CSV file with a header row.

    Args:
        path: CSV file; comma-delimited, decimal point, UTF-8, header row.
        columns: one column name per supplier, in supplier order.
        targets: optional (T, N, R) target array to attach; when omitted the
            returned trace is capacities-only (N == 0) and targets can be
            grafted on later with :func:`attach_targets`.

    Raises:
        IngestionError: missing column, blank/unparseable cell (the message
            names the offending 1-based data row and column), or empty file.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestionError(f"{path}: empty file (no header row)")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise IngestionError(
                f"{path}: missing column(s) {missing}; header has {reader.fieldnames}"
            )
        rows: list[list[float]] = []
        for idx, record in enumerate(reader, start=1):
            vals = []
            for col in columns:
                raw = (record.get(col) or "").strip()
                if raw == "":
                    raise IngestionError(f"{path}: blank value at data row {idx}, column {col!r}")
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise IngestionError(
                        f"{path}: unparseable number {raw!r} at data row {idx}, column {col!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    caps = np.asarray(rows, dtype=float)
    if targets is None:
        targets = np.zeros((caps.shape[0], 0, caps.shape[1]))
    return SystemTrace.from_arrays(caps, np.asarray(targets, dtype=float))


def attach_targets(trace: SystemTrace, targets: np.ndarray) -> SystemTrace:
    """Return a new trace with ``targets`` grafted onto ``trace``'s capacities."""
    return SystemTrace.from_arrays(trace.capacities, targets)


def rescale_capacities(
    trace: SystemTrace, lo: float, hi: float
) -> tuple[SystemTrace, dict]:
    """Affinely map the capacity range onto [lo, hi] (jointly over all columns).

    Returns the rescaled trace plus metadata recording the applied transform,
    for inclusion in run metadata.
    """
    if hi <= lo:
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    src_min = float(trace.capacities.min())
    src_max = float(trace.capacities.max())
    if src_max == src_min:
        scale = 0.0
        caps = np.full_like(trace.capacities, 0.5 * (lo + hi))
    else:
        scale = (hi - lo) / (src_max - src_min)
        caps = lo + (trace.capacities - src_min) * scale
    meta = {
        "source_min": src_min,
        "source_max": src_max,
        "target_lo": float(lo),
        "target_hi": float(hi),
        "scale": scale,
    }
    return SystemTrace.from_arrays(caps, trace.targets), meta


# =====================================================================
# Validation
# =====================================================================


@dataclass(frozen=True)
class TraceValidation:
    """Outcome of :func:`validate_trace`: realized vs claimed drift bounds."""

    passed: bool
    realized_gamma: float
    realized_alpha: float
    claimed_gamma: float
    claimed_alpha: float
    worst_capacity_step: int | None
    worst_target_step: tuple[int, int] | None

    def message(self) -> str:
        if self.passed:
            return (
                f"ok: realized gamma {self.realized_gamma:.6g} <= {self.claimed_gamma:.6g}, "
                f"realized alpha {self.realized_alpha:.6g} <= {self.claimed_alpha:.6g}"
            )
        parts = []
        if self.realized_gamma > self.claimed_gamma + _DRIFT_TOL:
            parts.append(
                f"capacity drift {self.realized_gamma:.6g} > claimed "
                f"{self.claimed_gamma:.6g} at step {self.worst_capacity_step}"
            )
        if self.realized_alpha > self.claimed_alpha + _DRIFT_TOL:
            t, i = self.worst_target_step  # type: ignore[misc]
            parts.append(
                f"utility drift {self.realized_alpha:.6g} > claimed "
                f"{self.claimed_alpha:.6g} at step {t}, user {i}"
            )
        return "violation: " + "; ".join(parts)


def validate_trace(
    trace: SystemTrace, claimed_gamma: float, claimed_alpha: float
) -> TraceValidation:
    """Recompute realized drifts and compare against claimed bounds.

    Passes iff realized <= claimed + 1e-12 for both bounds; on failure the
    report carries the argmax step (and user, for target drift).
    """
    gprof = capacity_drift_profile(trace)
    aprof = target_drift_profile(trace)
    gamma = float(gprof.max()) if gprof.size else 0.0
    alpha = float(aprof.max()) if aprof.size else 0.0
    worst_g = int(np.argmax(gprof)) if gprof.size else None
    worst_a = None
    if aprof.size:
        t, i = np.unravel_index(int(np.argmax(aprof)), aprof.shape)
        worst_a = (int(t), int(i))
    passed = gamma <= claimed_gamma + _DRIFT_TOL and alpha <= claimed_alpha + _DRIFT_TOL
    return TraceValidation(
        passed=passed,
        realized_gamma=gamma,
        realized_alpha=alpha,
        claimed_gamma=float(claimed_gamma),
        claimed_alpha=float(claimed_alpha),
        worst_capacity_step=worst_g,
        worst_target_step=worst_a,
    )
