"""Brute-force welfare maximizer over the capacity constraint line (R = 1).

Independent of the dual-based oracle: parametrizes the feasible set by the
first N-1 allocations (the last is Q minus their sum), grid-searches welfare
on a coarse grid, then refines around the argmax twice.  Only used by tests.
"""

import numpy as np

GRID_POINTS = 121
REFINEMENTS = 2


def _welfare_on_grid(free: np.ndarray, last: np.ndarray, targets: np.ndarray,
                     scales: np.ndarray) -> np.ndarray:
    """Total utility for each grid point.

    Args:
        free: (P, N-1) candidate allocations for users 0..N-2.
        last: (P,) implied allocation of user N-1.
        targets: (N,) bliss points.
        scales: (N,) curvature scales.
    """
    d_free = free - targets[:-1]
    w = -np.sum(scales[:-1] * d_free * d_free, axis=-1)
    d_last = last - targets[-1]
    return w - scales[-1] * d_last * d_last


def brute_force_optimum(targets: np.ndarray, scales: np.ndarray, capacity: float):
    """Grid-argmax of total utility subject to the allocations summing to Q.

    Returns:
        (allocations (N,), welfare) at the refined grid argmax.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1)
    scales = np.asarray(scales, dtype=float).reshape(-1)
    n = targets.shape[0]
    if n == 1:
        q = np.array([capacity])
        return q, float(-scales[0] * (capacity - targets[0]) ** 2)

    # Center the search on the uniform split; the half-width covers how far
    # any single bliss point sits from it, plus the total imbalance, plus one.
    center = np.full(n - 1, capacity / n)
    half = float(
        np.max(np.abs(targets - capacity / n))
        + abs(np.sum(targets) - capacity) / n
        + 1.0
    )

    best_q = None
    for _ in range(REFINEMENTS + 1):
        axes = [np.linspace(c - half, c + half, GRID_POINTS) for c in center]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
        last = capacity - mesh.sum(axis=-1)
        welfare = _welfare_on_grid(mesh, last, targets, scales)
        k = int(np.argmax(welfare))
        center = mesh[k]
        best_q = np.append(mesh[k], last[k])
        # Next pass: a grid two pitches wide around the winner.
        half = 2.0 * (2.0 * half / (GRID_POINTS - 1))
    welfare = float(
        -np.sum(scales * (best_q - targets) ** 2)
    )
    return best_q, welfare
