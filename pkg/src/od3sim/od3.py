"""The online price-coordination loop.

One iteration: suppliers broadcast the price ``p(t)``; each user responds
with its local demand (inverse gradient at the price); suppliers measure the
aggregate excess ``sum_i q_i(t) - Q(t)`` and update the price.  The loop sees
users only through :func:`od3sim.model.local_demand` — one-way communication,
no user ever observes another user's allocation.

Two update sign conventions are implemented.  ``DUAL_DESCENT`` (the default)
is ``p(t+1) = p(t) + eta * excess``: excess demand raises the price.  It is
exactly the gradient step ``p - eta * grad D_t(p)`` on the dual function,
the form the tracking guarantees analyze.  ``PAPER_LITERAL`` flips the sign
(``p - eta * excess``); it is kept only to document that the flipped update
diverges (see the sign-discrepancy test), which is why it is not the default.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from od3sim.model import (
    GlobalParams,
    QuadraticUtility,
    UtilityInterface,
    local_demand,
    stack_quadratics,
)
from od3sim.traces import SystemTrace

__all__ = [
    "SignConvention",
    "OnlineState",
    "initial_state",
    "od3_step",
    "run_od3",
    "quadratic_population",
]


class SignConvention(Enum):
    """Direction of the price response to excess demand."""

    DUAL_DESCENT = "dual_descent"
    PAPER_LITERAL = "paper_literal"

    @classmethod
    def parse(cls, text: str) -> "SignConvention":
        key = text.strip().lower().replace("-", "_")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(
            f"unknown sign convention {text!r}; expected one of "
            f"{[m.value for m in cls]}"
        )


@dataclass(frozen=True, eq=False)
class OnlineState:
    """One step of the online loop, fully measured.

    Attributes:
        t: step index.
        price: broadcast price p(t), shape (R,).
        allocations: (R, N) matrix; column i is user i's demand at p(t).
        excess: row sum of allocations minus capacity Q(t), shape (R,).
    """

    t: int
    price: np.ndarray
    allocations: np.ndarray
    excess: np.ndarray

    def __post_init__(self) -> None:
        for name in ("price", "allocations", "excess"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.allocations.shape[0] != self.price.shape[0]:
            raise ValueError(
                f"allocations is {self.allocations.shape}, expected R="
                f"{self.price.shape[0]} rows"
            )

    @property
    def aggregate(self) -> np.ndarray:
        """Total allocated power per supplier, shape (R,)."""
        return self.allocations.sum(axis=1)


def _measure(
    users: Sequence[UtilityInterface], capacity: np.ndarray, price: np.ndarray, t: int
) -> OnlineState:
    capacity = np.asarray(capacity, dtype=float)
    price = np.asarray(price, dtype=float)
    cols = [local_demand(u, price) for u in users]
    allocations = np.stack(cols, axis=1) if cols else np.zeros((price.shape[0], 0))
    excess = allocations.sum(axis=1) - capacity
    return OnlineState(t=t, price=price, allocations=allocations, excess=excess)


def initial_state(
    users: Sequence[UtilityInterface], capacity: np.ndarray, p0: np.ndarray
) -> OnlineState:
    """Measure allocations and excess at the starting price p(0)."""
    return _measure(users, capacity, p0, t=0)


def od3_step(
    state: OnlineState,
    users: Sequence[UtilityInterface],
    capacity: np.ndarray,
    eta: float,
    sign_convention: SignConvention = SignConvention.DUAL_DESCENT,
) -> OnlineState:
    """Advance the loop by one step.

    The stored excess of ``state`` (measured at step t) drives the price
    update; ``users`` and ``capacity`` are the step-(t+1) problem data, and
    the returned state carries the step-(t+1) allocations and excess.

    Args:
        state: fully measured state at step t.
        users: utilities at step t+1.
        capacity: capacity vector Q(t+1).
        eta: positive step size.
        sign_convention: price-update direction (see module docstring).
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if sign_convention is SignConvention.DUAL_DESCENT:
        price_next = state.price + eta * state.excess
    else:
        price_next = state.price - eta * state.excess
    return _measure(users, capacity, price_next, t=state.t + 1)


def run_od3(
    trace: SystemTrace,
    utilities: Sequence[Sequence[UtilityInterface]],
    params: GlobalParams,
    p0: np.ndarray,
    sign_convention: SignConvention = SignConvention.DUAL_DESCENT,
) -> list[OnlineState]:
    """Run the loop over a whole trace.

    Args:
        utilities: time-major grid ``utilities[t][i]`` matching the trace.
        params: supplies the step size ``params.eta``.
        p0: initial broadcast price, shape (R,).

    Returns:
        One :class:`OnlineState` per step, length ``trace.horizon``.  Step t's
        allocations respond to p(t) with the time-t utilities against Q(t) —
        these are the allocations all certificates evaluate.
    """
    if len(utilities) != trace.horizon:
        raise ValueError(
            f"utilities grid has {len(utilities)} steps, trace has {trace.horizon}"
        )
    if any(len(row) != trace.n_users for row in utilities):
        raise ValueError("utilities grid width inconsistent with trace users")
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (trace.n_suppliers,):
        raise ValueError(f"p0 has shape {p0.shape}, expected ({trace.n_suppliers},)")

    fast = stack_quadratics(utilities)
    if fast is not None:
        return _run_quadratic(trace, *fast, params.eta, p0, sign_convention)

    states = [initial_state(utilities[0], trace.capacities[0], p0)]
    for t in range(1, trace.horizon):
        states.append(
            od3_step(states[-1], utilities[t], trace.capacities[t], params.eta, sign_convention)
        )
    return states


def _run_quadratic(
    trace: SystemTrace,
    targets: np.ndarray,
    scales: np.ndarray,
    eta: float,
    p0: np.ndarray,
    sign_convention: SignConvention,
) -> list[OnlineState]:
    """Vectorized all-quadratic path; output identical to the generic loop."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    direction = 1.0 if sign_convention is SignConvention.DUAL_DESCENT else -1.0
    states: list[OnlineState] = []
    price = p0
    two_scale = 2.0 * scales  # (N,)
    for t in range(trace.horizon):
        if t > 0:
            price = price + direction * eta * states[-1].excess
        # q_i = s_i - p / (2 scale_i); the layout and reduction mirror the
        # generic per-user path exactly so results match bit for bit.
        q = targets[t] - price[None, :] / two_scale[:, None]
        allocations = np.ascontiguousarray(q.T)
        excess = allocations.sum(axis=1) - trace.capacities[t]
        states.append(OnlineState(t=t, price=price, allocations=allocations, excess=excess))
    return states


def quadratic_population(
    trace: SystemTrace, scales: Sequence[float] | float = 1.0
) -> list[list[QuadraticUtility]]:
    """Build the time-major utility grid for a quadratic population.

    Args:
        trace: supplies the (T, N, R) targets.
        scales: one positive scale per user, or a single shared value.
    """
    n = trace.n_users
    if np.isscalar(scales):
        scale_vec = [float(scales)] * n
    else:
        scale_vec = [float(s) for s in scales]  # type: ignore[union-attr]
        if len(scale_vec) != n:
            raise ValueError(f"{len(scale_vec)} scales for {n} users")
    return [
        [QuadraticUtility(target=trace.targets[t, i], scale=scale_vec[i]) for i in range(n)]
        for t in range(trace.horizon)
    ]
