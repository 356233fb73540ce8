"""Domain types: user utilities, problem dimensions, global smoothness data.

Every symbol the simulator and the certifier reason about is defined here:
per-user strongly concave utilities (with gradients and inverse gradients),
the population-wide curvature envelopes sigma/L, the drift bounds gamma/alpha,
and the step size eta together with its proven admissible range.

Conventions
-----------
* Allocations ``q`` and prices ``p`` are vectors of length ``R`` (one entry
  per supplier).  All norms are Euclidean.
* Utility methods broadcast: any leading batch dimensions are allowed as long
  as the trailing dimension is ``R``.
* Utilities are immutable after construction and all functions here are pure.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Dimensions",
    "UtilityInterface",
    "SeparableUtility",
    "QuadraticUtility",
    "GlobalParams",
    "derive_global_params",
    "local_demand",
    "gradient_drift",
    "stack_quadratics",
]

# Bisection tolerance for numeric inverse gradients.
_INVERSE_TOL = 1e-12
_INVERSE_MAX_EXPAND = 200
_INVERSE_MAX_BISECT = 200


@dataclass(frozen=True)
class Dimensions:
    """Problem size: ``n_users`` demand from ``n_suppliers`` supply nodes."""

    n_users: int
    n_suppliers: int

    def __post_init__(self) -> None:
        if int(self.n_users) != self.n_users or self.n_users < 1:
            raise ValueError(f"n_users must be a positive integer, got {self.n_users!r}")
        if int(self.n_suppliers) != self.n_suppliers or self.n_suppliers < 1:
            raise ValueError(
                f"n_suppliers must be a positive integer, got {self.n_suppliers!r}"
            )


class UtilityInterface(ABC):
    """A strongly concave utility with gradient and inverse gradient.

    Implementations must guarantee, over their whole domain (all of R^R):

    * strong concavity with parameter :attr:`sigma` > 0,
    * gradient Lipschitz continuity with parameter :attr:`lipschitz_grad`,
    * ``sigma <= lipschitz_grad``,
    * ``inverse_gradient(gradient(q)) == q`` (the gradient is a bijection).

    ``value``/``gradient``/``inverse_gradient`` accept arrays whose trailing
    dimension is ``R`` and broadcast over any leading dimensions.
    """

    @abstractmethod
    def value(self, q: np.ndarray) -> np.ndarray | float:
        """Utility of allocation ``q`` (scalar per trailing-R vector)."""

    @abstractmethod
    def gradient(self, q: np.ndarray) -> np.ndarray:
        """Gradient of :meth:`value` at ``q`` (same shape as ``q``)."""

    @abstractmethod
    def inverse_gradient(self, p: np.ndarray) -> np.ndarray:
        """The unique ``q`` with ``gradient(q) == p``."""

    @property
    @abstractmethod
    def sigma(self) -> float:
        """Strong-concavity parameter (curvature floor)."""

    @property
    @abstractmethod
    def lipschitz_grad(self) -> float:
        """Lipschitz constant of the gradient (curvature ceiling)."""

    @property
    @abstractmethod
    def n_suppliers(self) -> int:
        """Length R of allocation/price vectors."""

    def lipschitz_value_on(self, lo: np.ndarray, hi: np.ndarray) -> float:
        """Lipschitz constant of :meth:`value` over the box ``[lo, hi]``.

        For a concave differentiable function on a convex set this equals the
        maximum gradient norm over the set.  The default probes a coarse grid
        plus the corners; subclasses with structure (e.g. quadratics) override
        with the exact corner maximization.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        axes = [np.linspace(lo[r], hi[r], 5) for r in range(lo.shape[0])]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.shape[0])
        grads = self.gradient(mesh)
        return float(np.max(np.linalg.norm(grads, axis=-1)))


class SeparableUtility(UtilityInterface):
    """Utility that decomposes across supplier coordinates.

    For separable utilities each gradient coordinate depends only on the
    matching allocation coordinate, so the inverse gradient can be computed
    per coordinate by safeguarded bisection on the (strictly decreasing)
    marginal.  Subclasses only need ``value``/``gradient`` and the curvature
    constants; they may still override :meth:`inverse_gradient` with a closed
    form when one exists.
    """

    def _marginal(self, r: int, x: float) -> float:
        q = np.zeros(self.n_suppliers)
        q[r] = x
        return float(self.gradient(q)[r])

    def _invert_coordinate(self, r: int, target: float) -> float:
        # Bracket by doubling expansion around 0, then bisect.  The marginal
        # is strictly decreasing (strong concavity), so f(lo) > 0 > f(hi)
        # brackets the root of f(x) = marginal(x) - target.
        lo, hi, width = -1.0, 1.0, 1.0
        for _ in range(_INVERSE_MAX_EXPAND):
            if self._marginal(r, lo) >= target >= self._marginal(r, hi):
                break
            width *= 2.0
            lo -= width
            hi += width
        else:
            raise ArithmeticError(
                f"could not bracket inverse gradient (coordinate {r}, target {target})"
            )
        for _ in range(_INVERSE_MAX_BISECT):
            mid = 0.5 * (lo + hi)
            if self._marginal(r, mid) > target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= _INVERSE_TOL:
                break
        return 0.5 * (lo + hi)

    def inverse_gradient(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        flat = np.atleast_2d(p.reshape(-1, self.n_suppliers))
        out = np.empty_like(flat)
        for k in range(flat.shape[0]):
            for r in range(self.n_suppliers):
                out[k, r] = self._invert_coordinate(r, flat[k, r])
        return out.reshape(p.shape)


@dataclass(frozen=True, eq=False)
class QuadraticUtility(SeparableUtility):
    """``U(q) = -scale * ||q - target||^2``: the built-in utility family.

    The bliss point is ``target`` (demand at zero price); everything has a
    closed form:

    * gradient ``-2*scale*(q - target)``,
    * inverse gradient ``p -> target - p/(2*scale)``,
    * curvature is flat: ``sigma == lipschitz_grad == 2*scale``.

    Args:
        target: bliss allocation, shape ``(R,)`` (power units).
        scale: positive curvature coefficient (default 1).
    """

    target: np.ndarray
    scale: float = 1.0

    def __post_init__(self) -> None:
        t = np.atleast_1d(np.asarray(self.target, dtype=float))
        if t.ndim != 1:
            raise ValueError(f"target must be a vector, got shape {t.shape}")
        if not (self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale!r}")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "scale", float(self.scale))

    def value(self, q: np.ndarray) -> np.ndarray | float:
        d = np.asarray(q, dtype=float) - self.target
        out = -self.scale * np.sum(d * d, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, q: np.ndarray) -> np.ndarray:
        return -2.0 * self.scale * (np.asarray(q, dtype=float) - self.target)

    def inverse_gradient(self, p: np.ndarray) -> np.ndarray:
        return self.target - np.asarray(p, dtype=float) / (2.0 * self.scale)

    @property
    def sigma(self) -> float:
        return 2.0 * self.scale

    @property
    def lipschitz_grad(self) -> float:
        return 2.0 * self.scale

    @property
    def n_suppliers(self) -> int:
        return int(self.target.shape[0])

    def lipschitz_value_on(self, lo: np.ndarray, hi: np.ndarray) -> float:
        # Gradient norm is maximized at the box corner farthest from target.
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        corner = np.maximum(np.abs(lo - self.target), np.abs(hi - self.target))
        return float(2.0 * self.scale * np.linalg.norm(corner))


@dataclass(frozen=True)
class GlobalParams:
    """Population-wide constants used by every bound envelope.

    Attributes:
        sigma: min over users/steps of the strong-concavity parameters.
        lipschitz_grad: max over users/steps of the gradient Lipschitz
            constants (``sigma <= lipschitz_grad``).
        gamma: realized per-step capacity drift bound, max ``||Q(t+1)-Q(t)||``.
        alpha: realized per-step utility-gradient drift bound,
            max over users of ``sup_q ||grad U^{t+1}(q) - grad U^t(q)||``.
        eta: price step size.
        n_users: population size N.
        lipschitz_value: optional value-Lipschitz constant L' over a stated
            bounded domain (filled in by the certifier from the realized
            allocation box; None until then).
    """

    sigma: float
    lipschitz_grad: float
    gamma: float
    alpha: float
    eta: float
    n_users: int
    lipschitz_value: float | None = None

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")
        if self.lipschitz_grad < self.sigma:
            raise ValueError("lipschitz_grad must be >= sigma")
        if self.gamma < 0 or self.alpha < 0:
            raise ValueError("drift bounds must be nonnegative")
        if not (self.eta > 0):
            raise ValueError("eta must be positive")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")

    # ------------------------------------------------------------------
    # Derived constants.  c and b feed every tracking envelope; eta_max is
    # the upper end of the step-size range the contraction argument covers.
    # ------------------------------------------------------------------

    @property
    def eta_max(self) -> float:
        """Largest step size covered by the contraction guarantee."""
        return 2.0 * self.lipschitz_grad / (
            self.n_users * (1.0 + self.lipschitz_grad * self.sigma)
        )

    @property
    def eta_in_proven_range(self) -> bool:
        return 0.0 < self.eta <= self.eta_max * (1.0 + 1e-12)

    @property
    def contraction_factor(self) -> float:
        """Per-step tracking contraction factor ``c`` in (0, 1)."""
        radicand = 1.0 - 2.0 * self.eta * self.sigma * self.n_users / (
            1.0 + self.sigma * self.lipschitz_grad
        )
        if radicand < 0.0:
            raise ValueError(
                f"eta={self.eta} too large: contraction factor undefined "
                f"(radicand {radicand:.3g} < 0)"
            )
        return float(np.sqrt(radicand))

    @property
    def drift_constant(self) -> float:
        """Envelope drift constant ``b``: worst per-step optimal-price motion."""
        L, s = self.lipschitz_grad, self.sigma
        return L * L * (self.gamma / (s * self.n_users) + self.alpha / (s * s))

    @property
    def tracking_floor(self) -> float:
        """Asymptotic dual tracking level ``b / (1 - c)``."""
        c = self.contraction_factor
        if c >= 1.0:
            raise ValueError("contraction factor must be < 1 for a finite floor")
        return self.drift_constant / (1.0 - c)

    def with_eta(self, eta: float) -> "GlobalParams":
        return GlobalParams(
            sigma=self.sigma,
            lipschitz_grad=self.lipschitz_grad,
            gamma=self.gamma,
            alpha=self.alpha,
            eta=float(eta),
            n_users=self.n_users,
            lipschitz_value=self.lipschitz_value,
        )

    def with_lipschitz_value(self, lprime: float) -> "GlobalParams":
        return GlobalParams(
            sigma=self.sigma,
            lipschitz_grad=self.lipschitz_grad,
            gamma=self.gamma,
            alpha=self.alpha,
            eta=self.eta,
            n_users=self.n_users,
            lipschitz_value=float(lprime),
        )


def stack_quadratics(
    utilities: Sequence[Sequence[UtilityInterface]],
) -> tuple[np.ndarray, np.ndarray] | None:
    """Stack a time-major utility grid into arrays when it is all-quadratic.

    Returns ``(targets, scales)`` with shapes (T, N, R) and (N,), or None if
    any utility is not quadratic or any user's scale varies over time.
    Vectorized paths (simulation, certification) key off this.
    """
    scales: np.ndarray | None = None
    rows = []
    for row in utilities:
        if not all(isinstance(u, QuadraticUtility) for u in row):
            return None
        row_scales = np.array([u.scale for u in row])
        if scales is None:
            scales = row_scales
        elif not np.array_equal(scales, row_scales):
            return None
        rows.append(np.stack([u.target for u in row]) if row else np.zeros((0, 0)))
    if scales is None:
        return None
    return np.stack(rows), scales


def gradient_drift(
    before: UtilityInterface,
    after: UtilityInterface,
    probes: int = 64,
    seed: int = 0,
) -> float:
    """Sup-norm gradient drift between two snapshots of one user's utility.

    Exact (and probe-free) for quadratics with equal scales:
    ``2*scale*||target_after - target_before||``.  For other families the sup
    is estimated as a max over random probe points, which is a lower bound —
    callers relying on exactness should stick to the built-in family.
    """
    if isinstance(before, QuadraticUtility) and isinstance(after, QuadraticUtility):
        if before.scale != after.scale:
            raise ValueError(
                "gradient drift is unbounded when a quadratic user's scale "
                f"changes between steps ({before.scale} -> {after.scale})"
            )
        return float(2.0 * before.scale * np.linalg.norm(after.target - before.target))
    rng = np.random.default_rng(seed)
    q = rng.normal(scale=5.0, size=(probes, before.n_suppliers))
    diff = after.gradient(q) - before.gradient(q)
    return float(np.max(np.linalg.norm(diff, axis=-1)))


def derive_global_params(
    utilities: Sequence[Sequence[UtilityInterface]],
    trace: "od3sim.traces.SystemTrace",  # noqa: F821 - forward ref, no import cycle
    eta: float | None = None,
) -> GlobalParams:
    """Compute the global envelopes (sigma, L, gamma, alpha) for a run.

    Args:
        utilities: time-major grid ``utilities[t][i]`` of per-step user
            utilities; must match the trace horizon and user count.
        trace: capacity/target time series (supplies realized gamma).
        eta: step size; defaults to the proven-range limit ``eta_max``.

    Returns:
        GlobalParams with exact min/max curvature constants and drift bounds
        equal to the realized per-step maxima along the trace.

    Raises:
        ValueError: empty horizon, or shape mismatch with the trace.
    """
    if len(utilities) == 0 or len(utilities[0]) == 0:
        raise ValueError("empty horizon")
    horizon = len(utilities)
    n_users = len(utilities[0])
    if horizon != trace.horizon or n_users != trace.n_users:
        raise ValueError(
            f"utilities grid is {horizon}x{n_users}, trace is "
            f"{trace.horizon}x{trace.n_users}"
        )
    sigma = min(u.sigma for row in utilities for u in row)
    lips = max(u.lipschitz_grad for row in utilities for u in row)
    alpha = 0.0
    for t in range(horizon - 1):
        for i in range(n_users):
            alpha = max(alpha, gradient_drift(utilities[t][i], utilities[t + 1][i]))
    gamma = trace.realized_gamma
    params = GlobalParams(
        sigma=sigma,
        lipschitz_grad=lips,
        gamma=gamma,
        alpha=alpha,
        eta=1.0,  # placeholder, replaced below once eta_max is known
        n_users=n_users,
    )
    return params.with_eta(params.eta_max if eta is None else eta)


def local_demand(user: UtilityInterface, price: np.ndarray) -> np.ndarray:
    """A user's optimal response to a broadcast price.

    Maximizing ``value(q) - price . q`` over unconstrained q gives the
    stationarity condition ``gradient(q) = price``, whose unique solution is
    the inverse gradient.  Demand is unrestricted in sign: users may sell
    power back, so no clamping is applied.
    """
    price = np.asarray(price, dtype=float)
    if price.shape[-1] != user.n_suppliers:
        raise ValueError(
            f"price has {price.shape[-1]} components, expected {user.n_suppliers}"
        )
    return user.inverse_gradient(price)
