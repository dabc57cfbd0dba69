"""Distributed gradient play with Tikhonov regularisation and gradient tracking."""

from __future__ import annotations

from collections.abc import Callable, Iterator
from dataclasses import dataclass, field

import numpy as np

from aggne.game import AggregativeGame, GameConstants, pseudo_gradient
from aggne.graph import MixingMatrix
from aggne.trace import Trace
from aggne.utils import logger
from aggne.utils.errors import (
    DegenerateSpectralGap,
    DimensionMismatch,
    NonFiniteValue,
    ValidationError,
)


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing step sizes ``gamma_k = gamma0 / (k+1)^a`` and ``eta_k = eta0 / (k+1)^b``.

    Parameters
    ----------
    gamma0 : float
        Initial gradient step.
    a : float
        Decay exponent of the gradient step.
    eta0 : float
        Initial regularisation weight.
    b : float
        Decay exponent of the regularisation weight.
    """

    gamma0: float
    a: float
    eta0: float
    b: float

    def __post_init__(self):
        for name in ("gamma0", "a", "eta0", "b"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValidationError(f"Schedule parameter {name}={value} is not finite.")
            object.__setattr__(self, name, float(value))
        if self.gamma0 <= 0 or self.eta0 <= 0:
            raise ValidationError(
                f"Initial steps must be positive, got gamma0={self.gamma0}, eta0={self.eta0}."
            )

    @classmethod
    def paper(cls) -> StepSchedule:
        """``gamma_k = 0.1 / sqrt(k+1)`` and ``eta_k = 0.1 / (k+1)^0.4``."""
        return cls(gamma0=0.1, a=0.5, eta0=0.1, b=0.4)

    def violated_rules(self) -> list[str]:
        """Return the decay rules ``0 < b < a < 1`` and ``a + b < 1`` this schedule breaks."""
        violated = []
        if not 0 < self.b:
            violated.append(f"b={self.b} must be positive")
        if not self.b < self.a:
            violated.append(f"b={self.b} must be smaller than a={self.a}")
        if not self.a < 1:
            violated.append(f"a={self.a} must be smaller than 1")
        if not self.a + self.b < 1:
            violated.append(f"a+b={self.a + self.b} must be smaller than 1")
        return violated

    def check(self, allow_unsafe: bool = False) -> None:
        """Enforce the decay rules.

        Raises
        ------
        ValidationError
            If a rule is broken and ``allow_unsafe`` is False.
        """
        violated = self.violated_rules()
        if not violated:
            return
        message = "Step-size schedule breaks the decay rules: " + "; ".join(violated)
        if not allow_unsafe:
            raise ValidationError(message + " (requires allow_unsafe_gamma0)")
        logger.warning("%s. Proceeding because allow_unsafe_gamma0 is set.", message)

    def gamma(self, k):
        return self.gamma0 / (np.asarray(k, dtype=float) + 1) ** self.a

    def eta(self, k):
        return self.eta0 / (np.asarray(k, dtype=float) + 1) ** self.b

    def gamma_cap(self, k, k_prev=None):
        """``|1 - eta_{k_prev} / eta_k|``, with ``k_prev = k - 1`` by default."""
        k = np.asarray(k, dtype=float)
        k_prev = k - 1 if k_prev is None else np.asarray(k_prev, dtype=float)
        return np.abs(1 - ((k + 1) / (k_prev + 1)) ** self.b)

    def with_gamma0(self, gamma0: float) -> StepSchedule:
        return StepSchedule(gamma0=gamma0, a=self.a, eta0=self.eta0, b=self.b)


@dataclass(frozen=True)
class SafeBound:
    """Constants ``c1, c2, c3`` and the four upper bounds on ``gamma0``.

    ``gamma0_max`` is the smallest of the four candidates; all of them must hold
    for the error contraction to be guaranteed.
    """

    c1: float
    c2: float
    c3: float
    per_bound: tuple[float, float, float, float]
    gamma0_max: float

    def check(self, gamma0: float, allow_unsafe: bool = False) -> None:
        """Reject ``gamma0`` above ``gamma0_max`` unless ``allow_unsafe`` is set.

        Raises
        ------
        ValidationError
            If ``gamma0 > gamma0_max`` and ``allow_unsafe`` is False.
        """
        if gamma0 <= self.gamma0_max:
            return
        message = f"gamma0={gamma0} exceeds the safe bound gamma0_max={self.gamma0_max:.6g}"
        if not allow_unsafe:
            raise ValidationError(message + " (set allow_unsafe_gamma0 to run anyway)")
        logger.warning("%s. Proceeding because allow_unsafe_gamma0 is set.", message)

    def to_dict(self) -> dict:
        return {
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3,
            "per_bound": list(self.per_bound),
            "gamma0_max": self.gamma0_max,
        }


def gamma0_safe_bound(
    constants: GameConstants, eta0: float, rho: float, norm_w_minus_i: float
) -> SafeBound:
    """Largest initial step ``gamma0`` that guarantees contraction of the error vector.

    Parameters
    ----------
    constants : GameConstants
        Lipschitz and strong-convexity constants of the game.
    eta0 : float
        Initial regularisation weight.
    rho : float
        Consensus contraction factor of the mixing matrix.
    norm_w_minus_i : float
        Spectral norm of ``W - I``.

    Returns
    -------
    SafeBound
        The constants and candidate bounds.

    Raises
    ------
    DegenerateSpectralGap
        If ``rho >= 1``.
    """
    if not 0 <= rho < 1:
        raise DegenerateSpectralGap(f"Spectral gap requires 0 <= rho < 1, got rho={rho}.")
    if eta0 <= 0:
        raise ValidationError(f"eta0 must be positive, got {eta0}.")
    mu, l_2 = constants.mu_g, constants.l_2
    lip = constants.regularized_lipschitz(eta0)
    gap = 1 - rho

    c1 = eta0**2 * mu * l_2 * lip + 8 * eta0 * l_2 * lip**2
    c2 = (
        0.5 * eta0**2 * mu * l_2 * norm_w_minus_i
        + gap * lip**2
        + 2 * eta0 * l_2 * lip * norm_w_minus_i
        + 2 * eta0 * l_2 * gap * lip
    )
    c3 = 0.125 * mu * gap**2
    # positive root of c1 g^2 + c2 g - c3 eta0, stable also for c1 = 0
    root = 2 * c3 * eta0 / (c2 + np.sqrt(c2**2 + 4 * c1 * c3 * eta0))
    per_bound = (
        1 / lip,
        gap / (eta0 * mu + 2 * lip),
        gap / (eta0 * mu + 4 * l_2 * eta0),
        float(root),
    )
    bound = SafeBound(
        c1=float(c1), c2=float(c2), c3=float(c3), per_bound=per_bound, gamma0_max=min(per_bound)
    )
    logger.debug("Safe bound on gamma0: %s", bound)
    return bound


@dataclass(eq=False)
class SolverState:
    """Per-agent decisions ``x``, aggregate trackers ``v`` and gradient trackers ``y``.

    All arrays are ``N x m``. ``g2`` caches ``grad_2 g_i(x_i, v_i)`` of the current
    round so the next round only evaluates it at the new point.
    """

    k: int
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray
    g2: np.ndarray = field(repr=False)

    @property
    def consensus_v(self) -> float:
        return float(np.linalg.norm(self.v - self.v.mean(axis=0)))

    @property
    def consensus_y(self) -> float:
        return float(np.linalg.norm(self.y - self.y.mean(axis=0)))

    def averaging_error(self) -> tuple[float, float]:
        """Largest deviations of ``mean(v)`` from ``mean(x)`` and ``mean(y)`` from ``mean(g2)``."""
        return (
            float(np.max(np.abs(self.v.mean(axis=0) - self.x.mean(axis=0)))),
            float(np.max(np.abs(self.y.mean(axis=0) - self.g2.mean(axis=0)))),
        )


def init_state(game: AggregativeGame, x0) -> SolverState:
    """Initial state with ``v = x0`` and ``y_i = grad_2 g_i(x0_i, x0_i)``.

    Raises
    ------
    ShapeMismatch
        If ``x0`` does not hold ``N x m`` values.
    """
    x = game.dims.as_blocks(x0).copy()
    v = x.copy()
    g2 = np.asarray(game.grad2_g_all(x, v), dtype=float)
    return SolverState(k=0, x=x, v=v, y=g2.copy(), g2=g2)


def step(
    state: SolverState, game: AggregativeGame, w: MixingMatrix, schedule: StepSchedule
) -> SolverState:
    """One synchronous round of the distributed iteration.

    Parameters
    ----------
    state : SolverState
        Round-``k`` values of all agents.
    game : AggregativeGame
        The game.
    w : MixingMatrix
        Consensus weights over the communication graph.
    schedule : StepSchedule
        Step sizes.

    Returns
    -------
    SolverState
        Round ``k + 1``; the input state is not modified.

    Raises
    ------
    NonFiniteValue
        If the new round contains NaN or Inf.
    """
    n = game.dims.n_players
    if w.n != n:
        raise DimensionMismatch(f"Mixing matrix has {w.n} nodes but the game has {n} players.")
    gamma, eta = float(schedule.gamma(state.k)), float(schedule.eta(state.k))
    x, v = state.x, state.v

    direction = (
        game.grad1_f_all(x, v)
        + game.grad2_f_all(x, v) / n
        + eta * (game.grad1_g_all(x, v) + state.y)
    )
    x_new = x - gamma * direction
    v_new = w.mix(v) + x_new - x
    g2_new = np.asarray(game.grad2_g_all(x_new, v_new), dtype=float)
    y_new = w.mix(state.y) + g2_new - state.g2

    if not all(np.all(np.isfinite(arr)) for arr in (x_new, v_new, y_new)):
        raise NonFiniteValue(state.k + 1)
    return SolverState(k=state.k + 1, x=x_new, v=v_new, y=y_new, g2=g2_new)


def iterate(
    game: AggregativeGame,
    w: MixingMatrix,
    schedule: StepSchedule,
    x0,
    max_iters: int | None = None,
) -> Iterator[SolverState]:
    """Yield the initial state and every following round, up to ``max_iters`` steps."""
    state = init_state(game, x0)
    yield state
    while max_iters is None or state.k < max_iters:
        state = step(state, game, w, schedule)
        yield state


def run(
    game: AggregativeGame,
    w: MixingMatrix,
    schedule: StepSchedule,
    x0,
    max_iters: int,
    record_every: int = 100,
    diagnostics_mode: bool = False,
    window_end: int = 200,
    x_star: np.ndarray | None = None,
    delta: Callable[[SolverState], float] | None = None,
    record_decisions: bool = False,
    header: dict | None = None,
) -> Trace:
    """Run the distributed iteration and record metrics.

    Parameters
    ----------
    game : AggregativeGame
        The game.
    w : MixingMatrix
        Consensus weights.
    schedule : StepSchedule
        Step sizes.
    x0 : array_like
        Initial decisions, ``N x m``.
    max_iters : int
        Number of rounds.
    record_every : int, optional
        Recording period, by default 100. The initial and final rounds are always recorded.
    diagnostics_mode : bool, optional
        Record every round for ``k <= window_end``, by default False
    window_end : int, optional
        Last round of the dense recording window, by default 200
    x_star : np.ndarray, optional
        Optimal equilibrium; adds the ``gap_to_xstar`` column, by default None
    delta : callable, optional
        Maps a state to the norm of its error vector; adds ``delta_norm``, by default None
    record_decisions : bool, optional
        Keep the decisions of every recorded round, by default False
    header : dict, optional
        Metadata stored in the trace header, by default None

    Returns
    -------
    Trace
        Recorded rows.

    Raises
    ------
    NonFiniteValue
        If the iteration diverges. The partial trace is attached as ``trace``.
    """
    if max_iters < 0 or record_every < 1:
        raise ValidationError(
            f"Need max_iters >= 0 and record_every >= 1, got {max_iters}, {record_every}."
        )
    trace = Trace(with_gap=x_star is not None, with_delta=delta is not None)
    trace.header.update(header or {})
    if x_star is not None:
        x_star = np.asarray(x_star, dtype=float).reshape(-1)

    def record(state: SolverState) -> None:
        row = {
            "k": state.k,
            "gamma_k": float(schedule.gamma(state.k)),
            "eta_k": float(schedule.eta(state.k)),
            "ne_residual": float(np.linalg.norm(pseudo_gradient(game, state.x))),
            "consensus_v": state.consensus_v,
            "consensus_y": state.consensus_y,
        }
        if x_star is not None:
            row["gap_to_xstar"] = float(np.linalg.norm(state.x.reshape(-1) - x_star))
        if delta is not None:
            row["delta_norm"] = float(delta(state))
        trace.append(row, state.x if record_decisions else None)

    logger.info("Running %i rounds with %i players.", max_iters, game.dims.n_players)
    try:
        for state in iterate(game, w, schedule, x0, max_iters):
            dense = diagnostics_mode and state.k <= window_end
            if dense or state.k % record_every == 0 or state.k == max_iters:
                record(state)
    except NonFiniteValue as err:
        trace.diverged_at = err.k
        err.trace = trace
        logger.error("Iteration diverged at k=%i.", err.k)
        raise
    logger.info(
        "Finished %i rounds, final NE residual %.3e.", max_iters, trace.rows[-1]["ne_residual"]
    )
    return trace
