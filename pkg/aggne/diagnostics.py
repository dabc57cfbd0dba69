"""Numerical audit of the error recursion and contraction along a run."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from aggne.game import AggregativeGame, GameConstants
from aggne.graph import MixingMatrix
from aggne.oracle import RegularizedSolution, TikhonovTrajectory, tikhonov_trajectory
from aggne.solver import SolverState, StepSchedule, iterate
from aggne.trace import DELTA_COLUMN, GAP_COLUMN, Trace
from aggne.utils import logger
from aggne.utils.errors import (
    ContractionViolated,
    IterationMismatch,
    RecursionViolated,
    ValidationError,
)

AUDIT_SLACK = 1e-8
COMPONENTS = ("dist_trajectory", "consensus_v", "consensus_y")


@dataclass(frozen=True)
class ErrorVector:
    """Distance to the regularised solution and the two consensus violations at round ``k``."""

    k: int
    dist_trajectory: float
    consensus_v: float
    consensus_y: float

    def __post_init__(self):
        if min(self.dist_trajectory, self.consensus_v, self.consensus_y) < 0:
            raise ValidationError(f"Error vector components must be nonnegative: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dist_trajectory, self.consensus_v, self.consensus_y])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


def compute_delta(
    state: SolverState,
    game: AggregativeGame,
    schedule: StepSchedule,
    oracle_solution_prev: RegularizedSolution,
) -> ErrorVector:
    """Error vector of ``state`` against the regularised solution of the previous round.

    Round 0 is measured against ``x*_{eta_0}``.

    Raises
    ------
    IterationMismatch
        If the oracle solution was computed for another ``eta``.
    """
    expected = float(schedule.eta(max(state.k - 1, 0)))
    if not np.isclose(oracle_solution_prev.eta, expected, rtol=1e-12, atol=0.0):
        raise IterationMismatch(
            f"Oracle point has eta={oracle_solution_prev.eta!r}, round k={state.k} "
            f"needs eta={expected!r}."
        )
    x_star = np.asarray(oracle_solution_prev.x_star_eta).reshape(-1)
    dist = float(np.linalg.norm(game.dims.as_blocks(state.x).reshape(-1) - x_star))
    return ErrorVector(
        k=state.k,
        dist_trajectory=dist,
        consensus_v=state.consensus_v,
        consensus_y=state.consensus_y,
    )


@dataclass(frozen=True, eq=False)
class RecursionData:
    """Recursion matrices of round ``k``.

    ``h_matrix`` and ``h_vector`` bound ``Delta_{k+1} <= H_k Delta_k + h_k``; ``h_hat``
    dominates ``h_matrix`` and has spectral radius below ``alpha`` for a safe ``gamma0``.
    """

    k: int
    h_matrix: np.ndarray
    h_vector: np.ndarray
    h_hat: np.ndarray
    alpha: float
    theta: float
    gamma_cap: float
    c_const: float

    @property
    def h_hat_vector(self) -> np.ndarray:
        return np.full(3, self.theta / np.sqrt(3) * self.gamma_cap)

    @property
    def spectral_radius(self) -> float:
        """Largest modulus root of the characteristic polynomial of ``h_hat``."""
        return float(np.max(np.abs(np.roots(np.poly(self.h_hat)))))

    @property
    def leading_minors(self) -> np.ndarray:
        """Leading principal minors of ``alpha I - h_hat``."""
        shifted = self.alpha * np.eye(3) - self.h_hat
        return np.array([np.linalg.det(shifted[:size, :size]) for size in (1, 2, 3)])

    @property
    def contracts(self) -> bool:
        """Whether ``rho(h_hat) < alpha``.

        For a nonnegative ``h_hat`` this holds iff ``alpha I - h_hat`` is a
        nonsingular M-matrix, i.e. all its leading principal minors are positive.
        """
        if np.all(self.h_hat >= 0):
            return bool(np.all(self.leading_minors > 0))
        return self.spectral_radius < self.alpha

    @property
    def dominated(self) -> bool:
        """``H_k <= h_hat`` and ``h_k <= h_hat_vector`` entry-wise."""
        return bool(
            np.all(self.h_matrix <= self.h_hat) and np.all(self.h_vector <= self.h_hat_vector)
        )


def build_recursion(
    k: int,
    schedule: StepSchedule,
    constants: GameConstants,
    rho: float,
    norm_w_minus_i: float,
    c_const: float,
) -> RecursionData:
    """Recursion and contraction matrices of round ``k``.

    Parameters
    ----------
    k : int
        Round, at least 1.
    schedule : StepSchedule
        Step sizes.
    constants : GameConstants
        Game constants.
    rho : float
        Consensus contraction factor of the mixing matrix.
    norm_w_minus_i : float
        Spectral norm of ``W - I``.
    c_const : float
        Bound on ``||grad g||`` along the regularised solutions.

    Returns
    -------
    RecursionData
        The matrices, ``alpha_k``, ``Theta`` and ``Gamma_{k-1}``.
    """
    if k < 1:
        raise ValidationError(f"The recursion is defined for k >= 1, got k={k}.")
    gamma, eta = float(schedule.gamma(k)), float(schedule.eta(k))
    eta0, gamma0 = schedule.eta0, schedule.gamma0
    mu, l_2 = constants.mu_g, constants.l_2
    lip = constants.regularized_lipschitz(eta)
    lip0 = constants.regularized_lipschitz(eta0)
    gamma_cap = float(schedule.gamma_cap(k))
    alpha = 1 - 0.5 * gamma * eta * mu

    h_matrix = np.array([
        [1 - gamma * eta * mu, gamma * lip, gamma * eta],
        [2 * gamma * lip, rho + gamma * lip, gamma * eta],
        [
            4 * l_2 * gamma * lip,
            l_2 * norm_w_minus_i + 2 * l_2 * gamma * lip,
            rho + 2 * l_2 * gamma * eta,
        ],
    ])
    drift = c_const / mu * gamma_cap
    h_vector = drift * np.array([1.0, 2 * gamma * lip, 4 * l_2 * gamma * lip])

    diag = alpha - (1 - rho) / 2
    h_hat = np.array([
        [h_matrix[0, 0], gamma * lip0, gamma * eta0],
        [2 * gamma * lip0, diag, gamma * eta0],
        [4 * l_2 * gamma * lip0, l_2 * norm_w_minus_i + 2 * l_2 * gamma * lip0, diag],
    ])
    theta = max(1.0, 2 * gamma0 * lip0, 4 * l_2 * gamma0 * lip0) * np.sqrt(3) * c_const / mu
    return RecursionData(
        k=k,
        h_matrix=h_matrix,
        h_vector=h_vector,
        h_hat=h_hat,
        alpha=float(alpha),
        theta=float(theta),
        gamma_cap=gamma_cap,
        c_const=float(c_const),
    )


@dataclass
class AuditReport:
    """Margins of an audited inequality per round; a negative margin is a violation."""

    name: str
    ks: list[int] = field(default_factory=list)
    margins: list[list[float]] = field(default_factory=list)
    violations: list[tuple[int, str, float]] = field(default_factory=list)
    advisory: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def min_margin(self) -> float | None:
        if not self.margins:
            return None
        return float(min(min(row) for row in self.margins))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "audited": len(self.ks),
            "passed": self.passed,
            "advisory": self.advisory,
            "min_margin": self.min_margin,
            "violations": [
                {"k": k, "component": component, "margin": margin}
                for k, component, margin in self.violations
            ],
            **self.extra,
        }


def _by_k(items) -> dict:
    if isinstance(items, Mapping):
        return dict(items)
    return {item.k: item for item in items}


def check_recursion(
    deltas: Sequence[ErrorVector],
    recursions: Sequence[RecursionData],
    slack: float = AUDIT_SLACK,
    strict: bool = True,
) -> AuditReport:
    """Check ``Delta_{k+1} <= H_k Delta_k + h_k`` component-wise.

    Parameters
    ----------
    deltas : Sequence[ErrorVector]
        Error vectors at consecutive rounds.
    recursions : Sequence[RecursionData]
        Recursion data of the audited rounds.
    slack : float, optional
        Allowed floating-point excess, by default 1e-8
    strict : bool, optional
        Raise on the first violation, by default True

    Returns
    -------
    AuditReport
        Margins ``H_k Delta_k + h_k - Delta_{k+1}`` per round.

    Raises
    ------
    RecursionViolated
        If ``strict`` and a margin is below ``-slack``. The report is attached as
        ``report``.
    """
    delta_by_k = _by_k(deltas)
    report = AuditReport(name="recursion")
    for data in sorted(recursions, key=lambda item: item.k):
        if data.k not in delta_by_k or data.k + 1 not in delta_by_k:
            continue
        bound = data.h_matrix @ delta_by_k[data.k].as_array() + data.h_vector
        margin = bound - delta_by_k[data.k + 1].as_array()
        report.ks.append(data.k)
        report.margins.append(margin.tolist())
        for component, value in zip(COMPONENTS, margin):
            if value < -slack:
                report.violations.append((data.k, component, float(value)))
    logger.debug(
        "Recursion audit over %i rounds: %i violations.", len(report.ks), len(report.violations)
    )
    if strict and report.violations:
        k, component, margin = report.violations[0]
        err = RecursionViolated(k, component, margin)
        err.report = report
        raise err
    return report


def check_contraction(
    recursions: Sequence[RecursionData],
    delta_norms,
    slack: float = AUDIT_SLACK,
    advisory: bool = False,
) -> AuditReport:
    """Check the spectral condition and the norm contraction of the error vector.

    Per round ``rho(h_hat) < alpha_k`` and
    ``||Delta_{k+1}|| <= alpha_k ||Delta_k|| + Theta Gamma_{k-1}``.

    Parameters
    ----------
    recursions : Sequence[RecursionData]
        Recursion data of the audited rounds.
    delta_norms : Mapping[int, float] or Sequence[ErrorVector]
        Norms of the error vectors by round.
    slack : float, optional
        Allowed floating-point excess, by default 1e-8
    advisory : bool, optional
        Only report, never raise; used when ``gamma0`` exceeds the safe bound,
        by default False

    Returns
    -------
    AuditReport
        Margins ``[alpha_k - rho(h_hat), bound - ||Delta_{k+1}||]`` per round.

    Raises
    ------
    ContractionViolated
        If not ``advisory`` and a condition fails. The report is attached as ``report``.
    """
    norms = {
        k: value.norm if isinstance(value, ErrorVector) else float(value)
        for k, value in _by_k(delta_norms).items()
    }
    report = AuditReport(name="contraction", advisory=advisory)
    radii, dominated = [], True
    for data in sorted(recursions, key=lambda item: item.k):
        radius = data.spectral_radius
        radii.append(radius)
        dominated = dominated and data.dominated
        spectral_margin = data.alpha - radius
        margins = [spectral_margin]
        if data.k in norms and data.k + 1 in norms:
            bound = data.alpha * norms[data.k] + data.theta * data.gamma_cap
            margins.append(bound - norms[data.k + 1])
        report.ks.append(data.k)
        report.margins.append(margins)
        if not data.contracts:
            report.violations.append((data.k, "spectral", spectral_margin))
        if len(margins) > 1 and margins[1] < -slack:
            report.violations.append((data.k, "norm", margins[1]))
    report.extra = {
        "max_spectral_radius": max(radii) if radii else None,
        "dominated": dominated,
    }
    logger.debug(
        "Contraction audit over %i rounds: %i violations.", len(report.ks), len(report.violations)
    )
    if report.violations and not advisory:
        k, component, margin = report.violations[0]
        err = ContractionViolated(k, component, margin)
        err.report = report
        raise err
    return report


@dataclass
class ConvergenceSummary:
    """Final and smallest values of the log metrics and their late-trace slopes.

    A slope is None when fewer than two positive values fall in the last half of
    the trace; ``slopes_defined`` is then False.
    """

    rounds: int
    diverged_at: int | None
    final: dict[str, float] = field(default_factory=dict)
    minimum: dict[str, float] = field(default_factory=dict)
    slopes: dict[str, float | None] = field(default_factory=dict)

    @property
    def slopes_defined(self) -> bool:
        return bool(self.slopes) and all(slope is not None for slope in self.slopes.values())

    @property
    def trend_certified(self) -> bool:
        return self.slopes_defined and all(slope < 0 for slope in self.slopes.values())

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "diverged_at": self.diverged_at,
            "final": dict(self.final),
            "minimum": dict(self.minimum),
            "slopes": dict(self.slopes),
            "slopes_defined": self.slopes_defined,
            "trend_certified": self.trend_certified,
        }


def _log_metric(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(values)


def _late_slope(ks: np.ndarray, logs: np.ndarray) -> float | None:
    late = ks >= ks[-1] / 2
    mask = late & np.isfinite(logs)
    if np.count_nonzero(mask) < 2:
        return None
    return float(np.polyfit(ks[mask], logs[mask], 1)[0])


def summarize_convergence(trace: Trace) -> ConvergenceSummary:
    """Summarise ``ln ||F(x^k)||``, the relative log gap to ``x*`` and ``||Delta_k||``.

    Parameters
    ----------
    trace : Trace
        Recorded run, possibly diverged.

    Returns
    -------
    ConvergenceSummary
        Final values, minima and least-squares slopes over the last half of the trace.
    """
    summary = ConvergenceSummary(rounds=0, diverged_at=trace.diverged_at)
    if not len(trace):
        return summary
    ks = trace.column("k")
    summary.rounds = int(ks[-1])
    metrics = {"log_ne_residual": _log_metric(trace.column("ne_residual"))}
    if trace.with_gap:
        gap = trace.column(GAP_COLUMN)
        metrics["log_relative_gap"] = _log_metric(gap / gap[0]) if gap[0] > 0 else _log_metric(gap)
    if trace.with_delta:
        metrics["delta_norm"] = trace.column(DELTA_COLUMN)
    for name, values in metrics.items():
        finite = values[np.isfinite(values)]
        summary.final[name] = float(values[-1])
        summary.minimum[name] = float(finite.min()) if finite.size else float("nan")
        logs = values if name.startswith("log_") else _log_metric(values)
        summary.slopes[name] = _late_slope(ks, logs)
    return summary


class DeltaTracker:
    """Callable giving ``||Delta_k||`` of a solver state, caching the regularised solutions."""

    def __init__(self, game: AggregativeGame, schedule: StepSchedule, **solver_kwargs):
        self.game = game
        self.schedule = schedule
        self.solver_kwargs = solver_kwargs
        self._cache: dict[int, RegularizedSolution] = {}

    def solution(self, k: int) -> RegularizedSolution:
        if k not in self._cache:
            self._cache[k] = tikhonov_trajectory(
                self.game, self.schedule, [k], **self.solver_kwargs
            )[0]
        return self._cache[k]

    def error_vector(self, state: SolverState) -> ErrorVector:
        prev = self.solution(max(state.k - 1, 0))
        return compute_delta(state, self.game, self.schedule, prev)

    def __call__(self, state: SolverState) -> float:
        return self.error_vector(state).norm


@dataclass
class AuditResult:
    """Everything the audit of a recorded window produced."""

    deltas: list[ErrorVector]
    recursions: list[RecursionData]
    trajectory: TikhonovTrajectory
    recursion_report: AuditReport
    contraction_report: AuditReport


def audit_window(
    game: AggregativeGame,
    w: MixingMatrix,
    schedule: StepSchedule,
    x0,
    constants: GameConstants,
    window_end: int = 200,
    advisory: bool = False,
    strict: bool = True,
    **solver_kwargs,
) -> AuditResult:
    """Run rounds ``0 .. window_end + 1`` and audit rounds ``1 .. window_end``.

    ``C`` is the largest ``||grad g(x*_{eta_k})||`` over ``k = 0 .. window_end + 1``.

    Parameters
    ----------
    game : AggregativeGame
        The game.
    w : MixingMatrix
        Consensus weights.
    schedule : StepSchedule
        Step sizes.
    x0 : array_like
        Initial decisions.
    constants : GameConstants
        Game constants entering the recursion.
    window_end : int, optional
        Last audited round, by default 200
    advisory : bool, optional
        Report contraction failures without raising, by default False
    strict : bool, optional
        Raise on recursion violations, by default True
    **solver_kwargs
        Passed on to the regularised solver.

    Returns
    -------
    AuditResult
        Error vectors, recursion data and both reports.
    """
    if window_end < 1:
        raise ValidationError(f"window_end must be at least 1, got {window_end}.")
    trajectory = tikhonov_trajectory(game, schedule, range(window_end + 2), **solver_kwargs)
    c_const = trajectory.c_const
    logger.info("Auditing rounds 1..%i with C=%.4g.", window_end, c_const)

    deltas = []
    for state in iterate(game, w, schedule, x0, window_end + 1):
        prev = trajectory.solution_at(max(state.k - 1, 0))
        deltas.append(compute_delta(state, game, schedule, prev))
    recursions = [
        build_recursion(k, schedule, constants, w.rho, w.norm_w_minus_i, c_const)
        for k in range(1, window_end + 1)
    ]
    recursion_report = check_recursion(deltas, recursions, strict=strict)
    contraction_report = check_contraction(recursions, deltas, advisory=advisory)
    return AuditResult(
        deltas=deltas,
        recursions=recursions,
        trajectory=trajectory,
        recursion_report=recursion_report,
        contraction_report=contraction_report,
    )
