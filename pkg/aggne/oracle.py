"""Centralised reference solvers for regularised and optimal equilibria."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, solve

from aggne.game import (
    AggregativeGame,
    GameConstants,
    QuadraticAggregativeGame,
    estimate_constants,
    pseudo_gradient,
    regularized_map,
    social_gradient,
)
from aggne.solver import StepSchedule
from aggne.utils import logger
from aggne.utils.errors import NoConvergence, SingularKKT, ValidationError

KKT_CONSISTENCY_TOL = 1e-9
SAFEGUARD_GROWTH = 1e4


@dataclass(frozen=True, eq=False)
class RegularizedSolution:
    """Solution of ``F(x) + eta * grad g(x) = 0``.

    Parameters
    ----------
    eta : float
        Regularisation weight.
    x_star_eta : np.ndarray
        Stacked solution.
    residual : float
        ``||F(x) + eta * grad g(x)||`` at the solution.
    iterations_used : int
        Iterations of the fixed-point solver, 1 for a direct solve.
    grad_g_norm : float
        ``||grad g(x)||`` at the solution.
    method : str
        ``linear``, ``fixed_point`` or ``anderson``.
    """

    eta: float
    x_star_eta: np.ndarray
    residual: float
    iterations_used: int
    grad_g_norm: float
    method: str


@dataclass(frozen=True, eq=False)
class OptimalNE:
    """Minimiser of the social cost over the Nash equilibrium set and its multipliers."""

    x_star: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    least_squares: bool = False


def ne_residual(game: AggregativeGame, x) -> float:
    """Euclidean norm of the pseudo-gradient, zero exactly at Nash equilibria."""
    return float(np.linalg.norm(pseudo_gradient(game, x)))


def _anderson_step(f_hist: list[np.ndarray], g_hist: list[np.ndarray]) -> np.ndarray:
    # mix the fixed-point images with weights from the least-squares residual fit
    if len(f_hist) < 2:
        return g_hist[-1]
    delta_f = np.diff(np.stack(f_hist, axis=1), axis=1)
    delta_g = np.diff(np.stack(g_hist, axis=1), axis=1)
    theta = np.linalg.lstsq(delta_f, f_hist[-1], rcond=None)[0]
    return g_hist[-1] - delta_g @ theta


def _fixed_point(
    game: AggregativeGame,
    eta: float,
    tau: float,
    x0: np.ndarray,
    tol: float,
    max_iters: int,
    anderson_memory: int,
) -> tuple[np.ndarray, float, int]:
    x = x0
    residual_vec = regularized_map(game, x, eta)
    residual = float(np.linalg.norm(residual_vec))
    best = (x, residual)
    f_hist, g_hist = [], []
    for iteration in range(1, max_iters + 1):
        if residual <= tol:
            return x, residual, iteration - 1
        image = x - tau * residual_vec
        if anderson_memory > 0:
            f_hist.append(image - x)
            g_hist.append(image)
            if len(f_hist) > anderson_memory + 1:
                del f_hist[0], g_hist[0]
            x_next = _anderson_step(f_hist, g_hist)
        else:
            x_next = image
        residual_vec = regularized_map(game, x_next, eta)
        residual = float(np.linalg.norm(residual_vec))
        if anderson_memory > 0 and not residual <= SAFEGUARD_GROWTH * best[1]:
            logger.debug("Restarting Anderson history at iteration %i.", iteration)
            f_hist, g_hist = [], []
            x_next = best[0] - tau * regularized_map(game, best[0], eta)
            residual_vec = regularized_map(game, x_next, eta)
            residual = float(np.linalg.norm(residual_vec))
        x = x_next
        if residual < best[1]:
            best = (x, residual)
    if residual <= tol:
        return x, residual, max_iters
    raise NoConvergence(max_iters, best[1])


def solve_regularized_vi(
    game: AggregativeGame,
    eta: float,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    constants: GameConstants | None = None,
    method: str = "auto",
    anderson_memory: int = 0,
    x0=None,
) -> RegularizedSolution:
    """Solve ``F(x) + eta * grad g(x) = 0``.

    Parameters
    ----------
    game : AggregativeGame
        The game.
    eta : float
        Regularisation weight, positive.
    tol : float, optional
        Residual tolerance, by default 1e-10
    max_iters : int, optional
        Iteration limit of the fixed-point path, by default 100_000
    constants : GameConstants, optional
        Constants for the damping of the fixed-point path. Estimated for quadratic
        games when not given, by default None
    method : str, optional
        ``linear`` (quadratic games only), ``fixed_point`` or ``auto`` which picks
        ``linear`` for quadratic games, by default "auto"
    anderson_memory : int, optional
        History length of the Anderson acceleration of the fixed-point path,
        0 disables it, by default 0
    x0 : array_like, optional
        Starting point of the fixed-point path, by default zeros

    Returns
    -------
    RegularizedSolution
        The solution.

    Raises
    ------
    NoConvergence
        If the residual does not reach ``tol``.
    """
    if eta <= 0:
        raise ValidationError(f"eta must be positive, got {eta}.")
    if method == "auto":
        method = "linear" if isinstance(game, QuadraticAggregativeGame) else "fixed_point"
    if method not in {"linear", "fixed_point"}:
        raise ValidationError(f"Unknown method '{method}', use 'linear' or 'fixed_point'.")

    if method == "linear":
        if not isinstance(game, QuadraticAggregativeGame):
            raise ValidationError("The linear path needs a QuadraticAggregativeGame.")
        lhs = game.f_matrix + eta * game.u_matrix
        x = solve(lhs, game.d_vector - eta * game.b_vector)
        residual = float(np.linalg.norm(regularized_map(game, x, eta)))
        iterations = 1
        if residual > tol:
            raise NoConvergence(1, residual)
    else:
        if constants is None:
            if not isinstance(game, QuadraticAggregativeGame):
                raise ValidationError("The fixed-point path needs game constants.")
            constants = estimate_constants(game)
        tau = eta * constants.mu_g / constants.regularized_lipschitz(eta) ** 2
        start = np.zeros(game.dims.size) if x0 is None else game.dims.as_blocks(x0).reshape(-1)
        x, residual, iterations = _fixed_point(
            game, eta, tau, start, tol, max_iters, anderson_memory
        )
        if anderson_memory > 0:
            method = "anderson"

    logger.debug("Regularised solve eta=%.4g: %s, residual %.2e.", eta, method, residual)
    return RegularizedSolution(
        eta=float(eta),
        x_star_eta=x,
        residual=residual,
        iterations_used=iterations,
        grad_g_norm=float(np.linalg.norm(social_gradient(game, x))),
        method=method,
    )


def solve_kkt(u, b, f, d, strict: bool = False) -> OptimalNE:
    """Minimise ``0.5 x^T U x + b^T x`` subject to ``F x = d`` via the KKT system.

    Parameters
    ----------
    u : array_like
        Symmetric positive definite Hessian.
    b : array_like
        Linear term.
    f : array_like
        Constraint matrix, may be rank deficient.
    d : array_like
        Constraint right-hand side.
    strict : bool, optional
        Raise instead of falling back to least squares for a singular system,
        by default False

    Returns
    -------
    OptimalNE
        Minimiser and multipliers with ``U x + b + F^T lambda = 0``.

    Raises
    ------
    SingularKKT
        If the system is singular and ``strict`` is set, or if it is inconsistent.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    f = np.atleast_2d(np.asarray(f, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    n_var, n_con = u.shape[0], f.shape[0]
    kkt = np.block([[u, f.T], [f, np.zeros((n_con, n_con))]])
    rhs = np.concatenate([-b, d])

    least_squares = np.linalg.matrix_rank(kkt) < kkt.shape[0]
    if least_squares:
        if strict:
            raise SingularKKT("KKT matrix is singular: the constraint matrix is rank deficient.")
        solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        mismatch = float(np.linalg.norm(kkt @ solution - rhs))
        if mismatch > KKT_CONSISTENCY_TOL * max(1.0, float(np.linalg.norm(rhs))):
            raise SingularKKT(
                f"KKT system is inconsistent (least-squares mismatch {mismatch:.3e})."
            )
        logger.warning("Rank-deficient constraints; using the minimum-norm KKT solution.")
    else:
        try:
            solution = solve(kkt, rhs)
        except LinAlgError as err:
            raise SingularKKT(f"KKT solve failed: {err}") from err

    x, multipliers = solution[:n_var], solution[n_var:]
    kkt_residual = max(
        float(np.linalg.norm(f @ x - d)),
        float(np.linalg.norm(u @ x + b + f.T @ multipliers)),
    )
    return OptimalNE(
        x_star=x, multipliers=multipliers, kkt_residual=kkt_residual, least_squares=least_squares
    )


def solve_optimal_ne_qp(game: QuadraticAggregativeGame, strict: bool = False) -> OptimalNE:
    """Optimal Nash equilibrium of a quadratic game.

    Minimises the social cost Hessian form over ``{x : F x = d}``.
    """
    result = solve_kkt(game.u_matrix, game.b_vector, game.f_matrix, game.d_vector, strict=strict)
    logger.debug("Optimal NE found, KKT residual %.2e.", result.kkt_residual)
    return result


@dataclass
class TikhonovTrajectory(Sequence):
    """Regularised solutions at requested iterations and the drift between them.

    Behaves as the sequence of its `RegularizedSolution` objects.
    """

    ks: tuple[int, ...]
    solutions: list[RegularizedSolution]
    drifts: list[float] = field(default_factory=list)
    gamma_caps: list[float] = field(default_factory=list)

    def __getitem__(self, index):
        return self.solutions[index]

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def c_const(self) -> float:
        """Largest ``||grad g(x*_eta)||`` over the sampled solutions."""
        return max(sol.grad_g_norm for sol in self.solutions)

    def drift_bounds(self, mu_g: float) -> np.ndarray:
        """Upper bounds ``C / mu_g * Gamma`` on each consecutive drift."""
        return self.c_const / mu_g * np.asarray(self.gamma_caps, dtype=float)

    def solution_at(self, k: int) -> RegularizedSolution:
        return self.solutions[self.ks.index(k)]


def tikhonov_trajectory(
    game: AggregativeGame, schedule: StepSchedule, ks, tol: float = 1e-10, **solver_kwargs
) -> TikhonovTrajectory:
    """Regularised solutions ``x*_{eta_k}`` for ascending iteration indices ``ks``.

    Parameters
    ----------
    game : AggregativeGame
        The game.
    schedule : StepSchedule
        Provides ``eta_k``.
    ks : list of int
        Ascending, distinct iteration indices.
    tol : float, optional
        Residual tolerance of each solve, by default 1e-10
    **solver_kwargs
        Passed on to `solve_regularized_vi`.

    Returns
    -------
    TikhonovTrajectory
        Solutions, consecutive drifts and the matching ``Gamma`` factors.
    """
    ks = tuple(int(k) for k in ks)
    if not ks or any(k < 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValidationError(f"ks must be nonempty, nonnegative and strictly ascending: {ks}.")
    solutions = [
        solve_regularized_vi(game, float(schedule.eta(k)), tol=tol, **solver_kwargs) for k in ks
    ]
    trajectory = TikhonovTrajectory(ks=ks, solutions=solutions)
    for (k_prev, prev), (k, cur) in zip(zip(ks, solutions), zip(ks[1:], solutions[1:])):
        trajectory.drifts.append(float(np.linalg.norm(cur.x_star_eta - prev.x_star_eta)))
        trajectory.gamma_caps.append(float(schedule.gamma_cap(k, k_prev)))
    return trajectory
