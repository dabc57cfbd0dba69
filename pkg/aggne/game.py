"""Aggregative games: per-player partial gradients, stacked operators and constants."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import block_diag, eigvalsh, null_space, svdvals

from aggne.utils import logger
from aggne.utils.errors import (
    DimensionMismatch,
    GradientMismatch,
    NotStronglyConvex,
    ShapeMismatch,
    ValidationError,
)

FD_STEP = 1e-6
FD_RTOL = 1e-5


@dataclass(frozen=True)
class GameDims:
    """Number of players ``n_players`` and per-player decision dimension ``dim``."""

    n_players: int
    dim: int

    def __post_init__(self):
        if self.n_players < 1 or self.dim < 1:
            raise DimensionMismatch(
                f"Game dimensions must be positive, got N={self.n_players}, m={self.dim}."
            )

    @property
    def size(self) -> int:
        return self.n_players * self.dim

    def as_blocks(self, x) -> np.ndarray:
        """Reshape a stacked vector (or ``N x m`` array) into ``N x m`` blocks.

        Raises
        ------
        DimensionMismatch
            If ``x`` does not hold ``N * m`` values.
        """
        x = np.asarray(x, dtype=float)
        if x.size != self.size or (x.ndim == 2 and x.shape != (self.n_players, self.dim)):
            raise DimensionMismatch(
                f"Expected {self.n_players}x{self.dim} decisions, got shape {x.shape}."
            )
        return x.reshape(self.n_players, self.dim)


@dataclass(frozen=True)
class GameConstants:
    """Lipschitz and strong-convexity constants of a game.

    Parameters
    ----------
    l_f : float
        Lipschitz constant of F and of the two-argument stacked f-map.
    l_1 : float
        Lipschitz constant of the social gradient and its two-argument form.
    l_2 : float
        Lipschitz constant of the stacked second-argument g-gradient.
    mu_g : float
        Strong-convexity modulus of g.
    """

    l_f: float
    l_1: float
    l_2: float
    mu_g: float

    def __post_init__(self):
        if min(self.l_f, self.l_1, self.l_2) < 0:
            raise ValidationError(f"Lipschitz constants must be nonnegative: {self}")
        if self.mu_g <= 0:
            raise NotStronglyConvex(f"mu_g must be positive, got {self.mu_g}.")
        if self.mu_g > self.l_1 * (1 + 1e-12) + 1e-12:
            raise ValidationError(f"mu_g={self.mu_g} exceeds l_1={self.l_1}.")

    def regularized_lipschitz(self, eta: float) -> float:
        """Lipschitz constant ``L_F + eta * L_1`` of ``F + eta * grad g``."""
        return self.l_f + eta * self.l_1


class AggregativeGame(ABC):
    """Aggregative game seen through the partial gradients of each player's costs.

    Every callback maps ``(i, x_i, y)`` to a vector in R^m, where ``x_i`` is the
    decision of player ``i`` and ``y`` an estimate of the aggregate. The ``*_all``
    methods evaluate a callback for all players at once on ``N x m`` arrays;
    subclasses may override them with vectorised versions.
    """

    @property
    @abstractmethod
    def dims(self) -> GameDims: ...

    @abstractmethod
    def grad1_f(self, i: int, x_i: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def grad2_f(self, i: int, x_i: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def grad1_g(self, i: int, x_i: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def grad2_g(self, i: int, x_i: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    def f(self, i: int, x_i: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no scalar evaluator for f.")

    def g(self, i: int, x_i: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no scalar evaluator for g.")

    @property
    def has_scalar_costs(self) -> bool:
        return False

    def _stack(self, callback, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.stack([
            np.asarray(callback(i, x[i], y[i]), dtype=float) for i in range(self.dims.n_players)
        ])

    def grad1_f_all(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._stack(self.grad1_f, x, y)

    def grad2_f_all(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._stack(self.grad2_f, x, y)

    def grad1_g_all(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._stack(self.grad1_g, x, y)

    def grad2_g_all(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._stack(self.grad2_g, x, y)


class CallbackAggregativeGame(AggregativeGame):
    """Aggregative game assembled from user-supplied per-player callables.

    Parameters
    ----------
    dims : GameDims
        Number of players and decision dimension.
    grad1_f, grad2_f, grad1_g, grad2_g : callable
        Partial gradients ``(i, x_i, y) -> R^m``.
    f, g : callable, optional
        Scalar costs ``(i, x_i, y) -> float`` used for finite-difference checks,
        by default None
    """

    def __init__(
        self,
        dims: GameDims,
        grad1_f: Callable,
        grad2_f: Callable,
        grad1_g: Callable,
        grad2_g: Callable,
        f: Callable | None = None,
        g: Callable | None = None,
    ):
        self._dims = dims
        self._grad1_f = grad1_f
        self._grad2_f = grad2_f
        self._grad1_g = grad1_g
        self._grad2_g = grad2_g
        self._f = f
        self._g = g

    @property
    def dims(self) -> GameDims:
        return self._dims

    def grad1_f(self, i, x_i, y):
        return np.asarray(self._grad1_f(i, x_i, y), dtype=float)

    def grad2_f(self, i, x_i, y):
        return np.asarray(self._grad2_f(i, x_i, y), dtype=float)

    def grad1_g(self, i, x_i, y):
        return np.asarray(self._grad1_g(i, x_i, y), dtype=float)

    def grad2_g(self, i, x_i, y):
        return np.asarray(self._grad2_g(i, x_i, y), dtype=float)

    def f(self, i, x_i, y):
        if self._f is None:
            return super().f(i, x_i, y)
        return float(self._f(i, x_i, y))

    def g(self, i, x_i, y):
        if self._g is None:
            return super().g(i, x_i, y)
        return float(self._g(i, x_i, y))

    @property
    def has_scalar_costs(self) -> bool:
        return self._f is not None and self._g is not None


def zero_game(n_players: int, dim: int) -> CallbackAggregativeGame:
    """Game whose costs vanish identically; every point is a fixed point of the solver."""

    def zero(i, x_i, y):  # noqa: ARG001
        return np.zeros(dim)

    def zero_cost(i, x_i, y):  # noqa: ARG001
        return 0.0

    return CallbackAggregativeGame(
        GameDims(n_players, dim), zero, zero, zero, zero, f=zero_cost, g=zero_cost
    )


@dataclass(frozen=True, eq=False)
class QuadraticAggregativeGame(AggregativeGame):
    """Quadratic aggregative game of the electric-vehicle charging family.

    Player ``i`` has the cost
    ``f_i(x_i, y) = 0.5 (1^T x_i - d_i)^2 + (C_1 y + b_1)^T x_i``
    (load curtailment plus energy payment at price ``p(y) = C_1 y + b_1``) and the
    social cost contribution
    ``g_i(x_i, y) = 0.5 x_i^T U x_i + (C_2i y + b_2)^T x_i``.

    Parameters
    ----------
    d : np.ndarray
        Desired demands, one per player.
    c1 : np.ndarray
        Price sensitivity ``C_1`` (m x m).
    b1 : np.ndarray
        Base price ``b_1``.
    u : np.ndarray
        Social quadratic weight ``U`` (symmetrised internally).
    c2 : np.ndarray
        Coupling matrices ``C_2i``, shape ``(N, m, m)``.
    b2 : np.ndarray
        Social linear term ``b_2``.
    """

    d: np.ndarray
    c1: np.ndarray
    b1: np.ndarray
    u: np.ndarray
    c2: np.ndarray
    b2: np.ndarray
    _dims: GameDims = field(init=False, repr=False)

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        n, m = d.shape[0], np.atleast_1d(np.asarray(self.b1, dtype=float)).shape[0]
        arrays = {
            "d": (d, (n,)),
            "c1": (np.asarray(self.c1, dtype=float), (m, m)),
            "b1": (np.atleast_1d(np.asarray(self.b1, dtype=float)), (m,)),
            "u": (np.asarray(self.u, dtype=float), (m, m)),
            "c2": (np.asarray(self.c2, dtype=float), (n, m, m)),
            "b2": (np.atleast_1d(np.asarray(self.b2, dtype=float)), (m,)),
        }
        for name, (value, shape) in arrays.items():
            if value.shape != shape:
                raise ShapeMismatch(f"'{name}' has shape {value.shape}, expected {shape}.")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "_dims", GameDims(n, m))

    @property
    def dims(self) -> GameDims:
        return self._dims

    @property
    def u_sym(self) -> np.ndarray:
        return 0.5 * (self.u + self.u.T)

    # per-player callbacks
    def grad1_f(self, i, x_i, y):
        return np.full(self.dims.dim, np.sum(x_i) - self.d[i]) + self.c1 @ y + self.b1

    def grad2_f(self, i, x_i, y):  # noqa: ARG002
        return self.c1.T @ x_i

    def grad1_g(self, i, x_i, y):
        return self.u_sym @ x_i + self.c2[i] @ y + self.b2

    def grad2_g(self, i, x_i, y):  # noqa: ARG002
        return self.c2[i].T @ x_i

    def f(self, i, x_i, y):
        x_i = np.asarray(x_i, dtype=float)
        return float(0.5 * (np.sum(x_i) - self.d[i]) ** 2 + (self.c1 @ y + self.b1) @ x_i)

    def g(self, i, x_i, y):
        x_i = np.asarray(x_i, dtype=float)
        return float(0.5 * x_i @ self.u @ x_i + (self.c2[i] @ y + self.b2) @ x_i)

    @property
    def has_scalar_costs(self) -> bool:
        return True

    # vectorised stacked callbacks on N x m arrays
    def grad1_f_all(self, x, y):
        return (x.sum(axis=1) - self.d)[:, None] + y @ self.c1.T + self.b1

    def grad2_f_all(self, x, y):  # noqa: ARG002
        return x @ self.c1

    def grad1_g_all(self, x, y):
        return x @ self.u_sym.T + np.einsum("ijk,ik->ij", self.c2, y) + self.b2

    def grad2_g_all(self, x, y):  # noqa: ARG002
        return np.einsum("ikj,ik->ij", self.c2, x)

    # stacked matrices
    @property
    def f_matrix(self) -> np.ndarray:
        """Matrix ``F`` with ``F(x) = F x - d`` for the stacked pseudo-gradient.

        Equals ``I_N kron 1 1^T + (I_N + 1 1^T) kron C_1 / N`` for symmetric ``C_1``.
        """
        n, m = self.dims.n_players, self.dims.dim
        ones = np.ones((m, m))
        return (
            np.kron(np.eye(n), ones + self.c1.T / n) + np.kron(np.ones((n, n)), self.c1 / n)
        )

    @property
    def d_vector(self) -> np.ndarray:
        n = self.dims.n_players
        return np.kron(self.d, np.ones(self.dims.dim)) - np.kron(np.ones(n), self.b1)

    @property
    def u_matrix(self) -> np.ndarray:
        """Hessian of the social cost ``g``.

        Block ``(i, j)`` is ``delta_ij sym(U) + (C_2i + C_2j^T) / N``, the symmetric
        part of ``I_N kron U + (2 / N)(1 1^T kron I_m) blockdiag(C_2)`` whenever the
        ``C_2i`` are symmetric.
        """
        n, m = self.dims.n_players, self.dims.dim
        left = block_diag(*self.c2) @ np.kron(np.ones((n, n)), np.eye(m))
        return np.kron(np.eye(n), self.u_sym) + (left + left.T) / n

    @property
    def b_vector(self) -> np.ndarray:
        return np.kron(np.ones(self.dims.n_players), self.b2)

    def social_cost(self, x) -> float:
        """Social cost ``g(x) = sum_i g_i(x_i, x_bar)``."""
        x = self.dims.as_blocks(x)
        x_bar = x.mean(axis=0)
        return float(sum(self.g(i, x[i], x_bar) for i in range(self.dims.n_players)))

    def jacobian_blocks(self) -> dict[str, np.ndarray]:
        """Jacobians of the two-argument stacked maps with respect to ``x`` and ``y``.

        Returns
        -------
        dict
            ``f_x``, ``f_y`` for ``grad_1 f(x, y) + grad_2 f(x, y) / N`` and
            ``g_x``, ``g_y`` for ``grad_1 g(x, y) + (1 1^T / N kron I) grad_2 g(x, y)``.
        """
        n, m = self.dims.n_players, self.dims.dim
        c2_t = block_diag(*(c.T for c in self.c2))
        return {
            "f_x": np.kron(np.eye(n), np.ones((m, m)) + self.c1.T / n),
            "f_y": np.kron(np.eye(n), self.c1),
            "g_x": np.kron(np.eye(n), self.u_sym) + np.kron(np.ones((n, n)), np.eye(m)) @ c2_t / n,
            "g_y": block_diag(*self.c2),
        }


def ev_game(n: int, m: int, d, c1, b1, u, c2, b2) -> QuadraticAggregativeGame:
    """Electric-vehicle charging game with affine energy price.

    Parameters
    ----------
    n : int
        Number of vehicles (players).
    m : int
        Number of time instants.
    d : array_like
        Desired energy demand per vehicle, length ``n``.
    c1 : array_like
        Price sensitivity, ``m x m``.
    b1 : array_like
        Base price, length ``m``.
    u : array_like
        Social quadratic weight, ``m x m``.
    c2 : array_like
        Per-vehicle coupling matrices, ``n x m x m``.
    b2 : array_like
        Social linear term, length ``m``.

    Returns
    -------
    QuadraticAggregativeGame
        The game.

    Raises
    ------
    ShapeMismatch
        If any parameter does not match ``(n, m)``.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    b1 = np.atleast_1d(np.asarray(b1, dtype=float))
    if d.shape != (n,) or b1.shape != (m,):
        raise ShapeMismatch(f"Demands {d.shape} / base price {b1.shape} do not match n={n}, m={m}.")
    c1 = np.asarray(c1, dtype=float)
    u = np.asarray(u, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if c1.shape != (m, m) or u.shape != (m, m) or c2.shape != (n, m, m):
        raise ShapeMismatch(
            f"Matrix shapes c1={c1.shape}, u={u.shape}, c2={c2.shape} do not match n={n}, m={m}."
        )
    return QuadraticAggregativeGame(d=d, c1=c1, b1=b1, u=u, c2=c2, b2=b2)


EV_C2_DIAGONAL = [0.1, 0.2, 0.3, 0.2, 0.3, 0.2, 0.4, 0.3, 0.1, 0.4, 0.1, 0.2, 0.1, 0.1, 0.1]


def paper_ev_game() -> QuadraticAggregativeGame:
    """Five vehicles over three time instants with price ``0.15 x_bar`` at instant one
    and the flat price ``0.15`` at instants two and three.

    The game is merely monotone; its Nash equilibria form an affine set.
    """
    n, m = 5, 3
    c2 = np.array([np.diag(EV_C2_DIAGONAL[m * i : m * (i + 1)]) for i in range(n)])
    return ev_game(
        n=n,
        m=m,
        d=[1.0, 0.5, 0.8, 0.9, 0.6],
        c1=np.diag([0.15, 0.0, 0.0]),
        b1=[0.0, 0.15, 0.15],
        u=np.diag([3.0, 4.0, 2.0]),
        c2=c2,
        b2=0.5 * np.ones(m),
    )


def pseudo_gradient(game: AggregativeGame, x) -> np.ndarray:
    """Stacked pseudo-gradient ``F(x)``.

    Component ``i`` is ``grad_1 f_i(x_i, x_bar) + grad_2 f_i(x_i, x_bar) / N``.

    Parameters
    ----------
    game : AggregativeGame
        The game.
    x : array_like
        Stacked decisions of length ``N * m`` (or an ``N x m`` array).

    Returns
    -------
    np.ndarray
        Stacked vector of length ``N * m``.
    """
    blocks = game.dims.as_blocks(x)
    n = game.dims.n_players
    y = np.broadcast_to(blocks.mean(axis=0), blocks.shape)
    out = game.grad1_f_all(blocks, y) + game.grad2_f_all(blocks, y) / n
    return out.reshape(-1)


def social_gradient(game: AggregativeGame, x) -> np.ndarray:
    """Stacked gradient of the social cost ``g(x) = sum_i g_i(x_i, x_bar)``.

    Component ``i`` is ``grad_1 g_i(x_i, x_bar) + (1/N) sum_j grad_2 g_j(x_j, x_bar)``.
    """
    blocks = game.dims.as_blocks(x)
    y = np.broadcast_to(blocks.mean(axis=0), blocks.shape)
    out = game.grad1_g_all(blocks, y) + game.grad2_g_all(blocks, y).mean(axis=0)
    return out.reshape(-1)


def regularized_map(game: AggregativeGame, x, eta: float) -> np.ndarray:
    """``F(x) + eta * grad g(x)``."""
    return pseudo_gradient(game, x) + eta * social_gradient(game, x)


def estimate_constants(game: QuadraticAggregativeGame) -> GameConstants:
    """Exact Lipschitz and strong-convexity constants of a quadratic game.

    Parameters
    ----------
    game : QuadraticAggregativeGame
        The game.

    Returns
    -------
    GameConstants
        Spectral norms of the stacked Jacobians and ``mu_g = lambda_min(U)``.

    Raises
    ------
    NotStronglyConvex
        If the social cost Hessian is not positive definite.
    """
    blocks = game.jacobian_blocks()
    l_f = max(
        svdvals(game.f_matrix)[0],
        svdvals(np.hstack([blocks["f_x"], blocks["f_y"]]))[0],
    )
    l_1 = max(
        svdvals(game.u_matrix)[0],
        svdvals(np.hstack([blocks["g_x"], blocks["g_y"]]))[0],
    )
    l_2 = svdvals(block_diag(*(c.T for c in game.c2)))[0]
    mu_g = eigvalsh(game.u_matrix)[0]
    if mu_g <= 0:
        raise NotStronglyConvex(f"Social cost is not strongly convex: lambda_min(U)={mu_g:.3e}.")
    constants = GameConstants(l_f=float(l_f), l_1=float(l_1), l_2=float(l_2), mu_g=float(mu_g))
    logger.debug("Estimated game constants: %s", constants)
    return constants


def ne_set_basis(
    game: QuadraticAggregativeGame, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray]:
    """Affine description ``X* = {x_p + Z t}`` of the Nash equilibrium set.

    Returns
    -------
    x_p : np.ndarray
        Minimum-norm equilibrium.
    basis : np.ndarray
        Orthonormal basis of the nullspace of ``F`` (columns), possibly empty.
    """
    x_p = np.linalg.lstsq(game.f_matrix, game.d_vector, rcond=None)[0]
    return x_p, null_space(game.f_matrix, rcond=tol)


def player_slice(game: QuadraticAggregativeGame, x, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Set ``S_i`` of decisions of player ``i`` completing ``x_{-i}`` to an equilibrium.

    Parameters
    ----------
    game : QuadraticAggregativeGame
        The game.
    x : array_like
        Stacked decisions; only the blocks of the other players are used.
    i : int
        Player index.

    Returns
    -------
    point : np.ndarray
        A decision of player ``i`` in ``S_i`` (least-squares if ``S_i`` is empty).
    basis : np.ndarray
        Orthonormal basis of the directions of ``S_i``.
    """
    m = game.dims.dim
    blocks = game.dims.as_blocks(x).reshape(-1).copy()
    cols = slice(i * m, (i + 1) * m)
    f_mat = game.f_matrix
    blocks[cols] = 0.0
    rhs = game.d_vector - f_mat @ blocks
    point = np.linalg.lstsq(f_mat[:, cols], rhs, rcond=None)[0]
    return point, null_space(f_mat[:, cols])


@dataclass
class GradientReport:
    """Maximum relative deviation between finite differences and each gradient callback."""

    trials: int
    max_deviation: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(dev <= FD_RTOL for dev in self.max_deviation.values())


def _central_difference(func, point: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(point)
    for c in range(point.size):
        shift = np.zeros_like(point)
        shift[c] = step
        grad[c] = (func(point + shift) - func(point - shift)) / (2 * step)
    return grad


def check_gradients(game: AggregativeGame, trials: int = 20, seed: int = 42) -> GradientReport:
    """Compare gradient callbacks with central finite differences of the scalar costs.

    Parameters
    ----------
    game : AggregativeGame
        Game with scalar evaluators ``f`` and ``g``.
    trials : int, optional
        Number of random points, by default 20
    seed : int, optional
        Seed of the random points, by default 42

    Returns
    -------
    GradientReport
        Maximum relative deviation per callback.

    Raises
    ------
    GradientMismatch
        If a relative deviation exceeds 1e-5.
    """
    if not game.has_scalar_costs:
        raise NotImplementedError(f"{type(game).__name__} has no scalar evaluators.")
    rng = np.random.default_rng(seed)
    dims = game.dims
    report = GradientReport(trials=trials)
    checks = {
        "grad1_f": (game.f, game.grad1_f, 1),
        "grad2_f": (game.f, game.grad2_f, 2),
        "grad1_g": (game.g, game.grad1_g, 1),
        "grad2_g": (game.g, game.grad2_g, 2),
    }
    report.max_deviation = dict.fromkeys(checks, 0.0)
    for _ in range(trials):
        i = int(rng.integers(dims.n_players))
        x_i = rng.standard_normal(dims.dim)
        y = rng.standard_normal(dims.dim)
        for name, (cost, grad, argument) in checks.items():
            if argument == 1:
                numeric = _central_difference(lambda z, c=cost: c(i, z, y), x_i, FD_STEP)
            else:
                numeric = _central_difference(lambda z, c=cost: c(i, x_i, z), y, FD_STEP)
            analytic = np.asarray(grad(i, x_i, y), dtype=float)
            scale = max(1.0, float(np.linalg.norm(analytic)))
            deviation = float(np.linalg.norm(numeric - analytic)) / scale
            report.max_deviation[name] = max(report.max_deviation[name], deviation)
            if deviation > FD_RTOL:
                raise GradientMismatch(i, name, deviation)
    logger.debug("Gradient check over %i trials: %s", trials, report.max_deviation)
    return report
