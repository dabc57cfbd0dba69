"""Seeded random games and initial points for tests and demos."""

from __future__ import annotations

import numpy as np

from aggne.game import QuadraticAggregativeGame, ev_game


def get_random_quadratic_game(
    n: int = 5,
    m: int = 3,
    seed: int = 42,
    c1_rank: int | None = None,
    coupling: float = 0.2,
) -> QuadraticAggregativeGame:
    """
    Generate a quadratic aggregative game with a monotone pseudo-gradient and a
    strongly convex social cost.

    Parameters
    ----------
    n : int, optional
        Number of players, by default 5
    m : int, optional
        Decision dimension, by default 3
    seed : int, optional
        Random seed for number generation, by default 42
    c1_rank : int, optional
        Rank of the price sensitivity ``C_1``. A rank below ``m`` gives a merely
        monotone game, by default None (full rank)
    coupling : float, optional
        Largest diagonal entry of the coupling matrices ``C_2i``, by default 0.2

    Returns
    -------
    QuadraticAggregativeGame
        Game with symmetric positive semidefinite ``C_1``, symmetric ``U`` with
        eigenvalues at least 1 and diagonal ``C_2i`` in ``[0, coupling]``, so that
        the social cost Hessian has eigenvalues at least ``1 - 2 * coupling``.
    """
    rng = np.random.default_rng(seed=seed)
    rank = m if c1_rank is None else c1_rank
    factor = rng.normal(scale=0.3, size=(m, rank))
    base = rng.normal(scale=0.5, size=(m, m))
    return ev_game(
        n=n,
        m=m,
        d=rng.uniform(0.5, 1.5, size=n),
        c1=factor @ factor.T,
        b1=rng.uniform(0.0, 0.3, size=m),
        u=base @ base.T + np.eye(m),
        c2=np.array([np.diag(rng.uniform(0.0, coupling, size=m)) for _ in range(n)]),
        b2=rng.uniform(0.0, 1.0, size=m),
    )


def get_random_decisions(n: int, m: int, seed: int = 42, scale: float = 1.0) -> np.ndarray:
    """Gaussian initial decisions of shape ``(n, m)``."""
    rng = np.random.default_rng(seed=seed)
    return rng.normal(scale=scale, size=(n, m))
