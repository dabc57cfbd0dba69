"""Experiment configuration: parsing, validation and canonical emission."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from yamlinclude import YamlIncludeConstructor

from aggne.game import QuadraticAggregativeGame, ev_game, paper_ev_game
from aggne.graph import Topology, random_connected_topology
from aggne.solver import StepSchedule
from aggne.utils import logger
from aggne.utils.errors import ParseError, ValidationError

GAME_BUILTINS = ("ev_paper",)
SCHEDULE_PRESETS = {"paper": StepSchedule.paper}
TOP_LEVEL_KEYS = (
    "game",
    "graph",
    "schedule",
    "x0",
    "max_iters",
    "record_every",
    "attach_oracle",
    "diagnostics",
    "allow_unsafe_gamma0",
    "output_path",
    "record_decisions",
)
REQUIRED_KEYS = ("game", "graph", "schedule", "max_iters")
QUADRATIC_KEYS = ("n", "m", "d", "c1", "b1", "u", "c2", "b2")


def _check_keys(mapping, allowed, location: str, required=()) -> None:
    if not isinstance(mapping, dict):
        raise ParseError(f"Expected a mapping, got {type(mapping).__name__}.", location)
    for key in mapping:
        if key not in allowed:
            raise ParseError(f"Unknown key '{key}', allowed are {list(allowed)}.", location)
    for key in required:
        if key not in mapping:
            raise ParseError(f"Missing required key '{key}'.", location)


def _number(value, location: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"Expected a number, got {value!r}.", location)
    return float(value)


def _integer(value, location: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"Expected an integer, got {value!r}.", location)
    if value < minimum:
        raise ValidationError(f"{location}: must be at least {minimum}, got {value}.")
    return value


def _flag(value, location: str) -> bool:
    if not isinstance(value, bool):
        raise ParseError(f"Expected true or false, got {value!r}.", location)
    return value


def _array(value, shape: tuple[int, ...], location: str) -> tuple:
    try:
        array = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as err:
        raise ParseError(f"Expected a numeric array: {err}", location) from err
    if array.shape != shape:
        raise ValidationError(f"{location}: expected shape {shape}, got {array.shape}.")
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{location}: values must be finite.")
    return _to_tuple(array)


def _to_tuple(array: np.ndarray):
    if array.ndim == 0:
        return float(array)
    return tuple(_to_tuple(item) for item in array)


def _to_list(value):
    if isinstance(value, tuple):
        return [_to_list(item) for item in value]
    return value


@dataclass(frozen=True)
class QuadraticGameConfig:
    """Parameters of a quadratic aggregative game, stored as nested tuples."""

    n: int
    m: int
    d: tuple
    c1: tuple
    b1: tuple
    u: tuple
    c2: tuple
    b2: tuple

    @classmethod
    def from_dict(cls, raw: dict, location: str = "game.quadratic") -> QuadraticGameConfig:
        _check_keys(raw, QUADRATIC_KEYS, location, required=QUADRATIC_KEYS)
        n = _integer(raw["n"], f"{location}.n", minimum=1)
        m = _integer(raw["m"], f"{location}.m", minimum=1)
        shapes = {"d": (n,), "c1": (m, m), "b1": (m,), "u": (m, m), "c2": (n, m, m), "b2": (m,)}
        arrays = {
            name: _array(raw[name], shape, f"{location}.{name}") for name, shape in shapes.items()
        }
        return cls(n=n, m=m, **arrays)

    def build(self) -> QuadraticAggregativeGame:
        return ev_game(
            self.n, self.m, *(np.array(getattr(self, name)) for name in QUADRATIC_KEYS[2:])
        )

    def to_dict(self) -> dict:
        return {name: _to_list(getattr(self, name)) for name in QUADRATIC_KEYS}


@dataclass(frozen=True)
class GameConfig:
    """Either a builtin game name or explicit quadratic parameters."""

    builtin: str | None = None
    quadratic: QuadraticGameConfig | None = None

    def __post_init__(self):
        if (self.builtin is None) == (self.quadratic is None):
            raise ValidationError("game: give exactly one of 'builtin' or 'quadratic'.")
        if self.builtin is not None and self.builtin not in GAME_BUILTINS:
            raise ValidationError(
                f"game.builtin: unknown game '{self.builtin}', choose from {list(GAME_BUILTINS)}."
            )

    @classmethod
    def from_dict(cls, raw) -> GameConfig:
        _check_keys(raw, ("builtin", "quadratic"), "game")
        if "quadratic" in raw:
            if "builtin" in raw:
                raise ValidationError("game: give exactly one of 'builtin' or 'quadratic'.")
            return cls(quadratic=QuadraticGameConfig.from_dict(raw["quadratic"]))
        if not isinstance(raw.get("builtin"), str):
            raise ParseError("Expected 'builtin: <name>' or 'quadratic: {...}'.", "game")
        return cls(builtin=raw["builtin"])

    def build(self) -> QuadraticAggregativeGame:
        if self.builtin == "ev_paper":
            return paper_ev_game()
        return self.quadratic.build()

    @property
    def n_players(self) -> int:
        return self.build().dims.n_players if self.quadratic is None else self.quadratic.n

    def to_dict(self) -> dict:
        if self.builtin is not None:
            return {"builtin": self.builtin}
        return {"quadratic": self.quadratic.to_dict()}


@dataclass(frozen=True)
class GraphConfig:
    """Communication graph: ``complete``, an explicit edge list or a seeded random draw."""

    kind: str
    edges: tuple | None = None
    n: int | None = None
    edge_prob: float | None = None
    seed: int | None = None

    @classmethod
    def from_dict(cls, raw) -> GraphConfig:
        if raw == "complete":
            return cls(kind="complete")
        _check_keys(raw, ("edges", "random"), "graph")
        if len(raw) != 1:
            raise ParseError("Expected exactly one of 'complete', 'edges' or 'random'.", "graph")
        if "edges" in raw:
            edges = raw["edges"]
            if not isinstance(edges, list) or not all(
                isinstance(edge, list) and len(edge) == 2 for edge in edges
            ):
                raise ParseError("Expected a list of [i, j] pairs.", "graph.edges")
            return cls(
                kind="edges",
                edges=tuple(
                    (_integer(i, "graph.edges"), _integer(j, "graph.edges")) for i, j in edges
                ),
            )
        random = raw["random"]
        keys = ("n", "edge_prob", "seed")
        _check_keys(random, keys, "graph.random", required=keys)
        return cls(
            kind="random",
            n=_integer(random["n"], "graph.random.n", minimum=2),
            edge_prob=_number(random["edge_prob"], "graph.random.edge_prob"),
            seed=_integer(random["seed"], "graph.random.seed"),
        )

    def build(self, n_players: int) -> Topology:
        if self.kind == "complete":
            return Topology.complete(n_players)
        if self.kind == "edges":
            return Topology.from_edge_list(n_players, self.edges)
        if self.n != n_players:
            raise ValidationError(
                f"graph.random.n: {self.n} nodes do not match the {n_players} players."
            )
        return random_connected_topology(self.n, self.edge_prob, self.seed)

    def to_dict(self):
        if self.kind == "complete":
            return "complete"
        if self.kind == "edges":
            return {"edges": [list(edge) for edge in self.edges]}
        return {"random": {"n": self.n, "edge_prob": self.edge_prob, "seed": self.seed}}


@dataclass(frozen=True)
class DiagnosticsConfig:
    enabled: bool = False
    window_end: int = 200

    @classmethod
    def from_dict(cls, raw) -> DiagnosticsConfig:
        _check_keys(raw, ("enabled", "window_end"), "diagnostics")
        return cls(
            enabled=_flag(raw.get("enabled", False), "diagnostics.enabled"),
            window_end=_integer(raw.get("window_end", 200), "diagnostics.window_end", minimum=1),
        )

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "window_end": self.window_end}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run.

    Parameters
    ----------
    game : GameConfig
        Game definition.
    graph : GraphConfig
        Communication graph.
    schedule : StepSchedule
        Step sizes.
    max_iters : int
        Number of rounds, 0 records the initial metrics only.
    schedule_preset : str, optional
        Name of the preset the schedule came from, by default None
    x0 : str or tuple, optional
        ``zeros`` or explicit ``N x m`` decisions, by default "zeros"
    record_every : int, optional
        Trace recording period, by default 100
    attach_oracle : bool, optional
        Solve for the optimal equilibrium and record the gap to it, by default False
    diagnostics : DiagnosticsConfig, optional
        Audit settings, by default disabled
    allow_unsafe_gamma0 : bool, optional
        Run even if the schedule breaks the decay rules or ``gamma0`` exceeds the
        safe bound, by default False
    output_path : str, optional
        Output directory, by default None
    record_decisions : bool, optional
        Store the decisions of every trace row, by default False
    """

    game: GameConfig
    graph: GraphConfig
    schedule: StepSchedule
    max_iters: int
    schedule_preset: str | None = None
    x0: str | tuple = "zeros"
    record_every: int = 100
    attach_oracle: bool = False
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    allow_unsafe_gamma0: bool = False
    output_path: str | None = None
    record_decisions: bool = False
    config_path: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.schedule.check(allow_unsafe=self.allow_unsafe_gamma0)

    @classmethod
    def from_dict(cls, raw, config_path: Path | None = None) -> ExperimentConfig:
        _check_keys(raw, TOP_LEVEL_KEYS, "<root>", required=REQUIRED_KEYS)
        game = GameConfig.from_dict(raw["game"])
        n_players = game.n_players
        m = game.build().dims.dim

        schedule_raw, preset = raw["schedule"], None
        if isinstance(schedule_raw, str):
            if schedule_raw not in SCHEDULE_PRESETS:
                raise ParseError(
                    f"Unknown schedule preset '{schedule_raw}', choose from "
                    f"{list(SCHEDULE_PRESETS)}.",
                    "schedule",
                )
            preset, schedule = schedule_raw, SCHEDULE_PRESETS[schedule_raw]()
        else:
            keys = ("gamma0", "a", "eta0", "b")
            _check_keys(schedule_raw, keys, "schedule", required=keys)
            schedule = StepSchedule(**{
                key: _number(schedule_raw[key], f"schedule.{key}") for key in keys
            })

        x0 = raw.get("x0", "zeros")
        if x0 != "zeros":
            try:
                values = np.asarray(x0, dtype=float)
            except (TypeError, ValueError) as err:
                raise ParseError(f"Expected 'zeros' or a numeric array: {err}", "x0") from err
            if values.size == n_players * m:
                values = values.reshape(n_players, m)
            x0 = _array(values, (n_players, m), "x0")

        output_path = raw.get("output_path")
        if output_path is not None and not isinstance(output_path, str):
            raise ParseError(f"Expected a path string, got {output_path!r}.", "output_path")

        config = cls(
            game=game,
            graph=GraphConfig.from_dict(raw["graph"]),
            schedule=schedule,
            schedule_preset=preset,
            x0=x0,
            max_iters=_integer(raw["max_iters"], "max_iters"),
            record_every=_integer(raw.get("record_every", 100), "record_every", minimum=1),
            attach_oracle=_flag(raw.get("attach_oracle", False), "attach_oracle"),
            diagnostics=DiagnosticsConfig.from_dict(raw.get("diagnostics", {})),
            allow_unsafe_gamma0=_flag(
                raw.get("allow_unsafe_gamma0", False), "allow_unsafe_gamma0"
            ),
            output_path=output_path,
            record_decisions=_flag(raw.get("record_decisions", False), "record_decisions"),
            config_path=config_path,
        )
        config.graph.build(n_players)
        return config

    @classmethod
    def load_config(cls, path: Path | str) -> ExperimentConfig:
        """Read a YAML config; ``!include`` paths are relative to its directory."""
        path = Path(path)
        if not path.exists():
            raise ParseError(f"Config at {path} does not exist.", str(path))
        YamlIncludeConstructor.add_to_loader_class(
            loader_class=yaml.SafeLoader, base_dir=path.parent
        )
        config = parse_config(path.read_text(), config_path=path)
        logger.debug("Loaded config %s", path)
        return config

    @property
    def x0_array(self) -> np.ndarray:
        dims = self.game.build().dims
        if self.x0 == "zeros":
            return np.zeros((dims.n_players, dims.dim))
        return np.array(self.x0, dtype=float)

    def to_dict(self) -> dict:
        schedule = self.schedule_preset or {
            "gamma0": self.schedule.gamma0,
            "a": self.schedule.a,
            "eta0": self.schedule.eta0,
            "b": self.schedule.b,
        }
        return {
            "game": self.game.to_dict(),
            "graph": self.graph.to_dict(),
            "schedule": schedule,
            "x0": _to_list(self.x0),
            "max_iters": self.max_iters,
            "record_every": self.record_every,
            "attach_oracle": self.attach_oracle,
            "diagnostics": self.diagnostics.to_dict(),
            "allow_unsafe_gamma0": self.allow_unsafe_gamma0,
            "output_path": self.output_path,
            "record_decisions": self.record_decisions,
        }


def parse_config(text: str, config_path: Path | None = None) -> ExperimentConfig:
    """Parse and validate a YAML experiment config.

    Parameters
    ----------
    text : str
        YAML document.
    config_path : Path, optional
        File the document came from, by default None

    Returns
    -------
    ExperimentConfig
        Validated config with defaults applied.

    Raises
    ------
    ParseError
        If the document is malformed or has unknown or missing keys.
    ValidationError
        If a value breaks an invariant.
    """
    try:
        raw = yaml.load(text, Loader=yaml.SafeLoader)  # noqa: S506
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        location = f"{mark.line + 1}:{mark.column + 1}" if mark is not None else None
        raise ParseError(f"Malformed YAML: {getattr(err, 'problem', err)}", location) from err
    if raw is None:
        raise ParseError("Config is empty.")
    return ExperimentConfig.from_dict(raw, config_path=config_path)


def emit_config(config: ExperimentConfig) -> str:
    """Canonical YAML text of ``config``; `parse_config` reads it back to an equal config."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical emission of ``config``."""
    return hashlib.sha256(emit_config(config).encode()).hexdigest()
