"""Unit test script for the functions in cli/config.py."""

from __future__ import annotations

import tempfile
import unittest
from pathlib import Path

import numpy as np
import yaml
from testfixtures import LogCapture

from aggne.cli.config import ExperimentConfig, config_hash, emit_config, parse_config
from aggne.utils import logger, set_log_level
from aggne.utils.errors import (
    DimensionMismatch,
    ParseError,
    ValidationError,
)

set_log_level(logger, "DEBUG")

CONFIGS = Path(__file__).parents[3] / "configs"

MINIMAL = """
game:
  builtin: ev_paper
graph: complete
schedule: paper
max_iters: 10
"""


def with_lines(*lines: str) -> str:
    return MINIMAL + "\n".join(lines) + "\n"


class ExampleConfigTestCase(unittest.TestCase):
    """Test class for the shipped example configs."""

    def test_paper(self):
        config = ExperimentConfig.load_config(CONFIGS / "ev_paper.yaml")
        self.assertEqual(config.game.builtin, "ev_paper")
        self.assertEqual(config.schedule_preset, "paper")
        self.assertTrue(config.diagnostics.enabled)
        self.assertEqual(config.graph.build(5).n, 5)
        self.assertEqual(config.config_path, CONFIGS / "ev_paper.yaml")

    def test_include(self):
        config = ExperimentConfig.load_config(CONFIGS / "ev_quadratic.yaml")
        game = config.game.build()
        self.assertEqual((game.dims.n_players, game.dims.dim), (3, 2))
        np.testing.assert_allclose(game.d, [1.0, 0.6, 0.8])
        self.assertEqual(config.x0_array.shape, (3, 2))

    def test_round_trip(self):
        for name in ("ev_paper.yaml", "ev_quadratic.yaml"):
            with self.subTest(name=name):
                config = ExperimentConfig.load_config(CONFIGS / name)
                self.assertEqual(parse_config(emit_config(config)), config)


class ParseConfigTestCase(unittest.TestCase):
    """Test class for parse_config."""

    def test_defaults(self):
        config = parse_config(MINIMAL)
        self.assertEqual(config.x0, "zeros")
        self.assertEqual(config.record_every, 100)
        self.assertFalse(config.attach_oracle)
        self.assertFalse(config.diagnostics.enabled)
        self.assertEqual(config.diagnostics.window_end, 200)
        self.assertIsNone(config.output_path)
        np.testing.assert_array_equal(config.x0_array, np.zeros((5, 3)))

    def test_round_trip_explicit(self):
        text = with_lines(
            "x0: " + str(np.arange(15.0).tolist()),
            "diagnostics: {enabled: true, window_end: 30}",
            "output_path: out/run",
        )
        explicit = "schedule: {gamma0: 0.001, a: 0.55, eta0: 0.2, b: 0.3}"
        config = parse_config(text.replace("schedule: paper", explicit))
        self.assertEqual(np.asarray(config.x0).shape, (5, 3))
        self.assertIsNone(config.schedule_preset)
        self.assertEqual(parse_config(emit_config(config)), config)

    def test_unknown_key(self):
        with self.assertRaises(ParseError) as ctx:
            parse_config(with_lines("momentum: 0.9"))
        self.assertIn("momentum", str(ctx.exception))
        self.assertEqual(ctx.exception.location, "<root>")

    def test_unknown_nested_key(self):
        with self.assertRaises(ParseError) as ctx:
            parse_config(with_lines("diagnostics: {enabled: true, verbose: true}"))
        self.assertEqual(ctx.exception.location, "diagnostics")

    def test_missing_key(self):
        with self.assertRaises(ParseError):
            parse_config(MINIMAL.replace("max_iters: 10", ""))

    def test_decay_rules(self):
        text = MINIMAL.replace(
            "schedule: paper", "schedule: {gamma0: 0.1, a: 0.4, eta0: 0.1, b: 0.5}"
        )
        with self.assertRaises(ValidationError) as ctx:
            parse_config(text)
        self.assertIn("allow_unsafe_gamma0", str(ctx.exception))
        with LogCapture("aggne") as log:
            config = parse_config(text + "allow_unsafe_gamma0: true\n")
            self.assertIn("WARNING", [record.levelname for record in log.records])
        self.assertTrue(config.allow_unsafe_gamma0)

    def test_malformed(self):
        with self.assertRaises(ParseError) as ctx:
            parse_config("game: [unclosed\n")
        self.assertRegex(ctx.exception.location, r"^\d+:\d+$")

    def test_empty(self):
        with self.assertRaises(ParseError):
            parse_config("")

    def test_not_a_mapping(self):
        with self.assertRaises(ParseError):
            parse_config("- 1\n- 2\n")

    def test_wrong_types(self):
        with self.assertRaises(ParseError):
            parse_config(MINIMAL.replace("max_iters: 10", "max_iters: ten"))
        with self.assertRaises(ParseError):
            parse_config(with_lines("attach_oracle: 1"))
        with self.assertRaises(ValidationError):
            parse_config(MINIMAL.replace("max_iters: 10", "max_iters: -1"))

    def test_unknown_builtin(self):
        with self.assertRaises(ValidationError):
            parse_config(MINIMAL.replace("ev_paper", "ev_city"))

    def test_unknown_preset(self):
        with self.assertRaises(ParseError):
            parse_config(MINIMAL.replace("schedule: paper", "schedule: fast"))

    def test_both_game_kinds(self):
        text = MINIMAL.replace(
            "  builtin: ev_paper", "  builtin: ev_paper\n  quadratic: {n: 1}"
        )
        with self.assertRaises(ValidationError):
            parse_config(text)

    def test_quadratic_shape(self):
        text = MINIMAL.replace(
            "  builtin: ev_paper",
            "  quadratic: {n: 2, m: 1, d: [1, 2, 3], c1: [[0]], b1: [0], u: [[1]], "
            "c2: [[[0]], [[0]]], b2: [0]}",
        )
        with self.assertRaises(ValidationError):
            parse_config(text)

    def test_x0_shape(self):
        with self.assertRaises(ValidationError):
            parse_config(with_lines("x0: [1.0, 2.0]"))

    def test_x0_not_finite(self):
        with self.assertRaises(ValidationError):
            parse_config(with_lines("x0: " + str([0.0] * 14 + [".nan"]).replace("'", "")))

    def test_random_graph_size(self):
        text = MINIMAL.replace(
            "graph: complete", "graph: {random: {n: 4, edge_prob: 0.5, seed: 1}}"
        )
        with self.assertRaises(ValidationError):
            parse_config(text)

    def test_edge_outside_game(self):
        text = MINIMAL.replace("graph: complete", "graph: {edges: [[0, 1], [1, 7]]}")
        with self.assertRaises(DimensionMismatch):
            parse_config(text)

    def test_bad_edge_list(self):
        with self.assertRaises(ParseError):
            parse_config(MINIMAL.replace("graph: complete", "graph: {edges: [[0, 1, 2]]}"))


class LoadConfigTestCase(unittest.TestCase):
    """Test class for reading configs from disk."""

    def test_missing_file(self):
        with self.assertRaises(ParseError):
            ExperimentConfig.load_config("does/not/exist.yaml")

    def test_include_relative_to_config(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            tmp_dir = Path(tmp_dir)
            (tmp_dir / "graph.yaml").write_text(yaml.safe_dump({"edges": [[0, 1], [1, 2]]}))
            text = (
                "game: {quadratic: !include "
                + (CONFIGS / "ev_game.yaml").as_posix()
                + "}\ngraph: !include graph.yaml\nschedule: paper\nmax_iters: 5\n"
            )
            (tmp_dir / "config.yaml").write_text(text)
            config = ExperimentConfig.load_config(tmp_dir / "config.yaml")
        self.assertEqual(config.graph.edges, ((0, 1), (1, 2)))


class ConfigHashTestCase(unittest.TestCase):
    """Test class for config_hash."""

    def test_stable(self):
        self.assertEqual(config_hash(parse_config(MINIMAL)), config_hash(parse_config(MINIMAL)))
        self.assertEqual(len(config_hash(parse_config(MINIMAL))), 64)

    def test_changes(self):
        other = parse_config(MINIMAL.replace("max_iters: 10", "max_iters: 11"))
        self.assertNotEqual(config_hash(parse_config(MINIMAL)), config_hash(other))
