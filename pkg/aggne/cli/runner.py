"""Command line experiment runner."""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np
import yaml

from aggne.cli.config import ExperimentConfig, config_hash
from aggne.diagnostics import (
    AuditResult,
    ConvergenceSummary,
    DeltaTracker,
    audit_window,
    summarize_convergence,
)
from aggne.game import GameConstants, QuadraticAggregativeGame, estimate_constants
from aggne.graph import MixingMatrix, Topology, build_metropolis
from aggne.oracle import OptimalNE, solve_optimal_ne_qp
from aggne.solver import SafeBound, gamma0_safe_bound, run
from aggne.trace import Trace, write_atomic, write_trace
from aggne.utils import logger
from aggne.utils.errors import AggneError, DiagnosticsViolation, NonFiniteValue, OutputError

DEFAULT_OUTPUT = "aggne_output"
TRACE_FILE = "trace.csv"
REPORT_FILE = "report.yaml"
REFERENCE_FILE = "reference.h5"


def get_args(args):
    parser = argparse.ArgumentParser(
        description="AGGNE: distributed optimal Nash equilibrium seeking in aggregative games"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run an experiment and write its outputs")
    run_parser.add_argument("-c", "--config", required=True, type=Path, help="Path to config")
    run_parser.add_argument("-o", "--out", type=Path, help="Output directory override")

    validate_parser = subparsers.add_parser("validate", help="Validate a config")
    validate_parser.add_argument("-c", "--config", required=True, type=Path, help="Path to config")

    oracle_parser = subparsers.add_parser(
        "oracle", help="Print the optimal equilibrium, game constants and safe gamma0 bound"
    )
    oracle_parser.add_argument("-c", "--config", required=True, type=Path, help="Path to config")

    return parser.parse_args(args)


def _plain(value):
    """Convert numpy containers and scalars to YAML-safe Python objects."""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass
class Experiment:
    """Objects built from a config."""

    config: ExperimentConfig
    game: QuadraticAggregativeGame
    topology: Topology
    w: MixingMatrix
    constants: GameConstants
    bound: SafeBound

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> Experiment:
        game = config.game.build()
        topology = config.graph.build(game.dims.n_players)
        w = build_metropolis(topology)
        constants = estimate_constants(game)
        bound = gamma0_safe_bound(constants, config.schedule.eta0, w.rho, w.norm_w_minus_i)
        return cls(config, game, topology, w, constants, bound)

    @property
    def unsafe(self) -> bool:
        return self.config.schedule.gamma0 > self.bound.gamma0_max

    def header(self) -> dict:
        return {
            "config_hash": config_hash(self.config),
            "n_players": self.game.dims.n_players,
            "dim": self.game.dims.dim,
            "edges": [list(edge) for edge in self.topology.sorted_edges()],
            "constants": {
                "l_f": self.constants.l_f,
                "l_1": self.constants.l_1,
                "l_2": self.constants.l_2,
                "mu_g": self.constants.mu_g,
            },
            "rho": self.w.rho,
            "norm_w_minus_i": self.w.norm_w_minus_i,
            "safe_bound": self.bound.to_dict(),
        }


def oracle_report(config: ExperimentConfig) -> dict:
    """Optimal equilibrium, constants and safe bound of the configured experiment."""
    experiment = Experiment.from_config(config)
    optimal = solve_optimal_ne_qp(experiment.game)
    header = experiment.header()
    return _plain({
        "x_star": optimal.x_star.reshape(experiment.game.dims.n_players, -1),
        "kkt_residual": optimal.kkt_residual,
        "least_squares": optimal.least_squares,
        "constants": header["constants"],
        "rho": header["rho"],
        "norm_w_minus_i": header["norm_w_minus_i"],
        "safe_bound": header["safe_bound"],
    })


def _write_reference(
    path: Path, optimal: OptimalNE | None, audit: AuditResult | None, trace: Trace
) -> None:
    def write(tmp: Path) -> None:
        with h5py.File(tmp, "w") as h5_file:
            if optimal is not None:
                h5_file.create_dataset("x_star", data=optimal.x_star)
                h5_file.create_dataset("multipliers", data=optimal.multipliers)
                h5_file.attrs["kkt_residual"] = optimal.kkt_residual
                h5_file.attrs["least_squares"] = optimal.least_squares
            if audit is not None:
                group = h5_file.create_group("trajectory")
                group.create_dataset("k", data=np.array(audit.trajectory.ks))
                group.create_dataset("eta", data=[sol.eta for sol in audit.trajectory])
                group.create_dataset(
                    "x_star_eta", data=np.stack([sol.x_star_eta for sol in audit.trajectory])
                )
                group.attrs["c_const"] = audit.trajectory.c_const
            if trace.decisions:
                group = h5_file.create_group("decisions")
                group.create_dataset("k", data=trace.column("k").astype(int))
                group.create_dataset("x", data=np.stack(trace.decisions))

    write_atomic(path, write)


def _write_report(path: Path, report: dict) -> None:
    text = yaml.safe_dump(_plain(report), sort_keys=False)
    write_atomic(path, lambda tmp: tmp.write_text(text))


def run_experiment(
    config: ExperimentConfig, out_dir: Path | str | None = None
) -> tuple[Trace, dict]:
    """Build all objects from ``config``, run, audit and write the outputs.

    Parameters
    ----------
    config : ExperimentConfig
        Validated config.
    out_dir : Path | str, optional
        Output directory, by default ``config.output_path``. Nothing is written
        when both are None.

    Returns
    -------
    Trace
        Recorded run.
    dict
        Report with the trace header, convergence summary and audit reports.

    Raises
    ------
    ValidationError
        If ``gamma0`` exceeds the safe bound without ``allow_unsafe_gamma0``.
    NonFiniteValue
        If the run diverges; outputs are written first.
    DiagnosticsViolation
        If an audit fails; outputs are written first.
    """
    experiment = Experiment.from_config(config)
    experiment.bound.check(config.schedule.gamma0, allow_unsafe=config.allow_unsafe_gamma0)
    game, schedule = experiment.game, config.schedule
    logger.info(
        "Safe gamma0 bound %.4g, using gamma0=%.4g.", experiment.bound.gamma0_max, schedule.gamma0
    )

    optimal = solve_optimal_ne_qp(game) if config.attach_oracle else None
    delta = DeltaTracker(game, schedule) if config.diagnostics.enabled else None
    failure: AggneError | None = None
    try:
        trace = run(
            game,
            experiment.w,
            schedule,
            config.x0_array,
            max_iters=config.max_iters,
            record_every=config.record_every,
            diagnostics_mode=config.diagnostics.enabled,
            window_end=config.diagnostics.window_end,
            x_star=None if optimal is None else optimal.x_star,
            delta=delta,
            record_decisions=config.record_decisions,
            header=experiment.header(),
        )
    except NonFiniteValue as err:
        trace, failure = err.trace, err

    audit = None
    audit_reports = {}
    if config.diagnostics.enabled and failure is None:
        try:
            audit = audit_window(
                game,
                experiment.w,
                schedule,
                config.x0_array,
                experiment.constants,
                window_end=config.diagnostics.window_end,
                advisory=experiment.unsafe,
                strict=not experiment.unsafe,
            )
            audit_reports = {
                "recursion": audit.recursion_report.to_dict(),
                "contraction": audit.contraction_report.to_dict(),
            }
        except DiagnosticsViolation as err:
            failure = err
            audit_reports = {"failed": err.report.to_dict() if err.report else str(err)}

    summary: ConvergenceSummary = summarize_convergence(trace)
    report = {
        "header": trace.header,
        "summary": summary.to_dict(),
        "audit": audit_reports,
        "diverged_at": trace.diverged_at,
    }
    if optimal is not None:
        report["optimal"] = {
            "kkt_residual": optimal.kkt_residual,
            "least_squares": optimal.least_squares,
        }

    out = out_dir if out_dir is not None else config.output_path
    if out is not None:
        out = Path(out)
        write_trace(trace, out / TRACE_FILE)
        _write_report(out / REPORT_FILE, report)
        if optimal is not None or audit is not None or trace.decisions:
            _write_reference(out / REFERENCE_FILE, optimal, audit, trace)
        logger.info("Outputs written to %s", out)
    if failure is not None:
        raise failure
    return trace, report


def main(args=None) -> int:
    args = get_args(args)
    config_path = args.config
    try:
        config = ExperimentConfig.load_config(config_path)
        if args.command == "validate":
            experiment = Experiment.from_config(config)
            experiment.bound.check(config.schedule.gamma0, allow_unsafe=config.allow_unsafe_gamma0)
            logger.info("Config %s is valid.", config_path)
        elif args.command == "oracle":
            print(yaml.safe_dump(oracle_report(config), sort_keys=False))
        else:
            out = args.out or config.output_path or DEFAULT_OUTPUT
            run_experiment(config, out_dir=out)
    except AggneError as err:
        logger.error("%s: %s", config_path, err)
        return err.exit_code
    except OSError as err:
        logger.error("%s: %s", config_path, err)
        return OutputError.exit_code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
