"""analogverify command-line application.

Commands:

- ``verify``: run a verification protocol and write its decay curve;
- ``dynamics``: compare ideal unitary and dephased actual dynamics;
- ``compile``: draw one random sequence and compile its inverse;
- ``subsets``: count (and optionally list) lattice edge pairs.

Exit status is 0 on success, 1 on unexpected failures, 2 on configuration
errors and 3 when the inverse compiler exhausts its budget.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv

from analogverify import __version__
from analogverify.archive import ResultArchive, SequenceRecord, load_sequence_file
from analogverify.compiler import compile_inverse, random_forward_sequence, with_seed
from analogverify.config import (
    LOG_LEVELS,
    AnalogVerifySettings,
    ExperimentConfig,
    load_experiment_config,
)
from analogverify.dynamics import (
    DephasingMode,
    LindbladSpec,
    dephasing_operators,
    fidelity_half_time,
    fidelity_trajectory,
    population_trajectory,
)
from analogverify.exceptions import ConfigError, ModelError, NoConvergence
from analogverify.models import LatticeSpec, PairMode, enumerate_edge_pairs
from analogverify.protocols import (
    DecayCurve,
    ProtocolKind,
    run_multi_basis,
    run_randomized_analog,
    run_simulation_fidelity,
    run_stored_sequences,
    run_time_reversal,
)
from analogverify.quantum_core import SystemState, bitstring, build_operator
from analogverify.streams import Stream, derive_seed

# Load environment variables
load_dotenv()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3


def _log_level() -> str:
    level = os.getenv("ANALOGVERIFY_LOG_LEVEL", "INFO").upper()
    return level if level in LOG_LEVELS else "INFO"


# Configure structured logging
logging.basicConfig(
    level=_log_level(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)],
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for the ``analogverify`` command."""
    parser = argparse.ArgumentParser(
        prog="analogverify",
        description="Verification protocols for simulated analog quantum simulators",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser, config_required: bool = True) -> None:
        sub.add_argument(
            "--config", type=Path, required=config_required, help="Experiment YAML file"
        )
        sub.add_argument("--seed", type=int, help="Root seed (overrides the config file)")
        sub.add_argument("--out", type=Path, help="Output root directory")
        sub.add_argument("--workers", type=int, help="Worker processes")

    verify = commands.add_parser("verify", help="Run a verification protocol")
    common(verify)
    verify.add_argument(
        "--protocol",
        help="time_reversal, multi_basis, randomized or fidelity (overrides the config file)",
    )
    verify.add_argument("--sequences", type=Path, help="Replay a stored sequence file")

    dynamics = commands.add_parser("dynamics", help="Ideal versus dephased actual dynamics")
    common(dynamics)
    dynamics.add_argument(
        "--mode", choices=[m.value for m in DephasingMode], help="Dephasing operator placement"
    )

    compile_ = commands.add_parser("compile", help="Compile the inverse of a random sequence")
    common(compile_)

    subsets = commands.add_parser("subsets", help="Count lattice edge pairs")
    common(subsets, config_required=False)
    subsets.add_argument("--rows", type=int, help="Lattice rows")
    subsets.add_argument("--cols", type=int, help="Lattice columns")
    subsets.add_argument("--mode", choices=[m.value for m in PairMode], help="Pair convention")
    subsets.add_argument("--dump", type=Path, help="Write the enumeration as JSON")
    return parser


class AnalogVerifyApp:
    """Command orchestrator.

    Attributes:
        settings: Environment defaults
    """

    def __init__(self, settings: Optional[AnalogVerifySettings] = None) -> None:
        """Initialize the application with environment settings.

        Args:
            settings: Preloaded settings; read from the environment when omitted
        """
        self.settings = settings if settings is not None else AnalogVerifySettings()
        logging.getLogger().setLevel(self.settings.log_level)
        logger.info("analogverify initialized")

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Parse ``argv`` and dispatch to the matching command."""
        args = build_parser().parse_args(argv)
        handler = {
            "verify": self.cmd_verify,
            "dynamics": self.cmd_dynamics,
            "compile": self.cmd_compile,
            "subsets": self.cmd_subsets,
        }[args.command]
        return handler(args)

    def _load(self, args: argparse.Namespace, protocol: Optional[str] = None) -> ExperimentConfig:
        return load_experiment_config(
            args.config,
            seed=args.seed,
            workers=args.workers,
            protocol=protocol,
            output_dir=args.out,
            settings=self.settings,
        )

    def cmd_verify(self, args: argparse.Namespace) -> int:
        """Run the configured protocol and archive its decay curve."""
        cfg = self._load(args, protocol=args.protocol)
        run = cfg.protocol
        kind = run.protocol
        archive = ResultArchive.create(cfg.output_dir, f"verify-{kind.value}")
        sequences_file = args.sequences or cfg.sequences_file
        h = cfg.hamiltonian

        try:
            curve: DecayCurve
            if kind is ProtocolKind.TIME_REVERSAL:
                curve = run_time_reversal(h, run)
            elif kind is ProtocolKind.MULTI_BASIS:
                if cfg.rotation is None:
                    raise ConfigError("Multi-basis verification needs a rotation")
                curve = run_multi_basis(h, cfg.rotation, run)
            elif kind is ProtocolKind.SIMULATION_FIDELITY:
                curve = run_simulation_fidelity(h, run)
            elif sequences_file is not None:
                records = load_sequence_file(sequences_file, h.labels)
                curve = run_stored_sequences(h, [r.to_randomized() for r in records], run)
                curve.metadata["sequences_file"] = str(sequences_file)
            else:
                curve = run_randomized_analog(h, run, cfg.compiler)
        except NoConvergence as e:
            archive.write_metadata(
                "verify",
                cfg.seed,
                cfg.digest,
                protocol=kind.value,
                status="no_convergence",
                best_population=e.best_population,
                config=cfg.raw,
            )
            raise

        paths = archive.write_curve(curve)
        archive.write_metadata(
            "verify",
            cfg.seed,
            cfg.digest,
            protocol=kind.value,
            status="ok",
            aggregation=curve.metadata["aggregation"],
            workers=run.n_workers,
            config=cfg.raw,
        )
        logger.info(f"Decay curve written to {paths['csv']}")
        return EXIT_OK

    def cmd_dynamics(self, args: argparse.Namespace) -> int:
        """Write population trajectories and the ideal-versus-actual fidelity curve."""
        cfg = self._load(args)
        dyn = cfg.dynamics
        if dyn is None:
            raise ConfigError(f"{cfg.source} has no 'dynamics' section")
        mode = DephasingMode(args.mode) if args.mode else dyn.mode
        n = cfg.hamiltonian.n_qubits
        ideal = build_operator(cfg.hamiltonian)
        actual = build_operator(dyn.actual)
        lind = LindbladSpec(dephasing_operators(n, dyn.gamma_phi, mode), dyn.integrator_step)
        psi0 = SystemState.basis(dyn.initial_state, n)

        fidelities = fidelity_trajectory(psi0, ideal, actual, lind, dyn.t_grid)
        actual_pops = population_trajectory(psi0, actual, lind, dyn.t_grid)
        ideal_pops = population_trajectory(
            psi0, ideal, LindbladSpec((), dyn.integrator_step), dyn.t_grid
        )
        table = {
            "time_s": [t for t, _ in fidelities],
            "fidelity": [f for _, f in fidelities],
        }
        for index in range(2**n):
            label = bitstring(index, n)
            table[f"p_actual_{label}"] = [p[index] for _, p in actual_pops]
            table[f"p_ideal_{label}"] = [p[index] for _, p in ideal_pops]
        frame = pd.DataFrame(table)

        half_time = fidelity_half_time(
            frame["time_s"], frame["fidelity"], window=dyn.smoothing_window
        )
        archive = ResultArchive.create(cfg.output_dir, "dynamics")
        csv_path = archive.write_table("dynamics.csv", frame)
        archive.write_plot(
            "dynamics.svg",
            csv_path,
            "time_s",
            ["fidelity"] + [c for c in frame.columns if c.startswith("p_actual_")],
            "Ideal vs actual dynamics",
        )
        archive.write_metadata(
            "dynamics",
            cfg.seed,
            cfg.digest,
            dephasing_mode=mode.value,
            gamma_phi_rad_s=dyn.gamma_phi,
            initial_state=bitstring(dyn.initial_state, n),
            smoothing_window_s=dyn.smoothing_window,
            fidelity_half_time_s=half_time,
            config=cfg.raw,
        )
        if half_time is None:
            logger.info("Fidelity stays above 0.5 on the grid")
        else:
            logger.info(f"Fidelity falls below 0.5 at {half_time * 1e3:.2f} ms")
        return EXIT_OK

    def cmd_compile(self, args: argparse.Namespace) -> int:
        """Draw a forward sequence, compile its inverse and write a sequence file."""
        cfg = self._load(args)
        h = cfg.hamiltonian
        task = cfg.compile_task
        layers, phi = random_forward_sequence(
            h, task.n_steps, task.tau, derive_seed(cfg.seed, Stream.SEQUENCE, 0), task.initial_state
        )
        duration = 2.0 * task.tau / task.n_steps
        archive = ResultArchive.create(cfg.output_dir, "compile")
        extra = {"tau_s": task.tau, "n_steps": task.n_steps, "seed": cfg.seed}
        try:
            compiled = compile_inverse(phi, h, duration, with_seed(cfg.compiler, cfg.seed, 0))
        except NoConvergence as e:
            record = SequenceRecord(
                forward=tuple(layers),
                inverse=(),
                initial_state=task.initial_state,
                target_basis_state=None,
                achieved_population=e.best_population,
                steps_used=e.steps_used or 0,
                converged=False,
            )
            archive.write_sequences("sequences.json", [record], h.labels, h.n_qubits, **extra)
            archive.write_metadata(
                "compile",
                cfg.seed,
                cfg.digest,
                status="no_convergence",
                threshold=cfg.compiler.threshold,
                best_population=e.best_population,
                config=cfg.raw,
            )
            raise

        record = SequenceRecord.from_compiled(layers, compiled, task.initial_state)
        path = archive.write_sequences("sequences.json", [record], h.labels, h.n_qubits, **extra)
        archive.write_metadata(
            "compile",
            cfg.seed,
            cfg.digest,
            threshold=cfg.compiler.threshold,
            achieved_population=compiled.achieved_population,
            config=cfg.raw,
        )
        logger.info(
            f"Compiled {len(compiled.layers)} inverse layers targeting "
            f"|{bitstring(compiled.target_basis_state, h.n_qubits)}>; sequence file {path}"
        )
        return EXIT_OK

    def cmd_subsets(self, args: argparse.Namespace) -> int:
        """Print the number of edge pairs and optionally dump them as JSON."""
        lattice: Optional[LatticeSpec] = None
        mode = args.mode
        if args.config is not None:
            cfg = self._load(args)
            lattice = cfg.lattice
            mode = mode or cfg.pair_mode
        if args.rows is not None or args.cols is not None:
            if args.rows is None or args.cols is None:
                raise ConfigError("--rows and --cols must be given together")
            try:
                lattice = LatticeSpec(args.rows, args.cols)
            except ModelError as e:
                raise ConfigError(str(e)) from e
        if lattice is None:
            raise ConfigError("subsets needs --rows/--cols or a config with a 'lattice' section")
        mode = mode or PairMode.UNORDERED_DISJOINT.value

        enumeration = enumerate_edge_pairs(lattice, mode)
        print(enumeration.count)
        logger.info(f"{lattice.rows}x{lattice.cols} lattice, {mode}: {enumeration.count} pairs")
        if args.dump is not None:
            payload = {
                "rows": lattice.rows,
                "cols": lattice.cols,
                "mode": mode,
                "count": enumeration.count,
                "pairs": [[list(e1), list(e2)] for e1, e2 in enumeration.pairs],
            }
            args.dump.parent.mkdir(parents=True, exist_ok=True)
            args.dump.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
            logger.info(f"Wrote {args.dump}")
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point for the analogverify command."""
    try:
        logger.info("Starting analogverify")
        app = AnalogVerifyApp()
        code = app.run(argv)

    except KeyboardInterrupt:
        logger.info("Application interrupted by user")
        sys.exit(EXIT_OK)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        sys.exit(EXIT_CONFIG)
    except NoConvergence as e:
        logger.error(f"Inverse compilation failed: {e}")
        sys.exit(EXIT_NO_CONVERGENCE)
    except Exception as e:
        logger.critical(f"Fatal error: {e}")
        sys.exit(EXIT_FAILURE)
    sys.exit(code)


if __name__ == "__main__":
    main()
