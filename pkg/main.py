import argparse
import logging
import math
import sys
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import pandas as pd

from src.artifact_writer import ArtifactWriter
from src.closed_form import ClosedFormSolver
from src.config_loader import ConfigLoader, thread_limit
from src.ensemble_analyzer import EnsembleAnalyzer, EnsembleSpec
from src.errors import DomainError, TrilinearError, UnsupportedRegimeError
from src.fock_oracle import FockOracle, SystemSpec, conserved_charges
from src.moment_integrator import MomentIntegrator
from src.trajectory import TrajectoryMethod
from src.trajectory_metrics import TrajectoryMetrics

COMMANDS = ('simulate', 'predict', 'compare', 'ensemble')
SIMULATE_METHODS = ('exact', 'vanishing_variance', 'vanishing_asymmetry', 'quartic', 'closed_form')
CLOSURES = ('vanishing_variance', 'vanishing_asymmetry', 'closed_form')
SAMPLES_PER_PERIOD = 40
REVIVAL_COVERAGE = 1.25

logger = logging.getLogger('trilinear')


@dataclass
class RunConfig:
    command: str
    n_excited: Optional[int] = None
    n_ground: int = 0
    n_photons: int = 0
    nbar: Optional[float] = None
    method: str = 'exact'
    per_l_method: str = 'closed_form'
    tau_max: Optional[float] = None
    samples: Optional[int] = None
    output_format: str = 'csv'
    output_path: Optional[str] = None
    rabi_hz: Optional[float] = None
    truncation_sigmas: Optional[float] = None
    prominence: Optional[float] = None
    log_level: str = 'INFO'

    def validate(self):
        if self.command not in COMMANDS:
            raise DomainError(f"Unknown command {self.command!r}", module='cli')
        if self.samples is not None and int(self.samples) < 2:
            raise DomainError(f"samples must be at least 2, got {self.samples}", module='cli')
        if self.tau_max is not None and not float(self.tau_max) > 0:
            raise DomainError(f"tau_max must be positive, got {self.tau_max}", module='cli')
        if self.output_format not in ('csv', 'json'):
            raise DomainError(f"Unknown output format {self.output_format!r}", module='cli')
        if self.rabi_hz is not None and not float(self.rabi_hz) > 0:
            raise DomainError(f"rabi_hz must be positive, got {self.rabi_hz}", module='cli')
        if self.command in ('simulate', 'compare') and self.n_excited is None:
            raise DomainError(f"{self.command} needs --n-excited", module='cli')
        for name in ('n_excited', 'n_ground', 'n_photons'):
            value = getattr(self, name)
            if value is not None and (int(value) != value or value < 0):
                raise DomainError(f"{name} must be a non-negative integer, got {value}", module='cli')
        if self.command in ('simulate', 'compare') and self.n_excited + (self.n_ground or 0) < 1:
            raise DomainError("A number state needs at least one atom (n_excited + n_ground >= 1)", module='cli')
        if self.nbar is not None and not float(self.nbar) > 0:
            raise DomainError(f"nbar must be positive, got {self.nbar}", module='cli')
        if self.command == 'simulate' and self.method not in SIMULATE_METHODS:
            raise DomainError(f"Unknown method {self.method!r}", module='cli')
        if self.command == 'predict' and self.nbar is None and self.n_excited is None:
            raise DomainError("predict needs --nbar or --n-excited", module='cli')
        if self.command == 'ensemble' and self.nbar is None:
            raise DomainError("ensemble needs --nbar", module='cli')
        return self

    @property
    def rabi_frequency(self):
        """Omega in rad/s from a frequency in Hz; 1 when no conversion is asked for"""
        return 2.0 * math.pi * float(self.rabi_hz) if self.rabi_hz else 1.0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Run file with key: value pairs mirroring these flags')
    common.add_argument('--tau-max', type=float, help='End of the time grid in units of 1/Omega')
    common.add_argument('--samples', type=int, help='Number of grid points including tau = 0')
    common.add_argument('--format', dest='output_format', choices=['csv', 'json'])
    common.add_argument('--output', dest='output_path', help='Output file (default: stdout)')
    common.add_argument('--rabi-hz', type=float, help='Rabi frequency in Hz; adds a time_s column')
    common.add_argument('--verbose', action='store_true', help='Debug logging on stderr')

    parser = argparse.ArgumentParser(
        prog='trilinear-revival-lab',
        description='Collapse and revival of excited-atom numbers under the trilinear Hamiltonian'
    )
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', parents=[common], help='One trajectory for a number state')
    simulate.add_argument('--n-excited', type=int)
    simulate.add_argument('--n-ground', type=int)
    simulate.add_argument('--n-photons', type=int)
    simulate.add_argument('--method', choices=SIMULATE_METHODS)

    predict = commands.add_parser('predict', parents=[common], help='Period, revival time and plateau')
    predict.add_argument('--nbar', type=float)
    predict.add_argument('--n-excited', type=int)

    compare = commands.add_parser('compare', parents=[common], help='Exact oracle against the closures')
    compare.add_argument('--n-excited', type=int)
    compare.add_argument('--n-ground', type=int)
    compare.add_argument('--n-photons', type=int)

    ensemble = commands.add_parser('ensemble', parents=[common], help='Poisson mixture and its revivals')
    ensemble.add_argument('--nbar', type=float)
    ensemble.add_argument('--per-l-method', choices=['closed_form', 'exact'])
    ensemble.add_argument('--truncation-sigmas', type=float)
    ensemble.add_argument('--prominence', type=float, help='Revival prominence threshold in atoms')
    return parser


def build_run_config(args, loader):
    """Merge config.yaml defaults, an optional run file and explicit flags (in rising priority)."""
    values = {'log_level': loader.get('log_level', 'INFO')}
    cli_defaults = loader.section('cli')
    # predict defaults to JSON; a flag or the run file can still ask for CSV
    values['output_format'] = 'json' if args.command == 'predict' else cli_defaults.get('output_format', 'csv')
    if args.command in ('simulate', 'compare'):
        # ensemble sizes its grid from the predicted revival time instead
        values['tau_max'] = cli_defaults.get('tau_max')
        values['samples'] = cli_defaults.get('samples')
    if args.config:
        values.update(loader.load_run_config(args.config))

    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise DomainError(f"Unknown run config keys: {', '.join(unknown)}", module='cli')
    values.update({k: v for k, v in vars(args).items() if k in known and v is not None})
    if args.verbose:
        values['log_level'] = 'DEBUG'
    values['command'] = args.command
    if args.command == 'ensemble':
        thread_limit()
    return RunConfig(**values).validate()


class Runner:
    def __init__(self, config, loader):
        self.logger = logging.getLogger('Runner')
        self.config = config
        self.loader = loader
        self.writer = ArtifactWriter(config.output_path)
        self.metrics = TrajectoryMetrics()
        ensemble_cfg = loader.section('ensemble')
        self.truncation_sigmas = ensemble_cfg.pop('truncation_sigmas', 8.0)
        self.solver = ClosedFormSolver(max_fractional_order=ensemble_cfg.get('max_fractional_order', 5),
                                       **loader.section('closedform'))
        self.analyzer = EnsembleAnalyzer(solver=self.solver, oracle_options=loader.section('fockoracle'),
                                         **ensemble_cfg)
        self.integrator = MomentIntegrator(**loader.section('moments'))

    def tau_grid(self, tau_max=None, samples=None):
        tau_max = float(tau_max if tau_max is not None else self.config.tau_max)
        samples = int(samples if samples is not None else self.config.samples)
        return np.linspace(0.0, tau_max, samples)

    def _with_seconds(self, frame):
        if self.config.rabi_hz:
            frame.insert(1, 'time_s', frame['tau'] / self.config.rabi_frequency)
        return frame

    def _emit(self, frame, payload):
        if self.config.output_format == 'json':
            return self.writer.write_json({**payload, 'data': frame.to_dict(orient='list')})
        return self.writer.write_csv(frame)

    def _system(self):
        return SystemSpec(n_e0=self.config.n_excited, n_g0=self.config.n_ground,
                          n_a0=self.config.n_photons, rabi_frequency=self.config.rabi_frequency)

    def _closed_form(self, spec, tau):
        if spec.n_g0 or spec.n_a0:
            raise UnsupportedRegimeError("The closed form covers number states with all atoms excited",
                                         module='closedform')
        return self.solver.closed_form_trajectory(self.solver.solve_elliptic_params(spec.n_e0), tau)

    def trajectory(self, method, spec, tau):
        method = TrajectoryMethod(method)
        if method is TrajectoryMethod.EXACT:
            return FockOracle(spec, **self.loader.section('fockoracle')).evolve(tau)
        if method is TrajectoryMethod.CLOSED_FORM:
            return self._closed_form(spec, tau)
        charges = conserved_charges(spec)
        solve = {
            TrajectoryMethod.VANISHING_VARIANCE: self.integrator.vanishing_variance_trajectory,
            TrajectoryMethod.VANISHING_ASYMMETRY: self.integrator.vanishing_asymmetry_trajectory,
            TrajectoryMethod.QUARTIC: self.integrator.quartic_trajectory,
        }[method]
        return solve(charges, spec.n_e0, tau)

    # commands

    def simulate(self):
        spec = self._system()
        traj = self.trajectory(self.config.method, spec, self.tau_grid())
        payload = {
            'command': 'simulate',
            'system': {'n_e0': spec.n_e0, 'n_g0': spec.n_g0, 'n_a0': spec.n_a0},
            'charges': conserved_charges(spec).as_dict(),
            'provenance': traj.provenance,
        }
        return self._emit(self._with_seconds(traj.to_frame()), payload)

    def compare(self):
        spec = self._system()
        tau = self.tau_grid()
        exact = self.trajectory('exact', spec, tau)
        frame = pd.DataFrame({'tau': tau, 'exact': exact.mean_ne})
        curves, unsupported = {}, {}
        for method in CLOSURES:
            # a closure that fails numerically aborts the run; only regime limits leave a blank column
            try:
                curves[method] = self.trajectory(method, spec, tau)
                frame[method] = curves[method].mean_ne
            except UnsupportedRegimeError as e:
                self.logger.warning(f"{method} unavailable for n={spec.n_e0}: {str(e)}")
                unsupported[method] = str(e)
                frame[method] = np.nan
        frame['delta_exact'] = exact.delta_e
        frame['delta_closed_form'] = curves['closed_form'].delta_e if 'closed_form' in curves else np.nan

        payload = {
            'command': 'compare',
            'n_excited': spec.n_e0,
            'metrics': {m: self.metrics.compare(curves[m], exact) for m in curves},
            'unsupported': unsupported,
            'provenance': {'exact': exact.provenance, **{m: curves[m].provenance for m in curves}},
        }
        for method, stats in payload['metrics'].items():
            self.logger.info(f"{method}: max deviation {stats['max_deviation']:.4g}, "
                             f"10% horizon {stats['validity_horizon']}")
        return self._emit(self._with_seconds(frame), payload)

    def predict(self):
        nbar = self.config.nbar if self.config.nbar is not None else self.config.n_excited
        prediction = self.solver.predict_times(nbar)
        params = self.solver.solve_elliptic_params(nbar)
        record = prediction.as_dict()
        if self.config.rabi_hz:
            for key in ('t_period', 't_period_exact', 't_revival'):
                record[f'{key}_s'] = record[key] / self.config.rabi_frequency
        if self.config.output_format == 'json':
            return self.writer.write_json({**record, 'provenance': params.provenance()})

        flat = {k: v for k, v in record.items() if k != 'fractional'}
        flat.update({f't_revival_{r}': t for r, t in prediction.fractional.items()})
        return self.writer.write_csv(pd.DataFrame([flat]))

    def ensemble(self):
        nbar = float(self.config.nbar)
        sigmas = self.config.truncation_sigmas or self.truncation_sigmas
        spec = EnsembleSpec(nbar=nbar, per_l_method=self.config.per_l_method, truncation_sigmas=sigmas)
        prediction = self.solver.predict_times(nbar)

        tau_max = self.config.tau_max or REVIVAL_COVERAGE * prediction.t_revival
        samples = self.config.samples or int(math.ceil(SAMPLES_PER_PERIOD * tau_max / prediction.t_period)) + 1
        traj = self.analyzer.ensemble_mean(spec, self.tau_grid(tau_max, samples))
        revivals = self.analyzer.detect_revivals(traj, baseline=prediction.plateau, threshold=self.config.prominence)

        payload = {
            'command': 'ensemble',
            'prediction': prediction.as_dict(),
            'revivals': [{'tau': t, 'prominence': p} for t, p in revivals],
            'provenance': traj.provenance,
        }
        if nbar >= 10 and nbar == int(nbar):
            t_numeric, t_formula = self.analyzer.revival_criterion_check(int(nbar))
            payload['revival_criterion'] = {'t_revival_numeric': t_numeric, 't_revival_formula': t_formula}
        return self._emit(self._with_seconds(traj.to_frame()), payload)


def run(config, loader=None):
    """Execute one command; 0 on success, 1 on a numerical failure."""
    loader = loader or ConfigLoader()
    try:
        target = getattr(Runner(config, loader), config.command)()
        logger.info(f"{config.command} finished -> {target}")
        return 0
    except TrilinearError as e:
        logger.error(str(e))
        return 1


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0

    try:
        loader = ConfigLoader()
        config = build_run_config(args, loader)
    except (ValueError, TypeError) as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {str(e)}\n")
        return 2

    logging.basicConfig(
        level=getattr(logging, str(config.log_level).upper(), logging.INFO),
        format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        stream=sys.stderr
    )
    return run(config, loader)


if __name__ == "__main__":
    sys.exit(main())
