"""Batch CLI for the sdht-lab experiments."""
import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from sqlalchemy.exc import SQLAlchemyError

from channels import Channel
from config import Config
from database import init_db
from experiment_config import ExperimentConfig, load_config, load_scheme
from impossibility_lab import (
    CERT_TOL,
    f0c_closed_form,
    lambda_inf,
    ratio_limit,
    reduce_to_binary,
    scheme_laws,
    sup_ratio_binary,
    tradeoff_audit,
    tradeoff_bound,
)
from plot_generator import PlotGenerator
from psm import (
    barrington_compile,
    counter_program,
    es25_cost_targets,
    fkn_two_party,
    formula_from_truth_table,
    kilian_randomize,
    majority_formula,
    named_truth_table,
    psm_to_sdht,
    psm_verify,
    truth_table,
)
from rng import counter_rng
from run_manager import RunManager
from sdht_engine import (
    AuditFailure,
    KeyedScheme,
    build_onebit_scheme,
    build_prop1_scheme,
    evaluate,
    monte_carlo_evaluate,
)
from utils import config_digest, export_to_json, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_AUDIT = 3

SCHEME_COLUMNS = ['n', 'epsilon', 'delta', 'comm_bits', 'key_bits']

# stream id for randomly drawn channels
_CHANNEL_STREAM = 0xC4


@dataclass
class CommandResult:
    rows: List[Dict[str, Any]]
    columns: List[str]
    summary: Dict[str, Any]
    metrics: Dict[str, float] = field(default_factory=dict)
    plot: Optional[Dict[str, Any]] = None
    failures: List[str] = field(default_factory=list)


def _check_bounds(bounds, failures: List[str], epsilon: float = None, delta: float = None,
                  ratio: float = None, where: str = ''):
    suffix = f" ({where})" if where else ''
    if bounds.epsilon_max is not None and epsilon is not None and epsilon > bounds.epsilon_max:
        failures.append(f"epsilon {epsilon:.6g} exceeds epsilon_max {bounds.epsilon_max:.6g}{suffix}")
    if bounds.delta_max is not None and delta is not None and delta > bounds.delta_max:
        failures.append(f"delta {delta:.6g} exceeds delta_max {bounds.delta_max:.6g}{suffix}")
    if bounds.ratio_max is not None and ratio is not None and ratio > bounds.ratio_max:
        failures.append(f"ratio {ratio:.12g} exceeds ratio_max {bounds.ratio_max:.12g}{suffix}")


def _decay_fit(ns: Sequence[int], epsilons: Sequence[float]) -> Optional[Dict[str, float]]:
    """Least-squares line through (n, log epsilon) over the positive epsilons."""
    points = [(n, e) for n, e in zip(ns, epsilons) if e > 0]
    if len(points) < 2:
        return None
    x = np.array([p[0] for p in points], dtype=float)
    y = np.log(np.array([p[1] for p in points]))
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - float((residual ** 2).sum()) / spread if spread > 0 else 1.0
    return {'slope': float(slope), 'intercept': float(intercept), 'r_squared': r_squared, 'points': len(points)}


class SdhtLabApp:
    """Runs one experiment config and writes its artifacts."""

    def __init__(self, threads: int = None, record_runs: bool = None):
        self.threads = max(1, int(threads or Config.THREADS))
        self.record_runs = Config.RECORD_RUNS if record_runs is None else record_runs
        self.plotter = PlotGenerator()
        self._commands: Dict[str, Callable[[ExperimentConfig], CommandResult]] = {
            'evaluate-scheme': self.evaluate_scheme,
            'sweep-n': self.sweep_n,
            'verify-psm': self.verify_psm,
            'hellinger-sup': self.hellinger_sup,
            'tradeoff-audit': self.tradeoff_audit,
            'reduce-channel': self.reduce_channel,
        }

    # ------------------------------------------------------------------
    # runner

    def run(self, config: ExperimentConfig, output_dir=None) -> int:
        """Run a validated config; returns the exit code."""
        out = Path(output_dir or config.output or Config.OUTPUT_DIR)
        out.mkdir(parents=True, exist_ok=True)
        (out / 'error.json').unlink(missing_ok=True)

        digest = config_digest(config.model_dump(mode='json', exclude={'output'}))
        run_id = self._start_run(config, digest, out)
        metrics = {}
        try:
            result = self._commands[config.command](config)
            metrics = result.metrics
            self._write_result(config, digest, out, result)
            if result.failures:
                raise AuditFailure('; '.join(result.failures))
            exit_code = EXIT_OK
            print(f"✅ {config.command} finished: results in {out}")
        except AuditFailure as e:
            exit_code = EXIT_AUDIT
            self._write_error(out, e, exit_code)
            print(f"⚠️  {config.command} audit failed: {e}")
        except (ValidationError, ValueError, FileNotFoundError) as e:
            exit_code = EXIT_VALIDATION
            self._write_error(out, e, exit_code)
            print(f"❌ {config.command} rejected: {e}")
        self._finish_run(run_id, exit_code, metrics)
        return exit_code

    def _write_result(self, config: ExperimentConfig, digest: str, out: Path, result: CommandResult):
        write_csv(result.rows, out / 'results.csv', columns=result.columns)
        summary = {
            'command': config.command,
            'seed': config.seed,
            'mode': config.mode,
            'config_digest': digest,
            'bounds': config.bounds.model_dump(),
            'failures': result.failures,
            'passed': not result.failures,
        }
        summary.update(result.summary)
        export_to_json(summary, out / 'summary.json')
        if result.plot is not None:
            self.plotter.emit_plot(path=out / 'plot.svg', **result.plot)

    @staticmethod
    def _write_error(out: Path, exc: BaseException, exit_code: int):
        export_to_json({'error': type(exc).__name__, 'message': str(exc), 'exit_code': exit_code},
                       out / 'error.json')

    def _start_run(self, config: ExperimentConfig, digest: str, out: Path) -> Optional[int]:
        if not self.record_runs:
            return None
        try:
            init_db()
            manager = RunManager()
            run = manager.start_run(config.command, digest, config.seed, config.mode, str(out))
            manager.close()
            return run.id
        except SQLAlchemyError as e:
            logger.warning("run registry unavailable: %s", e)
            return None

    def _finish_run(self, run_id: Optional[int], exit_code: int, metrics: Dict[str, float]):
        if run_id is None:
            return
        try:
            manager = RunManager()
            manager.finish_run(run_id, exit_code)
            manager.record_metrics(run_id, metrics)
            manager.close()
        except SQLAlchemyError as e:
            logger.warning("could not record run %s: %s", run_id, e)

    def _map(self, func, items):
        """Map over independent cells; results come back in input order."""
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(func, items))

    # ------------------------------------------------------------------
    # SDHT schemes

    @staticmethod
    def _build_scheme(params, n: int, H0, H1) -> KeyedScheme:
        if params.channel is not None:
            return build_prop1_scheme(Channel.load(params.channel), H0, H1, n)
        return build_onebit_scheme(H0[0], H0[1], H1[0], n)

    def _evaluate(self, config: ExperimentConfig, scheme: KeyedScheme, H0, H1, trials: Optional[int],
                  threads: int):
        if config.mode == 'mc':
            return monte_carlo_evaluate(scheme, H0, H1, trials or Config.MC_TRIALS, config.seed, threads)
        return evaluate(scheme, H0, H1)

    def evaluate_scheme(self, config: ExperimentConfig) -> CommandResult:
        params = config.params
        H0, H1 = params.classes()
        if params.scheme is not None:
            scheme = load_scheme(params.scheme)
        else:
            scheme = self._build_scheme(params, params.n, H0, H1)
        report = self._evaluate(config, scheme, H0, H1, params.trials, self.threads)

        row = {'n': scheme.n, **{k: report.to_row()[k] for k in SCHEME_COLUMNS[1:]}}
        failures = []
        _check_bounds(config.bounds, failures, epsilon=report.epsilon, delta=report.delta)
        return CommandResult(
            rows=[row],
            columns=SCHEME_COLUMNS,
            summary={'report': report.to_dict(), 'scheme': scheme.to_json()},
            metrics={'epsilon': report.epsilon, 'delta': report.delta},
            failures=failures,
        )

    def sweep_n(self, config: ExperimentConfig) -> CommandResult:
        params = config.params
        H0, H1 = params.classes()

        def cell(n):
            scheme = self._build_scheme(params, n, H0, H1)
            return scheme, self._evaluate(config, scheme, H0, H1, params.trials, 1)

        cells = self._map(cell, params.n_values)
        rows = [{'n': scheme.n, **{k: report.to_row()[k] for k in SCHEME_COLUMNS[1:]}} for scheme, report in cells]

        failures = []
        for row in rows:
            _check_bounds(config.bounds, failures, delta=row['delta'], where=f"n={row['n']}")
        # epsilon_max is a statement about the largest n in the sweep
        last = max(rows, key=lambda r: r['n'])
        _check_bounds(config.bounds, failures, epsilon=last['epsilon'], where=f"n={last['n']}")

        ns = [r['n'] for r in rows]
        epsilons = [r['epsilon'] for r in rows]
        fit = _decay_fit(ns, epsilons)
        log_y = all(e > 0 for e in epsilons)
        order = np.argsort(ns)
        return CommandResult(
            rows=rows,
            columns=SCHEME_COLUMNS,
            summary={
                'decay_fit': fit,
                'max_delta': max(r['delta'] for r in rows),
                'reports': [report.to_dict() for _, report in cells],
            },
            metrics={'max_delta': max(r['delta'] for r in rows), 'final_epsilon': last['epsilon'],
                     **({'decay_slope': fit['slope']} if fit else {})},
            plot={
                'series': [('epsilon', [(ns[i], epsilons[i]) for i in order])],
                'log_y': log_y,
                'title': 'Correctness error vs n',
                'x_label': 'n',
                'y_label': 'epsilon',
            },
            failures=failures,
        )

    # ------------------------------------------------------------------
    # PSM

    def verify_psm(self, config: ExperimentConfig) -> CommandResult:
        params = config.params
        if params.protocol == 'counter':
            sizes = (2,) * params.clients
            residues = set(params.residues)
            table = truth_table(lambda *x: sum(x) % params.modulus in residues, sizes)
            program = counter_program(params.clients, params.modulus, residues)
            protocol = kilian_randomize(program, sizes, defect=params.defect)
        else:
            if params.function is not None:
                table = named_truth_table(params.function, params.clients, params.alphabet_size)
            else:
                table = np.asarray(params.truth_table, dtype=np.int64)
            if params.protocol == 'fkn':
                protocol = fkn_two_party(table, defect=params.defect)
            else:
                if params.function == 'majority' and table.shape == (2, 2, 2):
                    formula = majority_formula()
                else:
                    formula = formula_from_truth_table(table, table.shape)
                protocol = kilian_randomize(barrington_compile(formula), table.shape, defect=params.defect)

        if config.mode == 'mc':
            verification_mode = 'sampled'
        elif params.verification == 'auto':
            inputs = int(np.prod(table.shape))
            feasible = protocol.key_count * inputs <= Config.ENUMERATION_BUDGET
            verification_mode = 'exhaustive' if feasible else 'sampled'
        else:
            verification_mode = params.verification
        verification = psm_verify(protocol, table, verification_mode, params.trials, config.seed)

        failures = []
        if not verification.passed:
            failures.append(
                f"PSM verification failed: correctness={verification.correctness_passed}, "
                f"privacy={verification.privacy_passed}"
            )

        row = {
            'protocol': params.protocol,
            'verification': verification_mode,
            'correctness_passed': verification.correctness_passed,
            'privacy_passed': verification.privacy_passed,
            'key_bits': protocol.key_bits,
            'comm_bits': protocol.comm_bits,
            'epsilon': None,
            'delta': None,
        }
        summary = {
            'verification': verification.to_dict(),
            'cost_targets': es25_cost_targets(table.ndim, table.shape[0]).to_dict(),
            'sdht': None,
        }
        metrics = {'key_bits': protocol.key_bits, 'comm_bits': protocol.comm_bits}

        if params.H0 is not None and verification.passed:
            H0, H1 = params.classes()
            report = psm_to_sdht(table, protocol, H0, H1, mode='exact' if config.mode == 'exact' else 'sampled',
                                 verification=verification, trials=params.trials, seed=config.seed)
            row.update({'epsilon': report.epsilon, 'delta': report.delta})
            summary['sdht'] = report.to_dict()
            metrics.update({'epsilon': report.epsilon, 'delta': report.delta})
            _check_bounds(config.bounds, failures, epsilon=report.epsilon, delta=report.delta)

        return CommandResult(rows=[row], columns=list(row), summary=summary, metrics=metrics, failures=failures)

    # ------------------------------------------------------------------
    # Hellinger ratios

    def hellinger_sup(self, config: ExperimentConfig) -> CommandResult:
        params = config.params
        results = self._map(lambda theta: sup_ratio_binary(theta, params.grid_resolution), params.thetas)

        rows, failures = [], []
        for res in results:
            rows.append({
                'theta': res.theta,
                'max_value': res.max_value,
                'bound': res.bound,
                'argmax_a': res.argmax.a,
                'argmax_c': res.argmax.c,
                'grid_points': res.grid_points,
                'max_violation': res.max_violation,
                'lambda': 1.0 / res.max_value,
            })
            if not res.passed:
                failures.append(f"theta={res.theta}: grid max {res.max_value:.12g} or violation "
                                f"{res.max_violation:.3g} breaks the bound {res.bound:.12g}")
            _check_bounds(config.bounds, failures, ratio=res.max_value, where=f"theta={res.theta}")

        c_grid = np.logspace(-4.0, -0.01, 40)
        series = [(f"theta={theta:g}", [(float(np.log10(c)), f0c_closed_form(float(c), theta)) for c in c_grid])
                  for theta in params.thetas]
        overall = max(r['max_value'] for r in rows)
        return CommandResult(
            rows=rows,
            columns=list(rows[0]),
            summary={'max': overall, 'grid_resolution': params.grid_resolution,
                     'results': [res.to_dict() for res in results]},
            metrics={'max': overall},
            plot={'series': series, 'log_y': False, 'title': 'f(0, c) by theta',
                  'x_label': 'log10 c', 'y_label': 'f(0, c)'},
            failures=failures,
        )

    def _channels(self, config: ExperimentConfig, params) -> List[Channel]:
        channels = [Channel.load(path) for path in params.channels]
        for i in range(params.random_count):
            rng = counter_rng(config.seed, _CHANNEL_STREAM, i)
            outputs = params.random_outputs[i % len(params.random_outputs)]
            channels.append(Channel(rng.dirichlet(np.ones(outputs), size=2)))
        return channels

    def tradeoff_audit(self, config: ExperimentConfig) -> CommandResult:
        params = config.params
        theta = params.theta
        lam = lambda_inf(theta, params.grid_resolution)
        channels = self._channels(config, params)

        def cell(job):
            index, W, n = job
            L0, L1, L2 = scheme_laws(W, theta, n)
            return index, tradeoff_audit(L0, L1, L2, theta, lam=lam, strict=False)

        jobs = [(i, W, n) for i, W in enumerate(channels) for n in params.n_values]
        audits = self._map(cell, jobs)

        rows, failures = [], []
        for index, audit in audits:
            rows.append({'scheme': index, 'n': audit.n, 'tv01': audit.tv01, 'tv12': audit.tv12,
                         'bound': audit.bound, 'disjunct': audit.disjunct or 'none', 'passed': audit.passed})
            if not audit.passed:
                failures.append(f"scheme {index}, n={audit.n}: tv12={audit.tv12:.6g} > 1/2 and "
                                f"tv01={audit.tv01:.6g} < {audit.bound:.6g}")
        violations = sum(1 for r in rows if not r['passed'])
        return CommandResult(
            rows=rows,
            columns=list(rows[0]),
            summary={'theta': theta, 'lambda': lam, 'bound': tradeoff_bound(lam), 'schemes': len(channels),
                     'audits': len(rows), 'violations': violations},
            metrics={'lambda': lam, 'violations': violations},
            failures=failures,
        )

    def reduce_channel(self, config: ExperimentConfig) -> CommandResult:
        params = config.params
        theta = params.theta
        bound = ratio_limit(theta)
        channels = self._channels(config, params)
        reductions = self._map(lambda W: reduce_to_binary(W, theta), channels)

        rows, failures, details = [], [], []
        for index, red in enumerate(reductions):
            rows.append({'channel': index, 'step': 0, 'kind': 'initial', 'phase': 0, 'gamma': 0.0,
                         'ratio': red.initial})
            for step, s in enumerate(red.steps, start=1):
                rows.append({'channel': index, 'step': step, 'kind': s.kind, 'phase': s.phase,
                             'gamma': s.gamma, 'ratio': s.ratio})
            if red.final > bound + CERT_TOL:
                failures.append(f"channel {index}: final ratio {red.final:.12g} exceeds {bound:.12g}")
            _check_bounds(config.bounds, failures, ratio=max(red.trace), where=f"channel {index}")
            details.append({'channel': index, 'initial': red.initial, 'final': red.final,
                            'direction': red.direction, 'binary_channel': red.channel.to_json(),
                            'steps': [s.to_dict() for s in red.steps]})

        series = [(f"channel {i}", list(enumerate(red.trace))) for i, red in enumerate(reductions[:6])]
        worst = max(red.final for red in reductions)
        return CommandResult(
            rows=rows,
            columns=['channel', 'step', 'kind', 'phase', 'gamma', 'ratio'],
            summary={'theta': theta, 'bound': bound, 'max_final': worst, 'channels': details},
            metrics={'max_final': worst, 'bound': bound},
            plot={'series': series, 'log_y': False, 'title': 'Hellinger ratio along the reduction',
                  'x_label': 'step', 'y_label': 'ratio'},
            failures=failures,
        )


def _parse_args(argv):
    parser = argparse.ArgumentParser(prog='sdht-lab', description='Secure distributed hypothesis testing lab')
    parser.add_argument('--config', required=True, help='experiment config (JSON)')
    parser.add_argument('--out', default=None, help='output directory')
    parser.add_argument('--seed', type=int, default=None, help='u64 seed, overrides the config')
    parser.add_argument('--threads', type=int, default=None, help='worker threads (default SDHT_LAB_THREADS)')
    parser.add_argument('--mode', choices=['exact', 'mc'], default=None, help='exact enumeration or Monte Carlo')
    return parser.parse_args(argv)


def main(argv=None) -> int:
    """Main entry point."""
    args = _parse_args(argv)
    logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL, logging.WARNING),
                        format='%(levelname)s %(name)s: %(message)s')

    out = Path(args.out) if args.out else None
    try:
        Config.validate()
        if args.threads is not None and args.threads < 1:
            raise ValueError(f"--threads must be >= 1, got {args.threads}")
        config = load_config(args.config)
        overrides = {key: value for key, value in (('seed', args.seed), ('mode', args.mode)) if value is not None}
        if overrides:
            config = ExperimentConfig.model_validate({**config.model_dump(), **overrides})
    except (ValidationError, ValueError, FileNotFoundError) as e:
        out = out or Config.OUTPUT_DIR
        out.mkdir(parents=True, exist_ok=True)
        SdhtLabApp._write_error(out, e, EXIT_VALIDATION)
        print(f"❌ Invalid configuration: {e}")
        return EXIT_VALIDATION

    app = SdhtLabApp(threads=args.threads)
    return app.run(config, output_dir=out)


if __name__ == '__main__':
    sys.exit(main())
