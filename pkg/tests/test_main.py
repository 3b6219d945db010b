import json

import pandas as pd
import pytest

from channels import separating_channel
from main import EXIT_AUDIT, EXIT_OK, EXIT_VALIDATION, main
from prob_core import FiniteDistribution
from run_manager import RunManager
from sdht_engine import build_onebit_scheme

ONEBIT = {'H0': [[0.7, 0.3], [0.3, 0.7]], 'H1': [[0.5, 0.5]]}


def write_config(directory, command, parameters, **extra):
    path = directory / f'{command}.json'
    path.write_text(json.dumps({'command': command, 'parameters': parameters, **extra}))
    return path


def run(config_path, out, *flags):
    return main(['--config', str(config_path), '--out', str(out), *flags])


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def test_sweep_n_exact(tmp_path):
    config = write_config(tmp_path, 'sweep-n', {**ONEBIT, 'n_values': [20, 40, 60]},
                          bounds={'delta_max': 1e-12})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK

    frame = pd.read_csv(out / 'results.csv')
    assert list(frame.columns) == ['n', 'epsilon', 'delta', 'comm_bits', 'key_bits']
    assert (frame['delta'] <= 1e-12).all()
    assert frame.loc[frame['n'] == 20, 'epsilon'].item() == pytest.approx(527900 / 1048576, abs=1e-12)
    assert frame['epsilon'].is_monotonic_decreasing

    summary = read_json(out / 'summary.json')
    assert summary['passed']
    assert summary['decay_fit']['slope'] < 0
    assert str(out) not in json.dumps(summary)
    assert (out / 'plot.svg').exists()
    assert not (out / 'error.json').exists()


def test_outputs_are_byte_identical_across_runs(tmp_path):
    config = write_config(tmp_path, 'sweep-n', {**ONEBIT, 'n_values': [8, 16]})
    assert run(config, tmp_path / 'a') == EXIT_OK
    assert run(config, tmp_path / 'b') == EXIT_OK
    for name in ('results.csv', 'summary.json', 'plot.svg'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_monte_carlo_outputs_do_not_depend_on_threads(tmp_path):
    config = write_config(tmp_path, 'sweep-n', {**ONEBIT, 'n_values': [8, 12, 16], 'trials': 3000},
                          mode='mc', seed=17)
    assert run(config, tmp_path / 'one', '--threads', '1') == EXIT_OK
    assert run(config, tmp_path / 'many', '--threads', '3') == EXIT_OK
    assert (tmp_path / 'one' / 'results.csv').read_bytes() == (tmp_path / 'many' / 'results.csv').read_bytes()


def test_seed_override_reaches_the_summary(tmp_path):
    config = write_config(tmp_path, 'sweep-n', {**ONEBIT, 'n_values': [8], 'trials': 500}, mode='mc')
    assert run(config, tmp_path / 'out', '--seed', str(2 ** 64 - 1)) == EXIT_OK
    assert read_json(tmp_path / 'out' / 'summary.json')['seed'] == 2 ** 64 - 1


def test_missing_channel_file_is_a_validation_error(tmp_path):
    config = write_config(tmp_path, 'evaluate-scheme', {**ONEBIT, 'n': 8, 'channel': 'missing.json'})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_VALIDATION
    error = read_json(out / 'error.json')
    assert error['exit_code'] == EXIT_VALIDATION
    assert error['error'] == 'ValidationError'


def test_missing_config_file(tmp_path):
    out = tmp_path / 'out'
    assert run(tmp_path / 'nope.json', out) == EXIT_VALIDATION
    assert read_json(out / 'error.json')['error'] == 'FileNotFoundError'


def test_unknown_parameter_is_rejected(tmp_path):
    config = write_config(tmp_path, 'hellinger-sup', {'thetas': [0.5], 'resolution': 500})
    assert run(config, tmp_path / 'out') == EXIT_VALIDATION


def test_bound_violation_exits_with_audit_code(tmp_path):
    config = write_config(tmp_path, 'sweep-n', {**ONEBIT, 'n_values': [20]}, bounds={'epsilon_max': 1e-6})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_AUDIT
    error = read_json(out / 'error.json')
    assert error == {'error': 'AuditFailure', 'message': error['message'], 'exit_code': EXIT_AUDIT}
    assert 'epsilon_max' in error['message']
    assert not read_json(out / 'summary.json')['passed']


def test_stale_error_file_is_removed(tmp_path):
    out = tmp_path / 'out'
    bad = write_config(tmp_path, 'sweep-n', {**ONEBIT, 'n_values': [20]}, bounds={'epsilon_max': 1e-6})
    assert run(bad, out) == EXIT_AUDIT
    good = write_config(tmp_path, 'hellinger-sup', {'thetas': [0.5], 'grid_resolution': 200})
    assert run(good, out) == EXIT_OK
    assert not (out / 'error.json').exists()


def test_evaluate_scheme_with_channel_file(tmp_path):
    mus = [FiniteDistribution([0.5, 0.5, 0.0]), FiniteDistribution([0.5, 0.0, 0.5]),
           FiniteDistribution([0.0, 0.5, 0.5])]
    (tmp_path / 'w.json').write_text(json.dumps(separating_channel(*mus).to_json()))
    config = write_config(tmp_path, 'evaluate-scheme',
                          {'H0': [mus[0].tolist(), mus[1].tolist()], 'H1': [mus[2].tolist()], 'n': 16,
                           'channel': 'w.json'}, bounds={'delta_max': 1e-12})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK
    summary = read_json(out / 'summary.json')
    assert summary['report']['delta'] <= 1e-12
    assert summary['report']['key_bits'] == 0


@pytest.mark.parametrize('missing', ['n', 'key_count', 'channels', 'detector'])
def test_malformed_scheme_file_is_a_validation_error(tmp_path, missing):
    scheme = build_onebit_scheme(*(FiniteDistribution.bernoulli(p) for p in (0.3, 0.7, 0.5)), 6).to_json()
    del scheme[missing]
    (tmp_path / 'scheme.json').write_text(json.dumps(scheme))
    config = write_config(tmp_path, 'evaluate-scheme', {**ONEBIT, 'scheme': 'scheme.json'})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_VALIDATION
    error = read_json(out / 'error.json')
    assert error['exit_code'] == EXIT_VALIDATION
    assert error['error'] == 'ValidationError'
    assert missing in error['message']
    manager = RunManager()
    latest = manager.list_runs(command='evaluate-scheme', limit=1)[0]
    assert latest.status == 'failed'
    assert latest.exit_code == EXIT_VALIDATION
    manager.close()


def test_scheme_file_round_trip(tmp_path):
    scheme = build_onebit_scheme(*(FiniteDistribution.bernoulli(p) for p in (0.3, 0.7, 0.5)), 6)
    (tmp_path / 'scheme.json').write_text(json.dumps(scheme.to_json()))
    config = write_config(tmp_path, 'evaluate-scheme', {**ONEBIT, 'scheme': 'scheme.json'})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK
    summary = read_json(out / 'summary.json')
    assert summary['scheme']['n'] == 6
    assert summary['report']['key_bits'] == scheme.key_bits


def test_hellinger_sup(tmp_path):
    config = write_config(tmp_path, 'hellinger-sup', {'thetas': [0.25, 0.5], 'grid_resolution': 300})
    out = tmp_path / 'out'
    assert run(config, out, '--threads', '2') == EXIT_OK
    frame = pd.read_csv(out / 'results.csv')
    half = frame.loc[frame['theta'] == 0.5].iloc[0]
    assert half['max_value'] <= 5.828427 + 1e-6
    assert half['max_value'] >= 0.95 * 5.828427
    assert (out / 'plot.svg').exists()


def test_hellinger_sup_ratio_bound(tmp_path):
    config = write_config(tmp_path, 'hellinger-sup', {'thetas': [0.5], 'grid_resolution': 200},
                          bounds={'ratio_max': 5.0})
    assert run(config, tmp_path / 'out') == EXIT_AUDIT


def test_verify_psm_fkn(tmp_path):
    config = write_config(tmp_path, 'verify-psm', {'protocol': 'fkn', 'function': 'and'})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK
    summary = read_json(out / 'summary.json')
    assert summary['verification']['mode'] == 'exhaustive'
    assert summary['verification']['passed']


def test_verify_psm_detects_defect(tmp_path):
    config = write_config(tmp_path, 'verify-psm', {'protocol': 'fkn', 'function': 'and', 'defect': 'drop_pad'})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_AUDIT
    assert not read_json(out / 'summary.json')['verification']['privacy_passed']


def test_verify_psm_counter_as_sdht(tmp_path):
    config = write_config(tmp_path, 'verify-psm', {
        'protocol': 'counter', 'clients': 3, 'modulus': 2, 'residues': [1],
        'H0': [[0.9, 0.1], [0.85, 0.15]], 'H1': [[0.1, 0.9]],
    })
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK
    sdht = read_json(out / 'summary.json')['sdht']
    assert sdht['epsilon'] == pytest.approx(0.3285, abs=1e-12)
    assert sdht['delta'] == pytest.approx(0.0845, abs=1e-12)


def test_verify_psm_unsupported_counter(tmp_path):
    config = write_config(tmp_path, 'verify-psm', {'protocol': 'counter', 'clients': 2, 'modulus': 3,
                                                   'residues': [0]})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_VALIDATION
    assert read_json(out / 'error.json')['error'] == 'UnsupportedPredicateError'


def test_tradeoff_audit(tmp_path):
    config = write_config(tmp_path, 'tradeoff-audit', {'theta': 0.5, 'n_values': [4, 8], 'random_count': 6,
                                                       'random_outputs': [2, 3], 'grid_resolution': 200})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK
    summary = read_json(out / 'summary.json')
    assert summary['violations'] == 0
    assert summary['audits'] == 12


def test_reduce_channel(tmp_path):
    (tmp_path / 'w.json').write_text(json.dumps({'rows': [[0.1, 0.2, 0.7], [0.3, 0.4, 0.3]]}))
    config = write_config(tmp_path, 'reduce-channel', {'theta': 0.5, 'channels': ['w.json'], 'random_count': 3})
    out = tmp_path / 'out'
    assert run(config, out) == EXIT_OK
    frame = pd.read_csv(out / 'results.csv')
    assert sorted(frame['channel'].unique()) == [0, 1, 2, 3]
    summary = read_json(out / 'summary.json')
    assert summary['max_final'] <= summary['bound'] + 1e-9


def test_runs_are_recorded(tmp_path):
    config = write_config(tmp_path, 'verify-psm', {'protocol': 'fkn', 'function': 'or'})
    assert run(config, tmp_path / 'out') == EXIT_OK
    manager = RunManager()
    latest = manager.list_runs(command='verify-psm', limit=1)[0]
    assert latest.status == 'succeeded'
    assert manager.get_metrics(latest.id)['key_bits'] == 3.0
    manager.close()


@pytest.mark.parametrize('command,parameters,mode', [
    ('evaluate-scheme', {**ONEBIT, 'n': 10, 'trials': 2000}, 'mc'),
    ('sweep-n', {**ONEBIT, 'n_values': [6, 10]}, 'exact'),
    ('verify-psm', {'protocol': 'barrington', 'function': 'majority', 'clients': 3, 'trials': 500}, 'exact'),
    ('hellinger-sup', {'thetas': [0.5], 'grid_resolution': 150}, 'exact'),
    ('tradeoff-audit', {'theta': 0.5, 'n_values': [3], 'random_count': 2, 'grid_resolution': 150}, 'exact'),
    ('reduce-channel', {'theta': 0.25, 'random_count': 2}, 'exact'),
])
def test_every_command_is_deterministic(tmp_path, command, parameters, mode):
    config = write_config(tmp_path, command, parameters, mode=mode, seed=99)
    first = run(config, tmp_path / 'first')
    second = run(config, tmp_path / 'second')
    assert first == second
    for name in ('results.csv', 'summary.json'):
        assert (tmp_path / 'first' / name).read_bytes() == (tmp_path / 'second' / name).read_bytes()
