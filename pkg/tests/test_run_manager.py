import math

import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from database import Base
from run_manager import RunManager


@pytest.fixture
def manager():
    engine = create_engine('sqlite://')
    Base.metadata.create_all(bind=engine)
    session = sessionmaker(bind=engine)()
    manager = RunManager(session)
    yield manager
    manager.close()
    engine.dispose()


def test_start_and_finish_run(manager):
    run = manager.start_run('sweep-n', 'ab' * 32, 2 ** 64 - 1, mode='exact', output_dir='/tmp/out')
    assert run.status == 'running'
    assert run.seed == str(2 ** 64 - 1)
    assert run.started_at is not None

    finished = manager.finish_run(run.id, 0)
    assert finished.status == 'succeeded'
    assert finished.exit_code == 0
    assert finished.finished_at is not None

    failed = manager.finish_run(manager.start_run('sweep-n', 'cd' * 32, 1).id, 3)
    assert failed.status == 'failed'


def test_unknown_run(manager):
    with pytest.raises(ValueError):
        manager.get_run(404)
    with pytest.raises(ValueError):
        manager.record_metrics(404, {'epsilon': 0.1})


def test_record_metrics_skips_unusable_values(manager):
    run = manager.start_run('evaluate-scheme', 'ef' * 32, 0)
    rows = manager.record_metrics(run.id, {
        'epsilon': 0.25,
        'key_bits': 1,
        'passed': True,
        'label': 'fkn',
        'ratio': math.inf,
        'gap': math.nan,
    })
    assert [r.name for r in rows] == ['epsilon', 'key_bits']
    assert manager.get_metrics(run.id) == {'epsilon': 0.25, 'key_bits': 1.0}


def test_list_runs_filters_and_orders(manager):
    first = manager.start_run('sweep-n', '00' * 32, 1)
    second = manager.start_run('verify-psm', '11' * 32, 2)
    third = manager.start_run('sweep-n', '22' * 32, 3)
    manager.finish_run(third.id, 0)

    assert [r.id for r in manager.list_runs()] == [third.id, second.id, first.id]
    assert [r.id for r in manager.list_runs(command='sweep-n')] == [third.id, first.id]
    assert [r.id for r in manager.list_runs(status='succeeded')] == [third.id]
    assert len(manager.list_runs(limit=2)) == 2
