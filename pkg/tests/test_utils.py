import json
import math

import numpy as np

from utils import config_digest, export_to_json, to_jsonable, write_csv


def test_to_jsonable():
    data = {'a': np.float64(0.5), 'b': (np.int64(3), np.bool_(True)), 'c': np.arange(2), 'd': math.inf,
            'e': math.nan}
    assert to_jsonable(data) == {'a': 0.5, 'b': [3, True], 'c': [0, 1], 'd': 'inf', 'e': 'nan'}


def test_export_to_json_is_canonical(tmp_path):
    path = export_to_json({'b': 1, 'a': [1.5]}, tmp_path / 'out' / 'summary.json')
    text = open(path, encoding='utf-8').read()
    assert text.endswith('}\n')
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {'a': [1.5], 'b': 1}


def test_write_csv(tmp_path):
    path = write_csv([{'n': 8, 'epsilon': 0.25}, {'n': 16, 'epsilon': 0.0625}], tmp_path / 'r.csv',
                     columns=['n', 'epsilon'])
    with open(path, 'rb') as f:
        raw = f.read()
    assert raw == b'n,epsilon\n8,0.25\n16,0.0625\n'


def test_config_digest_ignores_key_order():
    assert config_digest({'a': 1, 'b': [2, 3]}) == config_digest({'b': (2, 3), 'a': 1})
    assert config_digest({'a': 1}) != config_digest({'a': 2})
    assert len(config_digest({})) == 64
