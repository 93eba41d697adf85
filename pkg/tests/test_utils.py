import json
import logging

import numpy as np
import pandas as pd
import pytest

from src.opad.utils import read_npz, save_results, save_results_csv, setup_logging, write_npz


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    logging.basicConfig(level=logging.WARNING, handlers=[logging.StreamHandler()], force=True)


def test_setup_logging_writes_file(tmp_path):
    log_file = tmp_path / "logs" / "run.log"
    setup_logging("debug", str(log_file))
    logging.getLogger("opad.test").debug("hello from the test")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert logging.getLogger().level == logging.DEBUG
    assert "hello from the test" in log_file.read_text()


def test_npz_is_byte_deterministic(tmp_path):
    arrays = {'b': np.arange(6).reshape(2, 3), 'a': np.linspace(0.0, 1.0, 5)}
    metadata = {'seed': np.int64(3), 'ids': {4, 1}, 'name': "run"}
    first = write_npz(str(tmp_path / "first.npz"), arrays, metadata)
    second = write_npz(str(tmp_path / "second.npz"), dict(reversed(list(arrays.items()))), metadata)
    assert open(first, 'rb').read() == open(second, 'rb').read()
    loaded, meta = read_npz(first)
    assert np.array_equal(loaded['b'], arrays['b'])
    assert meta == {'seed': 3, 'ids': [1, 4], 'name': "run"}


def test_read_npz_needs_header(tmp_path):
    path = tmp_path / "plain.npz"
    np.savez(path, x=np.zeros(2))
    with pytest.raises(ValueError):
        read_npz(str(path))


def test_results_helpers(tmp_path):
    assert save_results({'value': np.float64(0.5)}, str(tmp_path / "out" / "results.json"))
    assert json.loads((tmp_path / "out" / "results.json").read_text()) == {'value': 0.5}
    assert not save_results({'bad': object()}, str(tmp_path / "bad.json"))
    path = save_results_csv(pd.DataFrame({'x': [0.1, 2.0]}), str(tmp_path / "table.csv"))
    assert open(path).read() == "x\n0.1\n2\n"
