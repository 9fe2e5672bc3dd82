"""Error exit codes and log output formats."""

import io
import json
import logging

import pytest

from errors import ConfigError, DataError, InvariantError, PipelineError
from log_config import setup_logging


@pytest.fixture
def restore_root():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


@pytest.mark.parametrize('error, code', [(ConfigError, 1), (DataError, 2), (InvariantError, 3),
                                         (PipelineError, 3)])
def test_exit_codes(error, code):
    assert error('x').exit_code == code


def test_hierarchy():
    assert issubclass(ConfigError, ValueError)
    assert issubclass(DataError, ValueError)
    assert not issubclass(InvariantError, ValueError)
    for error in (ConfigError, DataError, InvariantError):
        assert issubclass(error, PipelineError)


def test_json_logs(restore_root):
    stream = io.StringIO()
    setup_logging('INFO', json_logs=True, stream=stream)
    logging.getLogger('pose').info("estimated scene", extra={'scene_id': 'scene_00001', 'estimates': 4})
    record = json.loads(stream.getvalue().strip().splitlines()[-1])
    assert record['level'] == 'INFO'
    assert record['message'] == 'estimated scene'
    assert record['scene_id'] == 'scene_00001'
    assert record['estimates'] == 4
    assert record['name'] == 'pose'


def test_text_logs_and_level(restore_root):
    stream = io.StringIO()
    setup_logging('warning', stream=stream)
    log = logging.getLogger('pose')
    log.info("hidden")
    log.warning("shown")
    out = stream.getvalue()
    assert 'hidden' not in out
    assert 'WARNING pose: shown' in out


def test_setup_replaces_handlers(restore_root):
    setup_logging(stream=io.StringIO())
    setup_logging(stream=io.StringIO())
    assert len(logging.getLogger().handlers) == 1
