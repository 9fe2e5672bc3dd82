"""
Logging setup for the command line and the HTTP service.
Library modules only call logging.getLogger(__name__).
"""

import logging
import sys

from pythonjsonlogger.json import JsonFormatter

TEXT_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
JSON_FIELDS = '%(asctime)s %(levelname)s %(name)s %(message)s'


def setup_logging(level='INFO', json_logs=False, stream=None):
    """
    Configure the root logger once.

    Args:
        level: logging level name or number
        json_logs: emit one JSON object per record instead of text lines
        stream: output stream, stderr by default
    """
    handler = logging.StreamHandler(stream or sys.stderr)
    if json_logs:
        handler.setFormatter(JsonFormatter(JSON_FIELDS, rename_fields={'levelname': 'level'}))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level if isinstance(level, int) else str(level).upper())
    return root
