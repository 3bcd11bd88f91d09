"""
Shared pytest configuration

Puts the repository root on sys.path and gates slow tests behind RUN_SLOW=1.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running experiment, enabled with RUN_SLOW=1')


def pytest_collection_modifyitems(config, items):
    if os.getenv('RUN_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason='set RUN_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
