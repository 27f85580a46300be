from __future__ import annotations

import os

import pytest

SLOW_ENV = 'AGE_ESTIMATOR_SLOW'


def pytest_collection_modifyitems(config, items):
    if os.environ.get(SLOW_ENV) == '1':
        return
    skip = pytest.mark.skip(reason=f'set {SLOW_ENV}=1 to run desk-scale checks')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
