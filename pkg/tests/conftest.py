import functools

import pytest

from slicesim.config import parse_config
from slicesim.experiments import run_scenario


def config(name, extra=""):
    return parse_config(f'[scenario]\nname = "{name}"\n{extra}')


@functools.lru_cache(maxsize=None)
def cached_report(name, extra=""):
    return run_scenario(config(name, extra))


@pytest.fixture
def report():
    return cached_report
