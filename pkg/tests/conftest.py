from pathlib import Path

import pytest

from acdc_opf import read_case
from acdc_opf.opf import solve_central
from acdc_opf.partition import partition

DATA = Path(__file__).parent / "data"


def datafile(name: str) -> Path:
    return DATA / name


def _connection_is_disabled(*args, **kwargs):
    raise Exception(
        f"Your code tried to open a connection with: {args}, {kwargs}. "
        "Unit tests only talk over local socket pairs."
    )


@pytest.fixture(autouse=True)
def no_connections(monkeypatch):
    """Remove socket.create_connection for all tests."""
    monkeypatch.setattr("socket.create_connection", _connection_is_disabled)


@pytest.fixture(scope="session")
def case():
    cache = {}

    def load(name: str):
        if name not in cache:
            cache[name] = read_case(str(datafile(name + ".yaml")))
        return cache[name]

    return load


@pytest.fixture(scope="session")
def central(case):
    """Centralized solutions, solved once per session"""
    cache = {}

    def get(name: str):
        if name not in cache:
            cache[name] = solve_central(case(name))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def parts(case):
    cache = {}

    def get(name: str):
        if name not in cache:
            cache[name] = partition(case(name))
        return cache[name]

    return get
