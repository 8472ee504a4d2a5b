from __future__ import annotations

from pathlib import Path

import pytest

import cmdtriage
from cmdtriage.config import build_engine, load_config
from cmdtriage.embedding import load_table

DATA = Path(cmdtriage.__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return DATA / "fixtures"


@pytest.fixture(scope="session")
def mini_table():
    return load_table(DATA / "mini_embeddings.txt")


@pytest.fixture()
def separation_engine(fixtures_dir):
    return build_engine(load_config(fixtures_dir / "separation" / "config.json"))


@pytest.fixture()
def cascade_engine(fixtures_dir):
    return build_engine(load_config(fixtures_dir / "cascade" / "config.json"))


@pytest.fixture()
def sim_engine(fixtures_dir):
    return build_engine(load_config(fixtures_dir / "sim" / "config.json"))


@pytest.fixture()
def demo_engine(fixtures_dir):
    return build_engine(load_config(fixtures_dir / "demo" / "config.json"))
