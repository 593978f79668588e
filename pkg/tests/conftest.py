import os

import numpy as np
import pytest

from cpheno.config import DATA_DIR, TOY_CONFIG, TOY_CORPUS, TOY_ONTOLOGY, apply_overrides, load_config
from cpheno.corpus.data_fetcher import DataFetcher
from cpheno.ontology import parse_ontology

ARACHNODACTYLY = "HP:0001166"
SCOLIOSIS = "HP:0002650"
MYOPIA = "HP:0000545"
ECTOPIA_LENTIS = "HP:0001083"
MICROANEURYSMS = "HP:0031933"
SKELETAL = "HP:0000924"
EYE = "HP:0000478"

TERMINAL_IDS = [ARACHNODACTYLY, SCOLIOSIS, MYOPIA, ECTOPIA_LENTIS, MICROANEURYSMS]


def pytest_collection_modifyitems(config, items):
    skip = pytest.mark.skip(reason="set CPHENO_HPO_OBO to the real ontology file")
    if os.environ.get("CPHENO_HPO_OBO"):
        return
    for item in items:
        if "network" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def toy_graph():
    return parse_ontology(TOY_ONTOLOGY)


@pytest.fixture(scope="session")
def toy_articles():
    return DataFetcher(TOY_CORPUS).fetch_articles()


@pytest.fixture
def toy_config(tmp_path):
    cfg = load_config(TOY_CONFIG)
    return apply_overrides(cfg, [f"output_root={tmp_path / 'run'}"])


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
