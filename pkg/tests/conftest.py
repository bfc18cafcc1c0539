import os
import sys

import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY_DIR = os.path.join(REPO_ROOT, "data", "toy")

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

try:
    from hypothesis import settings

    settings.register_profile("suite", deadline=None, max_examples=50)
    settings.load_profile("suite")
except ImportError:
    pass


@pytest.fixture(scope="session")
def toy_dir():
    return TOY_DIR


@pytest.fixture(scope="session")
def toy_graph():
    from kgwriter import kg

    return kg.load_triples(os.path.join(TOY_DIR, "triples.tsv"))


@pytest.fixture()
def toy_context(toy_graph):
    from kgwriter import kg

    return kg.load_sentences(os.path.join(TOY_DIR, "sentences.jsonl"), toy_graph)
