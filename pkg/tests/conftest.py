import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from actdst.corpus import load_dialogues  # noqa: E402
from actdst.ontology import load_ontology  # noqa: E402
from actdst.training import RunConfig  # noqa: E402

DATA = resources.files("actdst") / "data"


@pytest.fixture(scope="session")
def data_dir():
    return Path(str(DATA))


@pytest.fixture(scope="session")
def multiwoz_ontology(data_dir):
    return load_ontology(data_dir / "multiwoz21_ontology.json")


@pytest.fixture(scope="session")
def train_booking(data_dir, multiwoz_ontology):
    return load_dialogues(data_dir / "train_booking" / "dialogue.json", multiwoz_ontology)[0]


@pytest.fixture(scope="session")
def micro_ontology(data_dir):
    return load_ontology(data_dir / "micro" / "ontology.json")


@pytest.fixture(scope="session")
def micro_train(data_dir, micro_ontology):
    return load_dialogues(data_dir / "micro" / "train.json", micro_ontology)


@pytest.fixture
def tiny_config():
    """Desk-scale dimensions for fast tests."""
    return RunConfig(word_dim=10, char_dim=6, role_dim=4, char_emb_dim=4, max_epochs=3, patience=None, seed=0)
