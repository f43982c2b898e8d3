import json
import os

import pytest

from wsa_separation.model import ModelConfig


def _load_models(rootdir):
    with open(os.path.join(os.path.dirname(os.path.abspath(__file__)), "conftest.json")) as f:
        config = json.load(f)
    return config.get("models", {})


def pytest_generate_tests(metafunc):
    models = _load_models(metafunc.config.rootdir)
    if 'model_id' in metafunc.fixturenames:
        metafunc.parametrize("model_id", sorted(models.keys()))
    if 'models' in metafunc.fixturenames:
        metafunc.parametrize("models", [models])


@pytest.fixture
def model_config(models, model_id):
    params = {k: v for k, v in models[model_id].items() if k != 'description'}
    return ModelConfig.from_dict(params)
