import pytest
import yaml

from ibac.config import EnvConfig, HeadConfig, ModelConfig, RunConfig, TrainConfig, plain
from ibac.envs.dataset import generate
from ibac.models import IdmModel, VibModel
from ibac.tensor_core import Rng


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run multi-seed trend checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-seed statistical trend check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_env_config():
    return EnvConfig(kind="pointmass", nuisance_dim=3, episode_len=12, episodes=6, seed=3)


@pytest.fixture
def tiny_dataset(tiny_env_config):
    return generate(tiny_env_config)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(d_z=2, hidden=(5,))


@pytest.fixture
def tiny_run_config(tiny_env_config, tiny_model_config, tmp_path):
    return RunConfig(run_id="tiny", out_dir=str(tmp_path / "runs"), env=tiny_env_config, model=tiny_model_config,
                     train=TrainConfig(epochs=3, batch_size=16, lr=1e-2, seed=11, log_every=1),
                     head=HeadConfig(m=10, hidden=(8,), epochs=20, n_codes=3, classifier_epochs=3))


@pytest.fixture
def write_yaml(tmp_path):
    def _write(config, name="config.yaml"):
        path = tmp_path / name
        data = config if isinstance(config, dict) else plain(config)
        path.write_text(yaml.safe_dump(data, sort_keys=True), encoding="utf-8")
        return path
    return _write


def random_model(kind, d_obs=3, d_z=2, hidden=(4,), residual=False, seed=0, scale=1.0):
    cls = VibModel if kind == "vib" else IdmModel
    model = cls.build(d_obs, ModelConfig(d_z=d_z, hidden=hidden, residual=residual), Rng(seed))
    rng = Rng(seed).spawn("biases")
    return model.with_params(scale * model.params + 0.1 * rng.normal(model.params.shape[0]))


@pytest.fixture
def make_model():
    return random_model
