import os

import pytest
import pytest_asyncio
from httpx import ASGITransport, AsyncClient

# Keep the service from looking for a checkpoint while the tests import it.
os.environ["CHECKPOINT_PATH"] = ""

from app.config import AttentionConfig, settings
from app.domain import generate_instance
from app.main import app
from app.models import Domain
from app.nn import save_checkpoint
from app.policy import PolicyModel
from app.train import checkpoint_meta

RUN_SLOW = os.environ.get("CONCLAVE_RUN_SLOW") == "1"
slow = pytest.mark.skipif(not RUN_SLOW, reason="set CONCLAVE_RUN_SLOW=1 to run")


@pytest.fixture(autouse=True)
def restore_settings():
    """
    Commands and benchmark runs write into the global settings
    (budget mode, team size cap); undo that after every test.
    """
    snapshot = settings.model_dump()
    yield
    for key, value in snapshot.items():
        setattr(settings, key, value)


@pytest.fixture
def ride_config():
    """Tiny ridesharing policy shape (float64 all the way)."""
    return AttentionConfig(d_x=4, d_h=8, heads=2, d_ff=16, blocks=1)


@pytest.fixture
def team_config():
    return AttentionConfig(d_x=12, d_h=8, heads=2, d_ff=16, blocks=1)


@pytest.fixture
def ride_model(ride_config):
    return PolicyModel(ride_config, seed=3)


@pytest.fixture
def uniform_model():
    """gamma = 0: every unmasked action is equally likely."""
    return PolicyModel(AttentionConfig(d_x=4, d_h=8, heads=2, d_ff=16, blocks=1, gamma=0.0), seed=0)


@pytest.fixture
def ride_instance():
    return generate_instance(Domain.RIDESHARING, 5, 7)


@pytest.fixture
def team_instance():
    return generate_instance(Domain.TEAM_FORMATION, 6, 3)


@pytest.fixture
def ride_checkpoint(tmp_path, ride_model):
    path = tmp_path / "ride.ckpt"
    save_checkpoint(path, ride_model.params, checkpoint_meta(ride_model, Domain.RIDESHARING, 0.05))
    return path


@pytest.fixture
def uniform_checkpoint(tmp_path, uniform_model):
    path = tmp_path / "uniform.ckpt"
    save_checkpoint(path, uniform_model.params, checkpoint_meta(uniform_model, Domain.RIDESHARING, 0.0))
    return path


@pytest_asyncio.fixture(name="client")
async def client_fixture():
    """
    Async client over the ASGI app. The lifespan does not run under
    ASGITransport, so app.state starts empty (no checkpoint loaded).
    """
    app.state.model = None
    app.state.meta = None
    async with AsyncClient(transport=ASGITransport(app=app), base_url="http://test") as c:
        yield c
