import numpy as np
import pytest

from melpatch.autoencoder import init_params
from melpatch.codec import MelPatchCodec
from melpatch.frontend import FrontendConfig
from melpatch.quantizer import Codebook


@pytest.fixture(scope="session")
def toy_codec():
    """Random (untrained) full-projection codec with K=64."""
    rng = np.random.default_rng(11)
    params = init_params(16, 32, 8, seed=3, data_mean=-4.0, data_scale=3.0)
    entries = rng.normal(0.0, 1.0, size=(64, 8))
    return MelPatchCodec(Codebook(entries, params.to_tensors()), FrontendConfig())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
