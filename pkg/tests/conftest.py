import numpy as np
import pytest
from hypothesis import settings

from promptlab.bench.data import DataConfig, generate_b2n
from promptlab.encoder import DualEncoder, ModelConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

SMALL = ModelConfig(embed_dim=16, layers=2, heads=2, patch_size=4, image_size=16, vocab_size=16,
                    max_text_len=4, prompt_depth=2, n_visual_prompts=2, n_text_prompts=2)
SMALL_DATA = DataConfig(n_classes=4, image_size=16, shots=4, n_test=6, pretrain_per_class=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_teacher():
    return DualEncoder(SMALL, np.random.default_rng(0)).freeze()


@pytest.fixture(scope="session")
def small_dataset():
    return generate_b2n(SMALL_DATA, 0)


# acceptance criteria lines, printed once at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
