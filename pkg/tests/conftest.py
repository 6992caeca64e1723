import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from openintent.encoder import EncoderConfig  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=12, vocab_size=11, max_seq_len=7, feature_dim=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def arrays_of(params):
    return {k: p.data.copy() for k, p in params.items()}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if not item.module.__name__.endswith("test_acceptance"):
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        label = (item.function.__doc__ or item.name).strip().splitlines()[0]
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        verdict = "PASS" if rep.passed else "FAIL"
        line = f"{verdict}  {label}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)
