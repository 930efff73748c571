import numpy as np
import pytest

from dpl.data import Sample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_samples(rng, n, d, K, patterns=(0, 1, 2), multilabel=False):
    out = []
    for _ in range(n):
        p = int(rng.choice(patterns))
        img = None if p == 1 else rng.standard_normal(d)
        txt = None if p == 2 else rng.standard_normal(d)
        label = rng.random(K) < 0.5 if multilabel else int(rng.integers(0, K))
        out.append(Sample(img, txt, label))
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
