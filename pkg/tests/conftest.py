import numpy as np
import pytest

from cola.data_model import Dataset, Sample


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {name}: {'PASS' if report.passed else 'FAIL'}")


def make_dataset(name, token_lists, texts=None, difficulties=None):
    samples = []
    for i, tokens in enumerate(token_lists):
        samples.append(
            Sample(
                id=f"{name}-{i}",
                text=texts[i] if texts else f"sample {name} {i}",
                tokens=tuple(tokens) if tokens else None,
                difficulty=difficulties[i] if difficulties else None,
            )
        )
    return Dataset(name=name, samples=tuple(samples))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
