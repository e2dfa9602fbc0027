import numpy as np
import pytest
from hypothesis import settings

from regadmm.operators import PsdOperator, QMetric

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def random_psd(rng, dim, kind):
    if kind == "zero":
        return PsdOperator.zero(dim)
    if kind == "identity":
        return PsdOperator.scaled_identity(dim, rng.uniform(0.1, 3.0))
    if kind == "diagonal":
        return PsdOperator.diagonal(rng.uniform(0.0, 2.0, dim))
    if kind == "dense":
        L = rng.standard_normal((dim, dim))
        return PsdOperator.dense(L.T @ L)
    return PsdOperator.gram(rng.standard_normal((dim + 2, dim)), rng.uniform(0.1, 2.0))


KINDS = ("zero", "identity", "diagonal", "dense", "gram")


def random_metric(rng, n=3, p=4, m=5):
    return QMetric(random_psd(rng, n, KINDS[rng.integers(5)]),
                   random_psd(rng, p, KINDS[rng.integers(5)]),
                   rng.standard_normal((m, p)), rng.uniform(0, 5), rng.uniform(0.1, 3),
                   rng.uniform(0.1, 1.9))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def report(number, name, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}  {detail}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
