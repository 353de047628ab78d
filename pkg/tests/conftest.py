import numpy as np
import pytest

from spdiag.dataset import FieldConfig, SynthConfig, load_meuse, synth_dataset, synth_fields

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str):
    _CRITERIA[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def meuse():
    return load_meuse()


@pytest.fixture(scope="session")
def fields():
    return synth_fields(FieldConfig(), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_small():
    return synth_dataset(SynthConfig(n=60, coefs=(1.0, -0.5), psill=1.0, range=300.0, me_var=0.1,
                                     extent=(1000.0, 1000.0)), seed=3)
