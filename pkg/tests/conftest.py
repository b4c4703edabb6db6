import pytest

from drillstab.params import LumpedParams, PhysicalParams, PiGains, TorqueModel, normalize


@pytest.fixture(scope="session")
def phys():
    return PhysicalParams()


@pytest.fixture(scope="session")
def npar(phys):
    return normalize(phys)


@pytest.fixture(scope="session")
def torque():
    return TorqueModel()


@pytest.fixture(scope="session")
def gains():
    return PiGains(1e-3, 10.0)


@pytest.fixture(scope="session")
def lumped():
    return LumpedParams()


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"CRITERION {number}: {'PASS' if ok else 'FAIL'} | {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
