import pytest

from neuim import dataio


@pytest.fixture(scope="session")
def paper_test():
    return dataio.build_dataset("paper-test", split="test")


@pytest.fixture(scope="session")
def paper_train():
    return dataio.build_dataset("paper-train")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
