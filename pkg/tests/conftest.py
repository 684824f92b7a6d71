import contextlib

import numpy as np
import pytest

# acceptance outcomes, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL for one acceptance criterion; the detail dict can be filled in."""
    detail: dict = {}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", f"{title} {_fmt(detail)}")
        raise
    ACCEPTANCE[number] = ("PASS", f"{title} {_fmt(detail)}")


def _fmt(detail: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in detail.items())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status} {text}")
