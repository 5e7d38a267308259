from __future__ import annotations

import sys
from pathlib import Path

import pytest

from aptree.asdl import load_grammar
from aptree.corpus import toy_grammar

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def toy():
    return toy_grammar()


@pytest.fixture(scope="session")
def pyexpr():
    return load_grammar(DATA / "pyexpr.asdl")


@pytest.fixture(scope="session")
def worked():
    return load_grammar(DATA / "worked.asdl")


@pytest.fixture(scope="session")
def mixed():
    return load_grammar(DATA / "mixed.asdl")


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
