"""Shared fixtures: each preset's model/spectral/constants built once per session."""

from __future__ import annotations

import numpy as np
import pytest

from cmjsim import (
    build_model,
    compute_constants,
    make_indicator_characteristic,
    preset,
    spectral_decompose,
    validate_assumptions,
)
from cmjsim.scenario import parse_row


class PresetBundle:
    """Lazily-built (scenario, model, spectral, constants) for one preset."""

    def __init__(self, name: str):
        self.name = name
        self.scenario = preset(name)
        self.model = build_model(self.scenario.model)
        self._S = None
        self._constants = None
        self._report = None

    @property
    def S(self):
        if self._S is None:
            self._S = spectral_decompose(self.model.A)
        return self._S

    @property
    def report(self):
        if self._report is None:
            self._report = validate_assumptions(self.model)
        return self._report

    @property
    def row(self) -> np.ndarray:
        ch = self.scenario.characteristic
        if ch["kind"] not in ("indicator", "kesten_stigum"):
            raise ValueError(f"{self.name} has no single defining row")
        return np.asarray(parse_row(ch["row"]), dtype=float)

    @property
    def phi(self):
        return make_indicator_characteristic(self.row)

    @property
    def constants(self):
        if self._constants is None:
            self._constants = compute_constants(self.phi, self.S, self.model)
        return self._constants


_BUNDLES: dict[str, PresetBundle] = {}


def bundle(name: str) -> PresetBundle:
    if name not in _BUNDLES:
        _BUNDLES[name] = PresetBundle(name)
    return _BUNDLES[name]


@pytest.fixture(scope="session")
def single_type():
    return bundle("single_type_binary")


@pytest.fixture(scope="session")
def mirror():
    return bundle("two_type_mirror")


@pytest.fixture(scope="session")
def jordan():
    return bundle("jordan_critical")


@pytest.fixture(scope="session")
def cross_feed():
    return bundle("cross_feed")


@pytest.fixture(scope="session")
def asym_leak():
    return bundle("asym_leak")


@pytest.fixture(scope="session")
def three_scale():
    return bundle("three_scale_symmetric")


@pytest.fixture(scope="session")
def cyclic():
    return bundle("cyclic_three")


@pytest.fixture(scope="session")
def degenerate():
    return bundle("cross_feed_deterministic")


# ---------------------------------------------------------------------------
# acceptance summary: tests/test_acceptance.py records one line per criterion;
# print them after the run so the log always carries the scoreboard.
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
