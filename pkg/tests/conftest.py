import logging

import numpy as np
import pytest

from advids.data import (
    SplitSpec,
    SynthSpec,
    apply_min_max,
    fit_min_max,
    generate_synthetic,
    split,
)

# outcome lines printed by the acceptance module, in run order
ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def _label(test_name):
    # test_ac7_poisoning_efficacy[3] -> AC7 poisoning efficacy [3]
    name, _, param = test_name.partition("[")
    tag, _, rest = name.removeprefix("test_").partition("_")
    label = f"{tag.upper()} {rest.replace('_', ' ')}"
    return f"{label} [{param}" if param else label


def pytest_runtest_logreport(report):
    if "acceptance" not in report.keywords:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        label = _label(report.nodeid.split("::")[-1])
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        ACCEPTANCE_RESULTS.append((label, outcome))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{outcome}] {label}")


@pytest.fixture(autouse=True)
def _quiet_scaling_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="advids.data")


def prepared(rows, mix, seed, separation):
    ds = generate_synthetic(SynthSpec(rows, mix, seed, separation))
    train, test = split(ds, SplitSpec(seed=seed))
    state = fit_min_max(train)
    return apply_min_max(train, state), apply_min_max(test, state)


IMBALANCED_MIX = (0.1, 0.225, 0.225, 0.225, 0.225)


@pytest.fixture(scope="session")
def separable_split():
    return prepared(3000, (0.3, 0.175, 0.175, 0.175, 0.175), 1, 8.0)


@pytest.fixture(scope="session")
def overlapping_split():
    return prepared(2000, IMBALANCED_MIX, 0, 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
