"""The twelve acceptance criteria at their stated tolerances, one test each.

Each test prints the criterion's verdict line.  Criteria are not softened:
a criterion that the method cannot meet fails here with its measurement.
"""

import pytest

from busyldp.acceptance import CRITERIA, References, run_criterion
from busyldp.config import ExperimentConfig


@pytest.fixture(scope="module")
def ref():
    return References(ExperimentConfig())


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(ref, number, capsys):
    res = run_criterion(number, ref)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.status == "PASS", res.line()
