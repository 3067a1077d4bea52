"""Acceptance criteria, each run at its stated tolerance."""

import pytest

from schauderlab.acceptance import CRITERIA

pytestmark = pytest.mark.acceptance


@pytest.mark.parametrize("crit", CRITERIA, ids=[c.__name__ for c in CRITERIA])
def test_criterion(crit, record_criterion):
    res = record_criterion(crit())
    print(res.line())
    assert res.passed, res.line()
