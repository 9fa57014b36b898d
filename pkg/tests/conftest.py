"""Shared test configuration.

Every Optimal solve performed anywhere in the session is recorded by
the KKT audit hook so the residual families can be asserted over the
complete run at the end (see test_zz_kkt_audit.py).
"""

import pytest

from feedermpc import enable_kkt_audit


@pytest.fixture(scope="session", autouse=True)
def _session_kkt_audit():
    enable_kkt_audit()
    yield
