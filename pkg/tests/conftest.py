import itertools

import numpy as np
import pytest

from impulsekit import impulse as imp
from impulsekit.policy import ss_policy
from impulsekit.process import drifted_bm


@pytest.fixture
def depletion():
    """Unit-rate deterministic depletion."""
    return drifted_bm(-1.0, 0.0)


@pytest.fixture
def sawtooth(depletion):
    return depletion, imp.deterministic(), ss_policy(0.0, 1.0)


def enumerate_first_passage(start: int, target: int, max_length: int) -> np.ndarray:
    """First-passage pmf of a simple +-1 walk from ``start`` to ``target`` by listing every path.

    Independent of any matrix code: all ``2**L`` step sequences are walked
    explicitly. Entry ``L`` is the probability of first arrival at step ``L``.
    """
    pmf = np.zeros(max_length + 1)
    for L in range(1, max_length + 1):
        hits = 0
        for steps in itertools.product((-1, 1), repeat=L):
            pos = start
            first = None
            for i, d in enumerate(steps, 1):
                pos += d
                if pos == target:
                    first = i
                    break
            hits += first == L
        pmf[L] = hits / 2**L
    return pmf


# criterion number -> (passed, title, detail, seconds); filled by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail, secs = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  "
                                    f"[{detail}] ({secs:.1f} s)")
