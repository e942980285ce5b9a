"""Finite-difference checks of the total objective's analytic gradients."""

import numpy as np
import pytest

from gradcheck import REL_TOL, run_probes, supported_combos


@pytest.mark.parametrize(
    "kind,reg,mode,order,second",
    supported_combos(),
    ids=lambda v: str(v),
)
def test_total_objective_gradient(kind, reg, mode, order, second):
    worst = run_probes(kind, reg, mode, order, second, n_probes=5, seed=3)
    assert worst <= REL_TOL, f"worst relative FD error {worst:.3e}"
