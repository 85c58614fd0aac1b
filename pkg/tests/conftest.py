"""Shared test helpers and the acceptance-criteria summary hook."""

import numpy as np
import pytest

from cmscore.gradcheck import numerical_gradient, relative_error


def check_layer_gradients(layer, x, train=False, step=1e-5, tol=1e-4, rng=None):
    """Finite-difference check of a layer against its backward pass.

    Projects the layer output onto a fixed random direction to get a
    scalar, then compares the analytic gradient w.r.t. the input and
    every parameter with central differences.
    """
    if rng is None:
        rng = np.random.default_rng(99)
    x = np.asarray(x, dtype=np.float64)
    out = layer.forward(x, train=train)
    proj = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(layer.forward(x, train=train) * proj))

    layer.forward(x, train=train)
    analytic_dx = layer.backward(proj)
    param_grads = dict(layer.gradients())

    num_dx = numerical_gradient(f, x, step)
    errs = {"input": relative_error(analytic_dx, num_dx)}
    for name, arr in layer.parameters():
        num = numerical_gradient(f, arr, step)
        errs[name] = relative_error(param_grads[name], num)
    for name, err in errs.items():
        assert err < tol, f"gradient mismatch for {name}: rel error {err:.3g} >= {tol}"
    return errs


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion at the end of the run.

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _ACCEPTANCE_RESULTS[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{_ACCEPTANCE_RESULTS[name]}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(42)
