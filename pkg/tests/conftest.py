"""Shared test helpers: finite-difference gradient checks in float64, plus
the acceptance-report hook that prints one verdict line per numbered check."""

from __future__ import annotations

import numpy as np
import torch

# number -> (passed, detail); filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_acceptance(number: int, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance report")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


def fd_param_grads(func, parameters, h: float = 1e-5):
    """Central finite differences of scalar func() w.r.t. each parameter tensor.

    func must re-run the forward pass from the current parameter values and
    return a Python float; parameters are perturbed in place and restored.
    """
    grads = []
    with torch.no_grad():
        for param in parameters:
            grad = torch.zeros_like(param)
            flat = param.view(-1)
            grad_flat = grad.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + h
                plus = func()
                flat[i] = original - h
                minus = func()
                flat[i] = original
                grad_flat[i] = (plus - minus) / (2.0 * h)
            grads.append(grad)
    return grads


def analytic_param_grads(loss, parameters):
    """Backprop grads for the same parameter list (zeros for unused params)."""
    for param in parameters:
        if param.grad is not None:
            param.grad = None
    loss.backward()
    return [param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
            for param in parameters]


def assert_grads_close(analytic, numeric, rtol, atol=1e-8, context=""):
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        np.testing.assert_allclose(
            a.detach().numpy(), n.detach().numpy(), rtol=rtol, atol=atol,
            err_msg=f"{context} parameter tensor {i}")


def max_rel_error(analytic, numeric, atol=1e-8) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = a.detach().numpy().ravel()
        n = n.detach().numpy().ravel()
        denom = np.maximum(np.abs(a), np.maximum(np.abs(n), atol))
        worst = max(worst, float(np.max(np.abs(a - n) / denom))) if a.size else worst
    return worst
