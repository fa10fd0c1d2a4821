"""Shared test helpers: central finite-difference gradients, error norms,
and the acceptance-criteria summary printed after the run."""

import numpy as np


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)


def numeric_grad(fn, x, h=1e-5):
    """Central finite differences of a scalar function with respect to the
    array `x`, mutated in place entry by entry."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = fn()
        x[i] = orig - h
        fm = fn()
        x[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(approx, exact):
    denom = max(np.linalg.norm(exact), 1e-12)
    return np.linalg.norm(np.asarray(approx) - np.asarray(exact)) / denom


def check_grads(make_loss, tensors, tol=1e-4, h=1e-5):
    """Compare backward gradients of `make_loss()` against finite differences
    for every Tensor in `tensors`. `make_loss` must rebuild the graph from the
    tensors' current data each call."""
    loss = make_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, g in zip(tensors, analytic):
        num = numeric_grad(lambda: make_loss().item(), t.data, h=h)
        worst = max(worst, rel_err(g, num))
    return worst
