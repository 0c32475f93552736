import numpy as np
import pytest

from ctxbridge.autodiff import Tape


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def op_loss_and_grads(build, inputs, proj_seed=0):
    """Scalar ``sum(build(tape, *leaves) * R)`` for a fixed random R, plus analytic grads per input."""
    tape = Tape()
    leaves = [tape.leaf(x, trainable=True) for x in inputs]
    out = build(tape, *leaves)
    proj = np.random.default_rng(proj_seed).normal(size=out.shape)
    loss = tape.sum(tape.mul(out, tape.constant(proj)))
    return float(loss.data), tape.backward(loss)


def op_value(build, inputs, proj_seed=0):
    tape = Tape()
    leaves = [tape.constant(x) for x in inputs]
    out = build(tape, *leaves)
    proj = np.random.default_rng(proj_seed).normal(size=out.shape)
    return float((out.data * proj).sum())


# -- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
