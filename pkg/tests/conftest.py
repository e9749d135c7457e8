import numpy as np
import pytest

from shufldp.model import Batch, model_init


def naive_logits(params, inputs):
    """Loop-by-loop forward pass, written without any vectorization."""
    w, b = params["conv.weight"], params["conv.bias"]
    dw, db = params["dense.weight"], params["dense.bias"]
    filters, channels, kernel = w.shape
    out = []
    for x in inputs:
        steps = x.shape[1] - kernel + 1
        pooled = []
        for f in range(filters):
            acc = 0.0
            for t in range(steps):
                z = b[f]
                for c in range(channels):
                    for i in range(kernel):
                        z += w[f, c, i] * x[c, t + i]
                acc += max(z, 0.0)
            pooled.append(acc / steps)
        out.append([db[k] + sum(dw[k, f] * pooled[f] for f in range(filters)) for k in range(dw.shape[0])])
    return np.array(out)


def naive_loss(params, batch):
    total = 0.0
    for row, label in zip(naive_logits(params, batch.inputs), batch.labels):
        m = max(row)
        lse = m + np.log(sum(np.exp(v - m) for v in row))
        total += lse - row[label]
    return total / len(batch)


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(3)
    params = model_init(1, 32, 3, seed=11)
    batch = Batch(rng.normal(size=(4, 1, 32)), rng.integers(0, 3, 4))
    return params, batch


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Record and print a PASS/FAIL line, then return the verdict for asserting."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record
