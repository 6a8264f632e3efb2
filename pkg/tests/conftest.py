import numpy as np
import pytest

from seqnilm.tensor import Tensor


def numeric_grad(f, arr, eps=1e-6):
    """Central differences of scalar f(arr) with respect to every entry of arr (float64)."""
    arr = np.asarray(arr, dtype=np.float64)
    g = np.zeros_like(arr)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(arr)
        flat[i] = orig - eps
        lo = f(arr)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def analytic_grad(f, arr):
    x = Tensor(arr, requires_grad=True, dtype=np.float64)
    f(x).backward()
    return x.grad


def rel_err(a, n):
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, gathered from the reports' user properties."""
    lines = []
    for key in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance" and rep.when in ("call", "setup"):
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines), key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
