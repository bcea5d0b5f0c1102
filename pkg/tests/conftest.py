import numpy as np
import pytest

from kiras import preset


def tiny_config(out_dir, **kw):
    """A few-second training setup for plumbing tests."""
    base = dict(seed=3, num_envs=8, horizon=8, t1=6, t2=12, premium_T=5, out_dir=str(out_dir),
                hidden=(16, 16), disc_hidden=(16, 16), enc_hidden=(16, 16), dec_hidden=(16, 16))
    base.update(kw)
    return preset("desk", **base)


def central_diff(f, params, k_coords, rng, h=1e-6):
    """Central finite differences of scalar ``f()`` at random coordinates of ``params`` (list of arrays, mutated in place)."""
    sizes = np.array([p.size for p in params])
    out = []
    for _ in range(k_coords):
        which = rng.choice(len(params), p=sizes / sizes.sum())
        idx = rng.integers(params[which].size)
        flat = params[which].flat
        old = flat[idx]
        flat[idx] = old + h
        fp = f()
        flat[idx] = old - h
        fm = f()
        flat[idx] = old
        out.append((which, idx, (fp - fm) / (2 * h)))
    return out


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
