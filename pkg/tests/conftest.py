import numpy as np
import pytest

from lskt.data import SynthSpec, build_sequences, pad_batch, synth_generate


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return out


def rel_err(a, b, floor=1e-6):
    scale = np.maximum(np.abs(a), np.abs(b))
    sel = scale > floor
    if not sel.any():
        return 0.0
    return float((np.abs(a - b)[sel] / scale[sel]).max())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SynthSpec(learners=12, concepts=4, exercises=9, length=14, seed=3)
    return build_sequences(synth_generate(spec), 14)


@pytest.fixture
def small_batch(small_corpus):
    batch = pad_batch(small_corpus.sequences[:3], 14)
    batch.lengths[1] = 9
    return batch


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
