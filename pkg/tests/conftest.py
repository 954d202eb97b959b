import numpy as np
import pytest

from carl import autodiff as ad
from carl.corpus import assemble_dataset, build_vocabulary, filter_empty, split
from carl.synthetic import synthetic_interactions


def numeric_grad(fn, x, h=1e-6):
    """Central differences of a scalar function ``fn()`` w.r.t. the array ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        k = it.multi_index
        old = x[k]
        x[k] = old + h
        up = fn()
        x[k] = old - h
        down = fn()
        x[k] = old
        grad[k] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def check_op_grad(op, *shapes, seed=0, positive=False, tol=1e-6):
    """Compare analytic and numeric gradients of ``sum(op(*inputs) * probe)``."""
    rng = np.random.default_rng(seed)
    data = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    probe = None

    def scalar():
        nonlocal probe
        out = op(*[ad.DiffArray(d) for d in data]).data
        if probe is None:
            probe = rng.normal(size=out.shape)
        return float(np.sum(out * probe))

    scalar()
    params = [ad.parameter(d) for d in data]
    with ad.Tape() as tape:
        out = op(*params)
        tape.backward(ad.sum_(ad.mul(out, probe)))
    for p, d in zip(params, data):
        num = numeric_grad(scalar, d)
        assert rel_error(p.grad, num) < tol, (op, p.grad, num)


def dataset_from(records, seed=0, doc_len=40):
    vocab = build_vocabulary(records)
    kept = filter_empty(records, vocab)
    return assemble_dataset(kept, vocab, split(kept, seed), doc_len)


@pytest.fixture(scope="session")
def small_dataset():
    return dataset_from(synthetic_interactions(num_users=12, num_items=9, per_user=5, seed=3))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, note in sorted(ACCEPTANCE):
        line = f"criterion {number} {status}: {title}"
        terminalreporter.write_line(f"{line} ({note})" if note else line)
