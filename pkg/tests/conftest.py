import numpy as np
import pytest

from meritseg.numerics.tensor import Tensor, grad_of


def fd_grad(f, arr, eps=1e-6):
    """Central differences of scalar f(arr) w.r.t. every entry of arr (modified in place, restored)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f())
        flat[i] = orig - eps
        down = float(f())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_fd(build, tensors, eps=1e-6):
    """Worst relative error between grad_of and central differences over ``tensors``."""
    out = build()
    analytic = grad_of(out, tensors)
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        num = fd_grad(lambda: build().data, t.data, eps)
        worst = max(worst, rel_err(ga, num))
    return worst


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape).astype(np.float64), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def check_fd_directional(build, tensors, n_dirs=3, eps=1e-6, seed=0):
    """Compare grad·v against central differences along random unit directions v.

    Returns the worst relative error over the directions.
    """
    out = build()
    analytic = grad_of(out, tensors)
    r = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [r.normal(size=t.shape) for t in tensors]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        a = float(sum((g * d).sum() for g, d in zip(analytic, dirs)))
        for t, d in zip(tensors, dirs):
            t.data += eps * d
        up = float(build().data)
        for t, d in zip(tensors, dirs):
            t.data -= 2 * eps * d
        down = float(build().data)
        for t, d in zip(tensors, dirs):
            t.data += eps * d
        n = (up - down) / (2 * eps)
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-12))
    return worst


def weighted_sum_fn(out_fn, seed=99):
    """Scalar probe: sum(out * fixed random weights), so every output entry matters."""
    cache = {}

    def build():
        out = out_fn()
        if "w" not in cache:
            cache["w"] = np.random.default_rng(seed).normal(size=out.shape)
        from meritseg.numerics import ops
        return ops.sum(ops.mul(out, cache["w"]))

    return build


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str, hard: bool = True) -> None:
    """Record one acceptance line; printed again in the terminal summary."""
    tag = "PASS" if ok else ("FAIL" if hard else "FAIL (report-only)")
    line = f"{tag} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
