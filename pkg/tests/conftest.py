import numpy as np
import pytest

from pcinit.model import PCNetwork, make_state


def random_net(dims, activation="tanh", seed=0, clamp_input=True, clamp_output=True,
               output_activation="identity", scale=1.0):
    rng = np.random.default_rng(seed)
    net = PCNetwork.create(dims, activation, rng, output_activation, clamp_input, clamp_output)
    for w in net.weights:
        w *= scale
    return net


def random_state(net, n=3, seed=1):
    """A state with every layer (clamped or not) filled with noise."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, net.dims[0])) if net.clamp_input else None
    y = rng.standard_normal((n, net.dims[-1])) if net.clamp_output else None
    state = make_state(net, n, x, y)
    for l in net.free_layers():
        state.layers[l] = rng.standard_normal(state.layers[l].shape)
    return state


def central_diff(f, x, eps=1e-5):
    """Numerical gradient of scalar f() w.r.t. array x (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdict lines, echoed again in the terminal summary
VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    def report(criterion: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
