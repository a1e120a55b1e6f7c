import numpy as np
import pytest

from genesig.nn import DenseNetwork, Layer, LayerSpec


def random_net(rng, dims, zero_bias=False, hidden="relu", final="softmax", bias_scale=0.1):
    layers = []
    n = len(dims) - 1
    for i in range(n):
        w = rng.normal(0, 1 / np.sqrt(dims[i]), size=(dims[i + 1], dims[i]))
        b = np.zeros(dims[i + 1]) if zero_bias else rng.normal(0, bias_scale, size=dims[i + 1])
        act = final if i == n - 1 else hidden
        layers.append(Layer(w, b, LayerSpec(dims[i], dims[i + 1], act)))
    return DenseNetwork(tuple(layers))


def linear_net(w, b=None, activation="linear"):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=float)
    return DenseNetwork((Layer(w, b, LayerSpec(w.shape[1], w.shape[0], activation)),))


def random_dims(rng, n_layers, max_dim=32, min_dim=2):
    return [int(d) for d in rng.integers(min_dim, max_dim + 1, size=n_layers + 1)]


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_relative_error(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ---------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
        _CRITERIA[mark.args[0]] = (status, mark.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {status}: {title}" + (f" [{detail}]" if detail else ""))
