import numpy as np
import pytest

from crbounds import kernels
from crbounds.core_model import Activation

needs_compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                                    reason="compiled extension not built")


def _problem(seed=42, n1=5, d=4, m=12, epochs=3):
    rng = np.random.default_rng(seed)
    w1 = rng.normal(size=(n1, d))
    w2 = rng.normal(size=n1)
    x = rng.normal(size=(m, d))
    y = rng.normal(size=m)
    orders = np.stack([rng.permutation(m) for _ in range(epochs)]).astype(np.int64)
    return w1, w2, x, y, orders


def _run(backend, act, batch, lr=0.05, abort=np.inf, **kw):
    w1, w2, x, y, orders = _problem(**kw)
    done, losses = kernels.sgd_epochs(w1, w2, x, y, orders, lr, act.code, batch, abort,
                                      backend=backend)
    return w1, w2, done, losses


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.sgd_epochs(*_problem(), 0.1, 0, 1, 1.0, backend="fortran")


@needs_compiled
@pytest.mark.parametrize("act", list(Activation))
@pytest.mark.parametrize("batch", [1, 5, 12])
def test_compiled_matches_fallback(act, batch):
    a = _run("compiled", act, batch)
    b = _run("python", act, batch)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-13)
    assert a[2] == b[2]
    np.testing.assert_allclose(a[3], b[3], rtol=1e-12)


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_single_step_matches_manual_update(backend):
    w1, w2, x, y, _ = _problem(epochs=1)
    orders = np.array([[3]], dtype=np.int64)
    x1 = x[3:4]
    y1 = y[3:4]
    lr = 0.1
    n1, d = w1.shape
    q = w1 @ x1[0] / np.sqrt(d)
    r = np.tanh(q) @ w2 / np.sqrt(n1) - y1[0]
    g2 = 2 * r * np.tanh(q) / np.sqrt(n1)
    g1 = 2 * r * np.outer(w2 * (1 - np.tanh(q) ** 2), x1[0]) / np.sqrt(n1 * d)
    e1, e2 = w1 - lr * g1, w2 - lr * g2
    kernels.sgd_epochs(w1, w2, x, y, orders, lr, Activation.TANH.code, 1, np.inf, backend=backend)
    np.testing.assert_allclose(w1, e1, rtol=1e-13)
    np.testing.assert_allclose(w2, e2, rtol=1e-13)


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_abort_stops_after_first_bad_epoch(backend):
    _, _, done, losses = _run(backend, Activation.LINEAR, 1, lr=50.0, abort=1e3, epochs=20)
    assert done < 20
    assert len(losses) == done
    assert not losses[-1] <= 1e3


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_invalid_batch(backend):
    with pytest.raises(ValueError):
        _run(backend, Activation.TANH, 0)


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_rejects_bad_inputs(backend):
    w1, w2, x, y, orders = _problem()
    with pytest.raises(ValueError):
        kernels.sgd_epochs(w1, w2, x, y, orders + 100, 0.1, 2, 1, np.inf, backend=backend)
    with pytest.raises(ValueError):
        kernels.sgd_epochs(w1, w2[:-1].copy(), x, y, orders, 0.1, 2, 1, np.inf, backend=backend)
    with pytest.raises(ValueError):
        kernels.sgd_epochs(w1, w2, x, y, orders, 0.1, 9, 1, np.inf, backend=backend)
