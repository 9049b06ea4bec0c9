import numpy as np
import pytest

from bsrkit.tensor import Tensor, backward


def rel_error(analytic, numeric):
    scale = max(np.abs(numeric).max(), 1e-8)
    return np.abs(analytic - numeric).max() / scale


def finite_diff(fn, tensor, h=1e-5):
    """Central finite differences of scalar fn() w.r.t. tensor.data."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(build_loss, params, tol=1e-4, h=1e-5):
    """Compare tape gradients of build_loss() against finite differences.

    ``params`` is an iterable of leaf Tensors with requires_grad=True.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = build_loss()
    backward(loss)
    for p in params:
        assert p.grad is not None, "missing gradient on a tracked leaf"
        numeric = finite_diff(lambda: build_loss().item(), p, h=h)
        err = rel_error(p.grad, numeric)
        assert err < tol, f"gradient mismatch: rel error {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)
