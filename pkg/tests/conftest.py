import numpy as np
import pytest

from horesnet.tensor import Tensor, no_grad


def numeric_grad(fn, arrays, eps=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. each array in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = fn()
            flat[i] = old - eps
            down = fn()
            flat[i] = old
            gf[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def check_grads(build_loss, tensors, rtol=1e-6, atol=1e-8):
    """Backprop of ``build_loss()`` against central differences."""
    for t in tensors:
        t.grad = None
    build_loss().backward()
    analytic = [t.grad.copy() for t in tensors]

    def value():
        with no_grad():
            return float(build_loss().data)

    numeric = numeric_grad(value, [t.data for t in tensors])
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
