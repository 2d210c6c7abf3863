"""Shared test helpers: finite-difference gradient oracle and tiny fixtures.

The finite-difference code is deliberately independent of the autodiff path:
it only ever calls forward evaluations.
"""

from __future__ import annotations

import numpy as np
import pytest

from pairsense import tensorcore as tc


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar-valued f at x (x is mutated and restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
        it.iternext()
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """norm(a - n) / max(norm(a), norm(n), 1e-6).

    The 1e-6 floor keeps provably-zero analytic gradients (for example a key
    bias under softmax's shift invariance) from being compared against pure
    finite-difference noise, which sits around 1e-10 at eps = 1e-6.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
    return float(np.linalg.norm(a - n) / denom)


def grad_check(build_loss, tensors: dict[str, tc.Tensor], eps: float = 1e-6) -> float:
    """Max relative error between backprop and central differences over all inputs.

    ``build_loss()`` must re-run the forward pass from the tensors' current
    ``.data`` each call and return a scalar Tensor.
    """
    loss = build_loss()
    for t in tensors.values():
        t.zero_grad()
    tc.backward(loss)
    worst = 0.0
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(lambda: build_loss().item(), t.data, eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
