"""Dense linear algebra helpers, activations and affine layers with manual backprop.

All arrays are float64. A "matrix" is a 2-D ndarray; layers accept either a
single vector or a leading batch axis.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, LayerStateError, ShapeError

__all__ = [
    "matmul",
    "softmax",
    "softmax_backward",
    "sigmoid",
    "relu",
    "AffineLayer",
    "GradCheckReport",
    "numerical_gradient",
    "grad_check",
    "relative_error",
]


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise EvaluationError("matmul produced non-finite entries")
    return out


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty input")
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(p, grad_p, axis=-1):
    """Gradient w.r.t. logits given softmax output ``p`` and upstream ``grad_p``."""
    return p * (grad_p - np.sum(grad_p * p, axis=axis, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def relu(x):
    return np.maximum(x, 0.0)


class AffineLayer:
    """``y = W x + b`` with an explicit backward pass.

    ``weight`` has shape (n_out, n_in). Gradients from the last ``backward``
    call are kept in ``grad_weight`` / ``grad_bias``.
    """

    def __init__(self, weight, bias=None):
        self.weight = _as_matrix(weight, "weight").copy()
        if bias is None:
            bias = np.zeros(self.weight.shape[0])
        self.bias = np.asarray(bias, dtype=np.float64).reshape(-1).copy()
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weight.shape[0]}"
            )
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    @classmethod
    def init(cls, n_in, n_out, rng, scale=None):
        """He-style uniform initialisation with zero bias."""
        if scale is None:
            scale = np.sqrt(6.0 / n_in) if n_in else 0.0
        w = rng.uniform(-scale, scale, size=(n_out, n_in))
        return cls(w, np.zeros(n_out))

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"input width {x.shape[-1]} != layer input {self.n_in}")
        self._cache = x
        return x @ self.weight.T + self.bias

    def backward(self, upstream_grad):
        if self._cache is None:
            raise LayerStateError("backward called before forward")
        g = np.asarray(upstream_grad, dtype=np.float64)
        if g.shape[-1] != self.n_out:
            raise ShapeError(f"upstream width {g.shape[-1]} != layer output {self.n_out}")
        x = self._cache
        g2 = g.reshape(-1, self.n_out)
        x2 = x.reshape(-1, self.n_in)
        self.grad_weight = g2.T @ x2
        self.grad_bias = g2.sum(axis=0)
        input_grad = g @ self.weight
        return input_grad, self.grad_weight, self.grad_bias


@dataclass
class GradCheckReport:
    max_relative_error: float
    errors: list = field(default_factory=list)
    analytic: np.ndarray = None
    numeric: np.ndarray = None

    def passed(self, tol=1e-4):
        return self.max_relative_error < tol


def relative_error(a, b, floor=1e-6):
    """Elementwise |a-b| / max(|a|+|b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def numerical_gradient(f, params, step=1e-5):
    """Central differences ``(f(p+h) - f(p-h)) / 2h`` per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    p = np.array(params, dtype=np.float64, copy=True)
    grad = np.zeros_like(p)
    flat = p.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(p))
        flat[i] = orig - step
        fm = float(f(p))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def grad_check(f, grad_fn, params, step=1e-5, floor=1e-6):
    """Compare ``grad_fn(params)`` against central finite differences of ``f``."""
    params = np.asarray(params, dtype=np.float64)
    f0 = float(f(params))
    if not np.isfinite(f0):
        raise EvaluationError("function is not finite at params")
    analytic = np.asarray(grad_fn(params.copy()), dtype=np.float64).reshape(params.shape)
    numeric = numerical_gradient(f, params, step)
    errs = relative_error(analytic, numeric, floor).reshape(-1)
    return GradCheckReport(
        max_relative_error=float(errs.max()) if errs.size else 0.0,
        errors=errs.tolist(),
        analytic=analytic,
        numeric=numeric,
    )
