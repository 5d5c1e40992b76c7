"""Dense double-precision kernels with hand-derived adjoints.

The objective set of this project is small and fixed, so instead of a
general autodiff graph each differentiable operation comes as a pair:
``op(...)`` for the value and ``op_vjp(...)`` for the vector-Jacobian
product. ``check_gradient`` verifies any (value, gradient) function
against central finite differences and is the oracle used throughout the
test suite.

All arrays are float64; every public operation validates that its output
is finite.
"""

import numpy as np

from .errors import DegenerateInputError, DimensionError, NumericError, ParameterError

DEFAULT_NORM_EPS = 1e-12


def as_matrix(a):
    """Coerce to a float64 2-D array without copying when possible."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got ndim={m.ndim}")
    return m


def _ensure_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite entries")
    return arr


def matmul(a, b):
    """Matrix product a @ b with shape validation."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"inner dimensions differ: {a.shape} x {b.shape}"
        )
    return _ensure_finite(a @ b, "matmul output")


def matmul_vjp(a, b, grad_out):
    """Adjoints of ``matmul`` for both operands.

    Returns (dL/da, dL/db) given dL/d(a@b).
    """
    a = as_matrix(a)
    b = as_matrix(b)
    g = as_matrix(grad_out)
    if g.shape != (a.shape[0], b.shape[1]):
        raise DimensionError(
            f"upstream gradient shape {g.shape} does not match product shape "
            f"({a.shape[0]}, {b.shape[1]})"
        )
    return g @ b.T, a.T @ g


def row_norms(m):
    return np.sqrt(np.sum(as_matrix(m) ** 2, axis=1))


def l2_normalize_rows(m, eps=DEFAULT_NORM_EPS):
    """Scale each row to unit Euclidean norm.

    Rows with norm below ``eps`` are rejected: normalizing them would
    amplify noise without bound.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    m = as_matrix(m)
    norms = row_norms(m)
    if np.any(norms < eps):
        bad = int(np.argmin(norms))
        raise DegenerateInputError(
            f"row {bad} has norm {norms[bad]:.3e} < eps={eps:.3e}"
        )
    return _ensure_finite(m / norms[:, None], "normalized rows")


def l2_normalize_rows_vjp(m, grad_out, eps=DEFAULT_NORM_EPS):
    """Adjoint of ``l2_normalize_rows`` w.r.t. its input."""
    m = as_matrix(m)
    g = as_matrix(grad_out)
    if g.shape != m.shape:
        raise DimensionError(f"gradient shape {g.shape} != input shape {m.shape}")
    norms = row_norms(m)
    if np.any(norms < eps):
        raise DegenerateInputError("cannot differentiate through a near-zero row")
    y = m / norms[:, None]
    # d/dx (x/|x|) applied to g: (g - (g.y) y) / |x|, rowwise.
    coeff = np.sum(g * y, axis=1, keepdims=True)
    return (g - coeff * y) / norms[:, None]


def softmax_rows(m, temperature=1.0):
    """Row-wise softmax of m / temperature, stabilised by max subtraction."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    m = as_matrix(m)
    z = m / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return _ensure_finite(p, "softmax output")


def log_softmax_rows(m, temperature=1.0):
    """Row-wise log-softmax, safe for very sharp temperatures."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    m = as_matrix(m)
    z = m / temperature
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_rows_vjp(probs, grad_out, temperature=1.0):
    """Adjoint of ``softmax_rows`` w.r.t. the pre-temperature logits.

    ``probs`` must be the forward output.
    """
    p = as_matrix(probs)
    g = as_matrix(grad_out)
    if g.shape != p.shape:
        raise DimensionError(f"gradient shape {g.shape} != probs shape {p.shape}")
    dot = np.sum(g * p, axis=1, keepdims=True)
    return p * (g - dot) / temperature


class GradientTape:
    """Adjoint accumulator keyed by parameter name.

    Accumulation is additive, so contribution order only matters up to
    floating-point associativity.
    """

    def __init__(self):
        self._grads = {}

    def accumulate(self, name, adjoint):
        adjoint = np.asarray(adjoint, dtype=np.float64)
        if name in self._grads:
            current = self._grads[name]
            if current.shape != adjoint.shape:
                raise DimensionError(
                    f"adjoint shape {adjoint.shape} != existing {current.shape} "
                    f"for parameter {name!r}"
                )
            current += adjoint
        else:
            self._grads[name] = adjoint.copy()

    def get(self, name):
        return self._grads.get(name)

    def names(self):
        return set(self._grads)

    def items(self):
        return self._grads.items()

    def __contains__(self, name):
        return name in self._grads

    def __len__(self):
        return len(self._grads)


def check_gradient(loss, params, step=1e-4):
    """Compare an analytic gradient with central finite differences.

    ``loss`` maps a parameter matrix to ``(value, gradient)``; only the
    value is used for the difference quotient, so the check stays
    independent of the analytic path. Returns the max over coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)`` (relative
    above magnitude one, absolute below).
    """
    if step <= 0:
        raise ParameterError(f"step must be > 0, got {step}")
    params = np.array(params, dtype=np.float64)
    value, grad = loss(params)
    if not np.isfinite(value):
        raise NumericError("loss is non-finite at the evaluation point")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise DimensionError(
            f"gradient shape {grad.shape} != parameter shape {params.shape}"
        )
    worst = 0.0
    flat = params.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up, _ = loss(params)
        flat[i] = orig - step
        down, _ = loss(params)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"loss non-finite while perturbing coordinate {i}")
        numeric = (up - down) / (2.0 * step)
        analytic = grad.ravel()[i]
        denom = max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
