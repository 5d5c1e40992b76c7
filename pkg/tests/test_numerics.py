import numpy as np
import pytest

from protoprobe.errors import (
    DegenerateInputError,
    DimensionError,
    NumericError,
    ParameterError,
)
from protoprobe.numerics import (
    GradientTape,
    check_gradient,
    l2_normalize_rows,
    l2_normalize_rows_vjp,
    log_softmax_rows,
    matmul,
    matmul_vjp,
    softmax_rows,
    softmax_rows_vjp,
)


def test_normalize_rows_unit_norm():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(7, 5))
    out = l2_normalize_rows(m)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)


def test_normalize_rejects_near_zero_row():
    m = np.array([[1.0, 0.0], [1e-15, 0.0]])
    with pytest.raises(DegenerateInputError):
        l2_normalize_rows(m)


def test_normalize_vjp_matches_fd():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(4, 3)) + 0.5
    g = rng.normal(size=(4, 3))

    def loss(mat):
        y = l2_normalize_rows(mat)
        return float(np.sum(y * g)), l2_normalize_rows_vjp(mat, g)

    assert check_gradient(loss, m) < 1e-6


def test_softmax_rows_basics():
    p = softmax_rows(np.array([[0.0, 0.0, 0.0]]))
    assert np.allclose(p, 1 / 3)
    sharp = softmax_rows(np.array([[1.0, 0.0]]), temperature=0.01)
    assert sharp[0, 0] > 0.999
    with pytest.raises(ParameterError):
        softmax_rows(np.eye(2), temperature=0.0)


def test_log_softmax_consistent_with_softmax():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(5, 6)) * 3
    assert np.allclose(np.exp(log_softmax_rows(m, 0.3)), softmax_rows(m, 0.3))


def test_softmax_vjp_matches_fd():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 4))
    tau = 0.4

    def loss(mat):
        p = softmax_rows(mat, tau)
        return float(np.sum(p * g)), softmax_rows_vjp(p, g, tau)

    assert check_gradient(loss, logits) < 1e-6


def test_matmul_and_vjp():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    g = rng.normal(size=(3, 2))
    assert np.allclose(matmul(a, b), a @ b)
    ga, gb = matmul_vjp(a, b, g)
    assert np.allclose(ga, g @ b.T)
    assert np.allclose(gb, a.T @ g)
    with pytest.raises(DimensionError):
        matmul(a, a)


def test_check_gradient_flags_wrong_gradient():
    # oracle sanity: a deliberately broken gradient must be caught
    def good(mat):
        return float(np.sum(mat**2)), 2 * mat

    def bad(mat):
        return float(np.sum(mat**2)), 3 * mat

    x = np.ones((2, 2))
    assert check_gradient(good, x) < 1e-8
    assert check_gradient(bad, x) > 1e-2


def test_check_gradient_validates():
    with pytest.raises(ParameterError):
        check_gradient(lambda m: (0.0, m), np.ones((1, 1)), step=0.0)
    with pytest.raises(NumericError):
        check_gradient(lambda m: (float("nan"), m), np.ones((1, 1)))
    with pytest.raises(DimensionError):
        check_gradient(lambda m: (0.0, np.ones(3)), np.ones((2, 2)))


def test_tape_accumulates_additively():
    tape = GradientTape()
    tape.accumulate("w", np.ones((2, 2)))
    tape.accumulate("w", 2 * np.ones((2, 2)))
    assert np.allclose(tape.get("w"), 3.0)
    assert "w" in tape and len(tape) == 1
    with pytest.raises(DimensionError):
        tape.accumulate("w", np.ones(3))


def test_tape_copies_first_contribution():
    tape = GradientTape()
    src = np.ones((2,))
    tape.accumulate("b", src)
    src[:] = 99.0
    assert np.allclose(tape.get("b"), 1.0)
