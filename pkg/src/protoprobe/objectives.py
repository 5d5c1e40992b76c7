"""Loss terms and their hand-derived gradients.

Two families: conception losses classify encoder features against
prototype buffers (self-distilled on unlabelled data, supervised on
labelled data), instance losses pull projected views together with
contrastive objectives. Each function returns its value together with
the gradients needed to continue backpropagation, so the trainer never
needs a general autodiff graph.

Sign conventions: distillation uses the standard non-negative
cross-entropy -sum t log p. The unsupervised instance loss excludes the
anchor's own term from its denominator, so unlike a true softmax
cross-entropy its value may dip below zero; that is the printed form and
is kept as such.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContractViolation,
    DegenerateInputError,
    DimensionError,
    NumericError,
    ParameterError,
)
from .numerics import as_matrix, log_softmax_rows, softmax_rows


@dataclass(frozen=True)
class Prediction:
    """A prober's soft assignment of features to buffer slots.

    Caches everything backward passes need: probabilities, log
    probabilities, and the inputs. ``stop_gradient`` marks teacher
    predictions, which refuse to participate in backpropagation.
    """

    probs: np.ndarray
    log_probs: np.ndarray
    temperature: float
    features: np.ndarray
    buffer: np.ndarray
    stop_gradient: bool = False

    @property
    def batch_size(self):
        return self.probs.shape[0]

    @property
    def num_slots(self):
        return self.probs.shape[1]


def _predict(v, buffer, temperature, stop_gradient):
    v = as_matrix(v)
    buffer = as_matrix(buffer)
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    if v.shape[1] != buffer.shape[1]:
        raise DimensionError(
            f"feature dim {v.shape[1]} != buffer dim {buffer.shape[1]}"
        )
    logits = v @ buffer.T
    probs = softmax_rows(logits, temperature)
    log_probs = log_softmax_rows(logits, temperature)
    return Prediction(probs, log_probs, float(temperature), v, buffer,
                      stop_gradient)


def student_predict(v, m_s, tau):
    """Differentiable softmax of v·m^sT / tau."""
    return _predict(v, m_s, tau, stop_gradient=False)


def teacher_predict(v, m_t, tau_t):
    """Teacher soft targets; gradient-isolated by construction."""
    return _predict(v, m_t, tau_t, stop_gradient=True)


def prediction_backward(pred, grad_logits):
    """Push a gradient on the pre-temperature logits back to the inputs.

    Returns (grad_features, grad_buffer).
    """
    if pred.stop_gradient:
        raise ContractViolation(
            "teacher predictions are gradient-isolated; nothing to backprop"
        )
    g = as_matrix(grad_logits)
    if g.shape != pred.probs.shape:
        raise DimensionError(
            f"gradient shape {g.shape} != prediction shape {pred.probs.shape}"
        )
    scale = 1.0 / pred.temperature
    return (g @ pred.buffer) * scale, (g.T @ pred.features) * scale


def _check_value(x, what):
    x = float(x)
    if not np.isfinite(x):
        raise NumericError(f"{what} is non-finite")
    return x


def loss_cru(student, teacher, gamma):
    """Self-distillation cross-entropy plus mean-entropy regularizer.

    (1/|B|) sum_i sum_c -p^t_ic log p^s_ic  +  gamma * sum_c pbar_c log pbar_c

    with pbar the batch-mean student prediction. Returns
    (value, grad_on_student_logits, regularizer_value).
    """
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    if student.probs.shape != teacher.probs.shape:
        raise DimensionError(
            f"student {student.probs.shape} vs teacher {teacher.probs.shape}"
        )
    b = student.batch_size
    if b == 0:
        raise DegenerateInputError("empty batch")
    t = teacher.probs
    ce = -(t * student.log_probs).sum() / b

    p = student.probs
    pbar = p.mean(axis=0)
    logbar = np.where(pbar > 0, np.log(np.maximum(pbar, 1e-300)), 0.0)
    reg = float((pbar * logbar).sum())

    # d(ce)/dlogits: rows of (p^s - p^t)/|B|
    grad = (p - t) / b
    if gamma != 0.0:
        # upstream on each p-row is gamma*(log pbar + 1)/|B|; softmax vjp
        up = gamma * (logbar + 1.0) / b
        inner = p @ up
        grad = grad + p * (up[None, :] - inner[:, None])
    value = _check_value(ce + gamma * reg, "distillation loss")
    return value, grad, reg


def loss_crl(v, labels, protos, tau):
    """Cross-entropy of labelled features against their class prototypes.

    Returns (value, grad_v, grad_protos).
    """
    v = as_matrix(v)
    protos = as_matrix(protos)
    labels = np.asarray(labels, dtype=np.int64)
    if v.shape[0] == 0:
        raise DegenerateInputError("empty labelled batch")
    if labels.shape != (v.shape[0],):
        raise DimensionError("one label per feature row required")
    if labels.min() < 0 or labels.max() >= protos.shape[0]:
        raise ContractViolation(
            f"labels must lie in [0, {protos.shape[0]}), got "
            f"[{labels.min()}, {labels.max()}]"
        )
    b = v.shape[0]
    logits = v @ protos.T
    logp = log_softmax_rows(logits, tau)
    value = _check_value(-logp[np.arange(b), labels].mean(), "labelled loss")

    grad_logits = softmax_rows(logits, tau)
    grad_logits[np.arange(b), labels] -= 1.0
    grad_logits /= b * tau
    return value, grad_logits @ protos, grad_logits.T @ v


def _pairwise_logits(za, zb, tau_r):
    return (za @ zb.T) / tau_r


def _masked_log_denominators(s):
    """log sum_{j != i} exp(s_ij) per row, and the matching softmax weights."""
    n = s.shape[0]
    masked = s.copy()
    np.fill_diagonal(masked, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - m)
    denom = e.sum(axis=1, keepdims=True)
    log_d = (m + np.log(denom)).ravel()
    return log_d, e / denom


def loss_sup(z1, labels, tau_r):
    """Supervised contrastive term over the labelled rows of a batch.

    ``labels`` aligns with the rows of ``z1``; entries < 0 mark
    unlabelled rows, which serve only as denominator negatives. Each
    labelled anchor averages -log softmax over its same-label positives;
    anchors without positives contribute zero. Normalized by the number
    of labelled rows. Returns (value, grad_z1).
    """
    if tau_r <= 0:
        raise ParameterError(f"tau_r must be > 0, got {tau_r}")
    z1 = as_matrix(z1)
    labels = np.asarray(labels, dtype=np.int64)
    n = z1.shape[0]
    if labels.shape != (n,):
        raise DimensionError("one label per row required (use -1 for unlabelled)")
    labelled = labels >= 0
    n_lab = int(labelled.sum())
    zero = 0.0, np.zeros_like(z1)
    if n_lab == 0:
        return zero
    if n_lab == 1:
        warnings.warn(
            "a single labelled instance has no positives; "
            "supervised contrastive term is 0",
            stacklevel=2,
        )
        return zero
    same = (labels[:, None] == labels[None, :]) & labelled[:, None] \
        & labelled[None, :]
    np.fill_diagonal(same, False)
    pos_counts = same.sum(axis=1)
    anchors = pos_counts > 0
    if not anchors.any():
        return zero

    s = _pairwise_logits(z1, z1, tau_r)
    log_d, w = _masked_log_denominators(s)
    # normalized positive weights per anchor row
    p_hat = np.zeros_like(s)
    p_hat[anchors] = same[anchors] / pos_counts[anchors, None]
    value = (-(p_hat * s).sum() + log_d[anchors].sum()) / n_lab
    value = _check_value(value, "supervised contrastive loss")

    g_s = -p_hat
    g_s[anchors] += w[anchors]
    g_s /= n_lab
    grad = (g_s + g_s.T) @ z1 / tau_r
    return value, grad


def loss_unsup(z1, z2, tau_r, cross_view_denominator=False):
    """Instance self-alignment between the two views of a batch.

    Numerator pairs each row of ``z1`` with its own row in ``z2``; the
    denominator runs over the other same-view rows as printed, or over
    the other ``z2`` rows when ``cross_view_denominator`` is set.
    Returns (value, grad_z1, grad_z2).
    """
    if tau_r <= 0:
        raise ParameterError(f"tau_r must be > 0, got {tau_r}")
    z1 = as_matrix(z1)
    z2 = as_matrix(z2)
    if z1.shape != z2.shape:
        raise DimensionError(f"view shapes differ: {z1.shape} vs {z2.shape}")
    n = z1.shape[0]
    if n < 2:
        raise ContractViolation("instance loss needs a batch of at least 2")

    s12_diag = np.sum(z1 * z2, axis=1) / tau_r
    if cross_view_denominator:
        s = _pairwise_logits(z1, z2, tau_r)
    else:
        s = _pairwise_logits(z1, z1, tau_r)
    log_d, w = _masked_log_denominators(s)
    value = _check_value((-s12_diag + log_d).mean(), "instance loss")

    g_num = 1.0 / (n * tau_r)
    if cross_view_denominator:
        g_s = w / n  # zero diagonal already
        grad_z1 = g_s @ z2 / tau_r - g_num * z2
        grad_z2 = g_s.T @ z1 / tau_r - g_num * z1
    else:
        g_s = w / n
        grad_z1 = (g_s + g_s.T) @ z1 / tau_r - g_num * z2
        grad_z2 = -g_num * z1
    return value, grad_z1, grad_z2


@dataclass(frozen=True)
class LossBreakdown:
    """All loss terms of one step, in nats, plus their blends."""

    l_cru: float
    l_crl: float
    l_cr: float
    l_sup: float
    l_unsup: float
    l_ir: float
    total: float
    regularizer: float = 0.0

    def as_dict(self):
        return {
            "l_cru": self.l_cru,
            "l_crl": self.l_crl,
            "l_cr": self.l_cr,
            "l_sup": self.l_sup,
            "l_unsup": self.l_unsup,
            "l_ir": self.l_ir,
            "total": self.total,
            "regularizer": self.regularizer,
        }


def combine(l_cru, l_crl, l_sup, l_unsup, alpha1, beta1, regularizer=0.0):
    """Blend the four terms into the training objective.

    l_cr = alpha1*l_cru + (1-alpha1)*l_crl;
    l_ir = beta1*l_sup + (1-beta1)*l_unsup; total = l_cr + l_ir.
    """
    if not 0.0 <= alpha1 <= 1.0:
        raise ParameterError(f"alpha1 must lie in [0, 1], got {alpha1}")
    if not 0.0 <= beta1 <= 1.0:
        raise ParameterError(f"beta1 must lie in [0, 1], got {beta1}")
    l_cr = alpha1 * l_cru + (1.0 - alpha1) * l_crl
    l_ir = beta1 * l_sup + (1.0 - beta1) * l_unsup
    total = _check_value(l_cr + l_ir, "total loss")
    return LossBreakdown(
        l_cru=float(l_cru),
        l_crl=float(l_crl),
        l_cr=float(l_cr),
        l_sup=float(l_sup),
        l_unsup=float(l_unsup),
        l_ir=float(l_ir),
        total=total,
        regularizer=float(regularizer),
    )
